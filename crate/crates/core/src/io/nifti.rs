//! Single-file NIfTI-1 (`.nii` / `.nii.gz`) reading and writing.
//!
//! Only the three datatypes used for masks, labels and probabilities are
//! supported: `uint8`, `int16` and `float32`. Gzip is detected from the
//! first two bytes rather than the file name.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::labeling::ProbVolume;
use crate::{Mask, Real, VoxelGrid};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const NIFTI_XFORM_SCANNER_ANAT: i16 = 1;
/// millimetres
const NIFTI_UNITS_MM: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    F32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::U8),
            4 => Ok(Datatype::I16),
            16 => Ok(Datatype::F32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::F32 => 4,
        }
    }
}

/// Raw voxel payload, x-fastest, 4th dimension outermost.
#[derive(Clone, Debug, PartialEq)]
pub enum VolumeData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl VolumeData {
    pub fn datatype(&self) -> Datatype {
        match self {
            VolumeData::U8(_) => Datatype::U8,
            VolumeData::I16(_) => Datatype::I16,
            VolumeData::F32(_) => Datatype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VolumeData::U8(v) => v.len(),
            VolumeData::I16(v) => v.len(),
            VolumeData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_f64(&self, i: usize) -> f64 {
        match self {
            VolumeData::U8(v) => v[i] as f64,
            VolumeData::I16(v) => v[i] as f64,
            VolumeData::F32(v) => v[i] as f64,
        }
    }
}

/// The header fields this crate reads or preserves.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub pixdim: [f32; 8],
    pub intent_code: i16,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub descrip: String,
}

impl NiftiHeader {
    /// Header for a fresh volume with an axis-aligned affine from `spacing`.
    pub fn new(shape: &[usize], spacing: [f64; 3]) -> Self {
        let mut dim = [1i16; 8];
        dim[0] = shape.len() as i16;
        for (a, &d) in shape.iter().enumerate() {
            dim[a + 1] = d as i16;
        }
        let mut pixdim = [1.0f32; 8];
        for a in 0..3 {
            pixdim[a + 1] = spacing[a] as f32;
        }
        Self {
            dim,
            pixdim,
            intent_code: 0,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: NIFTI_UNITS_MM,
            qform_code: NIFTI_XFORM_SCANNER_ANAT,
            sform_code: NIFTI_XFORM_SCANNER_ANAT,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow_x: [spacing[0] as f32, 0.0, 0.0, 0.0],
            srow_y: [0.0, spacing[1] as f32, 0.0, 0.0],
            srow_z: [0.0, 0.0, spacing[2] as f32, 0.0],
            descrip: "lesionkit".into(),
        }
    }

    /// Copies orientation, spacing and units from `like`, keeping this
    /// header's dimensions.
    pub fn copy_geometry(&mut self, like: &NiftiHeader) {
        self.pixdim[0] = like.pixdim[0];
        self.pixdim[1..4].copy_from_slice(&like.pixdim[1..4]);
        self.xyzt_units = like.xyzt_units;
        self.qform_code = like.qform_code;
        self.sform_code = like.sform_code;
        self.quatern = like.quatern;
        self.qoffset = like.qoffset;
        self.srow_x = like.srow_x;
        self.srow_y = like.srow_y;
        self.srow_z = like.srow_z;
    }

    pub fn rank(&self) -> usize {
        self.dim[0] as usize
    }

    pub fn shape(&self) -> Vec<usize> {
        (1..=self.rank()).map(|a| self.dim[a] as usize).collect()
    }

    pub fn spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| {
            let s = self.pixdim[a + 1].abs() as f64;
            if s.is_finite() && s > 0.0 {
                s
            } else {
                1.0
            }
        })
    }

    fn scaling(&self) -> Option<(f64, f64)> {
        let (s, i) = (self.scl_slope as f64, self.scl_inter as f64);
        if s == 0.0 || !s.is_finite() || (s == 1.0 && i == 0.0) {
            None
        } else {
            Some((s, i))
        }
    }
}

/// A decoded volume file.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub header: NiftiHeader,
    pub data: VolumeData,
}

impl Volume {
    /// Spatial shape; missing trailing dimensions count as 1.
    pub fn spatial_dims(&self) -> [usize; 3] {
        let s = self.header.shape();
        std::array::from_fn(|a| s.get(a).copied().unwrap_or(1))
    }

    /// Size of the 4th dimension, 1 for 3D volumes.
    pub fn channels(&self) -> usize {
        self.header.shape().get(3).copied().unwrap_or(1)
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.header.spacing()
    }

    fn value(&self, i: usize) -> f64 {
        let v = self.data.get_f64(i);
        match self.header.scaling() {
            Some((s, o)) => v * s + o,
            None => v,
        }
    }

    fn ensure_3d(&self) -> Result<()> {
        if self.channels() != 1 {
            return Err(Error::WrongRank {
                expected: "3",
                actual: self.header.rank(),
            });
        }
        Ok(())
    }

    /// Integer labels in 0..=255 (masks and category masks).
    pub fn to_labels(&self) -> Result<VoxelGrid<u8>> {
        self.ensure_3d()?;
        let labels = match (&self.data, self.header.scaling()) {
            (VolumeData::U8(v), None) => v.clone(),
            _ => (0..self.data.len())
                .map(|i| {
                    let v = self.value(i);
                    if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                        Ok(v as u8)
                    } else {
                        Err(Error::InvalidParameter(format!(
                            "voxel {i} has value {v}, not a label in 0..=255"
                        )))
                    }
                })
                .collect::<Result<_>>()?,
        };
        VoxelGrid::with_spacing(self.spatial_dims(), self.spacing(), labels)
    }

    /// Binary mask; any label above 1 is rejected.
    pub fn to_mask(&self) -> Result<Mask> {
        let m = self.to_labels()?;
        m.ensure_binary()?;
        Ok(m)
    }

    /// 3D scalar grid with scaling applied.
    pub fn to_grid<F: Real>(&self) -> Result<VoxelGrid<F>> {
        self.ensure_3d()?;
        let data = match (&self.data, self.header.scaling()) {
            (VolumeData::F32(v), None) => v.iter().map(|&x| F::from_f32(x).unwrap()).collect(),
            _ => (0..self.data.len()).map(|i| F::from_f64_lossy(self.value(i))).collect(),
        };
        VoxelGrid::with_spacing(self.spatial_dims(), self.spacing(), data)
    }

    /// 4D class probabilities, channel 0 = background.
    pub fn to_prob_volume<F: Real>(&self, renormalize: bool) -> Result<ProbVolume<F>> {
        if self.header.rank() < 4 || self.channels() < 2 {
            return Err(Error::WrongRank {
                expected: "4 with at least 2 channels",
                actual: self.header.rank(),
            });
        }
        let data: Vec<F> = (0..self.data.len()).map(|i| F::from_f64_lossy(self.value(i))).collect();
        let (dims, spacing, c) = (self.spatial_dims(), self.spacing(), self.channels());
        if renormalize {
            ProbVolume::renormalized(dims, spacing, c, data)
        } else {
            ProbVolume::new(dims, spacing, c, data)
        }
    }

    pub fn from_labels(grid: &VoxelGrid<u8>) -> Self {
        Self {
            header: NiftiHeader::new(&grid.dims(), grid.spacing()),
            data: VolumeData::U8(grid.data().to_vec()),
        }
    }

    pub fn from_grid<F: Real>(grid: &VoxelGrid<F>) -> Self {
        Self {
            header: NiftiHeader::new(&grid.dims(), grid.spacing()),
            data: VolumeData::F32(grid.data().iter().map(|v| v.to_f32().unwrap()).collect()),
        }
    }

    pub fn from_prob_volume<F: Real>(pv: &ProbVolume<F>) -> Self {
        let d = pv.dims();
        Self {
            header: NiftiHeader::new(&[d[0], d[1], d[2], pv.channels()], pv.spacing()),
            data: VolumeData::F32(pv.data().iter().map(|v| v.to_f32().unwrap()).collect()),
        }
    }

    /// Takes orientation and spacing from another file's header.
    pub fn with_geometry_of(mut self, like: Option<&NiftiHeader>) -> Self {
        if let Some(h) = like {
            self.header.copy_geometry(h);
        }
        self
    }
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b: [u8; N] = self.buf[off..off + N].try_into().unwrap();
        if let Endian::Big = self.endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.bytes(off))
    }

    fn f32s<const N: usize>(&self, off: usize) -> [f32; N] {
        std::array::from_fn(|i| self.f32(off + 4 * i))
    }
}

/// Decodes a volume from file bytes, gzipped or not.
pub fn parse_volume(raw: &[u8]) -> Result<Volume> {
    let inflated;
    let bytes: &[u8] = if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw)
            .read_to_end(&mut out)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::TruncatedPayload {
                    expected: 0,
                    actual: out.len(),
                },
                _ => Error::BadMagic(format!("corrupt gzip stream: {e}")),
            })?;
        inflated = out;
        &inflated
    } else {
        raw
    };
    if bytes.len() < HEADER_SIZE {
        return Err(Error::TruncatedHeader { actual: bytes.len() });
    }
    let endian = if i32::from_le_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::BadMagic("sizeof_hdr is not 348".into()));
    };
    if &bytes[344..348] != MAGIC {
        return Err(Error::BadMagic(format!(
            "magic {:?} is not single-file NIfTI-1",
            String::from_utf8_lossy(&bytes[344..348])
        )));
    }
    let r = Reader { buf: bytes, endian };

    let dim: [i16; 8] = std::array::from_fn(|i| r.i16(40 + 2 * i));
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(Error::DimensionOverflow(format!("dim[0] = {rank} is outside 1..=7")));
    }
    let rank = rank as usize;
    let mut voxels: usize = 1;
    for (a, &d) in dim.iter().enumerate().skip(1).take(rank) {
        if d < 1 {
            return Err(Error::DimensionOverflow(format!("dim[{a}] = {d} is not positive")));
        }
        voxels = voxels
            .checked_mul(d as usize)
            .ok_or_else(|| Error::DimensionOverflow(format!("{:?} overflows", &dim[1..=rank])))?;
    }
    if rank > 4 && dim[5..=rank].iter().any(|&d| d != 1) {
        return Err(Error::WrongRank {
            expected: "at most 4 non-singleton",
            actual: rank,
        });
    }
    let datatype = Datatype::from_code(r.i16(70))?;
    let payload = voxels
        .checked_mul(datatype.bytes())
        .ok_or_else(|| Error::DimensionOverflow(format!("{voxels} voxels overflow the byte count")))?;
    let vox_offset = r.f32(108);
    let offset = if vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32 {
        vox_offset as usize
    } else {
        DATA_OFFSET
    };
    let available = bytes.len().saturating_sub(offset);
    if available < payload {
        return Err(Error::TruncatedPayload {
            expected: payload,
            actual: available,
        });
    }
    let body = &bytes[offset..offset + payload];
    let data = match datatype {
        Datatype::U8 => VolumeData::U8(body.to_vec()),
        Datatype::I16 => VolumeData::I16(
            body.chunks_exact(2)
                .map(|c| {
                    let b = [c[0], c[1]];
                    match endian {
                        Endian::Little => i16::from_le_bytes(b),
                        Endian::Big => i16::from_be_bytes(b),
                    }
                })
                .collect(),
        ),
        Datatype::F32 => VolumeData::F32(
            body.chunks_exact(4)
                .map(|c| {
                    let b = [c[0], c[1], c[2], c[3]];
                    match endian {
                        Endian::Little => f32::from_le_bytes(b),
                        Endian::Big => f32::from_be_bytes(b),
                    }
                })
                .collect(),
        ),
    };

    let descrip_raw = &bytes[148..228];
    let end = descrip_raw.iter().position(|&b| b == 0).unwrap_or(descrip_raw.len());
    let mut header = NiftiHeader {
        dim,
        pixdim: r.f32s(76),
        intent_code: r.i16(68),
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
        xyzt_units: bytes[123],
        qform_code: r.i16(252),
        sform_code: r.i16(254),
        quatern: r.f32s(256),
        qoffset: r.f32s(268),
        srow_x: r.f32s(280),
        srow_y: r.f32s(296),
        srow_z: r.f32s(312),
        descrip: String::from_utf8_lossy(&descrip_raw[..end]).into_owned(),
    };
    // Drop singleton trailing dimensions beyond the 4th.
    if rank > 4 {
        header.dim[0] = 4;
    }
    Ok(Volume { header, data })
}

/// Encodes a volume as little-endian single-file NIfTI-1.
pub fn encode_volume(vol: &Volume, gzip: bool) -> Result<Vec<u8>> {
    let h = &vol.header;
    let shape = h.shape();
    let expected: usize = shape.iter().product();
    if expected != vol.data.len() {
        return Err(Error::LengthMismatch {
            dims: vol_dims3(&shape),
            expected,
            actual: vol.data.len(),
        });
    }
    if shape.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::DimensionOverflow(format!("{shape:?} exceeds 32767 per axis")));
    }
    let dt = vol.data.datatype();
    let mut out = Vec::with_capacity(DATA_OFFSET + expected * dt.bytes());
    let mut hdr = vec![0u8; HEADER_SIZE];
    let put = |buf: &mut [u8], off: usize, b: &[u8]| buf[off..off + b.len()].copy_from_slice(b);
    put(&mut hdr, 0, &(HEADER_SIZE as i32).to_le_bytes());
    hdr[38] = b'r';
    for (i, d) in h.dim.iter().enumerate() {
        put(&mut hdr, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut hdr, 68, &h.intent_code.to_le_bytes());
    put(&mut hdr, 70, &dt.code().to_le_bytes());
    put(&mut hdr, 72, &((dt.bytes() * 8) as i16).to_le_bytes());
    for (i, p) in h.pixdim.iter().enumerate() {
        put(&mut hdr, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut hdr, 108, &(DATA_OFFSET as f32).to_le_bytes());
    put(&mut hdr, 112, &h.scl_slope.to_le_bytes());
    put(&mut hdr, 116, &h.scl_inter.to_le_bytes());
    hdr[123] = h.xyzt_units;
    let descrip = h.descrip.as_bytes();
    put(&mut hdr, 148, &descrip[..descrip.len().min(79)]);
    put(&mut hdr, 252, &h.qform_code.to_le_bytes());
    put(&mut hdr, 254, &h.sform_code.to_le_bytes());
    for (i, v) in h.quatern.iter().chain(&h.qoffset).enumerate() {
        put(&mut hdr, 256 + 4 * i, &v.to_le_bytes());
    }
    for (i, v) in h.srow_x.iter().chain(&h.srow_y).chain(&h.srow_z).enumerate() {
        put(&mut hdr, 280 + 4 * i, &v.to_le_bytes());
    }
    put(&mut hdr, 344, MAGIC);
    out.extend_from_slice(&hdr);
    out.extend_from_slice(&[0u8; DATA_OFFSET - HEADER_SIZE]);
    match &vol.data {
        VolumeData::U8(v) => out.extend_from_slice(v),
        VolumeData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        VolumeData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&out).and_then(|_| enc.finish()).map_err(|e| Error::io("<memory>", e))
    } else {
        Ok(out)
    }
}

fn vol_dims3(shape: &[usize]) -> [usize; 3] {
    std::array::from_fn(|a| shape.get(a).copied().unwrap_or(1))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_volume(&raw)
}

/// Writes atomically; gzip when the file name ends in `.gz`.
pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let gzip = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    let bytes = encode_volume(vol, gzip)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_u8() -> Volume {
        let mut m = Mask::zeros([3, 4, 5]).unwrap();
        m.set(1, 2, 3, 1);
        m.set_spacing([0.5, 1.0, 2.0]).unwrap();
        Volume::from_labels(&m)
    }

    #[test]
    fn round_trip_in_memory() {
        for gzip in [false, true] {
            let v = sample_u8();
            let bytes = encode_volume(&v, gzip).unwrap();
            assert_eq!(parse_volume(&bytes).unwrap(), v);
        }
        let v = Volume {
            header: NiftiHeader::new(&[2, 2, 2], [1.0; 3]),
            data: VolumeData::I16(vec![-3, 0, 7, i16::MAX, i16::MIN, 1, 2, 3]),
        };
        assert_eq!(parse_volume(&encode_volume(&v, false).unwrap()).unwrap(), v);
    }

    #[test]
    fn big_endian_header_is_read() {
        let v = Volume {
            header: NiftiHeader::new(&[2, 1, 1], [1.0; 3]),
            data: VolumeData::I16(vec![258, -2]),
        };
        let mut bytes = encode_volume(&v, false).unwrap();
        // byte-swap every field we read plus the payload
        let swap = |b: &mut [u8], off: usize, n: usize| b[off..off + n].reverse();
        swap(&mut bytes, 0, 4);
        for i in 0..8 {
            swap(&mut bytes, 40 + 2 * i, 2);
            swap(&mut bytes, 76 + 4 * i, 4);
        }
        for off in [68, 70, 72, 252, 254] {
            swap(&mut bytes, off, 2);
        }
        for off in [108, 112, 116] {
            swap(&mut bytes, off, 4);
        }
        for i in 0..6 {
            swap(&mut bytes, 256 + 4 * i, 4);
        }
        for i in 0..12 {
            swap(&mut bytes, 280 + 4 * i, 4);
        }
        swap(&mut bytes, 352, 2);
        swap(&mut bytes, 354, 2);
        assert_eq!(parse_volume(&bytes).unwrap(), v);
    }

    #[test]
    fn named_errors() {
        let bytes = encode_volume(&sample_u8(), false).unwrap();
        assert!(matches!(
            parse_volume(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedPayload { expected: 60, actual: 59 })
        ));
        assert!(matches!(parse_volume(&bytes[..100]), Err(Error::TruncatedHeader { actual: 100 })));

        let mut bad = bytes.clone();
        bad[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(parse_volume(&bad), Err(Error::UnsupportedDatatype(64))));

        let mut bad = bytes.clone();
        bad[42..44].copy_from_slice(&(-3i16).to_le_bytes());
        assert!(matches!(parse_volume(&bad), Err(Error::DimensionOverflow(_))));

        let mut bad = bytes.clone();
        bad[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(parse_volume(&bad), Err(Error::BadMagic(_))));

        let gz = encode_volume(&sample_u8(), true).unwrap();
        assert!(parse_volume(&gz[..gz.len() / 2]).is_err());
    }

    #[test]
    fn scaling_is_applied() {
        let mut v = Volume {
            header: NiftiHeader::new(&[2, 1, 1], [1.0; 3]),
            data: VolumeData::I16(vec![1, 3]),
        };
        v.header.scl_slope = 0.5;
        v.header.scl_inter = 1.0;
        let g = v.to_grid::<f64>().unwrap();
        assert_eq!(g.data(), &[1.5, 2.5]);
    }

    #[test]
    fn conversions() {
        let v = sample_u8();
        let m = v.to_mask().unwrap();
        assert_eq!(m.spacing(), [0.5, 1.0, 2.0]);
        assert_eq!(m.count_nonzero(), 1);

        let fg = VoxelGrid::new([2, 1, 1], vec![0.25f32, 0.75]).unwrap();
        let pv = ProbVolume::from_foreground(&fg, 3).unwrap();
        let vol = Volume::from_prob_volume(&pv);
        assert_eq!(vol.channels(), 3);
        let back: ProbVolume<f32> = vol.to_prob_volume(false).unwrap();
        assert_eq!(back, pv);
        assert!(vol.to_mask().is_err());
        assert!(Volume::from_grid(&fg).to_prob_volume::<f32>(false).is_err());

        let labels = Mask::filled([2, 2, 2], 3).unwrap();
        assert!(Volume::from_labels(&labels).to_mask().is_err());
        assert_eq!(Volume::from_labels(&labels).to_labels().unwrap(), labels);
    }

    #[test]
    fn geometry_copy() {
        let mut like = NiftiHeader::new(&[4, 4, 4], [2.0, 2.0, 3.0]);
        like.srow_x[3] = -90.0;
        let v = Volume::from_labels(&Mask::zeros([4, 4, 4]).unwrap()).with_geometry_of(Some(&like));
        assert_eq!(v.header.srow_x, [2.0, 0.0, 0.0, -90.0]);
        assert_eq!(v.spacing(), [2.0, 2.0, 3.0]);
    }
}
