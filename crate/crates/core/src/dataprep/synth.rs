//! Synthetic lesion masks with MSL-like and DBL-like prediction volumes.
//!
//! Lesions are axis-aligned discrete ellipsoids of an exact voxel count,
//! separated from each other by at least one background voxel so they stay
//! distinct under any connectivity. The two probability volumes emulate the
//! complementary failure modes of the two labelings: the MSL-like volume is
//! confident on small lesions but hesitant on the rim of large ones, the
//! DBL-like volume is confident on large lesions but hesitant on small ones.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::SMALL_LESION_CUTOFF;
use crate::error::{Error, Result};
use crate::labeling::{dbl_encode, DistanceBands, ProbVolume, SizeBands};
use crate::volume::DistanceUnits;
use crate::{Mask, Real, VoxelGrid};

/// `count` lesions with volume drawn uniformly from `[min_volume, max_volume)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionBand {
    pub min_volume: usize,
    pub max_volume: usize,
    pub count: usize,
}

impl LesionBand {
    pub fn new(min_volume: usize, max_volume: usize, count: usize) -> Self {
        Self {
            min_volume,
            max_volume,
            count,
        }
    }
}

/// Probability ranges `(lo, hi)` used when corrupting the ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Foreground probability where a model is right and sure.
    pub confident: (f64, f64),
    /// MSL-like probability on the rim of lesions at or above the small cutoff.
    pub msl_large_rim: (f64, f64),
    /// DBL-like probability inside lesions below the small cutoff.
    pub dbl_small: (f64, f64),
    /// Upper bound of the probability on background voxels touching a lesion.
    pub halo: f64,
    /// Spurious blobs present in both prediction volumes but not in the mask.
    pub false_positives: usize,
    pub fp_volume: (usize, usize),
    pub fp_prob: (f64, f64),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            confident: (0.8, 0.99),
            msl_large_rim: (0.3, 0.7),
            dbl_small: (0.35, 0.75),
            halo: 0.3,
            false_positives: 0,
            fp_volume: (1, 20),
            fp_prob: (0.55, 0.8),
        }
    }
}

impl NoiseSpec {
    /// No corruption: both volumes equal the ground truth.
    pub fn clean() -> Self {
        Self {
            confident: (1.0, 1.0),
            msl_large_rim: (1.0, 1.0),
            dbl_small: (1.0, 1.0),
            halo: 0.0,
            false_positives: 0,
            fp_volume: (1, 1),
            fp_prob: (0.0, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub lesions: Vec<LesionBand>,
    pub noise: NoiseSpec,
    /// Class layout of the MSL-like volume.
    pub msl_bands: SizeBands,
    /// Class layout of the DBL-like volume.
    pub dbl_bands: DistanceBands,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(dims: [usize; 3], lesions: Vec<LesionBand>, seed: u64) -> Self {
        Self {
            dims,
            lesions,
            noise: NoiseSpec::default(),
            msl_bands: SizeBands::default(),
            dbl_bands: DistanceBands::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::EmptyDimension(self.dims));
        }
        for b in &self.lesions {
            if b.min_volume == 0 || b.max_volume <= b.min_volume {
                return Err(Error::InvalidParameter(format!(
                    "lesion band [{}, {}) is empty",
                    b.min_volume, b.max_volume
                )));
            }
        }
        let n = self.noise;
        for (name, (lo, hi)) in [
            ("confident", n.confident),
            ("msl_large_rim", n.msl_large_rim),
            ("dbl_small", n.dbl_small),
            ("fp_prob", n.fp_prob),
        ] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::InvalidParameter(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if !(0.0..=1.0).contains(&n.halo) {
            return Err(Error::OutOfUnitRange {
                name: "halo",
                value: n.halo,
            });
        }
        if n.false_positives > 0 && (n.fp_volume.0 == 0 || n.fp_volume.1 < n.fp_volume.0) {
            return Err(Error::InvalidParameter("fp_volume range is invalid".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedLesion {
    pub center: [usize; 3],
    pub volume: usize,
    /// Index into `SynthSpec::lesions`.
    pub band: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCase<F> {
    pub gt: Mask,
    pub p_msl: ProbVolume<F>,
    pub p_dbl: ProbVolume<F>,
    pub lesions: Vec<PlantedLesion>,
    /// Voxels of the spurious blobs.
    pub false_positive_mask: Mask,
}

const PLACEMENT_ATTEMPTS: usize = 2000;

/// Offsets of the `volume` lattice points closest to the centre under the
/// ellipsoidal norm with semi-axis ratios `axes`. Ties break on offset order.
/// Every kept point has all its centre-ward axis neighbours kept, so the set
/// is 6-connected.
fn ellipsoid_offsets(volume: usize, axes: [f64; 3]) -> Vec<[isize; 3]> {
    let scale = (volume as f64 * 3.0 / (4.0 * std::f64::consts::PI * axes.iter().product::<f64>())).cbrt();
    let reach: [isize; 3] = std::array::from_fn(|a| (scale * axes[a] * 1.5).ceil() as isize + 2);
    let mut pts: Vec<(f64, [isize; 3])> = Vec::new();
    for z in -reach[2]..=reach[2] {
        for y in -reach[1]..=reach[1] {
            for x in -reach[0]..=reach[0] {
                let o = [x, y, z];
                let r: f64 = (0..3).map(|a| (o[a] as f64 / axes[a]).powi(2)).sum();
                pts.push((r, o));
            }
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    debug_assert!(pts.len() >= volume);
    pts.truncate(volume);
    pts.into_iter().map(|(_, o)| o).collect()
}

struct Canvas {
    dims: [usize; 3],
    /// Planted voxels and their 26-neighbourhood.
    blocked: Vec<bool>,
}

impl Canvas {
    fn idx(&self, p: [isize; 3]) -> Option<usize> {
        if (0..3).any(|a| p[a] < 0 || p[a] >= self.dims[a] as isize) {
            return None;
        }
        Some(p[0] as usize + self.dims[0] * (p[1] as usize + self.dims[1] * p[2] as usize))
    }

    /// Tries random centres until the shape fits without touching anything.
    fn place<R: Rng>(&mut self, shape: &[[isize; 3]], rng: &mut R) -> Option<[usize; 3]> {
        let lo: [isize; 3] = std::array::from_fn(|a| -shape.iter().map(|o| o[a]).min().unwrap());
        let hi: [isize; 3] =
            std::array::from_fn(|a| self.dims[a] as isize - 1 - shape.iter().map(|o| o[a]).max().unwrap());
        if (0..3).any(|a| lo[a] > hi[a]) {
            return None;
        }
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c: [isize; 3] = std::array::from_fn(|a| rng.gen_range(lo[a]..=hi[a]));
            let fits = shape.iter().all(|o| {
                let i = self.idx([c[0] + o[0], c[1] + o[1], c[2] + o[2]]).expect("inside by construction");
                !self.blocked[i]
            });
            if fits {
                for o in shape {
                    for dz in -1..=1 {
                        for dy in -1..=1 {
                            for dx in -1..=1 {
                                if let Some(i) = self.idx([c[0] + o[0] + dx, c[1] + o[1] + dy, c[2] + o[2] + dz]) {
                                    self.blocked[i] = true;
                                }
                            }
                        }
                    }
                }
                return Some(c.map(|v| v as usize));
            }
        }
        None
    }
}

fn draw<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn random_axes<R: Rng>(rng: &mut R) -> [f64; 3] {
    std::array::from_fn(|_| rng.gen_range(0.6..1.4))
}

/// Generates one synthetic case; identical specs give identical output.
pub fn synth_generate<F: Real>(spec: &SynthSpec) -> Result<SynthCase<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = spec.dims;
    let n: usize = dims.iter().product();
    let mut canvas = Canvas {
        dims,
        blocked: vec![false; n],
    };

    // Larger bands first so they still find room.
    let mut requests: Vec<(usize, usize)> = Vec::new();
    for (b, band) in spec.lesions.iter().enumerate() {
        for _ in 0..band.count {
            requests.push((b, rng.gen_range(band.min_volume..band.max_volume)));
        }
    }
    requests.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    // lesion id per voxel, 0 = background
    let mut owner = vec![0u32; n];
    let mut lesions = Vec::with_capacity(requests.len());
    for (k, &(band, volume)) in requests.iter().enumerate() {
        let shape = ellipsoid_offsets(volume, random_axes(&mut rng));
        let center = canvas.place(&shape, &mut rng).ok_or(Error::InfeasiblePacking {
            lesion: k,
            target: volume,
            attempts: PLACEMENT_ATTEMPTS,
        })?;
        for o in &shape {
            let p = [center[0] as isize + o[0], center[1] as isize + o[1], center[2] as isize + o[2]];
            owner[canvas.idx(p).unwrap()] = k as u32 + 1;
        }
        lesions.push(PlantedLesion {
            center,
            volume,
            band,
        });
    }

    let mut fp_mask = vec![0u8; n];
    let mut fp_prob = vec![0.0f64; n];
    for k in 0..spec.noise.false_positives {
        let (lo, hi) = spec.noise.fp_volume;
        let volume = rng.gen_range(lo..=hi);
        let shape = ellipsoid_offsets(volume, random_axes(&mut rng));
        let center = canvas.place(&shape, &mut rng).ok_or(Error::InfeasiblePacking {
            lesion: requests.len() + k,
            target: volume,
            attempts: PLACEMENT_ATTEMPTS,
        })?;
        let p = draw(&mut rng, spec.noise.fp_prob);
        for o in &shape {
            let q = [center[0] as isize + o[0], center[1] as isize + o[1], center[2] as isize + o[2]];
            let i = canvas.idx(q).unwrap();
            fp_mask[i] = 1;
            fp_prob[i] = p;
        }
    }

    let gt = Mask::new(dims, owner.iter().map(|&o| u8::from(o != 0)).collect())?;
    let rim = dbl_encode(&gt, &DistanceBands::default(), DistanceUnits::Voxels)?;
    let msl_class: Vec<u8> = lesions
        .iter()
        .map(|l| spec.msl_bands.category(l.volume as u64))
        .collect();
    let dbl_classes = dbl_encode(&gt, &spec.dbl_bands, DistanceUnits::Voxels)?;
    let halo = halo_mask(&gt);

    let noise = spec.noise;
    let mut fg_msl = vec![0.0f64; n];
    let mut fg_dbl = vec![0.0f64; n];
    for i in 0..n {
        let id = owner[i];
        if id != 0 {
            let small = lesions[id as usize - 1].volume < SMALL_LESION_CUTOFF;
            let on_rim = rim.labels().data()[i] == 1;
            let sure = draw(&mut rng, noise.confident);
            fg_msl[i] = if !small && on_rim {
                draw(&mut rng, noise.msl_large_rim)
            } else {
                sure
            };
            fg_dbl[i] = if small { draw(&mut rng, noise.dbl_small) } else { sure };
        } else if fp_mask[i] != 0 {
            fg_msl[i] = fp_prob[i];
            fg_dbl[i] = fp_prob[i];
        } else if halo[i] && noise.halo > 0.0 {
            fg_msl[i] = rng.gen_range(0.0..noise.halo);
            fg_dbl[i] = rng.gen_range(0.0..noise.halo);
        }
    }

    let msl_cat = |i: usize| match owner[i] {
        0 => 1,
        id => msl_class[id as usize - 1],
    };
    let dbl_cat = |i: usize| dbl_classes.labels().data()[i].max(1);
    let p_msl = class_volume::<F>(dims, &fg_msl, spec.msl_bands.category_count(), msl_cat)?;
    let p_dbl = class_volume::<F>(dims, &fg_dbl, spec.dbl_bands.category_count(), dbl_cat)?;

    Ok(SynthCase {
        gt,
        p_msl,
        p_dbl,
        lesions,
        false_positive_mask: Mask::new(dims, fp_mask)?,
    })
}

/// Background voxels 26-adjacent to the mask.
fn halo_mask(mask: &Mask) -> Vec<bool> {
    let [nx, ny, nz] = mask.dims();
    let mut out = vec![false; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) == 0 {
                    continue;
                }
                for qz in z.saturating_sub(1)..(z + 2).min(nz) {
                    for qy in y.saturating_sub(1)..(y + 2).min(ny) {
                        for qx in x.saturating_sub(1)..(x + 2).min(nx) {
                            let i = mask.index(qx, qy, qz);
                            out[i] = mask.data()[i] == 0;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Spreads each voxel's foreground probability over `classes` foreground
/// channels: 90% to the voxel's own class, the rest evenly over the others.
fn class_volume<F: Real>(
    dims: [usize; 3],
    fg: &[f64],
    classes: u8,
    class_of: impl Fn(usize) -> u8,
) -> Result<ProbVolume<F>> {
    let n = fg.len();
    let c = classes as usize;
    let mut data = vec![F::zero(); n * (c + 1)];
    for (i, &p) in fg.iter().enumerate() {
        data[i] = F::from_f64_lossy(1.0 - p);
        if c == 1 {
            data[n + i] = F::from_f64_lossy(p);
            continue;
        }
        let own = class_of(i) as usize;
        let other = p * 0.1 / (c - 1) as f64;
        for k in 1..=c {
            data[k * n + i] = F::from_f64_lossy(if k == own { p * 0.9 } else { other });
        }
    }
    ProbVolume::new(dims, [1.0; 3], c + 1, data)
}

impl<F: Real> SynthCase<F> {
    /// Shape of every volume in the case.
    pub fn dims(&self) -> [usize; 3] {
        self.gt.dims()
    }

    /// Intensity-like image for patch sampling: lesion voxels bright, the rest
    /// a smooth gradient.
    pub fn image(&self) -> VoxelGrid<f32> {
        let [nx, ny, nz] = self.dims();
        let denom = (nx + ny + nz) as f32;
        let mut img = self.gt.map(|&v| if v != 0 { 1.0 } else { 0.0 });
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = img.index(x, y, z);
                    img.data_mut()[i] += (x + y + z) as f32 / denom * 0.5;
                }
            }
        }
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::{binarize, foreground_probability};
    use crate::volume::{connected_components, Connectivity};

    #[test]
    fn zero_lesions_is_all_background() {
        let spec = SynthSpec::new([8, 8, 8], vec![], 1);
        let case = synth_generate::<f64>(&spec).unwrap();
        assert_eq!(case.gt.count_nonzero(), 0);
        assert!(case.p_msl.channel(0).iter().all(|&v| v == 1.0));
        assert!(case.p_dbl.channel(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn exact_volume_lesion() {
        let spec = SynthSpec::new([16, 16, 16], vec![LesionBand::new(50, 51, 1)], 4);
        let case = synth_generate::<f32>(&spec).unwrap();
        let comps = connected_components(&case.gt, Connectivity::Six).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].volume(), 50);
    }

    #[test]
    fn ellipsoid_sizes_are_exact() {
        for v in [1, 2, 7, 99, 100, 1234] {
            assert_eq!(ellipsoid_offsets(v, [0.7, 1.2, 1.0]).len(), v);
        }
    }

    #[test]
    fn deterministic() {
        let mut spec = SynthSpec::new(
            [24, 24, 24],
            vec![LesionBand::new(5, 100, 3), LesionBand::new(1000, 2000, 1)],
            77,
        );
        spec.noise.false_positives = 2;
        let a = synth_generate::<f32>(&spec).unwrap();
        let b = synth_generate::<f32>(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.false_positive_mask.count_nonzero() > 0);
    }

    #[test]
    fn clean_noise_reproduces_mask() {
        let mut spec = SynthSpec::new([20, 20, 20], vec![LesionBand::new(3, 400, 4)], 5);
        spec.noise = NoiseSpec::clean();
        let case = synth_generate::<f64>(&spec).unwrap();
        for p in [&case.p_msl, &case.p_dbl] {
            let m = binarize(&foreground_probability(p), 0.5).unwrap();
            assert_eq!(m, case.gt);
        }
    }

    #[test]
    fn infeasible_packing_reported() {
        let spec = SynthSpec::new([6, 6, 6], vec![LesionBand::new(150, 200, 3)], 0);
        assert!(matches!(synth_generate::<f32>(&spec), Err(Error::InfeasiblePacking { .. })));
    }

    #[test]
    fn invalid_spec() {
        let spec = SynthSpec::new([6, 6, 6], vec![LesionBand::new(10, 10, 1)], 0);
        assert!(synth_generate::<f32>(&spec).is_err());
    }
}
