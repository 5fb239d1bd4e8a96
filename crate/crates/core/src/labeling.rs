//! Multi-class relabeling of binary lesion masks and the way back.
//!
//! Two encodings turn a binary mask into a category mask:
//!
//! - size bands (MSL): every voxel of a lesion gets the band of the lesion's
//!   volume, lower bound inclusive, upper bound exclusive;
//! - distance bands (DBL): every lesion voxel gets the band of its distance to
//!   the nearest non-lesion voxel, with the first band closed above.
//!
//! A network trained on either encoding predicts class probabilities, which
//! [`foreground_probability`] collapses back into a single lesion probability
//! and [`binarize`] thresholds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{distance_to_background, label_components, Connectivity, DistanceUnits, VoxelGrid};
use crate::{ForegroundProb, Mask, Real};

/// Allowed deviation of a voxel's class-probability sum from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

/// Canonical volume cutoffs: tiny < 100 <= small < 1,000 <= medium < 10,000 <= large.
pub const DEFAULT_SIZE_THRESHOLDS: [u64; 3] = [100, 1_000, 10_000];

/// Canonical boundary/interior cutoff in voxel units.
pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 2.0;

/// Volume cutoffs for size-band labeling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct SizeBands(Vec<u64>);

impl SizeBands {
    pub fn new(thresholds: Vec<u64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::InvalidBands("size bands need at least one threshold".into()));
        }
        if thresholds[0] == 0 || thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBands(format!("{thresholds:?}")));
        }
        if thresholds.len() >= u8::MAX as usize {
            return Err(Error::InvalidBands(format!("{} thresholds is too many", thresholds.len())));
        }
        Ok(Self(thresholds))
    }

    pub fn thresholds(&self) -> &[u64] {
        &self.0
    }

    /// Number of foreground categories.
    pub fn category_count(&self) -> u8 {
        self.0.len() as u8 + 1
    }

    /// 1-based category for a lesion of `volume` voxels.
    pub fn category(&self, volume: u64) -> u8 {
        1 + self.0.iter().filter(|&&t| t <= volume).count() as u8
    }

    /// Human-readable category names, index 0 = category 1.
    pub fn category_names(&self) -> Vec<String> {
        if self.0 == DEFAULT_SIZE_THRESHOLDS {
            return ["tiny", "small", "medium", "large"].map(String::from).to_vec();
        }
        let mut names = Vec::with_capacity(self.0.len() + 1);
        names.push(format!("lt{}", self.0[0]));
        for w in self.0.windows(2) {
            names.push(format!("{}to{}", w[0], w[1]));
        }
        names.push(format!("ge{}", self.0[self.0.len() - 1]));
        names
    }
}

impl Default for SizeBands {
    fn default() -> Self {
        Self(DEFAULT_SIZE_THRESHOLDS.to_vec())
    }
}

impl TryFrom<Vec<u64>> for SizeBands {
    type Error = Error;

    fn try_from(v: Vec<u64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SizeBands> for Vec<u64> {
    fn from(b: SizeBands) -> Self {
        b.0
    }
}

/// Distance cutoffs for distance-band labeling. Empty means plain binary
/// labeling with a single foreground class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DistanceBands(Vec<f64>);

impl DistanceBands {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.iter().any(|t| !t.is_finite() || *t <= 0.0)
            || thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidBands(format!("{thresholds:?}")));
        }
        if thresholds.len() >= u8::MAX as usize {
            return Err(Error::InvalidBands(format!("{} thresholds is too many", thresholds.len())));
        }
        Ok(Self(thresholds))
    }

    /// Boundary, transition and interior bands at 2 and 4.
    pub fn with_transition() -> Self {
        Self(vec![2.0, 4.0])
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.0
    }

    pub fn category_count(&self) -> u8 {
        self.0.len() as u8 + 1
    }

    /// 1-based category for a lesion voxel at distance `d`.
    pub fn category(&self, d: f64) -> u8 {
        1 + self.0.iter().filter(|&&t| t < d).count() as u8
    }

    pub fn category_names(&self) -> Vec<String> {
        match self.0.as_slice() {
            [] => vec!["lesion".into()],
            [t] if *t == DEFAULT_DISTANCE_THRESHOLD => vec!["boundary".into(), "interior".into()],
            [a, b] if *a == 2.0 && *b == 4.0 => {
                vec!["boundary".into(), "transition".into(), "interior".into()]
            }
            ts => {
                let mut names = vec![format!("le{}", ts[0])];
                for w in ts.windows(2) {
                    names.push(format!("{}to{}", w[0], w[1]));
                }
                names.push(format!("gt{}", ts[ts.len() - 1]));
                names
            }
        }
    }
}

impl Default for DistanceBands {
    fn default() -> Self {
        Self(vec![DEFAULT_DISTANCE_THRESHOLD])
    }
}

impl TryFrom<Vec<f64>> for DistanceBands {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DistanceBands> for Vec<f64> {
    fn from(b: DistanceBands) -> Self {
        b.0
    }
}

/// Which relabeling a category mask came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Msl,
    Dbl,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Msl => "msl",
            Strategy::Dbl => "dbl",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msl" => Ok(Strategy::Msl),
            "dbl" => Ok(Strategy::Dbl),
            other => Err(Error::InvalidParameter(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Integer labels, 0 = background and `1..=category_count` foreground.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryMask {
    labels: VoxelGrid<u8>,
    category_count: u8,
}

impl CategoryMask {
    pub fn new(labels: VoxelGrid<u8>, category_count: u8) -> Result<Self> {
        if let Some(index) = labels.data().iter().position(|&l| l > category_count) {
            return Err(Error::InvalidParameter(format!(
                "label {} at voxel {index} exceeds category count {category_count}",
                labels.data()[index]
            )));
        }
        Ok(Self {
            labels,
            category_count,
        })
    }

    pub fn labels(&self) -> &VoxelGrid<u8> {
        &self.labels
    }

    pub fn into_labels(self) -> VoxelGrid<u8> {
        self.labels
    }

    pub fn category_count(&self) -> u8 {
        self.category_count
    }

    /// Voxel count per category, index 0 = category 1.
    pub fn voxel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.category_count as usize];
        for &l in self.labels.data() {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }
}

/// Labels every voxel of a lesion by the size band of that lesion.
pub fn msl_encode(mask: &Mask, bands: &SizeBands, conn: Connectivity) -> Result<CategoryMask> {
    mask.ensure_binary()?;
    let comps = label_components(mask, conn);
    let per_id: Vec<u8> = comps
        .volumes
        .iter()
        .map(|&v| bands.category(v as u64))
        .collect();
    let labels = comps
        .labels
        .map(|&id| if id == 0 { 0 } else { per_id[id as usize - 1] });
    Ok(CategoryMask {
        labels,
        category_count: bands.category_count(),
    })
}

/// Labels every lesion voxel by the distance band of its distance to the
/// nearest non-lesion voxel.
pub fn dbl_encode(mask: &Mask, bands: &DistanceBands, units: DistanceUnits) -> Result<CategoryMask> {
    mask.ensure_binary()?;
    if bands.thresholds().is_empty() {
        return Ok(CategoryMask {
            labels: mask.clone(),
            category_count: 1,
        });
    }
    let dist = distance_to_background::<f64>(mask, units)?;
    let mut labels = mask.clone();
    for (l, &d) in labels.data_mut().iter_mut().zip(dist.data()) {
        if *l != 0 {
            *l = bands.category(d);
        }
    }
    Ok(CategoryMask {
        labels,
        category_count: bands.category_count(),
    })
}

/// Foreground iff label >= 1.
pub fn category_to_binary(cm: &CategoryMask) -> Mask {
    cm.labels.map(|&l| u8::from(l >= 1))
}

/// Per-voxel class probabilities, channel 0 = background.
///
/// Stored channel-major (all voxels of channel 0, then channel 1, ...), each
/// channel x-fastest, which is the layout of a 4D volume file.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVolume<F> {
    dims: [usize; 3],
    spacing: [f64; 3],
    channels: usize,
    data: Vec<F>,
}

impl<F: Real> ProbVolume<F> {
    /// Validates range and normalization within [`NORMALIZATION_TOLERANCE`].
    pub fn new(dims: [usize; 3], spacing: [f64; 3], channels: usize, data: Vec<F>) -> Result<Self> {
        let vol = Self::unchecked(dims, spacing, channels, data)?;
        vol.validate()?;
        Ok(vol)
    }

    /// Clamps negatives to zero and rescales each voxel to sum to one. A voxel
    /// whose channels are all zero becomes pure background.
    pub fn renormalized(
        dims: [usize; 3],
        spacing: [f64; 3],
        channels: usize,
        data: Vec<F>,
    ) -> Result<Self> {
        let mut vol = Self::unchecked(dims, spacing, channels, data)?;
        let n = vol.voxel_count();
        for i in 0..n {
            let mut sum = F::zero();
            for c in 0..channels {
                let v = &mut vol.data[c * n + i];
                if !(*v > F::zero()) {
                    *v = F::zero();
                }
                sum = sum + *v;
            }
            if sum > F::zero() {
                for c in 0..channels {
                    vol.data[c * n + i] = vol.data[c * n + i] / sum;
                }
            } else {
                vol.data[i] = F::one();
            }
        }
        vol.validate()?;
        Ok(vol)
    }

    /// Builds a volume from a foreground map, splitting `p_k` evenly over the
    /// `channels - 1` foreground classes.
    pub fn from_foreground(fg: &ForegroundProb<F>, channels: usize) -> Result<Self> {
        if channels < 2 {
            return Err(Error::TooFewChannels(channels));
        }
        let n = fg.len();
        let share = F::from_usize(channels - 1).unwrap();
        let mut data = vec![F::zero(); n * channels];
        for (i, &p) in fg.data().iter().enumerate() {
            data[i] = F::one() - p;
            for c in 1..channels {
                data[c * n + i] = p / share;
            }
        }
        Self::new(fg.dims(), fg.spacing(), channels, data)
    }

    fn unchecked(dims: [usize; 3], spacing: [f64; 3], channels: usize, data: Vec<F>) -> Result<Self> {
        if channels < 2 {
            return Err(Error::TooFewChannels(channels));
        }
        // Reuse VoxelGrid's shape checks on the first channel.
        let n = VoxelGrid::with_spacing(dims, spacing, vec![(); dims.iter().product()])?.len();
        let expected = n
            .checked_mul(channels)
            .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?} x {channels}")))?;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            channels,
            data,
        })
    }

    fn validate(&self) -> Result<()> {
        let n = self.voxel_count();
        let tol = F::from_f64_lossy(NORMALIZATION_TOLERANCE);
        for i in 0..n {
            let mut sum = F::zero();
            for c in 0..self.channels {
                let v = self.data[c * n + i];
                if !(v >= F::zero() && v <= F::one()) {
                    return Err(Error::ProbabilityOutOfRange {
                        index: i,
                        channel: c,
                        value: v.to_f64_lossless(),
                    });
                }
                sum = sum + v;
            }
            if (sum - F::one()).abs() > tol {
                return Err(Error::NotNormalized {
                    index: i,
                    sum: sum.to_f64_lossless(),
                    tolerance: NORMALIZATION_TOLERANCE,
                });
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// Number of classes including background.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len() / self.channels
    }

    /// Channel-major raw data.
    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[F] {
        let n = self.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    /// Class probability vector of voxel `index`.
    pub fn voxel(&self, index: usize) -> Vec<F> {
        let n = self.voxel_count();
        (0..self.channels).map(|c| self.data[c * n + index]).collect()
    }

    /// Most probable class per voxel; ties go to the lower class.
    pub fn argmax(&self) -> VoxelGrid<u8> {
        let n = self.voxel_count();
        let labels = (0..n)
            .map(|i| {
                let mut best = 0usize;
                for c in 1..self.channels {
                    if self.data[c * n + i] > self.data[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        VoxelGrid::with_spacing(self.dims, self.spacing, labels).expect("shape already validated")
    }
}

/// `p_k = sum_{i >= 1} p_{k,i}`, clamped into [0, 1].
pub fn foreground_probability<F: Real>(probs: &ProbVolume<F>) -> ForegroundProb<F> {
    let n = probs.voxel_count();
    let mut fg = vec![F::zero(); n];
    for c in 1..probs.channels {
        for (acc, &v) in fg.iter_mut().zip(&probs.data[c * n..(c + 1) * n]) {
            *acc = *acc + v;
        }
    }
    for v in &mut fg {
        *v = v.min(F::one());
    }
    VoxelGrid::with_spacing(probs.dims, probs.spacing, fg).expect("shape already validated")
}

/// Foreground iff `p_k > threshold`.
pub fn binarize<F: Real>(fg: &ForegroundProb<F>, threshold: F) -> Result<Mask> {
    if !(threshold >= F::zero() && threshold <= F::one()) {
        return Err(Error::OutOfUnitRange {
            name: "threshold",
            value: threshold.to_f64_lossless(),
        });
    }
    Ok(fg.map(|&p| u8::from(p > threshold)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_mask(dims: [usize; 3], runs: &[(usize, usize)]) -> Mask {
        // runs of consecutive linear indices
        let mut m = Mask::zeros(dims).unwrap();
        for &(start, len) in runs {
            for i in start..start + len {
                m.data_mut()[i] = 1;
            }
        }
        m
    }

    #[test]
    fn size_band_boundaries() {
        let b = SizeBands::default();
        let cats: Vec<u8> = [1, 99, 100, 999, 1000, 9999, 10_000, 200_000]
            .iter()
            .map(|&v| b.category(v))
            .collect();
        assert_eq!(cats, vec![1, 1, 2, 2, 3, 3, 4, 4]);
        assert_eq!(b.category_names(), vec!["tiny", "small", "medium", "large"]);
    }

    #[test]
    fn distance_band_boundaries() {
        let b = DistanceBands::default();
        assert_eq!(b.category(1.0), 1);
        assert_eq!(b.category(2.0), 1);
        assert_eq!(b.category(5f64.sqrt()), 2);
        let t = DistanceBands::with_transition();
        assert_eq!([t.category(2.0), t.category(3.0), t.category(4.0), t.category(4.1)], [1, 2, 2, 3]);
        assert_eq!(DistanceBands::new(vec![]).unwrap().category(7.0), 1);
    }

    #[test]
    fn band_validation() {
        assert!(SizeBands::new(vec![]).is_err());
        assert!(SizeBands::new(vec![0, 5]).is_err());
        assert!(SizeBands::new(vec![10, 10]).is_err());
        assert!(DistanceBands::new(vec![4.0, 2.0]).is_err());
        assert!(DistanceBands::new(vec![-1.0]).is_err());
        assert!(DistanceBands::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn msl_single_component_sizes() {
        let dims = [200, 60, 1];
        let m = line_mask(dims, &[(0, 99)]);
        let cm = msl_encode(&m, &SizeBands::default(), Connectivity::TwentySix).unwrap();
        assert!(cm.labels().data()[..99].iter().all(|&l| l == 1));
        assert_eq!(cm.voxel_counts(), vec![99, 0, 0, 0]);

        let big = Mask::filled([100, 100, 1], 1).unwrap();
        let cm = msl_encode(&big, &SizeBands::default(), Connectivity::Six).unwrap();
        assert!(cm.labels().data().iter().all(|&l| l == 4));
    }

    #[test]
    fn msl_mixed_components() {
        // 50 voxels on row 0 and 5,000 voxels on rows 2..52 of a 100-wide slab
        let dims = [100, 60, 1];
        let m = line_mask(dims, &[(0, 50), (200, 5000)]);
        let cm = msl_encode(&m, &SizeBands::default(), Connectivity::TwentySix).unwrap();
        assert_eq!(cm.labels().data()[0], 1);
        assert_eq!(cm.labels().data()[200], 3);
        assert_eq!(cm.voxel_counts(), vec![50, 0, 5000, 0]);
    }

    #[test]
    fn msl_empty() {
        let m = Mask::zeros([4, 4, 4]).unwrap();
        let cm = msl_encode(&m, &SizeBands::default(), Connectivity::TwentySix).unwrap();
        assert!(cm.labels().data().iter().all(|&l| l == 0));
    }

    #[test]
    fn dbl_cubes() {
        let mut m = Mask::zeros([3, 3, 3]).unwrap();
        m.set(1, 1, 1, 1);
        let cm = dbl_encode(&m, &DistanceBands::default(), DistanceUnits::Voxels).unwrap();
        assert_eq!(cm.labels().get(1, 1, 1), 1);

        // solid 5^3 cube inside a 7^3 grid: centre distance 3 > 2
        let mut m = Mask::zeros([7, 7, 7]).unwrap();
        for z in 1..6 {
            for y in 1..6 {
                for x in 1..6 {
                    m.set(x, y, z, 1);
                }
            }
        }
        let cm = dbl_encode(&m, &DistanceBands::default(), DistanceUnits::Voxels).unwrap();
        assert_eq!(cm.labels().get(3, 3, 3), 2);
        assert_eq!(cm.labels().get(1, 1, 1), 1);

        let cube3 = Mask::filled([3, 3, 3], 1).unwrap();
        let cm = dbl_encode(&cube3, &DistanceBands::default(), DistanceUnits::Voxels).unwrap();
        assert!(cm.labels().data().iter().all(|&l| l == 1));

        let cube9 = Mask::filled([9, 9, 9], 1).unwrap();
        let cm = dbl_encode(&cube9, &DistanceBands::with_transition(), DistanceUnits::Voxels).unwrap();
        assert_eq!(cm.labels().get(4, 4, 4), 3);
        assert_eq!(cm.category_count(), 3);
    }

    #[test]
    fn dbl_without_bands_is_binary() {
        let m = Mask::filled([4, 4, 4], 1).unwrap();
        let cm = dbl_encode(&m, &DistanceBands::new(vec![]).unwrap(), DistanceUnits::Voxels).unwrap();
        assert_eq!(cm.category_count(), 1);
        assert_eq!(cm.labels(), &m);
    }

    #[test]
    fn foreground_probability_examples() {
        let data = vec![0.2f64, 1.0, 0.2, 0.0, 0.2, 0.0, 0.2, 0.0, 0.2, 0.0];
        let pv = ProbVolume::new([2, 1, 1], [1.0; 3], 5, data).unwrap();
        let fg = foreground_probability(&pv);
        assert!((fg.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(fg.data()[1], 0.0);
        assert_eq!(pv.voxel(0), vec![0.2; 5]);
    }

    #[test]
    fn prob_volume_validation() {
        assert!(matches!(
            ProbVolume::new([1, 1, 1], [1.0; 3], 2, vec![0.5f32, 0.6]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(matches!(
            ProbVolume::new([1, 1, 1], [1.0; 3], 2, vec![1.5f64, -0.5]),
            Err(Error::ProbabilityOutOfRange { .. })
        ));
        assert!(matches!(
            ProbVolume::new([1, 1, 1], [1.0; 3], 1, vec![1.0f64]),
            Err(Error::TooFewChannels(1))
        ));
        // within tolerance
        assert!(ProbVolume::new([1, 1, 1], [1.0; 3], 2, vec![0.5f64, 0.500_009]).is_ok());
        let r = ProbVolume::renormalized([2, 1, 1], [1.0; 3], 2, vec![1.0f64, 0.0, 3.0, 0.0]).unwrap();
        assert_eq!(r.voxel(0), vec![0.25, 0.75]);
        assert_eq!(r.voxel(1), vec![1.0, 0.0]);
    }

    #[test]
    fn binarize_is_strict() {
        let fg = VoxelGrid::new([3, 1, 1], vec![0.5f64, 0.500001, 0.0]).unwrap();
        assert_eq!(binarize(&fg, 0.5).unwrap().data(), &[0, 1, 0]);
        assert!(binarize(&fg, 1.5).is_err());
        assert!(binarize(&fg, f64::NAN).is_err());
        let zero = VoxelGrid::filled([2, 2, 2], 0.0f32).unwrap();
        assert_eq!(binarize(&zero, 0.5).unwrap().count_nonzero(), 0);
    }

    #[test]
    fn category_round_trip_and_argmax() {
        let m = line_mask([10, 10, 2], &[(3, 20), (120, 5)]);
        let cm = msl_encode(&m, &SizeBands::default(), Connectivity::TwentySix).unwrap();
        assert_eq!(category_to_binary(&cm), m);
        let cm = dbl_encode(&m, &DistanceBands::default(), DistanceUnits::Voxels).unwrap();
        assert_eq!(category_to_binary(&cm), m);
        let zero = CategoryMask::new(Mask::zeros([2, 2, 2]).unwrap(), 4).unwrap();
        assert_eq!(category_to_binary(&zero).count_nonzero(), 0);
        assert!(CategoryMask::new(Mask::filled([1, 1, 1], 5).unwrap(), 4).is_err());

        let fg = VoxelGrid::new([2, 1, 1], vec![0.9f64, 0.1]).unwrap();
        let pv = ProbVolume::from_foreground(&fg, 3).unwrap();
        assert_eq!(pv.argmax().data(), &[1, 0]);
    }
}
