use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Mask, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: [usize; 3],
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            size: [128; 3],
            seed: 0,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size.contains(&0) {
            return Err(Error::InvalidParameter(format!("patch size {:?} must be positive", self.size)));
        }
        Ok(())
    }

    /// Random stream seeded from `seed`.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// A crop; `corner` may be negative when the grid is smaller than the patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    pub corner: [isize; 3],
    pub image: VoxelGrid<T>,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair<T> {
    /// Uniformly placed crop.
    pub random: Patch<T>,
    /// Crop centred on a uniformly chosen lesion voxel, or another uniform
    /// crop when the mask is empty.
    pub lesion_centered: Patch<T>,
    /// The lesion voxel the second crop is centred on.
    pub center_voxel: Option<[usize; 3]>,
}

/// Valid corner range along one axis: the patch stays inside the grid, or the
/// grid inside the patch when the grid is smaller.
fn corner_range(n: usize, p: usize) -> (isize, isize) {
    let d = n as isize - p as isize;
    (d.min(0), d.max(0))
}

/// Copies the patch at `corner`; voxels outside the grid are `T::default()`
/// in the image and background in the mask.
pub fn extract_patch<T: Copy + Default>(
    image: &VoxelGrid<T>,
    mask: &Mask,
    corner: [isize; 3],
    size: [usize; 3],
) -> Result<Patch<T>> {
    image.ensure_same_shape(mask)?;
    let dims = image.dims();
    let mut img = VoxelGrid::with_spacing(size, image.spacing(), vec![T::default(); size.iter().product()])?;
    let mut msk = VoxelGrid::with_spacing(size, mask.spacing(), vec![0u8; size.iter().product()])?;
    for z in 0..size[2] {
        let sz = corner[2] + z as isize;
        if sz < 0 || sz >= dims[2] as isize {
            continue;
        }
        for y in 0..size[1] {
            let sy = corner[1] + y as isize;
            if sy < 0 || sy >= dims[1] as isize {
                continue;
            }
            for x in 0..size[0] {
                let sx = corner[0] + x as isize;
                if sx < 0 || sx >= dims[0] as isize {
                    continue;
                }
                let (sx, sy, sz) = (sx as usize, sy as usize, sz as usize);
                img.set(x, y, z, image.get(sx, sy, sz));
                msk.set(x, y, z, mask.get(sx, sy, sz));
            }
        }
    }
    Ok(Patch {
        corner,
        image: img,
        mask: msk,
    })
}

fn uniform_corner<R: Rng + ?Sized>(dims: [usize; 3], size: [usize; 3], rng: &mut R) -> [isize; 3] {
    std::array::from_fn(|a| {
        let (lo, hi) = corner_range(dims[a], size[a]);
        rng.gen_range(lo..=hi)
    })
}

/// Corner that puts `voxel` at index `size / 2` of the patch, clamped into the
/// valid corner range.
pub fn centered_corner(dims: [usize; 3], size: [usize; 3], voxel: [usize; 3]) -> [isize; 3] {
    std::array::from_fn(|a| {
        let (lo, hi) = corner_range(dims[a], size[a]);
        (voxel[a] as isize - (size[a] / 2) as isize).clamp(lo, hi)
    })
}

/// Draws one uniform crop and one lesion-centred crop.
pub fn sample_patch_pair<T: Copy + Default, R: Rng + ?Sized>(
    image: &VoxelGrid<T>,
    mask: &Mask,
    spec: &PatchSpec,
    rng: &mut R,
) -> Result<PatchPair<T>> {
    spec.validate()?;
    image.ensure_same_shape(mask)?;
    let dims = image.dims();
    let random = extract_patch(image, mask, uniform_corner(dims, spec.size, rng), spec.size)?;

    let lesion_voxels = mask.count_nonzero();
    let (corner, center_voxel) = if lesion_voxels == 0 {
        (uniform_corner(dims, spec.size, rng), None)
    } else {
        let pick = rng.gen_range(0..lesion_voxels);
        let index = mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .nth(pick)
            .map(|(i, _)| i)
            .expect("pick < lesion voxel count");
        let voxel = mask.coords(index);
        (centered_corner(dims, spec.size, voxel), Some(voxel))
    };
    let lesion_centered = extract_patch(image, mask, corner, spec.size)?;
    Ok(PatchPair {
        random,
        lesion_centered,
        center_voxel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(size: [usize; 3]) -> PatchSpec {
        PatchSpec { size, seed: 0 }
    }

    #[test]
    fn centred_on_interior_voxel() {
        let dims = [20, 20, 20];
        let mut mask = Mask::zeros(dims).unwrap();
        mask.set(10, 10, 10, 1);
        let image = VoxelGrid::filled(dims, 1.0f32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pair = sample_patch_pair(&image, &mask, &spec([8, 8, 8]), &mut rng).unwrap();
        assert_eq!(pair.center_voxel, Some([10, 10, 10]));
        assert_eq!(pair.lesion_centered.corner, [6, 6, 6]);
        assert_eq!(pair.lesion_centered.mask.get(4, 4, 4), 1);
    }

    #[test]
    fn corner_lesion_is_clamped() {
        let dims = [16, 16, 16];
        let mut mask = Mask::zeros(dims).unwrap();
        mask.set(0, 15, 0, 1);
        let image = VoxelGrid::filled(dims, 0u8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pair = sample_patch_pair(&image, &mask, &spec([8, 8, 8]), &mut rng).unwrap();
        // v - p/2 = (-4, 11, -4) clamped to [0, 8]
        assert_eq!(pair.lesion_centered.corner, [0, 8, 0]);
        assert_eq!(pair.lesion_centered.mask.get(0, 7, 0), 1);
    }

    #[test]
    fn empty_mask_falls_back_to_uniform() {
        let dims = [10, 10, 10];
        let mask = Mask::zeros(dims).unwrap();
        let image = VoxelGrid::filled(dims, 2i16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pair = sample_patch_pair(&image, &mask, &spec([4, 4, 4]), &mut rng).unwrap();
        assert!(pair.center_voxel.is_none());
        for p in [&pair.random, &pair.lesion_centered] {
            assert!(p.corner.iter().all(|&c| (0..=6).contains(&c)));
            assert!(p.image.data().iter().all(|&v| v == 2));
        }
    }

    #[test]
    fn small_grid_is_padded() {
        let dims = [3, 3, 3];
        let mask = Mask::filled(dims, 1).unwrap();
        let image = VoxelGrid::filled(dims, 5.0f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pair = sample_patch_pair(&image, &mask, &spec([5, 5, 5]), &mut rng).unwrap();
        for p in [&pair.random, &pair.lesion_centered] {
            assert_eq!(p.mask.count_nonzero(), 27);
            assert_eq!(p.image.data().iter().filter(|&&v| v == 5.0).count(), 27);
        }
        let v = pair.center_voxel.unwrap();
        let c = pair.lesion_centered.corner;
        let local: Vec<isize> = (0..3).map(|a| v[a] as isize - c[a]).collect();
        assert!(local.iter().all(|&l| (0..5).contains(&l)));
    }

    #[test]
    fn rejects_bad_spec() {
        let m = Mask::zeros([2, 2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_patch_pair(&m, &m, &spec([0, 1, 1]), &mut rng).is_err());
    }
}
