//! Exact Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas algorithm (Felzenszwalb and
//! Huttenlocher), one pass per axis on squared distances. The grid is treated
//! as if surrounded by one layer of background, which is modelled by a
//! zero-cost virtual site just outside each end of every scan line.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::VoxelGrid;
use crate::error::Result;
use crate::Real;

/// Unit in which distances are reported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnits {
    /// Voxel index units, ignoring spacing.
    #[default]
    Voxels,
    /// Physical units using the grid spacing.
    Millimeters,
}

/// Distance from each foreground voxel centre to the nearest background voxel
/// centre; zero on background.
pub fn distance_to_background<F: Real>(
    mask: &VoxelGrid<u8>,
    units: DistanceUnits,
) -> Result<VoxelGrid<F>> {
    mask.ensure_binary()?;
    let mut sq = squared_distance_to_background::<F>(mask, units);
    sq.data_mut().par_iter_mut().for_each(|v| *v = v.sqrt());
    Ok(sq)
}

/// Squared distances, without the final square root. Non-binary input is
/// treated as foreground wherever non-zero.
pub fn squared_distance_to_background<F: Real>(
    mask: &VoxelGrid<u8>,
    units: DistanceUnits,
) -> VoxelGrid<F> {
    let [nx, ny, nz] = mask.dims();
    let step = match units {
        DistanceUnits::Voxels => [F::one(); 3],
        DistanceUnits::Millimeters => mask.spacing().map(F::from_f64_lossy),
    };
    let mut field = mask.map(|&v| if v == 0 { F::zero() } else { F::infinity() });
    let plane = nx * ny;

    // x: rows are contiguous.
    field.data_mut().par_chunks_mut(nx).for_each_init(
        || Scratch::new(nx),
        |scratch, row| {
            scratch.line[..nx].copy_from_slice(row);
            scratch.transform(nx, step[0]);
            row.copy_from_slice(&scratch.out[..nx]);
        },
    );

    // y: each z-slab is contiguous, columns are strided by nx.
    field.data_mut().par_chunks_mut(plane).for_each_init(
        || Scratch::new(ny),
        |scratch, slab| {
            for x in 0..nx {
                for y in 0..ny {
                    scratch.line[y] = slab[x + nx * y];
                }
                scratch.transform(ny, step[1]);
                for y in 0..ny {
                    slab[x + nx * y] = scratch.out[y];
                }
            }
        },
    );

    // z: gather each column, transform, then scatter back.
    let src = field.data();
    let columns: Vec<Vec<F>> = (0..plane)
        .into_par_iter()
        .map_init(
            || Scratch::new(nz),
            |scratch, col| {
                for z in 0..nz {
                    scratch.line[z] = src[col + plane * z];
                }
                scratch.transform(nz, step[2]);
                scratch.out[..nz].to_vec()
            },
        )
        .collect();
    let data = field.data_mut();
    for (col, values) in columns.into_iter().enumerate() {
        for (z, v) in values.into_iter().enumerate() {
            data[col + plane * z] = v;
        }
    }
    field
}

/// Per-thread buffers for one scan line of length `n` plus two virtual sites.
struct Scratch<F> {
    line: Vec<F>,
    out: Vec<F>,
    site_pos: Vec<F>,
    site_val: Vec<F>,
    hull_pos: Vec<F>,
    hull_val: Vec<F>,
    bounds: Vec<F>,
}

impl<F: Real> Scratch<F> {
    fn new(n: usize) -> Self {
        Self {
            line: vec![F::zero(); n],
            out: vec![F::zero(); n],
            site_pos: Vec::with_capacity(n + 2),
            site_val: Vec::with_capacity(n + 2),
            hull_pos: vec![F::zero(); n + 2],
            hull_val: vec![F::zero(); n + 2],
            bounds: vec![F::zero(); n + 3],
        }
    }

    /// 1D squared distance transform of `line[..n]` with sample spacing `step`.
    fn transform(&mut self, n: usize, step: F) {
        let two = F::one() + F::one();
        self.site_pos.clear();
        self.site_val.clear();
        self.site_pos.push(-step);
        self.site_val.push(F::zero());
        for i in 0..n {
            let v = self.line[i];
            if v.is_finite() {
                self.site_pos.push(F::from_usize(i).unwrap() * step);
                self.site_val.push(v);
            }
        }
        self.site_pos.push(F::from_usize(n).unwrap() * step);
        self.site_val.push(F::zero());

        let mut k = 0usize;
        self.hull_pos[0] = self.site_pos[0];
        self.hull_val[0] = self.site_val[0];
        self.bounds[0] = F::neg_infinity();
        self.bounds[1] = F::infinity();
        for q in 1..self.site_pos.len() {
            let (pq, fq) = (self.site_pos[q], self.site_val[q]);
            let mut s;
            loop {
                let (pv, fv) = (self.hull_pos[k], self.hull_val[k]);
                s = ((fq + pq * pq) - (fv + pv * pv)) / (two * (pq - pv));
                if s <= self.bounds[k] {
                    k -= 1;
                } else {
                    break;
                }
            }
            k += 1;
            self.hull_pos[k] = pq;
            self.hull_val[k] = fq;
            self.bounds[k] = s;
            self.bounds[k + 1] = F::infinity();
        }

        let mut k = 0usize;
        for i in 0..n {
            let x = F::from_usize(i).unwrap() * step;
            while self.bounds[k + 1] < x {
                k += 1;
            }
            let d = x - self.hull_pos[k];
            self.out[i] = d * d + self.hull_val[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(dims: [usize; 3]) -> VoxelGrid<u8> {
        VoxelGrid::filled(dims, 1).unwrap()
    }

    #[test]
    fn single_voxel_has_distance_one() {
        let mut m = VoxelGrid::zeros([5, 5, 5]).unwrap();
        m.set(2, 2, 2, 1);
        let d = distance_to_background::<f64>(&m, DistanceUnits::Voxels).unwrap();
        assert_eq!(d.get(2, 2, 2), 1.0);
        assert_eq!(d.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn full_cube_centre() {
        // brute force over the padded shell: nearest outside layer is 3 away
        let d = distance_to_background::<f64>(&solid([5, 5, 5]), DistanceUnits::Voxels).unwrap();
        assert_eq!(d.get(2, 2, 2), 3.0);
        assert_eq!(d.get(0, 0, 0), 1.0);
        assert_eq!(d.get(1, 2, 2), 2.0);
    }

    #[test]
    fn spacing_scales_distances() {
        let mut m = solid([5, 5, 5]);
        m.set_spacing([2.0, 1.0, 1.0]).unwrap();
        let d = distance_to_background::<f64>(&m, DistanceUnits::Millimeters).unwrap();
        // along y/z the nearest outside voxel is 3 mm away, along x 6 mm
        assert_eq!(d.get(2, 2, 2), 3.0);
        let v = distance_to_background::<f64>(&m, DistanceUnits::Voxels).unwrap();
        assert_eq!(v.get(2, 2, 2), 3.0);
        assert_eq!(d.get(0, 2, 2), 2.0);
    }

    #[test]
    fn single_slice_and_thin_line() {
        let d = distance_to_background::<f64>(&solid([5, 5, 1]), DistanceUnits::Voxels).unwrap();
        assert!(d.data().iter().all(|&v| v == 1.0));
        let d = distance_to_background::<f32>(&solid([7, 1, 1]), DistanceUnits::Voxels).unwrap();
        assert!(d.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn diagonal_distance() {
        // background only at one corner; far corner is sqrt(3)*4 away unless the
        // outside padding is closer, which it is (distance 1).
        let mut m = solid([5, 5, 5]);
        m.set(0, 0, 0, 0);
        let d = distance_to_background::<f64>(&m, DistanceUnits::Voxels).unwrap();
        assert_eq!(d.get(1, 1, 1), 2.0f64.min(3.0f64.sqrt()));
        assert_eq!(d.get(0, 0, 0), 0.0);
    }
}
