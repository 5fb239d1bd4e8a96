//! Slow, obviously-correct reference computations for checking `lesionkit`.
//!
//! Everything here works on raw `&[u8]` buffers in x-fastest order so that it
//! shares no code path with the library under test.

use std::collections::{BTreeSet, VecDeque};

/// Neighbor offsets for face (6), face+edge (18) or full (26) adjacency.
pub fn neighbor_offsets(connectivity: u8) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                if manhattan == 0 {
                    continue;
                }
                let keep = match connectivity {
                    6 => manhattan == 1,
                    18 => manhattan <= 2,
                    26 => true,
                    other => panic!("unsupported connectivity {other}"),
                };
                if keep {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

fn linear(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

fn coords(dims: [usize; 3], idx: usize) -> [usize; 3] {
    [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])]
}

/// Breadth-first flood fill. Components are returned as sorted linear index
/// lists, ordered by their smallest index.
pub fn flood_fill_components(data: &[u8], dims: [usize; 3], connectivity: u8) -> Vec<Vec<usize>> {
    assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
    let offsets = neighbor_offsets(connectivity);
    let mut seen = vec![false; data.len()];
    let mut comps = Vec::new();
    for start in 0..data.len() {
        if data[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut members = Vec::new();
        while let Some(cur) = queue.pop_front() {
            members.push(cur);
            let [x, y, z] = coords(dims, cur);
            for off in &offsets {
                let nx = x as i64 + off[0];
                let ny = y as i64 + off[1];
                let nz = z as i64 + off[2];
                if nx < 0
                    || ny < 0
                    || nz < 0
                    || nx >= dims[0] as i64
                    || ny >= dims[1] as i64
                    || nz >= dims[2] as i64
                {
                    continue;
                }
                let n = linear(dims, nx as usize, ny as usize, nz as usize);
                if data[n] != 0 && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps
}

/// Exhaustive Euclidean distance from every foreground voxel to the nearest
/// background voxel centre, where the grid is surrounded by one layer of
/// background. Background voxels get 0.
pub fn brute_force_edt(data: &[u8], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
    // Every background site of the padded grid, in padded coordinates shifted by -1.
    let mut sites: Vec<[i64; 3]> = Vec::new();
    for z in -1..=dims[2] as i64 {
        for y in -1..=dims[1] as i64 {
            for x in -1..=dims[0] as i64 {
                let outside = x < 0
                    || y < 0
                    || z < 0
                    || x >= dims[0] as i64
                    || y >= dims[1] as i64
                    || z >= dims[2] as i64;
                if outside || data[linear(dims, x as usize, y as usize, z as usize)] == 0 {
                    sites.push([x, y, z]);
                }
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for (idx, value) in out.iter_mut().enumerate() {
        if data[idx] == 0 {
            continue;
        }
        let c = coords(dims, idx);
        let mut best = f64::INFINITY;
        for s in &sites {
            let mut d2 = 0.0;
            for a in 0..3 {
                let d = (c[a] as i64 - s[a]) as f64 * spacing[a];
                d2 += d * d;
            }
            if d2 < best {
                best = d2;
            }
        }
        *value = best.sqrt();
    }
    out
}

/// Lesion-wise (tp, fp, fn) by enumerating every pair of predicted and
/// ground-truth components and intersecting their voxel sets.
pub fn overlap_counts(
    pred: &[u8],
    gt: &[u8],
    dims: [usize; 3],
    connectivity: u8,
) -> (usize, usize, usize) {
    let pred_comps: Vec<BTreeSet<usize>> = flood_fill_components(pred, dims, connectivity)
        .into_iter()
        .map(|c| c.into_iter().collect())
        .collect();
    let gt_comps: Vec<BTreeSet<usize>> = flood_fill_components(gt, dims, connectivity)
        .into_iter()
        .map(|c| c.into_iter().collect())
        .collect();
    let overlaps = |a: &BTreeSet<usize>, b: &BTreeSet<usize>| a.intersection(b).next().is_some();
    let tp = gt_comps
        .iter()
        .filter(|g| pred_comps.iter().any(|p| overlaps(p, g)))
        .count();
    let fp = pred_comps
        .iter()
        .filter(|p| !gt_comps.iter().any(|g| overlaps(p, g)))
        .count();
    (tp, fp, gt_comps.len() - tp)
}

/// SplitMix64, used to produce reproducible random masks without pulling an
/// RNG crate into the oracle.
#[derive(Clone, Debug)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi].
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

/// Bernoulli mask with the given foreground density.
pub fn random_mask(rng: &mut SplitMix64, dims: [usize; 3], density: f64) -> Vec<u8> {
    (0..dims[0] * dims[1] * dims[2])
        .map(|_| u8::from(rng.next_f64() < density))
        .collect()
}
