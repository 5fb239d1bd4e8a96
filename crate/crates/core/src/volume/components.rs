use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::VoxelGrid;
use crate::error::{Error, Result};

/// Voxel adjacency used to decide which foreground voxels form one lesion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Connectivity {
    /// Shared face.
    Six,
    /// Shared face or edge.
    Eighteen,
    /// Shared face, edge or corner.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn neighbors(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    fn admits(self, offset: [i64; 3]) -> bool {
        let manhattan = offset[0].abs() + offset[1].abs() + offset[2].abs();
        match self {
            Connectivity::Six => manhattan == 1,
            Connectivity::Eighteen => (1..=2).contains(&manhattan),
            Connectivity::TwentySix => manhattan >= 1,
        }
    }

    /// Neighbors already visited by an x-fastest raster scan.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1..=0i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if before && self.admits([dx, dy, dz]) {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u32> for Connectivity {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        match value {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidConnectivity(other)),
        }
    }
}

impl From<Connectivity> for u32 {
    fn from(c: Connectivity) -> u32 {
        c.neighbors()
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: u32 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("connectivity {s:?} is not a number")))?;
        Connectivity::try_from(n)
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neighbors())
    }
}

/// Inclusive voxel-index bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    fn point(p: [usize; 3]) -> Self {
        Self { min: p, max: p }
    }

    fn include(&mut self, p: [usize; 3]) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }
}

/// One connected lesion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LesionComponent {
    /// 1-based, in order of each component's smallest linear index.
    pub id: u32,
    /// Ascending linear indices into the source grid.
    pub voxels: Vec<usize>,
    pub bbox: BoundingBox,
}

impl LesionComponent {
    /// `|K|`, the voxel count.
    pub fn volume(&self) -> usize {
        self.voxels.len()
    }

    pub fn voxel_coords(&self, dims: [usize; 3]) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.voxels
            .iter()
            .map(move |&i| [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])])
    }
}

/// Per-voxel component ids (0 = background) and the voxel count of each id.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentLabels {
    pub labels: VoxelGrid<u32>,
    /// `volumes[id - 1]` is the size of component `id`.
    pub volumes: Vec<usize>,
}

impl ComponentLabels {
    pub fn count(&self) -> usize {
        self.volumes.len()
    }

    pub fn volume_of(&self, id: u32) -> usize {
        self.volumes[id as usize - 1]
    }

    pub fn max_volume(&self) -> usize {
        self.volumes.iter().copied().max().unwrap_or(0)
    }

    /// Expands the label grid into explicit component records.
    pub fn components(&self) -> Vec<LesionComponent> {
        let mut comps: Vec<LesionComponent> = self
            .volumes
            .iter()
            .enumerate()
            .map(|(i, &v)| LesionComponent {
                id: i as u32 + 1,
                voxels: Vec::with_capacity(v),
                bbox: BoundingBox::point([usize::MAX; 3]),
            })
            .collect();
        for (idx, &label) in self.labels.data().iter().enumerate() {
            if label == 0 {
                continue;
            }
            let p = self.labels.coords(idx);
            let c = &mut comps[label as usize - 1];
            if c.voxels.is_empty() {
                c.bbox = BoundingBox::point(p);
            } else {
                c.bbox.include(p);
            }
            c.voxels.push(idx);
        }
        comps
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let ra = self.find(a);
        let rb = self.find(b);
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Two-pass union-find labeling. Any non-zero voxel counts as foreground.
pub fn label_components(mask: &VoxelGrid<u8>, conn: Connectivity) -> ComponentLabels {
    let [nx, ny, nz] = mask.dims();
    let offsets: Vec<([i64; 3], isize)> = conn
        .backward_offsets()
        .into_iter()
        .map(|o| (o, o[0] as isize + nx as isize * (o[1] as isize + ny as isize * o[2] as isize)))
        .collect();

    let data = mask.data();
    let mut provisional = vec![u32::MAX; data.len()];
    let mut sets = DisjointSet { parent: Vec::new() };

    let mut idx = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if data[idx] != 0 {
                    let mut current = u32::MAX;
                    for &(o, delta) in &offsets {
                        let (qx, qy, qz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                        if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 {
                            continue;
                        }
                        let n = provisional[(idx as isize + delta) as usize];
                        if n == u32::MAX {
                            continue;
                        }
                        current = if current == u32::MAX {
                            sets.find(n)
                        } else {
                            sets.union(current, n)
                        };
                    }
                    provisional[idx] = if current == u32::MAX {
                        sets.make()
                    } else {
                        current
                    };
                }
                idx += 1;
            }
        }
    }

    // Final ids follow the first raster appearance of each root, which is the
    // component's smallest linear index.
    let mut final_id = vec![0u32; sets.parent.len()];
    let mut volumes: Vec<usize> = Vec::new();
    let mut labels = vec![0u32; data.len()];
    for (i, &p) in provisional.iter().enumerate() {
        if p == u32::MAX {
            continue;
        }
        let root = sets.find(p) as usize;
        if final_id[root] == 0 {
            volumes.push(0);
            final_id[root] = volumes.len() as u32;
        }
        let id = final_id[root];
        volumes[id as usize - 1] += 1;
        labels[i] = id;
    }

    ComponentLabels {
        labels: mask
            .with_data(labels)
            .expect("label grid has the mask's shape"),
        volumes,
    }
}

/// Maximal connected foreground sets of a binary mask.
pub fn connected_components(mask: &VoxelGrid<u8>, conn: Connectivity) -> Result<Vec<LesionComponent>> {
    mask.ensure_binary()?;
    Ok(label_components(mask, conn).components())
}

/// `id -> |K|`.
pub fn component_volumes(components: &[LesionComponent]) -> BTreeMap<u32, usize> {
    components.iter().map(|c| (c.id, c.volume())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(dims: [usize; 3], on: &[[usize; 3]]) -> VoxelGrid<u8> {
        let mut m = VoxelGrid::zeros(dims).unwrap();
        for p in on {
            m.set(p[0], p[1], p[2], 1);
        }
        m
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = VoxelGrid::zeros([8, 8, 8]).unwrap();
        assert!(connected_components(&m, Connectivity::TwentySix).unwrap().is_empty());
    }

    #[test]
    fn diagonal_voxels_depend_on_connectivity() {
        let m = mask_with([4, 4, 4], &[[0, 0, 0], [1, 1, 1]]);
        let c26 = connected_components(&m, Connectivity::TwentySix).unwrap();
        assert_eq!(c26.len(), 1);
        assert_eq!(c26[0].volume(), 2);
        let c6 = connected_components(&m, Connectivity::Six).unwrap();
        assert_eq!(c6.iter().map(|c| c.volume()).collect::<Vec<_>>(), vec![1, 1]);
        assert_eq!(connected_components(&m, Connectivity::Eighteen).unwrap().len(), 2);
    }

    #[test]
    fn edge_neighbors_join_under_18() {
        let m = mask_with([3, 3, 3], &[[0, 0, 0], [1, 1, 0]]);
        assert_eq!(connected_components(&m, Connectivity::Eighteen).unwrap().len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Six).unwrap().len(), 2);
    }

    #[test]
    fn u_shape_merges_late() {
        // Two arms that only meet on the last row.
        let m = mask_with(
            [3, 3, 1],
            &[[0, 0, 0], [2, 0, 0], [0, 1, 0], [2, 1, 0], [0, 2, 0], [1, 2, 0], [2, 2, 0]],
        );
        let comps = connected_components(&m, Connectivity::Six).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].volume(), 7);
        assert_eq!(comps[0].bbox, BoundingBox { min: [0, 0, 0], max: [2, 2, 0] });
    }

    #[test]
    fn ids_follow_minimum_index() {
        let m = mask_with([5, 1, 1], &[[0, 0, 0], [2, 0, 0], [4, 0, 0]]);
        let comps = connected_components(&m, Connectivity::TwentySix).unwrap();
        let firsts: Vec<_> = comps.iter().map(|c| (c.id, c.voxels[0])).collect();
        assert_eq!(firsts, vec![(1, 0), (2, 2), (3, 4)]);
    }

    #[test]
    fn volumes_map() {
        assert!(component_volumes(&[]).is_empty());
        let on: Vec<[usize; 3]> = (0..7).map(|x| [x, 0, 0]).collect();
        let m = mask_with([8, 2, 2], &on);
        let comps = connected_components(&m, Connectivity::Six).unwrap();
        assert_eq!(component_volumes(&comps), BTreeMap::from([(1, 7)]));
    }

    #[test]
    fn rejects_non_binary() {
        let mut m = VoxelGrid::zeros([2, 2, 2]).unwrap();
        m.set(0, 0, 0, 2);
        assert!(connected_components(&m, Connectivity::Six).is_err());
    }

    #[test]
    fn connectivity_parsing() {
        assert_eq!("18".parse::<Connectivity>().unwrap(), Connectivity::Eighteen);
        assert!("8".parse::<Connectivity>().is_err());
        assert_eq!(Connectivity::default(), Connectivity::TwentySix);
        assert_eq!(Connectivity::TwentySix.backward_offsets().len(), 13);
        assert_eq!(Connectivity::Eighteen.backward_offsets().len(), 9);
        assert_eq!(Connectivity::Six.backward_offsets().len(), 3);
    }
}
