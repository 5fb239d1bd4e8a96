use crate::error::{Error, Result};

/// Dense 3D scalar field stored x-fastest: `index = x + nx * (y + ny * z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<T>,
}

impl<T> VoxelGrid<T> {
    /// Builds a grid with unit spacing.
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        Self::with_spacing(dims, [1.0; 3], data)
    }

    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        let expected = checked_len(dims)?;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        validate_spacing(spacing)?;
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn set_spacing(&mut self, spacing: [f64; 3]) -> Result<()> {
        validate_spacing(spacing)?;
        self.spacing = spacing;
        Ok(())
    }

    /// Builds a grid of the same shape and spacing from new data.
    pub fn with_data<U>(&self, data: Vec<U>) -> Result<VoxelGrid<U>> {
        VoxelGrid::with_spacing(self.dims, self.spacing, data)
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> VoxelGrid<U> {
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &VoxelGrid<U>) -> bool {
        self.dims == other.dims
    }

    pub fn ensure_same_shape<U>(&self, other: &VoxelGrid<U>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: self.dims,
                right: other.dims,
            })
        }
    }
}

impl<T: Copy> VoxelGrid<T> {
    pub fn filled(dims: [usize; 3], value: T) -> Result<Self> {
        let n = checked_len(dims)?;
        Self::new(dims, vec![value; n])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    /// Reorders axes so that output axis `a` is input axis `order[a]`.
    pub fn permute_axes(&self, order: [usize; 3]) -> Self {
        let mut sorted = order;
        sorted.sort_unstable();
        assert_eq!(sorted, [0, 1, 2], "order must be a permutation of the axes");
        let dims = [self.dims[order[0]], self.dims[order[1]], self.dims[order[2]]];
        let spacing = [
            self.spacing[order[0]],
            self.spacing[order[1]],
            self.spacing[order[2]],
        ];
        let mut data = Vec::with_capacity(self.data.len());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let out = [x, y, z];
                    let mut src = [0usize; 3];
                    for a in 0..3 {
                        src[order[a]] = out[a];
                    }
                    data.push(self.get(src[0], src[1], src[2]));
                }
            }
        }
        Self {
            dims,
            spacing,
            data,
        }
    }
}

impl VoxelGrid<u8> {
    /// Empty binary mask.
    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        Self::filled(dims, 0)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn ensure_binary(&self) -> Result<()> {
        match self.data.iter().position(|&v| v > 1) {
            None => Ok(()),
            Some(index) => Err(Error::NotBinary {
                index,
                value: self.data[index],
            }),
        }
    }

    /// Number of non-zero voxels.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

fn checked_len(dims: [usize; 3]) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::EmptyDimension(dims));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?} overflows usize")))
}

fn validate_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidSpacing(spacing))
    }
}
