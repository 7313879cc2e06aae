//! Dense 3D grids: complex volumes and binary sampling masks.
//!
//! Storage is row-major with x fastest: `index = x + nx * (y + ny * z)`.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Dims = [usize; 3];

pub fn num_voxels(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

pub(crate) fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "volume dims must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

/// Complex samples on a regular grid.
///
/// Also used to carry real 2-channel gradients, with the real part holding
/// the derivative with respect to the real channel and the imaginary part the
/// derivative with respect to the imaginary channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVolume {
    dims: Dims,
    data: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![Complex64::new(0.0, 0.0); num_voxels(dims)],
        }
    }

    pub fn from_data(dims: Dims, data: Vec<Complex64>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != num_voxels(dims) {
            return Err(Error::dims(&[num_voxels(dims)], &[data.len()]));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidArgument("volume contains non-finite samples".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(num_voxels(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: Complex64) {
        let i = linear_index(self.dims, x, y, z);
        self.data[i] = v;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Hermitian inner product `sum conj(self) * other`.
    pub fn dot(&self, other: &Self) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scale(&mut self, s: Complex64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn ensure_dims(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return Err(Error::dims(&dims, &self.dims));
        }
        Ok(())
    }
}

/// Binary k-space sampling pattern; 1 marks a sampled location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: Dims,
    data: Vec<u8>,
}

impl Mask {
    pub fn full(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![1; num_voxels(dims)],
        }
    }

    pub fn from_data(dims: Dims, data: Vec<u8>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != num_voxels(dims) {
            return Err(Error::dims(&[num_voxels(dims)], &[data.len()]));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("mask value {v} is not binary")));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[linear_index(self.dims, x, y, z)] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Total locations divided by sampled locations.
    pub fn acceleration(&self) -> f64 {
        self.data.len() as f64 / self.count() as f64
    }

    pub fn apply(&self, v: &mut ComplexVolume) {
        for (s, &m) in v.data_mut().iter_mut().zip(&self.data) {
            if m == 0 {
                *s = Complex64::new(0.0, 0.0);
            }
        }
    }
}
