use crate::error::{Error, Result};

/// Nodal values on an `nx × nv` lattice, stored row-major with the variance
/// index fastest: `index(i, j) = i * nv + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    nx: usize,
    nv: usize,
    values: Vec<f64>,
}

impl Lattice {
    pub fn zeros(nx: usize, nv: usize) -> Self {
        Self {
            nx,
            nv,
            values: vec![0.0; nx * nv],
        }
    }

    pub fn from_vec(nx: usize, nv: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * nv {
            return Err(Error::ShapeMismatch {
                expected: (nx, nv),
                got: (values.len(), 1),
            });
        }
        Ok(Self { nx, nv, values })
    }

    pub fn from_fn(nx: usize, nv: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(nx * nv);
        for i in 0..nx {
            for j in 0..nv {
                values.push(f(i, j));
            }
        }
        Self { nx, nv, values }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.nv)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nv + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.nv + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.values[i * self.nv + j] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Values along `x` at variance index `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nx).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: self.shape(),
            });
        }
        Ok(())
    }
}
