use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DlgfaError, Result};
use crate::kernel::Tensor;

/// Standard deviation of the initial loading entries.
pub const LOADING_INIT_SD: f64 = 0.01;

/// The `T × G` grid of `p × K` latent-to-group loading matrices.
///
/// A pruned column is stored as literal `0.0` values.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrices {
    timesteps: usize,
    groups: usize,
    rows: usize,
    cols: usize,
    mats: Vec<Tensor>,
}

impl LoadingMatrices {
    pub fn zeros(timesteps: usize, groups: usize, rows: usize, cols: usize) -> Self {
        LoadingMatrices {
            timesteps,
            groups,
            rows,
            cols,
            mats: vec![Tensor::zeros(&[rows, cols]); timesteps * groups],
        }
    }

    /// i.i.d. `Normal(0, 0.01²)` entries.
    pub fn random<R: Rng>(timesteps: usize, groups: usize, rows: usize, cols: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, LOADING_INIT_SD).expect("valid sd");
        let mut out = Self::zeros(timesteps, groups, rows, cols);
        for m in &mut out.mats {
            for v in m.data_mut() {
                *v = normal.sample(rng);
            }
        }
        out
    }

    pub(crate) fn from_parts(timesteps: usize, groups: usize, rows: usize, cols: usize, mats: Vec<Tensor>) -> Result<Self> {
        if mats.len() != timesteps * groups || mats.iter().any(|m| m.shape() != [rows, cols]) {
            return Err(DlgfaError::dim("LoadingMatrices", "matrix count or shape mismatch"));
        }
        Ok(LoadingMatrices {
            timesteps,
            groups,
            rows,
            cols,
            mats,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Rows `p` of each matrix.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Columns `K` of each matrix.
    pub fn cols(&self) -> usize {
        self.cols
    }

    fn index(&self, t: usize, g: usize) -> Result<usize> {
        if t >= self.timesteps || g >= self.groups {
            return Err(DlgfaError::IndexOutOfRange(format!(
                "loading (t={t}, g={g}) outside {}x{}",
                self.timesteps, self.groups
            )));
        }
        Ok(t * self.groups + g)
    }

    pub fn get(&self, t: usize, g: usize) -> Result<&Tensor> {
        Ok(&self.mats[self.index(t, g)?])
    }

    pub fn get_mut(&mut self, t: usize, g: usize) -> Result<&mut Tensor> {
        let i = self.index(t, g)?;
        Ok(&mut self.mats[i])
    }

    /// Tape leaf name of `W[t][g]`.
    pub fn param_name(t: usize, g: usize) -> String {
        format!("loadings.t{t:03}.g{g:03}")
    }

    /// Column `j` of `W[t][g]` as an owned vector.
    pub fn column(&self, t: usize, g: usize, j: usize) -> Result<Vec<f64>> {
        let m = self.get(t, g)?;
        if j >= self.cols {
            return Err(DlgfaError::IndexOutOfRange(format!("column {j} of {}", self.cols)));
        }
        Ok((0..self.rows).map(|r| m.data()[r * self.cols + j]).collect())
    }

    pub fn column_norm(&self, t: usize, g: usize, j: usize) -> Result<f64> {
        Ok(self.column(t, g, j)?.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// True when every entry of the column is stored as exactly zero.
    pub fn column_is_zero(&self, t: usize, g: usize, j: usize) -> Result<bool> {
        Ok(self.column(t, g, j)?.iter().all(|&v| v == 0.0))
    }

    pub fn zero_column_count(&self) -> usize {
        let mut count = 0;
        for m in &self.mats {
            for j in 0..self.cols {
                if (0..self.rows).all(|r| m.data()[r * self.cols + j] == 0.0) {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn column_count(&self) -> usize {
        self.timesteps * self.groups * self.cols
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &Tensor)> {
        let g = self.groups;
        self.mats.iter().enumerate().map(move |(i, m)| ((i / g, i % g), m))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = ((usize, usize), &mut Tensor)> {
        let g = self.groups;
        self.mats.iter_mut().enumerate().map(move |(i, m)| ((i / g, i % g), m))
    }

    /// Multiplies every entry by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.mats {
            for v in m.data_mut() {
                *v *= c;
            }
        }
        out
    }
}
