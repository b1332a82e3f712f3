use std::fmt;

use crate::error::{DlgfaError, Result};

/// Dense row-major `f64` tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(DlgfaError::dim(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DlgfaError::dim("Tensor::from_rows", "ragged rows"));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of the trailing axis (feature width); 1 for a 0-d tensor.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[rows, cols]`.
    pub fn rows(&self) -> usize {
        if self.data.is_empty() {
            0
        } else {
            self.data.len() / self.cols()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(DlgfaError::Contract(format!(
                "expected a 1-element tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(DlgfaError::dim(
                "Tensor::reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Index `i` of the leading axis, e.g. one timestep of a `T×B×d` batch.
    pub fn index_axis0(&self, i: usize) -> Result<Tensor> {
        if self.shape.is_empty() || i >= self.shape[0] {
            return Err(DlgfaError::IndexOutOfRange(format!(
                "axis-0 index {} for shape {:?}",
                i, self.shape
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| DlgfaError::dim("Tensor::stack", "no tensors to stack"))?;
        if parts.iter().any(|p| p.shape != first.shape) {
            return Err(DlgfaError::dim("Tensor::stack", "shapes differ"));
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(parts.len() * first.numel());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Copies columns `start..start+len` of the `[rows, cols]` view.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let cols = self.cols();
        if start + len > cols {
            return Err(DlgfaError::dim(
                "slice_cols",
                format!("{}..{} of {} columns", start, start + len, cols),
            ));
        }
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * cols + start..r * cols + start + len]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("non-scalar") = len;
        Ok(Tensor { shape, data })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// `out[r, :] = x[r, :] · wᵀ` for `x: [rows, n]`, `w: [m, n]`.
pub(crate) fn matmul_xwt(x: &[f64], rows: usize, n: usize, w: &[f64], m: usize, out: &mut [f64]) {
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let or = &mut out[r * m..(r + 1) * m];
        for (o, wrow) in or.iter_mut().zip(w.chunks_exact(n)) {
            *o += dot(xr, wrow);
        }
    }
}

/// `dx[r, :] += dy[r, :] · w` for `dy: [rows, m]`, `w: [m, n]`.
pub(crate) fn matmul_dy_w(dy: &[f64], rows: usize, m: usize, w: &[f64], n: usize, dx: &mut [f64]) {
    for r in 0..rows {
        let dyr = &dy[r * m..(r + 1) * m];
        let dxr = &mut dx[r * n..(r + 1) * n];
        for (&g, wrow) in dyr.iter().zip(w.chunks_exact(n)) {
            if g != 0.0 {
                axpy(g, wrow, dxr);
            }
        }
    }
}

/// `dw[i, :] += Σ_r dy[r, i] · x[r, :]`.
pub(crate) fn matmul_dyt_x(dy: &[f64], rows: usize, m: usize, x: &[f64], n: usize, dw: &mut [f64]) {
    for r in 0..rows {
        let dyr = &dy[r * m..(r + 1) * m];
        let xr = &x[r * n..(r + 1) * n];
        for (&g, dwrow) in dyr.iter().zip(dw.chunks_exact_mut(n)) {
            if g != 0.0 {
                axpy(g, xr, dwrow);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize without reassociation flags
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().numel(), 6);
    }

    #[test]
    fn slice_and_index() {
        let t = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.slice_cols(1, 2).unwrap().data(), &[2., 3., 5., 6.]);
        assert_eq!(t.index_axis0(1).unwrap().data(), &[4., 5., 6.]);
        assert!(t.index_axis0(2).is_err());
        assert!(t.slice_cols(2, 2).is_err());
    }

    #[test]
    fn matmul_kernels_agree_with_naive() {
        let x = [1., 2., 3., 4., 5., 6.]; // 2x3
        let w = [1., 0., -1., 2., 1., 0.5]; // 2x3
        let mut out = [0.0; 4];
        matmul_xwt(&x, 2, 3, &w, 2, &mut out);
        assert_eq!(out, [-2., 5.5, -2., 16.]);

        let dy = [1., 2., 3., 4.];
        let mut dx = [0.0; 6];
        matmul_dy_w(&dy, 2, 2, &w, 3, &mut dx);
        assert_eq!(dx, [5., 2., 0., 11., 4., -1.]);

        let mut dw = [0.0; 6];
        matmul_dyt_x(&dy, 2, 2, &x, 3, &mut dw);
        assert_eq!(dw, [13., 17., 21., 18., 24., 30.]);
    }
}
