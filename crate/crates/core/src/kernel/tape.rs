//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends one record holding its output value and the
//! indices of its inputs. Records are appended in evaluation order, so the
//! tape is already topologically sorted and the backward pass is a single
//! reverse sweep that visits each record once.
//!
//! Values are batched row-wise: a `[B, n]` tensor is `B` independent rows of
//! width `n`, and `affine` maps each row through the same weight matrix.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{matmul_dy_w, matmul_dyt_x, matmul_xwt, Tensor};
use crate::error::{DlgfaError, Result};

/// Bound applied to `exp` inputs.
pub const EXP_CLAMP: f64 = 30.0;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    /// `exp` with inputs clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
    Exp,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
            Activation::Exp => v.clamp(-EXP_CLAMP, EXP_CLAMP).exp(),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Exp => {
                if (-EXP_CLAMP..=EXP_CLAMP).contains(&x) {
                    y
                } else {
                    0.0
                }
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Act {
        x: usize,
        kind: Activation,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale {
        x: usize,
        c: f64,
    },
    Shift {
        x: usize,
    },
    Ln(usize),
    Concat(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    BroadcastRows {
        x: usize,
    },
    Sum(usize),
}

#[derive(Debug, Clone)]
struct Record {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

/// Gradients of a scalar with respect to every named leaf on the tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    /// Writes a gradient into every slot of `store`; parameters that never
    /// reached the loss receive zeros.
    pub fn write_into(&self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.names().map(str::to_owned).collect();
        for name in names {
            let grad = match self.by_name.get(&name) {
                Some(g) => g.clone(),
                None => Tensor::zeros(store.get(&name)?.shape()),
            };
            store.set_grad(&name, grad)?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, what: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(DlgfaError::NonFinite(what));
        }
        self.records.push(Record {
            value,
            op,
            param: None,
        });
        Ok(Var(self.records.len() - 1))
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Records a named leaf whose gradient is reported by [`Tape::gradients`].
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var> {
        let v = self.push(value.clone(), Op::Leaf, "param")?;
        self.records[v.0].param = Some(name.to_owned());
        Ok(v)
    }

    /// Binds every parameter in `store` as a named leaf.
    pub fn bind_store(&mut self, store: &ParamStore) -> Result<BTreeMap<String, Var>> {
        store
            .iter()
            .map(|(name, value)| Ok((name.to_owned(), self.param(name, value)?)))
            .collect()
    }

    /// `y = x·weightᵀ + bias`, applied to each row of `x`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weight));
        if wv.ndim() != 2 || xv.ndim() == 0 || xv.ndim() > 2 {
            return Err(DlgfaError::dim(
                "affine",
                format!("x {:?}, weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        if xv.cols() != n {
            return Err(DlgfaError::dim(
                "affine",
                format!("x width {} vs weight {:?}", xv.cols(), wv.shape()),
            ));
        }
        let rows = xv.rows();
        let mut out = vec![0.0; rows * m];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [m] {
                return Err(DlgfaError::dim(
                    "affine",
                    format!("bias {:?} vs output width {}", bv.shape(), m),
                ));
            }
            for row in out.chunks_exact_mut(m) {
                row.copy_from_slice(bv.data());
            }
        }
        matmul_xwt(xv.data(), rows, n, wv.data(), m, &mut out);
        let shape = if xv.ndim() == 1 { vec![m] } else { vec![rows, m] };
        let value = Tensor::new(shape, out)?;
        self.push(
            value,
            Op::Affine {
                x: x.0,
                w: weight.0,
                b: bias.map(|b| b.0),
            },
            "affine",
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let value = self.value(x).map(|v| kind.apply(v));
        self.push(value, Op::Act { x: x.0, kind }, "activation")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Exp)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(DlgfaError::dim(
                what,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(value, op, what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| c * v);
        self.push(value, Op::Scale { x: x.0, c }, "scale")
    }

    /// `x + c` elementwise.
    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::Shift { x: x.0 }, "shift")
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::ln);
        self.push(value, Op::Ln(x.0), "ln")
    }

    /// Concatenates along the trailing axis; all parts need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| DlgfaError::dim("concat", "nothing to concatenate"))?;
        let lead = self.value(*first).shape()[..self.value(*first).ndim() - 1].to_vec();
        let rows = self.value(*first).rows();
        let mut total = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.shape()[..pv.ndim() - 1] != lead[..] {
                return Err(DlgfaError::dim(
                    "concat",
                    format!("leading dims {:?} vs {:?}", pv.shape(), lead),
                ));
            }
            total += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let pv = self.value(*p);
                let c = pv.cols();
                data.extend_from_slice(&pv.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push(
            value,
            Op::Concat(parts.iter().map(|p| p.0).collect()),
            "concat",
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_cols(start, len)?;
        self.push(value, Op::SliceCols { x: x.0, start }, "slice_cols")
    }

    /// Repeats a 1-D tensor as `rows` identical rows.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 1 {
            return Err(DlgfaError::dim(
                "broadcast_rows",
                format!("expected 1-D input, got {:?}", xv.shape()),
            ));
        }
        let n = xv.numel();
        let data = xv.data().repeat(rows);
        let value = Tensor::new(vec![rows, n], data)?;
        self.push(value, Op::BroadcastRows { x: x.0 }, "broadcast_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x.0), "sum")
    }

    /// Reverse sweep from `loss`; returns gradients for named leaves.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(DlgfaError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let rec = &self.records[i];
            match &rec.op {
                Op::Leaf => {
                    if let Some(name) = &rec.param {
                        match out.by_name.get_mut(name) {
                            Some(acc) => add_into(acc.data_mut(), g.data()),
                            None => {
                                out.by_name.insert(name.clone(), g);
                            }
                        }
                    }
                }
                Op::Affine { x, w, b } => {
                    let xv = &self.records[*x].value;
                    let wv = &self.records[*w].value;
                    let (m, n) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.rows();
                    let mut dx = vec![0.0; xv.numel()];
                    matmul_dy_w(g.data(), rows, m, wv.data(), n, &mut dx);
                    accumulate(&mut grads, *x, xv.shape(), &dx);
                    let mut dw = vec![0.0; wv.numel()];
                    matmul_dyt_x(g.data(), rows, m, xv.data(), n, &mut dw);
                    accumulate(&mut grads, *w, wv.shape(), &dw);
                    if let Some(b) = b {
                        let mut db = vec![0.0; m];
                        for row in g.data().chunks_exact(m) {
                            add_into(&mut db, row);
                        }
                        accumulate(&mut grads, *b, &[m], &db);
                    }
                }
                Op::Act { x, kind } => {
                    let xv = &self.records[*x].value;
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(xv.data().iter().zip(rec.value.data()))
                        .map(|(&gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                        .collect();
                    accumulate(&mut grads, *x, xv.shape(), &d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.shape(), g.data());
                    accumulate(&mut grads, *b, g.shape(), g.data());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.shape(), g.data());
                    let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                    accumulate(&mut grads, *b, g.shape(), &neg);
                }
                Op::Mul(a, b) => {
                    let av = &self.records[*a].value;
                    let bv = &self.records[*b].value;
                    let da: Vec<f64> = zip_map(g.data(), bv.data(), |gi, bi| gi * bi);
                    let db: Vec<f64> = zip_map(g.data(), av.data(), |gi, ai| gi * ai);
                    accumulate(&mut grads, *a, g.shape(), &da);
                    accumulate(&mut grads, *b, g.shape(), &db);
                }
                Op::Div(a, b) => {
                    let bv = &self.records[*b].value;
                    let da: Vec<f64> = zip_map(g.data(), bv.data(), |gi, bi| gi / bi);
                    // d(a/b)/db = -(a/b)/b
                    let db: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(rec.value.data().iter().zip(bv.data()))
                        .map(|(&gi, (&qi, &bi))| -gi * qi / bi)
                        .collect();
                    accumulate(&mut grads, *a, g.shape(), &da);
                    accumulate(&mut grads, *b, g.shape(), &db);
                }
                Op::Scale { x, c } => {
                    let d: Vec<f64> = g.data().iter().map(|v| c * v).collect();
                    accumulate(&mut grads, *x, g.shape(), &d);
                }
                Op::Shift { x } => accumulate(&mut grads, *x, g.shape(), g.data()),
                Op::Ln(x) => {
                    let xv = &self.records[*x].value;
                    let d = zip_map(g.data(), xv.data(), |gi, xi| gi / xi);
                    accumulate(&mut grads, *x, xv.shape(), &d);
                }
                Op::Concat(parts) => {
                    let total = rec.value.cols();
                    let rows = rec.value.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = &self.records[p].value;
                        let c = pv.cols();
                        let mut d = Vec::with_capacity(pv.numel());
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(&mut grads, p, pv.shape(), &d);
                        offset += c;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = &self.records[*x].value;
                    let (cols, len) = (xv.cols(), rec.value.cols());
                    let mut d = vec![0.0; xv.numel()];
                    for (r, grow) in g.data().chunks_exact(len).enumerate() {
                        d[r * cols + start..r * cols + start + len].copy_from_slice(grow);
                    }
                    accumulate(&mut grads, *x, xv.shape(), &d);
                }
                Op::BroadcastRows { x } => {
                    let n = self.records[*x].value.numel();
                    let mut d = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        add_into(&mut d, row);
                    }
                    accumulate(&mut grads, *x, &[n], &d);
                }
                Op::Sum(x) => {
                    let xv = &self.records[*x].value;
                    let d = vec![g.data()[0]; xv.numel()];
                    accumulate(&mut grads, *x, xv.shape(), &d);
                }
            }
        }
        Ok(out)
    }

    /// Fills every gradient slot of `store` with `∂loss/∂param`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.gradients(loss)?.write_into(store)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(acc: &mut [f64], d: &[f64]) {
    for (a, v) in acc.iter_mut().zip(d) {
        *a += v;
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, shape: &[usize], d: &[f64]) {
    match &mut grads[idx] {
        Some(acc) => add_into(acc.data_mut(), d),
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), d.to_vec()).expect("gradient shape"));
        }
    }
}
