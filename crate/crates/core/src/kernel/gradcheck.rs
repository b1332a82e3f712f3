//! Central finite-difference oracle for tape gradients.

use super::params::ParamStore;
use super::tape::{Gradients, Tape, Var};
use crate::error::{DlgfaError, Result};

/// Relative error of one parameter tensor:
/// `‖autodiff − central‖₂ / (‖central‖₂ + 1e-8)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub rel_err: f64,
}

fn eval_loss<F>(store: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.value(loss).item()
}

/// Autodiff gradients of `loss_fn` at the current parameters.
pub fn autodiff_gradients<F>(store: &ParamStore, loss_fn: &F) -> Result<Gradients>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.gradients(loss)
}

/// Compares the supplied gradients against central differences and reports
/// the per-parameter relative errors.
pub fn compare_with_finite_differences<F>(
    store: &ParamStore,
    eps: f64,
    loss_fn: &F,
    grads: &Gradients,
) -> Result<Vec<ParamError>>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(DlgfaError::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    let base = eval_loss(store, loss_fn)?;
    let again = eval_loss(store, loss_fn)?;
    if base.to_bits() != again.to_bits() {
        return Err(DlgfaError::Oracle(format!(
            "loss function is not deterministic: {base} vs {again}"
        )));
    }

    let mut probe = store.clone();
    let mut report = Vec::with_capacity(store.len());
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let original = store.get(&name)?.clone();
        let mut diff_sq = 0.0;
        let mut central_sq = 0.0;
        for i in 0..original.numel() {
            let x = original.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = x + eps;
            let plus = eval_loss(&probe, loss_fn)?;
            probe.get_mut(&name)?.data_mut()[i] = x - eps;
            let minus = eval_loss(&probe, loss_fn)?;
            probe.get_mut(&name)?.data_mut()[i] = x;

            let central = (plus - minus) / (2.0 * eps);
            let auto = grads.get(&name).map_or(0.0, |g| g.data()[i]);
            diff_sq += (auto - central).powi(2);
            central_sq += central * central;
        }
        report.push(ParamError {
            name,
            rel_err: diff_sq.sqrt() / (central_sq.sqrt() + 1e-8),
        });
    }
    Ok(report)
}

/// Maximum relative error between autodiff and central differences over all
/// parameters of `store`.
pub fn finite_diff_check<F>(store: &ParamStore, eps: f64, loss_fn: F) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let grads = autodiff_gradients(store, &loss_fn)?;
    let report = compare_with_finite_differences(store, eps, &loss_fn, &grads)?;
    Ok(report.iter().map(|e| e.rel_err).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kernel::{Activation, Tensor};

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_loss_is_exact() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.3, -2.0, 5.0])).unwrap();
        let err = finite_diff_check(&store, 1e-5, |s, tape| {
            let w = tape.param("w", s.get("w")?)?;
            let c = tape.constant(Tensor::vector(vec![1.0, 2.0, -3.0]))?;
            let p = tape.mul(w, c)?;
            tape.sum(p)
        })
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn tanh_mlp_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.insert("w1", random_tensor(&mut rng, &[5, 3])).unwrap();
        store.insert("b1", random_tensor(&mut rng, &[5])).unwrap();
        store.insert("w2", random_tensor(&mut rng, &[2, 5])).unwrap();
        let x = random_tensor(&mut rng, &[4, 3]);
        let err = finite_diff_check(&store, 1e-5, |s, tape| {
            let xv = tape.constant(x.clone())?;
            let w1 = tape.param("w1", s.get("w1")?)?;
            let b1 = tape.param("b1", s.get("b1")?)?;
            let w2 = tape.param("w2", s.get("w2")?)?;
            let h = tape.affine(xv, w1, Some(b1))?;
            let h = tape.activation(h, Activation::Tanh)?;
            let y = tape.affine(h, w2, None)?;
            let y2 = tape.mul(y, y)?;
            tape.sum(y2)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.5, -1.5])).unwrap();
        let loss_fn = |s: &ParamStore, tape: &mut Tape| {
            let w = tape.param("w", s.get("w")?)?;
            let t = tape.tanh(w)?;
            tape.sum(t)
        };
        let grads = autodiff_gradients(&store, &loss_fn).unwrap();
        let clean = compare_with_finite_differences(&store, 1e-5, &loss_fn, &grads).unwrap();
        assert!(clean[0].rel_err < 1e-8);

        // injected fault: build a tape whose loss is doubled, reuse its grads
        let doubled = autodiff_gradients(&store, &|s: &ParamStore, tape: &mut Tape| {
            let l = loss_fn(s, tape)?;
            tape.scale(l, 2.0)
        })
        .unwrap();
        let bad = compare_with_finite_differences(&store, 1e-5, &loss_fn, &doubled).unwrap();
        assert!(bad[0].rel_err > 1e-2, "{:?}", bad);
    }

    #[test]
    fn nondeterministic_loss_is_an_oracle_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let counter = Cell::new(0.0);
        let result = finite_diff_check(&store, 1e-5, |s, tape| {
            counter.set(counter.get() + 1.0);
            let w = tape.param("w", s.get("w")?)?;
            let shifted = tape.shift(w, counter.get())?;
            tape.sum(shifted)
        });
        assert!(matches!(result, Err(DlgfaError::Oracle(_))));
    }

    #[test]
    fn eps_must_be_positive() {
        let store = ParamStore::new();
        let r = finite_diff_check(&store, 0.0, |_, tape| tape.constant(Tensor::scalar(1.0)));
        assert!(r.is_err());
    }
}
