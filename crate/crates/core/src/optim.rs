//! Training: Adam on the network parameters, a gradient step followed by
//! group-wise soft-thresholding on the loadings.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, LongitudinalDataset};
use crate::error::{DlgfaError, Result};
use crate::kernel::{ParamStore, Tape, Tensor};
use crate::model::{DlgfaModel, LoadingMatrices, ModelConfig};
use crate::objective::{elbo_on, group_lasso_penalty, LossBreakdown};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Epochs the convergence test looks back over.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Adam step size for the network parameters.
    pub lr_adam: f64,
    /// Gradient/proximal step size η for the loadings.
    pub lr_prox: f64,
    /// Group-lasso weight λ.
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Relative-change threshold for early stopping.
    pub tol: f64,
    /// L2 decay added to the Adam gradients; 0 leaves the objective unchanged.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_adam: 1e-3,
            lr_prox: 1e-4,
            lambda: 1.0,
            batch_size: 64,
            max_epochs: 400,
            tol: 1e-5,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_adam", self.lr_adam), ("lr_prox", self.lr_prox), ("tol", self.tol)];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DlgfaError::InvalidArgument(format!("{key} must be > 0, got {v}")));
            }
        }
        for (key, v) in [("lambda", self.lambda), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(DlgfaError::InvalidArgument(format!("{key} must be >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(DlgfaError::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update using the gradients held in `store`;
/// every parameter must have a gradient.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if let Some(name) = store.names().find(|n| store.grad(n).is_none()) {
        return Err(DlgfaError::Contract(format!("no gradient for parameter `{name}`")));
    }
    state.step += 1;
    let step = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(step);
    let c2 = 1.0 - ADAM_BETA2.powi(step);
    for (name, value, grad) in store.iter_mut() {
        let grad = grad.expect("checked above");
        let n = value.numel();
        let (m, v) = state
            .moments
            .entry(name.to_owned())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
        if !value.is_finite() {
            return Err(DlgfaError::NonFinite("adam_step"));
        }
    }
    Ok(())
}

/// Proximal operator of `threshold · Σ_j ‖W[:, j]‖₂`: each column is shrunk
/// toward zero by `threshold` in norm, and set exactly to zero when its norm
/// does not exceed `threshold`.
pub fn prox_group_columns(w: &mut Tensor, threshold: f64) -> Result<()> {
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(DlgfaError::InvalidArgument(format!("prox threshold must be >= 0, got {threshold}")));
    }
    if w.ndim() != 2 {
        return Err(DlgfaError::dim("prox_group_columns", format!("expected a matrix, got {:?}", w.shape())));
    }
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let data = w.data_mut();
    for j in 0..cols {
        let norm = (0..rows).map(|i| data[i * cols + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..rows {
            let v = &mut data[i * cols + j];
            // assign rather than scale so negative entries do not become -0.0
            *v = if norm <= threshold { 0.0 } else { *v * ((norm - threshold) / norm) };
        }
    }
    Ok(())
}

/// Mutable training state carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub adam: AdamState,
    rng: ChaCha8Rng,
    pub iterations: u64,
    pub epochs: usize,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            adam: AdamState::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            iterations: 0,
            epochs: 0,
        }
    }
}

fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

/// One optimization step on a `T×B×d` batch. Returns the terms evaluated at
/// the parameters before the update.
pub fn train_step(model: &mut DlgfaModel, batch: &Tensor, config: &OptimConfig, state: &mut TrainState) -> Result<LossBreakdown> {
    let mut noise_shape = batch.shape().to_vec();
    *noise_shape.last_mut().ok_or_else(|| DlgfaError::dim("train_step", "scalar batch"))? = model.config.latent_dim;
    let noise = standard_normal(&noise_shape, &mut state.rng);

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let iteration = state.iterations + 1;
    let diverged = |e: DlgfaError| match e {
        DlgfaError::NonFinite(op) => {
            DlgfaError::Training(format!("non-finite value in {op} at iteration {iteration}"))
        }
        other => other,
    };
    let vars = elbo_on(&mut tape, model, &bound, batch, &noise).map_err(diverged)?;
    let grads = tape.gradients(vars.loss).map_err(diverged)?;
    let breakdown = LossBreakdown::new(
        tape.value(vars.recon).item()?,
        tape.value(vars.kl).item()?,
        group_lasso_penalty(&model.loadings, config.lambda),
        vars.elements,
    );

    grads.write_into(&mut model.params)?;
    if config.weight_decay > 0.0 {
        let names: Vec<String> = model.params.names().map(str::to_owned).collect();
        for name in names {
            let mut g = model.params.grad(&name).expect("written above").clone();
            let w = model.params.get(&name)?;
            for (gi, wi) in g.data_mut().iter_mut().zip(w.data()) {
                *gi += config.weight_decay * wi;
            }
            model.params.set_grad(&name, g)?;
        }
    }
    adam_step(&mut model.params, &mut state.adam, config.lr_adam).map_err(diverged)?;
    model.params.clear_grads();

    let threshold = config.lr_prox * config.lambda;
    for ((t, g), w) in model.loadings.iter_mut() {
        if let Some(grad) = grads.get(&LoadingMatrices::param_name(t, g)) {
            for (wi, gi) in w.data_mut().iter_mut().zip(grad.data()) {
                *wi -= config.lr_prox * gi;
            }
        }
        prox_group_columns(w, threshold)?;
        if !w.is_finite() {
            return Err(DlgfaError::Training(format!(
                "non-finite loading W[{t}][{g}] at iteration {iteration}"
            )));
        }
    }
    state.iterations += 1;
    Ok(breakdown)
}

/// One pass over `dataset` in shuffled minibatches. Returns the mean of the
/// per-batch terms.
pub fn train_epoch(model: &mut DlgfaModel, dataset: &LongitudinalDataset, config: &OptimConfig, state: &mut TrainState) -> Result<LossBreakdown> {
    if dataset.is_empty() {
        return Err(DlgfaError::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let shuffle_seed = state.rng.random::<u64>();
    let batches = make_batches(dataset, config.batch_size, shuffle_seed)?;
    let mut terms = Vec::with_capacity(batches.len());
    for batch in &batches {
        terms.push(train_step(model, &batch.data, config, state)?);
    }
    state.epochs += 1;
    Ok(LossBreakdown::mean(&terms).expect("at least one batch"))
}

/// Per-epoch training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<LossBreakdown>,
    pub zero_columns: Vec<usize>,
}

impl TrainHistory {
    pub fn push(&mut self, terms: LossBreakdown, zero_columns: usize) {
        self.epochs.push(terms);
        self.zero_columns.push(zero_columns);
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// CSV with one row per epoch (1-based).
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,recon_loglik,kl,penalty,objective,zero_columns")?;
        for (i, (e, z)) in self.epochs.iter().zip(&self.zero_columns).enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                i + 1,
                e.recon_loglik,
                e.kl,
                e.penalty,
                e.objective,
                z
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| DlgfaError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| DlgfaError::io(path, e))?;
        w.flush().map_err(|e| DlgfaError::io(path, e))
    }
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    let diff = (cur - prev).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / prev.abs().max(cur.abs())
    }
}

/// True once both the smooth objective and the penalty have changed by less
/// than `tol` (relative) between each of the last [`CONVERGENCE_WINDOW`]
/// consecutive epochs.
pub fn has_converged(history: &TrainHistory, tol: f64) -> bool {
    let e = &history.epochs;
    if e.len() <= CONVERGENCE_WINDOW {
        return false;
    }
    e[e.len() - CONVERGENCE_WINDOW - 1..].windows(2).all(|w| {
        relative_change(w[0].smooth(), w[1].smooth()) < tol && relative_change(w[0].penalty, w[1].penalty) < tol
    })
}

/// Trains from a fresh initialization until convergence or `max_epochs`.
pub fn fit(dataset: &LongitudinalDataset, model_config: ModelConfig, config: &OptimConfig) -> Result<(DlgfaModel, TrainHistory)> {
    fit_with(dataset, model_config, config, |_, _, _| Ok(()))
}

/// [`fit`] with a callback after every epoch (epoch number is 1-based).
pub fn fit_with<F>(dataset: &LongitudinalDataset, model_config: ModelConfig, config: &OptimConfig, mut on_epoch: F) -> Result<(DlgfaModel, TrainHistory)>
where
    F: FnMut(usize, &DlgfaModel, &TrainHistory) -> Result<()>,
{
    config.validate()?;
    if model_config.input_dim() != dataset.dim() {
        return Err(DlgfaError::dim(
            "fit",
            format!("model expects d={}, data has d={}", model_config.input_dim(), dataset.dim()),
        ));
    }
    let mut model = DlgfaModel::new(model_config, config.seed)?;
    let mut state = TrainState::new(config.seed.wrapping_add(1));
    let mut history = TrainHistory::default();
    for epoch in 1..=config.max_epochs {
        let terms = train_epoch(&mut model, dataset, config, &mut state)?;
        history.push(terms, model.loadings.zero_column_count());
        on_epoch(epoch, &model, &history)?;
        if has_converged(&history, config.tol) {
            break;
        }
    }
    Ok((model, history))
}
