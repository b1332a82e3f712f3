//! Generative and inference networks.
//!
//! Per timestep the forward pass computes, in order: the prior from the
//! previous recurrent state, the approximate posterior from the current
//! observation and that state, a reparameterized latent sample, one Gaussian
//! likelihood per group (through that group's loading matrix), and finally
//! the next recurrent state from GRU([φx(x_t); φz(z_t)], h_{t-1}).

mod checkpoint;
mod config;
mod loadings;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{GroupSpec, ModelConfig};
pub use loadings::{LoadingMatrices, LOADING_INIT_SD};

use crate::error::{DlgfaError, Result};
use crate::kernel::{ParamStore, Tape, Tensor, Var, EXP_CLAMP};

/// Diagonal Gaussian given by mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Tensor,
    pub scale: Tensor,
}

impl GaussianParams {
    pub fn new(mean: Tensor, scale: Tensor) -> Result<Self> {
        if mean.shape() != scale.shape() {
            return Err(DlgfaError::dim(
                "GaussianParams",
                format!("mean {:?} vs scale {:?}", mean.shape(), scale.shape()),
            ));
        }
        if scale.data().iter().any(|&s| !(s > 0.0)) {
            return Err(DlgfaError::Contract("Gaussian scale must be > 0".into()));
        }
        Ok(GaussianParams { mean, scale })
    }

    pub fn standard(shape: &[usize]) -> Self {
        GaussianParams {
            mean: Tensor::zeros(shape),
            scale: Tensor::full(shape, 1.0),
        }
    }
}

/// A Gaussian whose parameters live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mean: Var,
    pub scale: Var,
}

impl GaussianVars {
    pub fn to_params(self, tape: &Tape) -> GaussianParams {
        GaussianParams {
            mean: tape.value(self.mean).clone(),
            scale: tape.value(self.scale).clone(),
        }
    }
}

/// Tape variables of one timestep of the forward pass.
#[derive(Debug, Clone)]
pub struct StepVars {
    pub x: Var,
    pub prior: GaussianVars,
    pub posterior: GaussianVars,
    pub z: Var,
    pub likelihoods: Vec<GaussianVars>,
    pub h: Var,
}

/// Values of one timestep of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub prior: GaussianParams,
    pub posterior: GaussianParams,
    pub z: Tensor,
    pub likelihoods: Vec<GaussianParams>,
    pub h: Tensor,
}

/// Parameters and loadings bound as leaves of one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    params: BTreeMap<String, Var>,
    loadings: Vec<Var>,
    groups: usize,
}

impl Bound {
    fn p(&self, name: &str) -> Result<Var> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| DlgfaError::Contract(format!("parameter `{name}` not bound")))
    }

    fn loading(&self, t: usize, g: usize) -> Var {
        self.loadings[t * self.groups + g]
    }
}

/// Learnable state of the model: network parameters plus loadings.
///
/// The loadings are kept out of `params` so the optimizer can update them
/// with a proximal step instead of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct DlgfaModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub loadings: LoadingMatrices,
}

/// Shapes of every network parameter, keyed by stable path.
pub fn parameter_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (k, h, f, p, d) = (
        config.latent_dim,
        config.hidden_dim,
        config.feature_dim,
        config.loading_rows,
        config.input_dim(),
    );
    let mut shapes = vec![
        ("phi_x.weight".to_owned(), vec![f, d]),
        ("phi_x.bias".to_owned(), vec![f]),
        ("phi_z.hidden.weight".to_owned(), vec![f, k]),
        ("phi_z.hidden.bias".to_owned(), vec![f]),
        ("phi_z.out.weight".to_owned(), vec![f, f]),
        ("phi_z.out.bias".to_owned(), vec![f]),
        ("prior.mean.weight".to_owned(), vec![k, h]),
        ("prior.mean.bias".to_owned(), vec![k]),
        ("prior.log_scale.weight".to_owned(), vec![k, h]),
        ("prior.log_scale.bias".to_owned(), vec![k]),
        ("encoder.mean.weight".to_owned(), vec![k, f + h]),
        ("encoder.mean.bias".to_owned(), vec![k]),
        ("encoder.log_scale.weight".to_owned(), vec![k, f + h]),
        ("encoder.log_scale.bias".to_owned(), vec![k]),
        ("gru.input.weight".to_owned(), vec![3 * h, 2 * f]),
        ("gru.input.bias".to_owned(), vec![3 * h]),
        ("gru.hidden.weight".to_owned(), vec![3 * h, h]),
        ("gru.hidden.bias".to_owned(), vec![3 * h]),
    ];
    let decoder_ts: Vec<Option<usize>> = if config.per_timestep_decoders {
        (0..config.max_timesteps).map(Some).collect()
    } else {
        vec![None]
    };
    for t in decoder_ts {
        for (g, &dg) in config.groups.dims().iter().enumerate() {
            let prefix = decoder_prefix(t, g);
            shapes.push((format!("{prefix}.mean.weight"), vec![dg, p + h]));
            shapes.push((format!("{prefix}.mean.bias"), vec![dg]));
            shapes.push((format!("{prefix}.log_scale"), vec![dg]));
        }
    }
    shapes
}

fn decoder_prefix(t: Option<usize>, g: usize) -> String {
    match t {
        Some(t) => format!("decoder.t{t:03}.g{g:03}"),
        None => format!("decoder.g{g:03}"),
    }
}

impl DlgfaModel {
    /// Randomly initialized model: weights `U(-1/√fan_in, 1/√fan_in)`, biases
    /// and log-scales zero, loadings `Normal(0, 0.01²)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            let value = if shape.len() == 2 {
                let bound = 1.0 / (shape[1] as f64).sqrt();
                let n = shape[0] * shape[1];
                Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())?
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, value)?;
        }
        let loadings = LoadingMatrices::random(
            config.max_timesteps,
            config.groups.count(),
            config.loading_rows,
            config.latent_dim,
            &mut rng,
        );
        Ok(DlgfaModel {
            config,
            params,
            loadings,
        })
    }

    /// Every parameter and loading set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            params.insert(name, Tensor::zeros(&shape))?;
        }
        let loadings = LoadingMatrices::zeros(
            config.max_timesteps,
            config.groups.count(),
            config.loading_rows,
            config.latent_dim,
        );
        Ok(DlgfaModel {
            config,
            params,
            loadings,
        })
    }

    /// Binds all parameters and loadings as named leaves of `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let params = tape.bind_store(&self.params)?;
        let mut loadings = Vec::with_capacity(self.loadings.timesteps() * self.loadings.groups());
        for ((t, g), w) in self.loadings.iter() {
            loadings.push(tape.param(&LoadingMatrices::param_name(t, g), w)?);
        }
        Ok(Bound {
            params,
            loadings,
            groups: self.config.groups.count(),
        })
    }

    fn check_width(&self, what: &'static str, t: &Tensor, width: usize) -> Result<()> {
        if t.ndim() == 0 || t.ndim() > 2 || t.cols() != width {
            return Err(DlgfaError::dim(
                what,
                format!("expected trailing width {width}, got shape {:?}", t.shape()),
            ));
        }
        Ok(())
    }

    // ---- on-tape building blocks -------------------------------------

    /// φx(x) = W₁x + b₁.
    pub fn feature_x_on(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        tape.affine(x, b.p("phi_x.weight")?, Some(b.p("phi_x.bias")?))
    }

    /// φz(z) = W₃ relu(W₂z + b₂) + b₃.
    pub fn feature_z_on(&self, tape: &mut Tape, b: &Bound, z: Var) -> Result<Var> {
        let hidden = tape.affine(z, b.p("phi_z.hidden.weight")?, Some(b.p("phi_z.hidden.bias")?))?;
        let hidden = tape.relu(hidden)?;
        tape.affine(hidden, b.p("phi_z.out.weight")?, Some(b.p("phi_z.out.bias")?))
    }

    fn gaussian_head(&self, tape: &mut Tape, b: &Bound, prefix: &str, input: Var) -> Result<GaussianVars> {
        let mean = tape.affine(
            input,
            b.p(&format!("{prefix}.mean.weight"))?,
            Some(b.p(&format!("{prefix}.mean.bias"))?),
        )?;
        let log_scale = tape.affine(
            input,
            b.p(&format!("{prefix}.log_scale.weight"))?,
            Some(b.p(&format!("{prefix}.log_scale.bias"))?),
        )?;
        let scale = tape.exp(log_scale)?;
        Ok(GaussianVars { mean, scale })
    }

    pub fn prior_on(&self, tape: &mut Tape, b: &Bound, h_prev: Var) -> Result<GaussianVars> {
        self.gaussian_head(tape, b, "prior", h_prev)
    }

    /// Posterior head over `[φx(x_t); h_{t-1}]`; in static mode the state
    /// slot is fed zeros.
    pub fn encode_on(&self, tape: &mut Tape, b: &Bound, x: Var, h_prev: Var) -> Result<GaussianVars> {
        let fx = self.feature_x_on(tape, b, x)?;
        let h = if self.config.static_mode {
            let shape = tape.value(h_prev).shape().to_vec();
            tape.constant(Tensor::zeros(&shape))?
        } else {
            h_prev
        };
        let input = tape.concat(&[fx, h])?;
        self.gaussian_head(tape, b, "encoder", input)
    }

    /// Group `g`'s likelihood at timestep `t`: mean = A·tanh([W z; h]) + a,
    /// scale = exp(c) per output dimension.
    pub fn decode_group_on(&self, tape: &mut Tape, b: &Bound, g: usize, t: usize, z: Var, h_prev: Var) -> Result<GaussianVars> {
        self.check_decoder_index(g, t)?;
        let u = tape.affine(z, b.loading(t, g), None)?;
        let h = if self.config.static_mode {
            let shape = tape.value(h_prev).shape().to_vec();
            tape.constant(Tensor::zeros(&shape))?
        } else {
            h_prev
        };
        let input = tape.concat(&[u, h])?;
        let act = tape.tanh(input)?;
        let prefix = decoder_prefix(self.config.per_timestep_decoders.then_some(t), g);
        let mean = tape.affine(
            act,
            b.p(&format!("{prefix}.mean.weight"))?,
            Some(b.p(&format!("{prefix}.mean.bias"))?),
        )?;
        let log_scale = b.p(&format!("{prefix}.log_scale"))?;
        let scale = tape.exp(log_scale)?;
        let scale = if tape.value(mean).ndim() == 2 {
            let rows = tape.value(mean).rows();
            tape.broadcast_rows(scale, rows)?
        } else {
            scale
        };
        Ok(GaussianVars { mean, scale })
    }

    fn check_decoder_index(&self, g: usize, t: usize) -> Result<()> {
        if g >= self.config.groups.count() {
            return Err(DlgfaError::IndexOutOfRange(format!(
                "group {g} of {}",
                self.config.groups.count()
            )));
        }
        if t >= self.config.max_timesteps {
            return Err(DlgfaError::IndexOutOfRange(format!(
                "timestep {t} of {}",
                self.config.max_timesteps
            )));
        }
        Ok(())
    }

    /// One GRU step on `[φx(x_t); φz(z_t)]`:
    /// r = σ(·), u = σ(·), n = tanh(W_in v + b_in + r∘(W_hn h + b_hn)),
    /// h' = (1−u)∘n + u∘h.
    pub fn recurrence_on(&self, tape: &mut Tape, b: &Bound, x: Var, z: Var, h_prev: Var) -> Result<Var> {
        if self.config.static_mode {
            let shape = tape.value(h_prev).shape().to_vec();
            return tape.constant(Tensor::zeros(&shape));
        }
        let hd = self.config.hidden_dim;
        let fx = self.feature_x_on(tape, b, x)?;
        let fz = self.feature_z_on(tape, b, z)?;
        let v = tape.concat(&[fx, fz])?;
        let gi = tape.affine(v, b.p("gru.input.weight")?, Some(b.p("gru.input.bias")?))?;
        let gh = tape.affine(h_prev, b.p("gru.hidden.weight")?, Some(b.p("gru.hidden.bias")?))?;

        let ir = tape.slice_cols(gi, 0, hd)?;
        let hr = tape.slice_cols(gh, 0, hd)?;
        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r)?;

        let iu = tape.slice_cols(gi, hd, hd)?;
        let hu = tape.slice_cols(gh, hd, hd)?;
        let u = tape.add(iu, hu)?;
        let u = tape.sigmoid(u)?;

        let in_ = tape.slice_cols(gi, 2 * hd, hd)?;
        let hn = tape.slice_cols(gh, 2 * hd, hd)?;
        let gated = tape.mul(r, hn)?;
        let n = tape.add(in_, gated)?;
        let n = tape.tanh(n)?;

        // h' = n + u∘(h − n)
        let diff = tape.sub(h_prev, n)?;
        let keep = tape.mul(u, diff)?;
        tape.add(n, keep)
    }

    /// Runs the whole sequence on `tape`. `batch` is `T×B×d`, `noise` is
    /// `T×B×K`; both may also be `T×d` / `T×K` for a single sequence.
    pub fn forward_on(&self, tape: &mut Tape, b: &Bound, batch: &Tensor, noise: &Tensor) -> Result<Vec<StepVars>> {
        let (steps, rows) = self.check_sequence(batch, noise)?;
        let h_shape = if batch.ndim() == 3 {
            vec![rows, self.config.hidden_dim]
        } else {
            vec![self.config.hidden_dim]
        };
        let mut h = tape.constant(Tensor::zeros(&h_shape))?;
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = tape.constant(batch.index_axis0(t)?)?;
            let eps = noise.index_axis0(t)?;
            let prior = self.prior_on(tape, b, h)?;
            let posterior = self.encode_on(tape, b, x, h)?;
            let z = reparameterize_on(tape, posterior, eps)?;
            let likelihoods = (0..self.config.groups.count())
                .map(|g| self.decode_group_on(tape, b, g, t, z, h))
                .collect::<Result<Vec<_>>>()?;
            let h_next = self.recurrence_on(tape, b, x, z, h)?;
            out.push(StepVars {
                x,
                prior,
                posterior,
                z,
                likelihoods,
                h: h_next,
            });
            h = h_next;
        }
        Ok(out)
    }

    fn check_sequence(&self, batch: &Tensor, noise: &Tensor) -> Result<(usize, usize)> {
        if batch.ndim() != 2 && batch.ndim() != 3 {
            return Err(DlgfaError::dim(
                "forward_sequence",
                format!("batch must be T×B×d or T×d, got {:?}", batch.shape()),
            ));
        }
        let steps = batch.shape()[0];
        if steps > self.config.max_timesteps {
            return Err(DlgfaError::SequenceLength {
                got: steps,
                max: self.config.max_timesteps,
            });
        }
        if steps == 0 {
            return Err(DlgfaError::dim("forward_sequence", "empty sequence"));
        }
        if batch.shape().last() != Some(&self.config.input_dim()) {
            return Err(DlgfaError::dim(
                "forward_sequence",
                format!("expected trailing width {}, got shape {:?}", self.config.input_dim(), batch.shape()),
            ));
        }
        let mut expect = batch.shape().to_vec();
        *expect.last_mut().expect("ndim >= 2") = self.config.latent_dim;
        if noise.shape() != expect.as_slice() {
            return Err(DlgfaError::dim(
                "forward_sequence",
                format!("noise {:?}, expected {:?}", noise.shape(), expect),
            ));
        }
        let rows = if batch.ndim() == 3 { batch.shape()[1] } else { 1 };
        Ok((steps, rows))
    }

    // ---- value-level operations ------------------------------------

    pub fn feature_extract_x(&self, x_t: &Tensor) -> Result<Tensor> {
        self.check_width("feature_extract_x", x_t, self.config.input_dim())?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let x = tape.constant(x_t.clone())?;
        let y = self.feature_x_on(&mut tape, &b, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn feature_extract_z(&self, z_t: &Tensor) -> Result<Tensor> {
        self.check_width("feature_extract_z", z_t, self.config.latent_dim)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let z = tape.constant(z_t.clone())?;
        let y = self.feature_z_on(&mut tape, &b, z)?;
        Ok(tape.value(y).clone())
    }

    pub fn prior_params(&self, h_prev: &Tensor) -> Result<GaussianParams> {
        self.check_width("prior_params", h_prev, self.config.hidden_dim)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let h = tape.constant(h_prev.clone())?;
        Ok(self.prior_on(&mut tape, &b, h)?.to_params(&tape))
    }

    pub fn encode(&self, x_t: &Tensor, h_prev: &Tensor) -> Result<GaussianParams> {
        self.check_width("encode", x_t, self.config.input_dim())?;
        self.check_width("encode", h_prev, self.config.hidden_dim)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let x = tape.constant(x_t.clone())?;
        let h = tape.constant(h_prev.clone())?;
        Ok(self.encode_on(&mut tape, &b, x, h)?.to_params(&tape))
    }

    /// `g` and `t` are 0-based.
    pub fn decode_group(&self, g: usize, t: usize, z_t: &Tensor, h_prev: &Tensor) -> Result<GaussianParams> {
        self.check_decoder_index(g, t)?;
        self.check_width("decode_group", z_t, self.config.latent_dim)?;
        self.check_width("decode_group", h_prev, self.config.hidden_dim)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let z = tape.constant(z_t.clone())?;
        let h = tape.constant(h_prev.clone())?;
        Ok(self.decode_group_on(&mut tape, &b, g, t, z, h)?.to_params(&tape))
    }

    pub fn recurrence_step(&self, x_t: &Tensor, z_t: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
        self.check_width("recurrence_step", x_t, self.config.input_dim())?;
        self.check_width("recurrence_step", z_t, self.config.latent_dim)?;
        self.check_width("recurrence_step", h_prev, self.config.hidden_dim)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let x = tape.constant(x_t.clone())?;
        let z = tape.constant(z_t.clone())?;
        let h = tape.constant(h_prev.clone())?;
        let out = self.recurrence_on(&mut tape, &b, x, z, h)?;
        Ok(tape.value(out).clone())
    }

    pub fn forward_sequence(&self, batch: &Tensor, noise: &Tensor) -> Result<Vec<StepRecord>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let steps = self.forward_on(&mut tape, &b, batch, noise)?;
        Ok(steps
            .into_iter()
            .map(|s| StepRecord {
                prior: s.prior.to_params(&tape),
                posterior: s.posterior.to_params(&tape),
                z: tape.value(s.z).clone(),
                likelihoods: s.likelihoods.iter().map(|l| l.to_params(&tape)).collect(),
                h: tape.value(s.h).clone(),
            })
            .collect())
    }
}

/// z = μ + σ∘ε on a tape.
pub fn reparameterize_on(tape: &mut Tape, q: GaussianVars, noise: Tensor) -> Result<Var> {
    if tape.value(q.mean).shape() != noise.shape() {
        return Err(DlgfaError::dim(
            "reparameterize",
            format!("noise {:?} vs mean {:?}", noise.shape(), tape.value(q.mean).shape()),
        ));
    }
    let eps = tape.constant(noise)?;
    let spread = tape.mul(q.scale, eps)?;
    tape.add(q.mean, spread)
}

/// z = μ + σ∘ε.
pub fn reparameterize(q: &GaussianParams, noise: &Tensor) -> Result<Tensor> {
    if q.mean.shape() != noise.shape() {
        return Err(DlgfaError::dim(
            "reparameterize",
            format!("noise {:?} vs mean {:?}", noise.shape(), q.mean.shape()),
        ));
    }
    let data = q
        .mean
        .data()
        .iter()
        .zip(q.scale.data().iter().zip(noise.data()))
        .map(|(&m, (&s, &e))| m + s * e)
        .collect();
    Tensor::new(q.mean.shape().to_vec(), data)
}

/// Bounds every produced scale lies within.
pub fn scale_bounds() -> (f64, f64) {
    ((-EXP_CLAMP).exp(), EXP_CLAMP.exp())
}

#[cfg(test)]
mod tests;
