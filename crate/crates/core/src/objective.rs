//! Collapsed timestep-wise evidence lower bound.
//!
//! With the Gamma scales on the loading columns marginalized out, the bound is
//!
//! ```text
//! Σ_t [ log p(x_t | z_≤t, x_<t) − KL(q(z_t | x_≤t, z_<t) ‖ p(z_t | x_<t, z_<t)) ]
//!     − λ Σ_t Σ_{g,j} ‖W[t][g][:, j]‖₂
//! ```
//!
//! The expectation is a single reparameterized sample. The prior on the
//! network weights is improper-uniform and contributes nothing.

use crate::error::{DlgfaError, Result};
use crate::kernel::{Tape, Tensor, Var};
use crate::model::{Bound, DlgfaModel, GaussianParams, GaussianVars, LoadingMatrices, StepVars};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Terms of the collapsed bound, in nats summed over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon_loglik: f64,
    pub kl: f64,
    pub penalty: f64,
    /// `recon_loglik − kl − penalty`.
    pub objective: f64,
    /// Observed scalars the terms were summed over.
    pub elements: usize,
}

impl LossBreakdown {
    pub fn new(recon_loglik: f64, kl: f64, penalty: f64, elements: usize) -> Self {
        LossBreakdown {
            recon_loglik,
            kl,
            penalty,
            objective: recon_loglik - kl - penalty,
            elements,
        }
    }

    /// The differentiable part, `recon_loglik − kl`.
    pub fn smooth(&self) -> f64 {
        self.recon_loglik - self.kl
    }

    pub fn objective_per_element(&self) -> f64 {
        if self.elements == 0 {
            0.0
        } else {
            self.objective / self.elements as f64
        }
    }

    /// Component-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let recon = items.iter().map(|b| b.recon_loglik).sum::<f64>() / n;
        let kl = items.iter().map(|b| b.kl).sum::<f64>() / n;
        let penalty = items.iter().map(|b| b.penalty).sum::<f64>() / n;
        let elements = items.iter().map(|b| b.elements).sum::<usize>() / items.len();
        Some(LossBreakdown::new(recon, kl, penalty, elements))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DlgfaError::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `KL(q ‖ p)` for diagonal Gaussians, summed over all components:
/// `Σ log(σp/σq) + (σq² + (μq − μp)²)/(2σp²) − ½`.
pub fn kl_diag_gaussian(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    same_shape("kl_diag_gaussian", &q.mean, &p.mean)?;
    same_shape("kl_diag_gaussian", &q.scale, &p.scale)?;
    same_shape("kl_diag_gaussian", &q.mean, &q.scale)?;
    let mut total = 0.0;
    for i in 0..q.mean.numel() {
        let (mq, sq) = (q.mean.data()[i], q.scale.data()[i]);
        let (mp, sp) = (p.mean.data()[i], p.scale.data()[i]);
        if !(sq > 0.0 && sp > 0.0) {
            return Err(DlgfaError::Contract("Gaussian scale must be > 0".into()));
        }
        let d = mq - mp;
        total += (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
    }
    Ok(total)
}

/// `log N(x; μ, diag σ²)` summed over all components.
pub fn logpdf_diag_gaussian(x: &Tensor, p: &GaussianParams) -> Result<f64> {
    same_shape("logpdf_diag_gaussian", x, &p.mean)?;
    same_shape("logpdf_diag_gaussian", x, &p.scale)?;
    let mut total = 0.0;
    for i in 0..x.numel() {
        let s = p.scale.data()[i];
        if !(s > 0.0) {
            return Err(DlgfaError::Contract("Gaussian scale must be > 0".into()));
        }
        let r = (x.data()[i] - p.mean.data()[i]) / s;
        total += -HALF_LN_2PI - s.ln() - 0.5 * r * r;
    }
    Ok(total)
}

/// `λ Σ_{t,g,j} ‖W[t][g][:, j]‖₂`.
pub fn group_lasso_penalty(w: &LoadingMatrices, lambda: f64) -> f64 {
    let mut total = 0.0;
    for (_, m) in w.iter() {
        let cols = w.cols();
        for j in 0..cols {
            let sq: f64 = (0..w.rows()).map(|r| m.data()[r * cols + j].powi(2)).sum();
            total += sq.sqrt();
        }
    }
    lambda * total
}

/// KL term on a tape.
pub fn kl_on(tape: &mut Tape, q: GaussianVars, p: GaussianVars) -> Result<Var> {
    let ln_sq = tape.ln(q.scale)?;
    let ln_sp = tape.ln(p.scale)?;
    let log_ratio = tape.sub(ln_sp, ln_sq)?;
    let var_q = tape.mul(q.scale, q.scale)?;
    let diff = tape.sub(q.mean, p.mean)?;
    let diff_sq = tape.mul(diff, diff)?;
    let num = tape.add(var_q, diff_sq)?;
    let var_p = tape.mul(p.scale, p.scale)?;
    let two_var_p = tape.scale(var_p, 2.0)?;
    let frac = tape.div(num, two_var_p)?;
    let terms = tape.add(log_ratio, frac)?;
    let terms = tape.shift(terms, -0.5)?;
    tape.sum(terms)
}

/// Gaussian log-density on a tape.
pub fn logpdf_on(tape: &mut Tape, x: Var, p: GaussianVars) -> Result<Var> {
    let resid = tape.sub(x, p.mean)?;
    let z = tape.div(resid, p.scale)?;
    let z_sq = tape.mul(z, z)?;
    let half = tape.scale(z_sq, -0.5)?;
    let ln_s = tape.ln(p.scale)?;
    let terms = tape.sub(half, ln_s)?;
    let terms = tape.shift(terms, -HALF_LN_2PI)?;
    tape.sum(terms)
}

/// Tape handles of the smooth ELBO terms for one batch.
#[derive(Debug, Clone)]
pub struct ElboVars {
    pub recon: Var,
    pub kl: Var,
    /// `kl − recon`: the quantity minimized by gradient steps.
    pub loss: Var,
    pub steps: Vec<StepVars>,
    pub elements: usize,
}

/// Builds the smooth part of the bound on `tape`.
pub fn elbo_on(tape: &mut Tape, model: &DlgfaModel, bound: &Bound, batch: &Tensor, noise: &Tensor) -> Result<ElboVars> {
    let steps = model.forward_on(tape, bound, batch, noise)?;
    let groups = &model.config.groups;
    let mut recon_terms = Vec::new();
    let mut kl_terms = Vec::new();
    for step in &steps {
        for (g, lik) in step.likelihoods.iter().enumerate() {
            let xg = tape.slice_cols(step.x, groups.offset(g), groups.dims()[g])?;
            recon_terms.push(logpdf_on(tape, xg, *lik)?);
        }
        kl_terms.push(kl_on(tape, step.posterior, step.prior)?);
    }
    let recon = sum_scalars(tape, &recon_terms)?;
    let kl = sum_scalars(tape, &kl_terms)?;
    let loss = tape.sub(kl, recon)?;
    Ok(ElboVars {
        recon,
        kl,
        loss,
        steps,
        elements: batch.numel(),
    })
}

fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let (first, rest) = terms
        .split_first()
        .ok_or_else(|| DlgfaError::Contract("no terms to sum".into()))?;
    let mut acc = *first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Single-sample estimate of the collapsed bound for one batch.
pub fn collapsed_elbo(model: &DlgfaModel, batch: &Tensor, noise: &Tensor, lambda: f64) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let vars = elbo_on(&mut tape, model, &bound, batch, noise)?;
    Ok(LossBreakdown::new(
        tape.value(vars.recon).item()?,
        tape.value(vars.kl).item()?,
        group_lasso_penalty(&model.loadings, lambda),
        vars.elements,
    ))
}
