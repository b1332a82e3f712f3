//! Evaluation: reconstruction error, bound-based log-likelihood, loading
//! sparsity reports, factor rankings and the λ sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::{DlgfaError, Result};
use crate::kernel::{Tape, Tensor};
use crate::model::{DlgfaModel, ModelConfig};
use crate::objective::elbo_on;
use crate::optim::{fit, OptimConfig};

/// Sequences evaluated per forward pass.
const EVAL_CHUNK: usize = 256;

/// How the latent is chosen when reconstructing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// z = posterior mean.
    Zero,
    /// z drawn from the posterior with the given seed.
    Sampled { seed: u64 },
}

fn check_compatible(model: &DlgfaModel, ds: &LongitudinalDataset) -> Result<()> {
    if ds.dim() != model.config.input_dim() {
        return Err(DlgfaError::dim(
            "eval",
            format!("model expects d={}, data has d={}", model.config.input_dim(), ds.dim()),
        ));
    }
    if ds.groups().dims() != model.config.groups.dims() {
        return Err(DlgfaError::dim(
            "eval",
            format!("group dims {:?} vs model {:?}", ds.groups().dims(), model.config.groups.dims()),
        ));
    }
    if ds.timesteps() > model.config.max_timesteps {
        return Err(DlgfaError::SequenceLength {
            got: ds.timesteps(),
            max: model.config.max_timesteps,
        });
    }
    Ok(())
}

/// Sequence indices ordered by subject id, so results do not depend on the
/// order sequences are stored in.
fn canonical_order(ds: &LongitudinalDataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.sort_by(|&a, &b| ds.subject_ids()[a].cmp(&ds.subject_ids()[b]));
    idx
}

fn normal_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape, data).expect("shape matches length")
}

/// Mean over every (sequence, t, feature) of the squared difference between
/// the decoder mean and the data.
pub fn mse_test(model: &DlgfaModel, ds: &LongitudinalDataset, noise: NoiseMode) -> Result<f64> {
    check_compatible(model, ds)?;
    if ds.is_empty() {
        return Err(DlgfaError::InvalidArgument("empty dataset".into()));
    }
    let mut rng = match noise {
        NoiseMode::Zero => None,
        NoiseMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let groups = &model.config.groups;
    let (t_len, d, k) = (ds.timesteps(), ds.dim(), model.config.latent_dim);
    let mut sse = 0.0;
    for chunk in canonical_order(ds).chunks(EVAL_CHUNK) {
        let batch = ds.batch_tensor(chunk)?;
        let shape = vec![t_len, chunk.len(), k];
        let eps = match rng.as_mut() {
            None => Tensor::zeros(&shape),
            Some(r) => normal_tensor(shape, r),
        };
        let records = model.forward_sequence(&batch, &eps)?;
        for (t, rec) in records.iter().enumerate() {
            let x = batch.index_axis0(t)?;
            for (g, lik) in rec.likelihoods.iter().enumerate() {
                let (off, dg) = (groups.offset(g), groups.dims()[g]);
                for b in 0..chunk.len() {
                    let xr = &x.data()[b * d + off..b * d + off + dg];
                    let mr = &lik.mean.data()[b * dg..(b + 1) * dg];
                    sse += xr.iter().zip(mr).map(|(a, m)| (m - a).powi(2)).sum::<f64>();
                }
            }
        }
    }
    Ok(sse / (ds.len() * t_len * d) as f64)
}

/// Bound-based log-likelihood estimate (reconstruction minus KL, no
/// penalty), summed over the dataset and averaged over `num_samples` draws.
pub fn test_log_likelihood(model: &DlgfaModel, ds: &LongitudinalDataset, num_samples: usize, seed: u64) -> Result<f64> {
    check_compatible(model, ds)?;
    if num_samples == 0 {
        return Err(DlgfaError::InvalidArgument("num_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = canonical_order(ds);
    let (t_len, k) = (ds.timesteps(), model.config.latent_dim);
    let mut total = 0.0;
    for _ in 0..num_samples {
        for chunk in order.chunks(EVAL_CHUNK) {
            let batch = ds.batch_tensor(chunk)?;
            let eps = normal_tensor(vec![t_len, chunk.len(), k], &mut rng);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape)?;
            let vars = elbo_on(&mut tape, model, &bound, &batch, &eps)?;
            total += tape.value(vars.recon).item()? - tape.value(vars.kl).item()?;
        }
    }
    Ok(total / num_samples as f64)
}

/// Column norms of every `W[t][g]`, with exact-zero flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    timesteps: usize,
    latent: usize,
    group_names: Vec<String>,
    /// `T × G × K`, row-major.
    norms: Vec<f64>,
    zero_flags: Vec<bool>,
}

pub fn sparsity_report(model: &DlgfaModel) -> SparsityReport {
    let w = &model.loadings;
    let (t_len, g_len, k) = (w.timesteps(), w.groups(), w.cols());
    let mut norms = Vec::with_capacity(t_len * g_len * k);
    let mut zero_flags = Vec::with_capacity(t_len * g_len * k);
    for ((t, g), _) in w.iter() {
        for j in 0..k {
            norms.push(w.column_norm(t, g, j).expect("in range"));
            zero_flags.push(w.column_is_zero(t, g, j).expect("in range"));
        }
    }
    SparsityReport {
        timesteps: t_len,
        latent: k,
        group_names: model.config.groups.names().to_vec(),
        norms,
        zero_flags,
    }
}

impl SparsityReport {
    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    fn at(&self, t: usize, g: usize, j: usize) -> usize {
        (t * self.groups() + g) * self.latent + j
    }

    /// 0-based indices.
    pub fn norm(&self, t: usize, g: usize, j: usize) -> f64 {
        self.norms[self.at(t, g, j)]
    }

    pub fn is_zero(&self, t: usize, g: usize, j: usize) -> bool {
        self.zero_flags[self.at(t, g, j)]
    }

    pub fn zero_count(&self) -> usize {
        self.zero_flags.iter().filter(|&&z| z).count()
    }

    pub fn column_count(&self) -> usize {
        self.zero_flags.len()
    }

    pub fn zero_fraction(&self) -> f64 {
        self.zero_count() as f64 / self.column_count() as f64
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.timesteps {
            return Err(DlgfaError::IndexOutOfRange(format!("t={t} outside 1..={}", self.timesteps)));
        }
        Ok(t - 1)
    }

    /// `G × K` norm matrix at 1-based timestep `t`.
    pub fn heatmap(&self, t: usize) -> Result<Vec<Vec<f64>>> {
        let t0 = self.check_t(t)?;
        Ok((0..self.groups())
            .map(|g| (0..self.latent).map(|j| self.norm(t0, g, j)).collect())
            .collect())
    }

    /// Long-format CSV: `t,group,latent,norm,zero` with 1-based `t` and latent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,group,latent,norm,zero\n");
        for t in 0..self.timesteps {
            for (g, name) in self.group_names.iter().enumerate() {
                for j in 0..self.latent {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        t + 1,
                        name,
                        j + 1,
                        fmt_norm(self.norm(t, g, j)),
                        u8::from(self.is_zero(t, g, j))
                    );
                }
            }
        }
        out
    }

    /// Heatmap at 1-based `t` as an aligned text table.
    pub fn to_text(&self, t: usize) -> Result<String> {
        let map = self.heatmap(t)?;
        let mut headers = vec!["group".to_owned()];
        headers.extend((1..=self.latent).map(|j| format!("z{j}")));
        let rows: Vec<Vec<String>> = self
            .group_names
            .iter()
            .zip(map)
            .map(|(name, row)| {
                std::iter::once(name.clone())
                    .chain(row.iter().map(|v| if *v == 0.0 { "0".to_owned() } else { format!("{v:.4}") }))
                    .collect()
            })
            .collect();
        Ok(text_table(&headers, &rows))
    }
}

fn fmt_norm(v: f64) -> String {
    if v == 0.0 {
        "0".to_owned()
    } else {
        v.to_string()
    }
}

/// Writes the `G × K` heatmap at 1-based `t`: header `group,z1,…,zK`, one
/// row per group, exact zeros as `0`.
pub fn export_heatmap_csv(report: &SparsityReport, t: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, heatmap_csv(report, t)?).map_err(|e| DlgfaError::io(path, e))
}

pub fn heatmap_csv(report: &SparsityReport, t: usize) -> Result<String> {
    let map = report.heatmap(t)?;
    let mut out = String::from("group");
    for j in 1..=report.latent_dim() {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    for (name, row) in report.group_names().iter().zip(map) {
        out.push_str(name);
        for v in row {
            out.push(',');
            out.push_str(&fmt_norm(v));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses a heatmap CSV back into (group names, `G × K` values).
pub fn parse_heatmap_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut names = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DlgfaError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        names.push(rec[0].to_owned());
        let row = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.parse::<f64>().map_err(|_| DlgfaError::Parse {
                    line,
                    message: format!("`{c}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    Ok((names, values))
}

/// Groups ranked by loading strength for each latent dimension at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorRanking {
    /// 1-based timestep.
    pub t: usize,
    /// `per_factor[j]`: (group name, norm), descending, zero norms dropped.
    pub per_factor: Vec<Vec<(String, f64)>>,
}

/// Ranks groups per latent dimension at 1-based `t`; ties keep group order.
pub fn top_features_per_factor(report: &SparsityReport, t: usize, top_k: usize) -> Result<FactorRanking> {
    let t0 = report.check_t(t)?;
    let per_factor = (0..report.latent_dim())
        .map(|j| {
            let mut ranked: Vec<(usize, f64)> = (0..report.groups())
                .map(|g| (g, report.norm(t0, g, j)))
                .filter(|&(_, n)| n > 0.0)
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
            ranked
                .into_iter()
                .take(top_k)
                .map(|(g, n)| (report.group_names()[g].clone(), n))
                .collect()
        })
        .collect();
    Ok(FactorRanking { t, per_factor })
}

impl FactorRanking {
    /// Top group of each latent dimension, if it has any nonzero loading.
    pub fn top_groups(&self) -> Vec<Option<&str>> {
        self.per_factor
            .iter()
            .map(|r| r.first().map(|(name, _)| name.as_str()))
            .collect()
    }

    /// Number of latent dimensions whose top group is nonzero, strictly
    /// larger than the runner-up, and not the top group of any other dimension.
    pub fn distinct_top_groups(&self) -> usize {
        let tops = self.top_groups();
        self.per_factor
            .iter()
            .enumerate()
            .filter(|(j, r)| {
                let Some((name, n)) = r.first() else { return false };
                let clear = r.get(1).is_none_or(|(_, n2)| n2 < n);
                let shared = tops
                    .iter()
                    .enumerate()
                    .any(|(i, top)| i != *j && *top == Some(name.as_str()));
                clear && !shared
            })
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,latent,rank,group,norm\n");
        for (j, ranked) in self.per_factor.iter().enumerate() {
            for (r, (name, n)) in ranked.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{}", self.t, j + 1, r + 1, name, n);
            }
        }
        out
    }
}

/// One λ setting evaluated on validation data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mse_val: f64,
    pub val_loglik: f64,
    pub zero_columns: usize,
}

/// Trains one model per λ on `train` (same seed for all) and evaluates on
/// `val`. Trainings run on up to `workers` threads; rows follow `lambdas`.
pub fn lambda_sweep(
    train: &LongitudinalDataset,
    val: &LongitudinalDataset,
    model_config: &ModelConfig,
    optim_config: &OptimConfig,
    lambdas: &[f64],
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(DlgfaError::InvalidArgument("lambda list is empty".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(DlgfaError::InvalidArgument(format!("lambda must be >= 0, got {bad}")));
    }
    let run = |lambda: f64| -> Result<SweepRow> {
        let cfg = OptimConfig {
            lambda,
            ..optim_config.clone()
        };
        let (model, _) = fit(train, model_config.clone(), &cfg)?;
        Ok(SweepRow {
            lambda,
            mse_val: mse_test(&model, val, NoiseMode::Zero)?,
            val_loglik: test_log_likelihood(&model, val, 1, cfg.seed)?,
            zero_columns: model.loadings.zero_column_count(),
        })
    };
    let workers = workers.clamp(1, lambdas.len());
    let mut rows: Vec<Option<Result<SweepRow>>> = (0..lambdas.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, slots) in rows.chunks_mut(lambdas.len().div_ceil(workers)).enumerate() {
            let start = w * lambdas.len().div_ceil(workers);
            let run = &run;
            s.spawn(move || {
                for (i, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(run(lambdas[start + i]));
                }
            });
        }
    });
    rows.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Whether zero-column counts never decrease as λ grows (rows sorted by λ).
pub fn zero_counts_monotone(rows: &[SweepRow]) -> bool {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    sorted.windows(2).all(|w| w[0].zero_columns <= w[1].zero_columns)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,mse_val,val_loglik,zero_columns\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.lambda, r.mse_val, r.val_loglik, r.zero_columns);
    }
    out
}

/// Left-aligned first column, right-aligned rest.
pub fn text_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut width = headers.iter().map(|h| h.chars().count()).collect::<Vec<_>>();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let fmt_row = |cells: &[String]| {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate().take(cols) {
            if i == 0 {
                let _ = write!(line, "{cell:<w$}", w = width[0]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = width[i]);
            }
        }
        line.trim_end().to_owned()
    };
    let mut out = fmt_row(headers);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_one_bar, BarMode};
    use crate::model::GroupSpec;
    use crate::optim::prox_group_columns;

    fn bar_config(size: usize, k: usize) -> ModelConfig {
        let groups = GroupSpec::new(vec![size; size], (1..=size).map(|r| format!("row{r}")).collect()).unwrap();
        let mut cfg = ModelConfig::new(k, 4, 1, size, groups);
        cfg.feature_dim = 6;
        cfg
    }

    fn set(m: &mut DlgfaModel, name: &str, data: Vec<f64>) {
        let shape = m.params.get(name).unwrap().shape().to_vec();
        m.params.set(name, Tensor::new(shape, data).unwrap()).unwrap();
    }

    #[test]
    fn zero_predictor_mse_is_bar_fraction_plus_noise() {
        let (size, sd) = (4, 0.05);
        let ds = generate_one_bar(300, size, sd, 8, BarMode::RowAsTime).unwrap();
        let model = DlgfaModel::zeros(bar_config(size, 2)).unwrap();
        let mse = mse_test(&model, &ds, NoiseMode::Zero).unwrap();
        // E[(x − 0)²] = (1/size)·1 + σ²
        let expected = 1.0 / size as f64 + sd * sd;
        let n = (300 * size * size * size) as f64;
        assert!((mse - expected).abs() < 4.0 * (2.0 * sd * sd / n).sqrt() + 4.0 * sd / n.sqrt(), "{mse} vs {expected}");
    }

    #[test]
    fn exact_reconstruction_has_zero_mse() {
        // constant data reproduced by the decoder bias alone
        let groups = GroupSpec::unnamed(vec![2]).unwrap();
        let cfg = ModelConfig::new(1, 2, 1, 3, groups.clone());
        let mut m = DlgfaModel::zeros(cfg).unwrap();
        set(&mut m, "decoder.g000.mean.bias", vec![0.5, -1.5]);
        let values = [0.5, -1.5].repeat(6);
        let ds = LongitudinalDataset::new(
            values,
            3,
            groups,
            vec!["a".into(), "b".into()],
            vec!["s1".into(), "s2".into()],
            vec!["1".into(), "2".into(), "3".into()],
        )
        .unwrap();
        assert_eq!(mse_test(&m, &ds, NoiseMode::Zero).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_toy_log_likelihood() {
        // zero model: σ=1, mean=0, posterior = prior; data all zero
        let groups = GroupSpec::unnamed(vec![2, 1]).unwrap();
        let cfg = ModelConfig::new(2, 2, 1, 4, groups.clone());
        let m = DlgfaModel::zeros(cfg).unwrap();
        let (n, t, d) = (3, 4, 3);
        let ds = LongitudinalDataset::new(
            vec![0.0; n * t * d],
            t,
            groups,
            vec!["a".into(), "b".into(), "c".into()],
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..t).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let ll = test_log_likelihood(&m, &ds, 2, 0).unwrap();
        let expected = (n * t * d) as f64 * -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - expected).abs() < 1e-10 * expected.abs(), "{ll} vs {expected}");
    }

    #[test]
    fn evaluation_ignores_sequence_order_and_is_repeatable() {
        let ds = generate_one_bar(20, 3, 0.1, 1, BarMode::RowAsTime).unwrap();
        let m = DlgfaModel::new(bar_config(3, 2), 4).unwrap();
        let rev: Vec<usize> = (0..ds.len()).rev().collect();
        let shuffled = ds.subset(&rev).unwrap();
        let a = test_log_likelihood(&m, &ds, 1, 9).unwrap();
        assert_eq!(a, test_log_likelihood(&m, &ds, 1, 9).unwrap());
        assert_eq!(a, test_log_likelihood(&m, &shuffled, 1, 9).unwrap());
        let z = mse_test(&m, &ds, NoiseMode::Zero).unwrap();
        assert_eq!(z, mse_test(&m, &shuffled, NoiseMode::Zero).unwrap());
        let s = mse_test(&m, &ds, NoiseMode::Sampled { seed: 2 }).unwrap();
        assert_eq!(s, mse_test(&m, &ds, NoiseMode::Sampled { seed: 2 }).unwrap());
        assert!(test_log_likelihood(&m, &ds, 0, 0).is_err());
    }

    #[test]
    fn incompatible_data_is_rejected() {
        let ds = generate_one_bar(4, 3, 0.1, 1, BarMode::RowAsTime).unwrap();
        let m = DlgfaModel::new(bar_config(4, 2), 0).unwrap();
        assert!(matches!(mse_test(&m, &ds, NoiseMode::Zero), Err(DlgfaError::Dimension { .. })));
    }

    #[test]
    fn report_flags_follow_literal_zeros() {
        let mut m = DlgfaModel::new(bar_config(3, 2), 0).unwrap();
        let fresh = sparsity_report(&m);
        assert_eq!(fresh.zero_count(), 0);
        assert_eq!(fresh.column_count(), 3 * 3 * 2);
        for (_, w) in m.loadings.iter_mut() {
            prox_group_columns(w, 1e9).unwrap();
        }
        let dead = sparsity_report(&m);
        assert_eq!(dead.zero_count(), dead.column_count());
        assert!(dead.norms.iter().all(|&n| n == 0.0));
        assert!(top_features_per_factor(&dead, 1, 3).unwrap().per_factor.iter().all(Vec::is_empty));
    }

    #[test]
    fn ranking_and_heatmap() {
        let mut m = DlgfaModel::zeros(bar_config(3, 2)).unwrap();
        m.loadings.get_mut(1, 2).unwrap().data_mut()[0] = -0.7;
        let rep = sparsity_report(&m);
        let rank = top_features_per_factor(&rep, 2, 3).unwrap();
        assert_eq!(rank.per_factor[0], vec![("row3".to_owned(), 0.7)]);
        assert!(rank.per_factor[1].is_empty());
        assert_eq!(rank.distinct_top_groups(), 1);
        assert!(top_features_per_factor(&rep, 0, 1).is_err());
        assert!(top_features_per_factor(&rep, 4, 1).is_err());

        let text = heatmap_csv(&rep, 2).unwrap();
        assert_eq!(text, "group,z1,z2\nrow1,0,0\nrow2,0,0\nrow3,0.7,0\n");
        let (names, values) = parse_heatmap_csv(&text).unwrap();
        assert_eq!(names, rep.group_names());
        assert_eq!(values, rep.heatmap(2).unwrap());
        assert!(rep.to_text(2).unwrap().contains("0.7000"));
        assert_eq!(rep.to_csv().lines().count(), 1 + 3 * 3 * 2);
    }

    #[test]
    fn ranking_ties_keep_group_order() {
        let mut m = DlgfaModel::zeros(bar_config(3, 2)).unwrap();
        for g in [2, 0] {
            m.loadings.get_mut(0, g).unwrap().data_mut()[1] = 0.5;
        }
        let rep = sparsity_report(&m);
        let rank = top_features_per_factor(&rep, 1, 5).unwrap();
        let names: Vec<&str> = rank.per_factor[1].iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["row1", "row3"]);
        // tied top group is not a clear winner
        assert_eq!(rank.distinct_top_groups(), 0);
    }

    #[test]
    fn sweep_produces_one_row_per_lambda() {
        let ds = generate_one_bar(24, 3, 0.05, 2, BarMode::RowAsTime).unwrap();
        let (train, val) = (ds.subset(&(0..20).collect::<Vec<_>>()).unwrap(), ds.subset(&[20, 21, 22, 23]).unwrap());
        let oc = OptimConfig {
            batch_size: 10,
            max_epochs: 3,
            ..OptimConfig::default()
        };
        let cfg = bar_config(3, 2);
        let rows = lambda_sweep(&train, &val, &cfg, &oc, &[0.0, 100.0, 1e6], 2).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].zero_columns, 0);
        assert_eq!(rows[2].zero_columns, cfg.max_timesteps * 3 * 2);
        assert!(zero_counts_monotone(&rows));
        let serial = lambda_sweep(&train, &val, &cfg, &oc, &[0.0, 100.0, 1e6], 1).unwrap();
        assert_eq!(rows, serial);
        let csv = sweep_csv(&rows);
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 4));
        assert!(lambda_sweep(&train, &val, &cfg, &oc, &[], 1).is_err());
        assert!(lambda_sweep(&train, &val, &cfg, &oc, &[-1.0], 1).is_err());
    }
}
