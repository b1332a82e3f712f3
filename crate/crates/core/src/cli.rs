//! Run configuration and the `dlgfa` command line.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! output_dir = "runs/bars"
//! seed = 7
//!
//! [model]
//! latent_dim = 8
//! hidden_dim = 32
//! feature_dim = 32
//! loading_rows = 1
//!
//! [optim]
//! lambda = 5.0
//! batch_size = 64
//! max_epochs = 400
//!
//! [data]
//! source = "synthetic"   # or "csv" with `path` (and optional `group_map`)
//! n = 2000
//! size = 8
//! noise_sd = 0.05
//! mode = "row_as_time"   # or "replicate" with `timesteps`
//! ```
//!
//! Unknown keys are rejected. Command-line flags override file values, which
//! override built-in defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{generate_one_bar, load_wide_csv, split_dataset, write_wide_csv, BarMode, GroupMap, LongitudinalDataset, SplitSpec};
use crate::error::{DlgfaError, Result};
use crate::eval::{
    export_heatmap_csv, lambda_sweep, mse_test, sparsity_report, sweep_csv, test_log_likelihood, text_table,
    top_features_per_factor, zero_counts_monotone, NoiseMode,
};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig};
use crate::optim::{fit_with, OptimConfig};

pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SPARSITY_FILE: &str = "sparsity.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn heatmap_file(t: usize) -> String {
    format!("heatmap_t{t}.csv")
}

pub fn ranking_file(t: usize) -> String {
    format!("ranking_t{t}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub loading_rows: usize,
    /// Defaults to the dataset's sequence length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_timesteps: Option<usize>,
    pub static_mode: bool,
    pub per_timestep_decoders: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_dim: 8,
            hidden_dim: 32,
            feature_dim: 32,
            loading_rows: 1,
            max_timesteps: None,
            static_mode: false,
            per_timestep_decoders: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimSection {
    pub lr_adam: f64,
    pub lr_prox: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub tol: f64,
    pub weight_decay: f64,
    /// Rewrite the checkpoint every this many epochs during training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

impl Default for OptimSection {
    fn default() -> Self {
        let d = OptimConfig::default();
        OptimSection {
            lr_adam: d.lr_adam,
            lr_prox: d.lr_prox,
            lambda: d.lambda,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            tol: d.tol,
            weight_decay: d.weight_decay,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSection {
    Synthetic {
        n: usize,
        size: usize,
        noise_sd: f64,
        mode: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        timesteps: Option<usize>,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none")]
        group_map: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSection {
    pub num_samples: usize,
}

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// False when the seed was generated because the file had none.
    #[serde(skip)]
    pub seed_from_file: bool,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub data: DataSection,
    pub split: SplitSection,
    pub eval: EvalSection,
}

// ---- config parsing -------------------------------------------------------

/// 1-based line on which `path` (dotted key) is assigned, if found.
fn key_line(text: &str, path: &str) -> Option<usize> {
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            section = line.trim_matches(|c| c == '[' || c == ']').trim().to_owned();
            if section == path {
                return Some(i + 1);
            }
            continue;
        }
        let Some((key, _)) = line.split_once('=') else { continue };
        let key: String = key
            .split('.')
            .map(|p| p.trim().trim_matches('"'))
            .collect::<Vec<_>>()
            .join(".");
        let full = if section.is_empty() { key } else { format!("{section}.{key}") };
        if full == path {
            return Some(i + 1);
        }
    }
    None
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a toml::Table>,
    text: &'a str,
}

impl<'a> Section<'a> {
    fn path(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_owned()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn err(&self, key: &str, message: impl Into<String>) -> DlgfaError {
        let path = self.path(key);
        DlgfaError::Config {
            line: key_line(self.text, &path),
            key: path,
            message: message.into(),
        }
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(self.err(k, format!("unknown key (expected one of: {})", allowed.join(", "))));
            }
        }
        Ok(())
    }

    fn value(&self, key: &str) -> Option<&'a toml::Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(other) => Err(self.err(key, format!("expected a number, found {}", other.type_str()))),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) => {
                u64::try_from(*v).map(Some).map_err(|_| self.err(key, format!("must be >= 0, got {v}")))
            }
            Some(other) => Err(self.err(key, format!("expected an integer, found {}", other.type_str()))),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(v)) => Ok(Some(*v)),
            Some(other) => Err(self.err(key, format!("expected a boolean, found {}", other.type_str()))),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&'a str>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::String(v)) => Ok(Some(v.as_str())),
            Some(other) => Err(self.err(key, format!("expected a string, found {}", other.type_str()))),
        }
    }

    fn at_least(&self, key: &str, v: Option<usize>, min: usize) -> Result<Option<usize>> {
        match v {
            Some(x) if x < min => Err(self.err(key, format!("must be >= {min}, got {x}"))),
            other => Ok(other),
        }
    }

    fn positive(&self, key: &str, v: Option<f64>) -> Result<Option<f64>> {
        match v {
            Some(x) if !(x > 0.0) || !x.is_finite() => Err(self.err(key, format!("must be > 0, got {x}"))),
            other => Ok(other),
        }
    }

    fn non_negative(&self, key: &str, v: Option<f64>) -> Result<Option<f64>> {
        match v {
            Some(x) if !(x >= 0.0) || !x.is_finite() => Err(self.err(key, format!("must be >= 0, got {x}"))),
            other => Ok(other),
        }
    }
}

fn sub_table<'a>(root: &'a toml::Table, text: &'a str, name: &'static str) -> Result<Section<'a>> {
    let table = match root.get(name) {
        None => None,
        Some(toml::Value::Table(t)) => Some(t),
        Some(other) => {
            return Err(DlgfaError::Config {
                key: name.to_owned(),
                line: key_line(text, name),
                message: format!("expected a table, found {}", other.type_str()),
            })
        }
    };
    Ok(Section { name, table, text })
}

/// Parses config text. Relative paths are resolved against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let root: toml::Table = text.parse().map_err(|e: toml::de::Error| DlgfaError::Config {
        key: "<syntax>".into(),
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().to_owned(),
    })?;
    let top = Section { name: "", table: Some(&root), text };
    top.reject_unknown(&["output_dir", "seed", "model", "optim", "data", "split", "eval", "provenance"])?;
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base_dir.join(p)
        }
    };
    let output_dir = resolve(top.str("output_dir")?.unwrap_or("runs"));
    let file_seed = top.u64("seed")?;
    // TOML integers are signed, so generated seeds stay below 2^63
    let seed = file_seed.unwrap_or_else(|| rand::random::<u64>() >> 1);

    let m = sub_table(&root, text, "model")?;
    m.reject_unknown(&[
        "latent_dim",
        "hidden_dim",
        "feature_dim",
        "loading_rows",
        "max_timesteps",
        "static_mode",
        "per_timestep_decoders",
    ])?;
    let md = ModelSection::default();
    let model = ModelSection {
        latent_dim: m.at_least("latent_dim", m.usize("latent_dim")?, 1)?.unwrap_or(md.latent_dim),
        hidden_dim: m.at_least("hidden_dim", m.usize("hidden_dim")?, 1)?.unwrap_or(md.hidden_dim),
        feature_dim: m.at_least("feature_dim", m.usize("feature_dim")?, 1)?.unwrap_or(md.feature_dim),
        loading_rows: m.at_least("loading_rows", m.usize("loading_rows")?, 1)?.unwrap_or(md.loading_rows),
        max_timesteps: m.at_least("max_timesteps", m.usize("max_timesteps")?, 1)?,
        static_mode: m.bool("static_mode")?.unwrap_or(md.static_mode),
        per_timestep_decoders: m.bool("per_timestep_decoders")?.unwrap_or(md.per_timestep_decoders),
    };

    let o = sub_table(&root, text, "optim")?;
    o.reject_unknown(&[
        "lr_adam",
        "lr_prox",
        "lambda",
        "batch_size",
        "max_epochs",
        "tol",
        "weight_decay",
        "checkpoint_every",
    ])?;
    let od = OptimSection::default();
    let optim = OptimSection {
        lr_adam: o.positive("lr_adam", o.f64("lr_adam")?)?.unwrap_or(od.lr_adam),
        lr_prox: o.positive("lr_prox", o.f64("lr_prox")?)?.unwrap_or(od.lr_prox),
        lambda: o.non_negative("lambda", o.f64("lambda")?)?.unwrap_or(od.lambda),
        batch_size: o.at_least("batch_size", o.usize("batch_size")?, 1)?.unwrap_or(od.batch_size),
        max_epochs: o.usize("max_epochs")?.unwrap_or(od.max_epochs),
        tol: o.positive("tol", o.f64("tol")?)?.unwrap_or(od.tol),
        weight_decay: o.non_negative("weight_decay", o.f64("weight_decay")?)?.unwrap_or(od.weight_decay),
        checkpoint_every: o.at_least("checkpoint_every", o.usize("checkpoint_every")?, 1)?,
    };

    let d = sub_table(&root, text, "data")?;
    let source = d.str("source")?.ok_or_else(|| d.err("source", "required: \"synthetic\" or \"csv\""))?;
    let data = match source {
        "synthetic" => {
            d.reject_unknown(&["source", "n", "size", "noise_sd", "mode", "timesteps", "seed"])?;
            let mode = d.str("mode")?.unwrap_or("row_as_time").to_owned();
            let timesteps = d.at_least("timesteps", d.usize("timesteps")?, 1)?;
            match mode.as_str() {
                "row_as_time" if timesteps.is_some() => {
                    return Err(d.err("timesteps", "only valid with mode = \"replicate\""))
                }
                "row_as_time" => {}
                "replicate" if timesteps.is_none() => {
                    return Err(d.err("timesteps", "required with mode = \"replicate\""))
                }
                "replicate" => {}
                other => return Err(d.err("mode", format!("expected \"row_as_time\" or \"replicate\", got \"{other}\""))),
            }
            DataSection::Synthetic {
                n: d.at_least("n", d.usize("n")?, 3)?.unwrap_or(2000),
                size: d.at_least("size", d.usize("size")?, 2)?.unwrap_or(8),
                noise_sd: d.non_negative("noise_sd", d.f64("noise_sd")?)?.unwrap_or(0.05),
                mode,
                timesteps,
                seed: d.u64("seed")?.unwrap_or(seed),
            }
        }
        "csv" => {
            d.reject_unknown(&["source", "path", "group_map"])?;
            let path = resolve(d.str("path")?.ok_or_else(|| d.err("path", "required for source = \"csv\""))?);
            if !path.is_file() {
                return Err(d.err("path", format!("file {} does not exist", path.display())));
            }
            let group_map = d.str("group_map")?.map(resolve);
            if let Some(gm) = &group_map {
                if !gm.is_file() {
                    return Err(d.err("group_map", format!("file {} does not exist", gm.display())));
                }
            }
            DataSection::Csv { path, group_map }
        }
        other => return Err(d.err("source", format!("expected \"synthetic\" or \"csv\", got \"{other}\""))),
    };

    let s = sub_table(&root, text, "split")?;
    s.reject_unknown(&["train", "val", "test", "seed"])?;
    let sd = SplitSpec::default();
    let split = SplitSection {
        train: s.positive("train", s.f64("train")?)?.unwrap_or(sd.train),
        val: s.positive("val", s.f64("val")?)?.unwrap_or(sd.val),
        test: s.positive("test", s.f64("test")?)?.unwrap_or(sd.test),
        seed: s.u64("seed")?.unwrap_or(seed),
    };
    if ((split.train + split.val + split.test) - 1.0).abs() > 1e-9 {
        return Err(DlgfaError::Config {
            key: "split".into(),
            line: key_line(text, "split"),
            message: format!("fractions must sum to 1, got {}", split.train + split.val + split.test),
        });
    }

    let e = sub_table(&root, text, "eval")?;
    e.reject_unknown(&["num_samples"])?;
    let eval = EvalSection {
        num_samples: e.at_least("num_samples", e.usize("num_samples")?, 1)?.unwrap_or(1),
    };

    Ok(RunConfig {
        output_dir,
        seed,
        seed_from_file: file_seed.is_some(),
        model,
        optim,
        data,
        split,
        eval,
    })
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DlgfaError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

impl RunConfig {
    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            lr_adam: self.optim.lr_adam,
            lr_prox: self.optim.lr_prox,
            lambda: self.optim.lambda,
            batch_size: self.optim.batch_size,
            max_epochs: self.optim.max_epochs,
            tol: self.optim.tol,
            weight_decay: self.optim.weight_decay,
            seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.split.train,
            val: self.split.val,
            test: self.split.test,
            seed: self.split.seed,
        }
    }

    pub fn load_dataset(&self) -> Result<LongitudinalDataset> {
        match &self.data {
            DataSection::Synthetic {
                n,
                size,
                noise_sd,
                mode,
                timesteps,
                seed,
            } => {
                let mode = match (mode.as_str(), timesteps) {
                    ("replicate", Some(t)) => BarMode::Replicate { timesteps: *t },
                    _ => BarMode::RowAsTime,
                };
                generate_one_bar(*n, *size, *noise_sd, *seed, mode)
            }
            DataSection::Csv { path, group_map } => {
                let map = group_map.as_ref().map(|p| read_group_map(p)).transpose()?;
                load_wide_csv(path, map.as_ref())
            }
        }
    }

    /// Model configuration matching the dataset's groups and length.
    pub fn model_config(&self, ds: &LongitudinalDataset) -> Result<ModelConfig> {
        let t = self.model.max_timesteps.unwrap_or(ds.timesteps());
        if ds.timesteps() > t {
            return Err(DlgfaError::SequenceLength {
                got: ds.timesteps(),
                max: t,
            });
        }
        let mut cfg = ModelConfig::new(
            self.model.latent_dim,
            self.model.hidden_dim,
            self.model.loading_rows,
            t,
            ds.groups().clone(),
        );
        cfg.feature_dim = self.model.feature_dim;
        cfg.static_mode = self.model.static_mode;
        cfg.per_timestep_decoders = self.model.per_timestep_decoders;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config snapshot plus provenance; parseable by [`parse_config`].
    pub fn manifest(&self, command: &str) -> Result<String> {
        #[derive(Serialize)]
        struct Provenance<'a> {
            dlgfa_version: &'a str,
            command: &'a str,
            seed_source: &'a str,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            #[serde(flatten)]
            config: &'a RunConfig,
            provenance: Provenance<'a>,
        }
        let m = Manifest {
            config: self,
            provenance: Provenance {
                dlgfa_version: env!("CARGO_PKG_VERSION"),
                command,
                seed_source: if self.seed_from_file { "config" } else { "generated" },
            },
        };
        toml::to_string(&m).map_err(|e| DlgfaError::InvalidArgument(format!("manifest encoding: {e}")))
    }
}

/// Two-column CSV `column,group`.
pub fn read_group_map(path: &Path) -> Result<GroupMap> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| DlgfaError::io(path, std::io::Error::other(e.to_string())))?;
    let mut map = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DlgfaError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(DlgfaError::Parse {
                line,
                message: "group map rows must be `column,group`".into(),
            });
        }
        map.insert(rec[0].trim().to_owned(), rec[1].trim().to_owned());
    }
    Ok(map)
}

// ---- command line ---------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "dlgfa", version, about = "Deep latent group factor analysis for longitudinal multi-view data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a one-bar image dataset as wide CSV.
    Synth(SynthArgs),
    /// Train a model; writes model.ckpt, history.csv and the manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out data; writes metrics.csv.
    Eval(EvalArgs),
    /// Loading sparsity report, heatmap and factor ranking for a checkpoint.
    Report(ReportArgs),
    /// Train one model per λ and tabulate validation metrics; writes sweep.csv.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `row_as_time` or `replicate`.
    #[arg(long, default_value = "row_as_time")]
    mode: String,
    /// Sequence length in replicate mode.
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by commands that read a run config.
#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Train on a wide CSV instead of the configured data source.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Defaults to `<output_dir>/model.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `test`, `val` or `train`.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    num_samples: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// 1-based timestep for the heatmap and ranking.
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn apply_overrides(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        if seed > i64::MAX as u64 {
            return Err(DlgfaError::InvalidArgument(format!("--seed must be < 2^63, got {seed}")));
        }
        cfg.seed = seed;
        cfg.seed_from_file = true;
    }
    if let Some(l) = args.lambda {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(DlgfaError::InvalidArgument(format!("--lambda must be >= 0, got {l}")));
        }
        cfg.optim.lambda = l;
    }
    if let Some(e) = args.max_epochs {
        cfg.optim.max_epochs = e;
    }
    if let Some(b) = args.batch_size {
        if b == 0 {
            return Err(DlgfaError::InvalidArgument("--batch-size must be >= 1".into()));
        }
        cfg.optim.batch_size = b;
    }
    if let Some(p) = &args.data {
        if !p.is_file() {
            return Err(DlgfaError::InvalidArgument(format!("--data: {} does not exist", p.display())));
        }
        cfg.data = DataSection::Csv {
            path: p.canonicalize().map_err(|e| DlgfaError::io(p, e))?,
            group_map: None,
        };
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DlgfaError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| DlgfaError::io(path, e))
}

fn synth(args: &SynthArgs) -> Result<String> {
    let mode = match (args.mode.as_str(), args.timesteps) {
        ("row_as_time", None) => BarMode::RowAsTime,
        ("replicate", Some(t)) => BarMode::Replicate { timesteps: t },
        ("replicate", None) => return Err(DlgfaError::InvalidArgument("--mode replicate needs --timesteps".into())),
        ("row_as_time", Some(_)) => {
            return Err(DlgfaError::InvalidArgument("--timesteps only applies to --mode replicate".into()))
        }
        (other, _) => return Err(DlgfaError::InvalidArgument(format!("unknown mode `{other}`"))),
    };
    let ds = generate_one_bar(args.n, args.size, args.noise_sd, args.seed, mode)?;
    write_wide_csv(&ds, &args.out)?;
    Ok(format!(
        "wrote {} sequences (T={}, d={}, G={}) to {}",
        ds.len(),
        ds.timesteps(),
        ds.dim(),
        ds.groups().count(),
        args.out.display()
    ))
}

fn train(args: &TrainArgs) -> Result<String> {
    let cfg = apply_overrides(&args.run)?;
    let ds = cfg.load_dataset()?;
    let (train_set, _, _) = split_dataset(&ds, &cfg.split_spec())?;
    let model_cfg = cfg.model_config(&ds)?;
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join(MANIFEST_FILE), &cfg.manifest("train")?)?;
    let ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    let every = cfg.optim.checkpoint_every;
    let (model, history) = fit_with(&train_set, model_cfg, &cfg.optim_config(), |epoch, model, _| {
        match every {
            Some(n) if epoch % n == 0 => save_checkpoint(model, &ckpt),
            _ => Ok(()),
        }
    })?;
    save_checkpoint(&model, &ckpt)?;
    history.save_csv(cfg.output_dir.join(HISTORY_FILE))?;
    let last = history.epochs.last();
    Ok(format!(
        "trained {} epochs on {} sequences; final objective {}; zero columns {}/{}; outputs in {}",
        history.len(),
        train_set.len(),
        last.map_or("n/a".to_owned(), |b| format!("{:.4}", b.objective)),
        model.loadings.zero_column_count(),
        model.loadings.column_count(),
        cfg.output_dir.display()
    ))
}

fn eval_cmd(args: &EvalArgs) -> Result<String> {
    let cfg = apply_overrides(&args.run)?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
    let model = load_checkpoint(&ckpt)?;
    let ds = cfg.load_dataset()?;
    let (train_set, val, test) = split_dataset(&ds, &cfg.split_spec())?;
    let data = match args.split.as_str() {
        "test" => test,
        "val" => val,
        "train" => train_set,
        other => return Err(DlgfaError::InvalidArgument(format!("unknown split `{other}`"))),
    };
    let samples = args.num_samples.unwrap_or(cfg.eval.num_samples);
    let metrics = [
        ("mse_zero_noise", mse_test(&model, &data, NoiseMode::Zero)?),
        ("mse_sampled", mse_test(&model, &data, NoiseMode::Sampled { seed: cfg.seed })?),
        ("log_likelihood_bound", test_log_likelihood(&model, &data, samples, cfg.seed)?),
        ("sequences", data.len() as f64),
    ];
    create_dir(&cfg.output_dir)?;
    let mut csv = String::from("split,metric,value\n");
    for (name, v) in &metrics {
        let _ = writeln!(csv, "{},{name},{v}", args.split);
    }
    write_file(&cfg.output_dir.join(METRICS_FILE), &csv)?;
    write_file(&cfg.output_dir.join(MANIFEST_FILE), &cfg.manifest("eval")?)?;
    let rows: Vec<Vec<String>> = metrics.iter().map(|(n, v)| vec![(*n).to_owned(), format!("{v}")]).collect();
    Ok(text_table(&["metric".into(), "value".into()], &rows))
}

fn report(args: &ReportArgs) -> Result<String> {
    let model = load_checkpoint(&args.checkpoint)?;
    let dir = match &args.output_dir {
        Some(d) => d.clone(),
        None => args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let rep = sparsity_report(&model);
    let ranking = top_features_per_factor(&rep, args.t, args.top_k)?;
    create_dir(&dir)?;
    export_heatmap_csv(&rep, args.t, dir.join(heatmap_file(args.t)))?;
    write_file(&dir.join(SPARSITY_FILE), &rep.to_csv())?;
    write_file(&dir.join(ranking_file(args.t)), &ranking.to_csv())?;
    Ok(format!(
        "W norms at t={} (zero columns {}/{} overall)\n{}",
        args.t,
        rep.zero_count(),
        rep.column_count(),
        rep.to_text(args.t)?
    ))
}

fn sweep(args: &SweepArgs) -> Result<String> {
    let cfg = apply_overrides(&args.run)?;
    let ds = cfg.load_dataset()?;
    let (train_set, val, _) = split_dataset(&ds, &cfg.split_spec())?;
    let model_cfg = cfg.model_config(&ds)?;
    let rows = lambda_sweep(&train_set, &val, &model_cfg, &cfg.optim_config(), &args.lambdas, args.workers)?;
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join(SWEEP_FILE), &sweep_csv(&rows))?;
    write_file(&cfg.output_dir.join(MANIFEST_FILE), &cfg.manifest("sweep")?)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.lambda.to_string(),
                format!("{:.6}", r.mse_val),
                format!("{:.3}", r.val_loglik),
                r.zero_columns.to_string(),
            ]
        })
        .collect();
    let mut out = text_table(
        &["lambda".into(), "mse_val".into(), "val_loglik".into(), "zero_columns".into()],
        &table,
    );
    if !zero_counts_monotone(&rows) {
        out.push_str("note: zero-column count is not monotone in lambda for this sweep\n");
    }
    Ok(out)
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 2 for usage errors, 1 for any other failure (reported on one line).
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Report(a) => report(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}
