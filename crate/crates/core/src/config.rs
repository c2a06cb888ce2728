//! Flat `key=value` run configuration.
//!
//! Files hold one `key=value` per line; blank lines and lines starting with
//! `#` are ignored. Command-line overrides use the same keys (`--rate 0.95`).
//! [`RunConfig::to_text`] writes every key in canonical order, so a snapshot
//! parses back to an identical configuration.

use std::path::{Path, PathBuf};

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::gcn::{Activation, GcnConfig};
use crate::mask::PruneMode;
use crate::sparse::BenchOptions;
use crate::train::{BudgetConfig, Regularizer, TrainConfig};

/// Every accepted key with a short description, in canonical order.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "'synth' or a path to a skeleton CSV file"),
    ("synth_classes", "synthetic classes"),
    ("synth_samples", "synthetic samples per class"),
    ("joints", "synthetic joints per skeleton"),
    ("noise", "synthetic Gaussian noise level"),
    ("frames", "frames per sequence after resampling (features = 3·frames)"),
    ("split", "training fraction per class"),
    ("heads", "attention heads"),
    ("filters", "convolution filters"),
    ("activation", "relu | tanh | identity"),
    ("attention_softmax", "0 | 1"),
    ("prunable", "three 0/1 flags for attention,conv,dense"),
    ("block_rows", "block grid rows for layers without head structure"),
    ("block_cols", "block grid columns for layers without head structure"),
    ("init_scale", "uniform init bound, or 'fan' for sqrt(6/(fan_in+fan_out))"),
    ("mode", "none | fine | coarse | ctf"),
    ("rate", "target pruning rate in [0, 1)"),
    ("lambda", "budget weight"),
    ("regularizer", "budget | l1"),
    ("l1_weight", "weight of the l1 term when regularizer=l1"),
    ("epochs", "training epochs"),
    ("batch_size", "minibatch size"),
    ("lr", "initial learning rate"),
    ("lr_factor", "learning-rate adaptation factor in (0, 1)"),
    ("lr_min", "lower learning-rate clamp"),
    ("lr_max", "upper learning-rate clamp"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("eps", "Adam epsilon"),
    ("sigma0", "initial mask sharpness"),
    ("sigma_max", "final mask sharpness"),
    ("threshold", "mask binarization threshold in (0, 1)"),
    ("seed", "seed for data, split, init and shuffling"),
    ("bench_batch", "samples per benchmark batch"),
    ("bench_reps", "timed benchmark repetitions (>= 10)"),
    ("bench_warmup", "untimed warm-up repetitions"),
    ("bench_parallel", "0 | 1: multi-threaded kernels while benchmarking"),
    ("ablate_seeds", "seeds per ablation cell"),
    ("ablate_rates", "comma-separated pruning rates of the ablation grid"),
    ("ablate_jobs", "worker threads for ablation (0 = all cores)"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth,
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub synth_classes: usize,
    pub synth_samples: usize,
    pub joints: usize,
    pub noise: f64,
    pub frames: usize,
    pub split: f64,
    pub heads: usize,
    pub filters: usize,
    pub activation: Activation,
    pub attention_softmax: bool,
    pub prunable: [bool; 3],
    pub block_rows: usize,
    pub block_cols: usize,
    pub init_scale: Option<f64>,
    pub train: TrainConfig,
    /// Kept even when `regularizer=budget` so switching back restores it.
    pub l1_weight: f64,
    pub bench: BenchOptions,
    pub bench_batch: usize,
    pub ablate_seeds: usize,
    pub ablate_rates: Vec<f64>,
    pub ablate_jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GcnConfig::new(6, 24, 16, 32, 2);
        RunConfig {
            data: DataSource::Synth,
            synth_classes: 2,
            synth_samples: 20,
            joints: 6,
            noise: 0.05,
            frames: 8,
            split: 0.5,
            heads: g.heads,
            filters: g.filters,
            activation: g.activation,
            attention_softmax: g.attention_softmax,
            prunable: g.prunable,
            block_rows: g.block_rows,
            block_cols: g.block_cols,
            init_scale: g.init_scale,
            train: TrainConfig::default(),
            l1_weight: 1e-3,
            bench: BenchOptions::default(),
            bench_batch: 64,
            ablate_seeds: 5,
            ablate_rates: vec![0.9, 0.95, 0.98],
            ablate_jobs: 0,
        }
    }
}

fn usage(msg: String) -> Error {
    Error::Config(msg)
}

fn unknown_key(key: &str) -> Error {
    let keys: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
    usage(format!("unknown key '{key}'; valid keys: {}", keys.join(", ")))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| usage(format!("{key}: cannot parse '{v}'")))
}

fn parse_flag(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(usage(format!("{key}: expected 0 or 1, got '{v}'"))),
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

impl RunConfig {
    /// Sets one key. Dashes in `key` are treated as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let k = key.as_str();
        let v = value.trim();
        let t = &mut self.train;
        match k {
            "data" => {
                self.data = if v == "synth" {
                    DataSource::Synth
                } else {
                    DataSource::Csv(PathBuf::from(v))
                }
            }
            "synth_classes" => self.synth_classes = parse_num(k, v)?,
            "synth_samples" => self.synth_samples = parse_num(k, v)?,
            "joints" => self.joints = parse_num(k, v)?,
            "noise" => self.noise = parse_num(k, v)?,
            "frames" => self.frames = parse_num(k, v)?,
            "split" => self.split = parse_num(k, v)?,
            "heads" => self.heads = parse_num(k, v)?,
            "filters" => self.filters = parse_num(k, v)?,
            "activation" => self.activation = v.parse()?,
            "attention_softmax" => self.attention_softmax = parse_flag(k, v)?,
            "prunable" => {
                let flags: Vec<bool> = v.split(',').map(|f| parse_flag(k, f)).collect::<Result<_>>()?;
                self.prunable = flags
                    .try_into()
                    .map_err(|_| usage("prunable: expected three comma-separated flags".into()))?;
            }
            "block_rows" => self.block_rows = parse_num(k, v)?,
            "block_cols" => self.block_cols = parse_num(k, v)?,
            "init_scale" => self.init_scale = if v == "fan" { None } else { Some(parse_num(k, v)?) },
            "mode" => t.mode = v.parse()?,
            "rate" => t.budget.rate = parse_num(k, v)?,
            "lambda" => t.budget.lambda = parse_num(k, v)?,
            "regularizer" => {
                t.regularizer = match v {
                    "budget" => Regularizer::Budget,
                    "l1" => Regularizer::L1 { weight: self.l1_weight },
                    _ => return Err(usage(format!("regularizer: expected budget or l1, got '{v}'"))),
                }
            }
            "l1_weight" => {
                self.l1_weight = parse_num(k, v)?;
                if let Regularizer::L1 { weight } = &mut t.regularizer {
                    *weight = self.l1_weight;
                }
            }
            "epochs" => t.epochs = parse_num(k, v)?,
            "batch_size" => t.batch_size = parse_num(k, v)?,
            "lr" => t.lr = parse_num(k, v)?,
            "lr_factor" => t.lr_factor = parse_num(k, v)?,
            "lr_min" => t.lr_min = parse_num(k, v)?,
            "lr_max" => t.lr_max = parse_num(k, v)?,
            "beta1" => t.beta1 = parse_num(k, v)?,
            "beta2" => t.beta2 = parse_num(k, v)?,
            "eps" => t.eps = parse_num(k, v)?,
            "sigma0" => t.sigma0 = parse_num(k, v)?,
            "sigma_max" => t.sigma_max = parse_num(k, v)?,
            "threshold" => t.threshold = parse_num(k, v)?,
            "seed" => t.seed = parse_num(k, v)?,
            "bench_batch" => self.bench_batch = parse_num(k, v)?,
            "bench_reps" => self.bench.repetitions = parse_num(k, v)?,
            "bench_warmup" => self.bench.warmup = parse_num(k, v)?,
            "bench_parallel" => self.bench.parallel = parse_flag(k, v)?,
            "ablate_seeds" => self.ablate_seeds = parse_num(k, v)?,
            "ablate_rates" => {
                self.ablate_rates = v.split(',').map(|r| parse_num(k, r)).collect::<Result<_>>()?;
            }
            "ablate_jobs" => self.ablate_jobs = parse_num(k, v)?,
            _ => return Err(unknown_key(k)),
        }
        Ok(())
    }

    /// Canonical value of `key` as written by [`RunConfig::to_text`].
    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        let f = |x: f64| format!("{x:?}");
        Ok(match key.replace('-', "_").as_str() {
            "data" => match &self.data {
                DataSource::Synth => "synth".into(),
                DataSource::Csv(p) => p.display().to_string(),
            },
            "synth_classes" => self.synth_classes.to_string(),
            "synth_samples" => self.synth_samples.to_string(),
            "joints" => self.joints.to_string(),
            "noise" => f(self.noise),
            "frames" => self.frames.to_string(),
            "split" => f(self.split),
            "heads" => self.heads.to_string(),
            "filters" => self.filters.to_string(),
            "activation" => self.activation.as_str().into(),
            "attention_softmax" => flag(self.attention_softmax).into(),
            "prunable" => self.prunable.iter().map(|&b| flag(b)).collect::<Vec<_>>().join(","),
            "block_rows" => self.block_rows.to_string(),
            "block_cols" => self.block_cols.to_string(),
            "init_scale" => self.init_scale.map_or("fan".into(), f),
            "mode" => t.mode.as_str().into(),
            "rate" => f(t.budget.rate),
            "lambda" => f(t.budget.lambda),
            "regularizer" => match t.regularizer {
                Regularizer::Budget => "budget".into(),
                Regularizer::L1 { .. } => "l1".into(),
            },
            "l1_weight" => f(self.l1_weight),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => f(t.lr),
            "lr_factor" => f(t.lr_factor),
            "lr_min" => f(t.lr_min),
            "lr_max" => f(t.lr_max),
            "beta1" => f(t.beta1),
            "beta2" => f(t.beta2),
            "eps" => f(t.eps),
            "sigma0" => f(t.sigma0),
            "sigma_max" => f(t.sigma_max),
            "threshold" => f(t.threshold),
            "seed" => t.seed.to_string(),
            "bench_batch" => self.bench_batch.to_string(),
            "bench_reps" => self.bench.repetitions.to_string(),
            "bench_warmup" => self.bench.warmup.to_string(),
            "bench_parallel" => flag(self.bench.parallel).into(),
            "ablate_seeds" => self.ablate_seeds.to_string(),
            "ablate_rates" => self.ablate_rates.iter().map(|&r| f(r)).collect::<Vec<_>>().join(","),
            "ablate_jobs" => self.ablate_jobs.to_string(),
            other => return Err(unknown_key(other)),
        })
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected key=value, got '{line}'", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| usage(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `--key value` or `--key=value` pairs.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(arg) = it.next() {
            let body = arg
                .strip_prefix("--")
                .ok_or_else(|| usage(format!("expected --key value, got '{arg}'")))?;
            let (k, v) = match body.split_once('=') {
                Some((k, v)) => (k, v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| usage(format!("--{body} needs a value")))?;
                    (body, v.to_string())
                }
            };
            self.set(k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let positive = [
            ("synth_classes", self.synth_classes),
            ("synth_samples", self.synth_samples),
            ("joints", self.joints),
            ("frames", self.frames),
            ("bench_batch", self.bench_batch),
            ("ablate_seeds", self.ablate_seeds),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(usage(format!("{k} must be positive")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(usage(format!("noise must be >= 0, got {}", self.noise)));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(usage(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if self.bench.repetitions < 10 {
            return Err(usage(format!("bench_reps must be >= 10, got {}", self.bench.repetitions)));
        }
        if let Some(r) = self.ablate_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(usage(format!("ablate_rates: {r} outside [0, 1)")));
        }
        self.gcn_config(self.joints, self.synth_classes).validate()
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            classes: self.synth_classes,
            samples_per_class: self.synth_samples,
            joints: self.joints,
            frames: self.frames,
            noise: self.noise,
            seed: self.train.seed,
        }
    }

    /// Architecture for a dataset with `nodes` joints and `classes` labels.
    pub fn gcn_config(&self, nodes: usize, classes: usize) -> GcnConfig {
        let mut g = GcnConfig::new(nodes, 3 * self.frames, self.heads, self.filters, classes);
        g.activation = self.activation;
        g.attention_softmax = self.attention_softmax;
        g.prunable = self.prunable;
        g.block_rows = self.block_rows;
        g.block_cols = self.block_cols;
        g.init_scale = self.init_scale;
        g
    }

    /// The same configuration with another seed, mode, rate and budget weight.
    pub fn variant(&self, mode: PruneMode, rate: f64, lambda: f64, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.mode = mode;
        c.train.budget = BudgetConfig { rate, lambda };
        c.train.seed = seed;
        c
    }
}

/// Error text without the "invalid configuration:" prefix.
fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
