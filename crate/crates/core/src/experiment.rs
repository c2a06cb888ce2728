//! End-to-end pipeline shared by the command-line tool, the FFI layer and
//! the acceptance suite: data preparation, training, compaction,
//! benchmarking and the ablation grid.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{DataSource, RunConfig};
use crate::data::{self, Dataset, Samples};
use crate::error::{Error, Result};
use crate::gcn::{accuracy, predict, GcnModel, LayerWeights};
use crate::mask::{BinaryMask, PruneMode};
use crate::sparse::{self, BenchResult, CompactModel, LayerSummary};
use crate::tensor::Tensor;
use crate::train::{self, TrainOutcome};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Dataset plus its deterministic train/test split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub train: Samples,
    pub test: Samples,
    /// SHA-256 of the dataset in CSV form (of the file bytes when loaded).
    pub input_digest: String,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (dataset, input_digest) = match &cfg.data {
        DataSource::Synth => {
            let ds = data::synth_generate(&cfg.synth_spec())?;
            let mut buf = Vec::new();
            data::write_csv(&ds, &mut buf)?;
            (ds, sha256_hex(&buf))
        }
        DataSource::Csv(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            (data::parse_csv(bytes.as_slice())?, sha256_hex(&bytes))
        }
    };
    let sp = data::split(&dataset, cfg.split, cfg.train.seed)?;
    let train = dataset.samples(&sp.train, cfg.frames)?;
    let test = dataset.samples(&sp.test, cfg.frames)?;
    Ok(Prepared {
        dataset,
        train,
        test,
        input_digest,
    })
}

/// Freshly initialized model for `cfg` and the prepared data.
pub fn init_model(cfg: &RunConfig, prepared: &Prepared) -> Result<GcnModel> {
    let g = cfg.gcn_config(prepared.dataset.joints, prepared.dataset.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    GcnModel::init(g, cfg.train.mode, cfg.train.sigma0, &mut rng)
}

pub fn run_training(cfg: &RunConfig, prepared: &Prepared) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = init_model(cfg, prepared)?;
    train::train(model, &prepared.train, &prepared.test, &cfg.train)
}

/// `batch` samples drawn cyclically from `samples`, stacked for the forward.
pub fn cyclic_batch(samples: &Samples, batch: usize) -> Result<Tensor> {
    let idx: Vec<usize> = (0..batch).map(|i| i % samples.len()).collect();
    Ok(samples.select(&idx)?.signals)
}

/// Zero classification of the masks of the layers that carry masks.
pub fn mask_summaries(model: &GcnModel, masks: &[BinaryMask; 3]) -> Result<Vec<LayerSummary>> {
    let mut out = Vec::new();
    for l in (0..3).filter(|&l| model.is_masked(l)) {
        out.push(sparse::analyze_mask(&masks[l].mask, &model.config.layout(l)?)?);
    }
    Ok(out)
}

/// Compaction outcome of one benchmark.
#[derive(Debug, Clone, PartialEq)]
pub enum CompactTiming {
    Measured(BenchResult),
    /// The mask disconnects the network; only the dense side was timed.
    Disconnected { dense_ms: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: PruneMode,
    pub rate: f64,
    pub structured_fraction: f64,
    pub accuracy: f64,
    pub timing: CompactTiming,
}

pub const BENCH_HEADER: &str = "mode,rate,dense_ms,compact_ms,wallclock_speedup,flop_speedup,structured_fraction,accuracy";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        let (dense, compact, wall, flop) = match &self.timing {
            CompactTiming::Measured(b) => (b.dense_ms, format!("{:.6}", b.compact_ms), b.wallclock_label(), b.flop_label()),
            CompactTiming::Disconnected { dense_ms, .. } => {
                let d = "disconnected".to_string();
                (*dense_ms, d.clone(), d.clone(), d)
            }
        };
        format!(
            "{},{},{:.6},{},{},{},{:.6},{:.6}",
            self.mode, self.rate, dense, compact, wall, flop, self.structured_fraction, self.accuracy
        )
    }

    pub fn bench(&self) -> Option<&BenchResult> {
        match &self.timing {
            CompactTiming::Measured(b) => Some(b),
            CompactTiming::Disconnected { .. } => None,
        }
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Benchmarks the deployed `weights` of `model` against their compaction
/// on a cyclic batch of `test`; accuracy is measured on `test` itself.
pub fn bench_weights(
    model: &GcnModel,
    weights: &LayerWeights,
    masks: &[BinaryMask; 3],
    rate: f64,
    test: &Samples,
    cfg: &RunConfig,
) -> Result<BenchRow> {
    let summaries = mask_summaries(model, masks)?;
    let logits = model.dense_forward(weights, &test.signals, false)?;
    let acc = accuracy(&predict(&logits), &test.labels);
    let x = cyclic_batch(test, cfg.bench_batch)?;
    let timing = match CompactModel::build(&model.config, weights, "") {
        Ok(cm) => CompactTiming::Measured(sparse::benchmark(model, weights, &cm, &x, &cfg.bench)?),
        Err(Error::Structural(reason)) => {
            let t = sparse::time_dense(model, weights, &x, &cfg.bench)?;
            CompactTiming::Disconnected { dense_ms: t, reason }
        }
        Err(e) => return Err(e),
    };
    Ok(BenchRow {
        mode: model.mode,
        rate,
        structured_fraction: sparse::structured_fraction(&summaries),
        accuracy: acc,
        timing,
    })
}

/// Benchmarks a trained model with masks binarized at the configured
/// threshold.
pub fn bench_model(model: &GcnModel, test: &Samples, cfg: &RunConfig) -> Result<BenchRow> {
    let (w, masks) = model.deployed_weights(cfg.train.threshold)?;
    let rate = model.achieved_rate(&masks);
    bench_weights(model, &w, &masks, rate, test, cfg)
}

/// One row of the ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub label: String,
    pub mode: PruneMode,
    pub rate: f64,
    pub lambda: f64,
}

/// Unpruned baseline, the λ = 0 band-stop row, then modes × rates.
pub fn ablation_cells(cfg: &RunConfig) -> Vec<CellSpec> {
    let lambda = cfg.train.budget.lambda;
    let mut cells = vec![
        CellSpec {
            label: "baseline".into(),
            mode: PruneMode::None,
            rate: 0.0,
            lambda: 0.0,
        },
        CellSpec {
            label: "band-stop".into(),
            mode: PruneMode::Fine,
            rate: 0.0,
            lambda: 0.0,
        },
    ];
    for mode in [PruneMode::Coarse, PruneMode::Fine, PruneMode::Ctf] {
        for &rate in &cfg.ablate_rates {
            cells.push(CellSpec {
                label: format!("{mode}-{rate}"),
                mode,
                rate,
                lambda,
            });
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub achieved_rate: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub ambiguous_fraction: f64,
    pub bench: BenchRow,
    /// Max-abs difference between compact and masked dense logits on the
    /// test set, when the network compacts.
    pub compact_error: Option<f64>,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub spec: CellSpec,
    pub runs: Vec<SeedRun>,
    pub failures: Vec<(u64, String)>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    Some(if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) })
}

/// Median speedup over the runs that compacted. Unchanged shapes count as
/// 1.0; a cell where every compacted run kept its shapes reports `none`.
fn speedup_cell(runs: &[SeedRun], pick: impl Fn(&BenchResult) -> Option<f64>) -> String {
    let benches: Vec<&BenchResult> = runs.iter().filter_map(|r| r.bench.bench()).collect();
    if benches.is_empty() {
        return "disconnected".into();
    }
    if benches.iter().all(|b| pick(b).is_none()) {
        return "none".into();
    }
    let v: Vec<f64> = benches.iter().map(|b| pick(b).unwrap_or(1.0)).collect();
    format!("{:.3}", median(&v).expect("non-empty"))
}

impl CellResult {
    fn med(&self, f: impl Fn(&SeedRun) -> f64) -> Option<f64> {
        median(&self.runs.iter().map(f).collect::<Vec<_>>())
    }

    pub fn median_test_acc(&self) -> Option<f64> {
        self.med(|r| r.test_acc)
    }

    pub fn median_rate(&self) -> Option<f64> {
        self.med(|r| r.achieved_rate)
    }

    pub fn median_structured(&self) -> Option<f64> {
        self.med(|r| r.bench.structured_fraction)
    }

    pub fn flop_speedup(&self) -> String {
        speedup_cell(&self.runs, |b| b.flop_speedup)
    }

    pub fn wallclock_speedup(&self) -> String {
        speedup_cell(&self.runs, |b| b.wallclock_speedup)
    }

    /// Median FLOP speedup with `none` read as 1 and disconnected runs skipped.
    pub fn flop_speedup_value(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.bench.bench())
            .map(|b| b.flop_speedup.unwrap_or(1.0))
            .collect();
        median(&v)
    }
}

pub const ABLATION_HEADER: &str = "cell,mode,rate,lambda,seeds,failed,achieved_rate,train_acc,test_acc,ambiguous_fraction,structured_fraction,flop_speedup,wallclock_speedup,error";

pub fn ablation_csv(cells: &[CellResult]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    let f = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.4}"));
    for c in cells {
        let err = c
            .failures
            .first()
            .map(|(seed, e)| format!("seed {seed}: {e}").replace([',', '\n'], ";"))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.spec.label,
            c.spec.mode,
            c.spec.rate,
            c.spec.lambda,
            c.runs.len() + c.failures.len(),
            c.failures.len(),
            f(c.median_rate()),
            f(c.med(|r| r.train_acc)),
            f(c.median_test_acc()),
            f(c.med(|r| r.ambiguous_fraction)),
            f(c.median_structured()),
            c.flop_speedup(),
            c.wallclock_speedup(),
            err
        );
    }
    s
}

/// Trains one configuration and benchmarks the result on its test split.
pub fn seed_run(cfg: &RunConfig) -> Result<SeedRun> {
    let prepared = prepare(cfg)?;
    let outcome = run_training(cfg, &prepared)?;
    evaluate_seed_run(cfg, &prepared, outcome)
}

fn evaluate_seed_run(cfg: &RunConfig, prepared: &Prepared, outcome: TrainOutcome) -> Result<SeedRun> {
    let bench = bench_model(&outcome.model, &prepared.test, cfg)?;
    let compact_error = match CompactModel::from_model(&outcome.model, cfg.train.threshold, "") {
        Ok(cm) => {
            let (w, _) = outcome.model.deployed_weights(cfg.train.threshold)?;
            let want = outcome.model.dense_forward(&w, &prepared.test.signals, false)?;
            Some(cm.forward(&prepared.test.signals, false)?.max_abs_diff(&want))
        }
        Err(Error::Structural(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SeedRun {
        seed: cfg.train.seed,
        achieved_rate: outcome.achieved_rate,
        train_acc: outcome.train_acc,
        test_acc: outcome.test_acc,
        ambiguous_fraction: outcome.ambiguous_fraction,
        bench,
        compact_error,
        outcome,
    })
}

/// Runs `cells × ablate_seeds` trainings on a worker pool, then benchmarks
/// every result sequentially so timings do not compete with training.
/// Failed runs are recorded per cell; the grid always completes.
pub fn run_ablation(cfg: &RunConfig, cells: &[CellSpec], progress: &(dyn Fn(&str) + Sync)) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let jobs: Vec<(usize, RunConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| {
            (0..cfg.ablate_seeds as u64).map(move |s| (ci, cfg.variant(c.mode, c.rate, c.lambda, cfg.train.seed + s)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.ablate_jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let trained: Vec<(usize, RunConfig, Result<(Prepared, TrainOutcome)>)> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(ci, c)| {
                let r = prepare(&c).and_then(|p| run_training(&c, &p).map(|o| (p, o)));
                progress(&format!(
                    "trained {} seed {}: {}",
                    cells[ci].label,
                    c.train.seed,
                    match &r {
                        Ok((_, o)) => format!("rate {:.4} test acc {:.3}", o.achieved_rate, o.test_acc),
                        Err(e) => format!("failed ({e})"),
                    }
                ));
                (ci, c, r)
            })
            .collect()
    });
    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|c| CellResult {
            spec: c.clone(),
            runs: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for (ci, c, r) in trained {
        match r.and_then(|(p, o)| evaluate_seed_run(&c, &p, o)) {
            Ok(run) => results[ci].runs.push(run),
            Err(e) => results[ci].failures.push((c.train.seed, e.to_string())),
        }
    }
    Ok(results)
}
