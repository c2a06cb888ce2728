//! Command-line front end.
//!
//! Every command writes into a run directory under `$CTF_PRUNE_OUT`
//! (default `runs`). A training run directory holds `config.txt`,
//! `manifest.txt`, `metrics.csv`, `model.ckpt`, `masks/` and `bench.csv`,
//! which is enough to re-run `bench` without other inputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::error::{Error, Result};
use crate::experiment::{self, bench_csv, sha256_hex, Prepared};
use crate::gcn::{GcnModel, LayerWeights, LAYER_NAMES};
use crate::mask::{self, BinaryMask};
use crate::sparse::{self, CompactModel};
use crate::train::metrics_csv;

pub const OUT_ENV: &str = "CTF_PRUNE_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "ctf-prune", version, about = "Coarse-to-fine pruning of graph convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory name under the output root.
    #[arg(long)]
    name: Option<String>,
    /// Configuration overrides as `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write a run directory.
    Train(ConfigArgs),
    /// Run the baseline, band-stop and mode × rate grid.
    Ablate(ConfigArgs),
    /// Benchmark dense versus compact inference for a run directory.
    Bench {
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint to use instead of `<run>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of binary `.mask` files to use instead of `<run>/masks`.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Output CSV (default `<run>/bench.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Write the binary and soft masks of every prunable layer.
    DumpMasks {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory (default: `masks` next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = mask::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Write the compacted model in a portable text format.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = mask::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn manifest(command: &str, cfg: &RunConfig, prepared: &Prepared, files: &[(&str, Option<&[u8]>)]) -> String {
    let mut m = vec![
        format!("command={command}"),
        format!("version={}", env!("CARGO_PKG_VERSION")),
        format!("seed={}", cfg.train.seed),
        format!("config_sha256={}", sha256_hex(cfg.to_text().as_bytes())),
        format!("input_sha256={}", prepared.input_digest),
    ];
    match &cfg.data {
        DataSource::Synth => m.push(format!("data={}", cfg.synth_spec().manifest_line())),
        DataSource::Csv(p) => m.push(format!("data={}", p.display())),
    }
    m.extend(prepared.dataset.manifest.iter().map(|l| format!("data_manifest={l}")));
    for (name, bytes) in files {
        m.push(match bytes {
            Some(b) => format!("file={name} sha256={}", sha256_hex(b)),
            None => format!("file={name}"),
        });
    }
    m.join("\n") + "\n"
}

fn masks_of(model: &GcnModel, threshold: f64) -> Result<([BinaryMask; 3], [crate::Tensor; 3])> {
    Ok((model.binary_masks(threshold)?, model.composed_masks()?))
}

/// Writes `<layer>.mask` (binary) and `<layer>.composed.txt` (soft) for each
/// prunable layer; returns the written file names.
fn dump_masks(model: &GcnModel, dir: &Path, threshold: f64) -> Result<Vec<String>> {
    mkdir(dir)?;
    let (bins, soft) = masks_of(model, threshold)?;
    let mut names = Vec::new();
    for l in (0..3).filter(|&l| model.config.prunable[l]) {
        let bin = format!("{}.mask", LAYER_NAMES[l]);
        let real = format!("{}.composed.txt", LAYER_NAMES[l]);
        mask::write_mask_file(&dir.join(&bin), &bins[l].mask, true)?;
        mask::write_mask_file(&dir.join(&real), &soft[l], false)?;
        names.push(bin);
        names.push(real);
    }
    Ok(names)
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let t = &cfg.train;
    let name = args
        .name
        .clone()
        .unwrap_or_else(|| format!("train-{}-{}-s{}", t.mode, t.budget.rate, t.seed));
    let dir = out_root().join(name);
    mkdir(&dir)?;
    let config_text = cfg.to_text();
    write(&dir.join("config.txt"), &config_text)?;

    let prepared = experiment::prepare(&cfg)?;
    let outcome = experiment::run_training(&cfg, &prepared)?;
    let metrics = metrics_csv(&outcome.history);
    write(&dir.join("metrics.csv"), &metrics)?;
    let ckpt = checkpoint::encode(&outcome.model);
    write(&dir.join("model.ckpt"), &ckpt)?;
    let mask_files = dump_masks(&outcome.model, &dir.join("masks"), t.threshold)?;

    let row = experiment::bench_model(&outcome.model, &prepared.test, &cfg)?;
    write(&dir.join("bench.csv"), bench_csv(std::slice::from_ref(&row)))?;

    let mut files: Vec<(String, Option<&[u8]>)> = vec![
        ("config.txt".into(), Some(config_text.as_bytes())),
        ("metrics.csv".into(), Some(metrics.as_bytes())),
        ("model.ckpt".into(), Some(&ckpt)),
    ];
    files.extend(mask_files.iter().map(|f| (format!("masks/{f}"), None)));
    files.push(("bench.csv".into(), None));
    let files: Vec<(&str, Option<&[u8]>)> = files.iter().map(|(n, b)| (n.as_str(), *b)).collect();
    write(&dir.join("manifest.txt"), manifest("train", &cfg, &prepared, &files))?;

    let prunable = outcome.model.count_params().prunable;
    println!("run directory: {}", dir.display());
    println!(
        "mode {} target rate {} achieved rate {:.4} ({} of {} prunable entries kept)",
        t.mode,
        t.budget.rate,
        outcome.achieved_rate,
        (0..3).filter(|&l| outcome.model.config.prunable[l]).map(|l| outcome.masks[l].kept()).sum::<usize>(),
        prunable
    );
    println!(
        "train acc {:.4} test acc {:.4} ambiguous fraction {:.4}",
        outcome.train_acc, outcome.test_acc, outcome.ambiguous_fraction
    );
    print_bench(&row);
    Ok(())
}

fn print_bench(row: &experiment::BenchRow) {
    match &row.timing {
        experiment::CompactTiming::Measured(b) => println!(
            "dense {:.4} ms compact {:.4} ms wall-clock speedup {} FLOP speedup {} structured fraction {:.4}",
            b.dense_ms,
            b.compact_ms,
            b.wallclock_label(),
            b.flop_label(),
            row.structured_fraction
        ),
        experiment::CompactTiming::Disconnected { reason, .. } => println!("compaction impossible: {reason}"),
    }
}

fn cmd_ablate(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let name = args.name.clone().unwrap_or_else(|| format!("ablate-s{}", cfg.train.seed));
    let dir = out_root().join(name);
    mkdir(&dir)?;
    let config_text = cfg.to_text();
    write(&dir.join("config.txt"), &config_text)?;
    let prepared = experiment::prepare(&cfg)?;
    let cells = experiment::ablation_cells(&cfg);
    let results = experiment::run_ablation(&cfg, &cells, &|msg| eprintln!("{msg}"))?;
    let csv = experiment::ablation_csv(&results);
    write(&dir.join("ablation.csv"), &csv)?;
    write(
        &dir.join("manifest.txt"),
        manifest(
            "ablate",
            &cfg,
            &prepared,
            &[("config.txt", Some(config_text.as_bytes())), ("ablation.csv", None)],
        ),
    )?;
    print!("{csv}");
    println!("run directory: {}", dir.display());
    Ok(())
}

/// Deployed weights of `model` under binary masks read from `dir`.
fn weights_from_mask_dir(model: &GcnModel, dir: &Path) -> Result<(LayerWeights, [BinaryMask; 3])> {
    let eff = model.effective_weights()?;
    let mut ws = Vec::with_capacity(3);
    let mut bins = Vec::with_capacity(3);
    for l in 0..3 {
        let shape = model.config.layer_shape(l);
        let path = dir.join(format!("{}.mask", LAYER_NAMES[l]));
        let m = if model.config.prunable[l] {
            let m = mask::read_mask_file(&path)?;
            if m.shape() != shape {
                return Err(Error::Structural(format!(
                    "{}: mask shape {:?} does not match layer shape {:?}",
                    path.display(),
                    m.shape(),
                    shape
                )));
            }
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Input(format!("{}: mask is not binary", path.display())));
            }
            BinaryMask {
                mask: m,
                ambiguous_fraction: 0.0,
            }
        } else {
            BinaryMask::all_ones(shape.0, shape.1)
        };
        ws.push(eff.0[l].hadamard(&m.mask)?);
        bins.push(m);
    }
    Ok((LayerWeights(ws.try_into().expect("three")), bins.try_into().expect("three")))
}

fn cmd_bench(run: &Path, ckpt: Option<&Path>, masks: Option<&Path>, out: Option<&Path>, overrides: &[String]) -> Result<()> {
    let mut cfg = RunConfig::load(&run.join("config.txt"))?;
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    let ckpt = ckpt.map_or_else(|| run.join("model.ckpt"), Path::to_path_buf);
    let model = checkpoint::load(&ckpt)?;
    let prepared = experiment::prepare(&cfg)?;
    let expected = cfg.gcn_config(prepared.dataset.joints, prepared.dataset.classes);
    if (0..3).any(|l| expected.layer_shape(l) != model.config.layer_shape(l)) {
        return Err(Error::Structural(format!(
            "checkpoint {} does not match the data of {}",
            ckpt.display(),
            run.display()
        )));
    }
    let default_masks = run.join("masks");
    let mask_dir = masks.or_else(|| default_masks.is_dir().then_some(default_masks.as_path()));
    let (w, bins) = match mask_dir {
        Some(dir) => weights_from_mask_dir(&model, dir)?,
        None => model.deployed_weights(cfg.train.threshold)?,
    };
    let rate = model.achieved_rate(&bins);
    let row = experiment::bench_weights(&model, &w, &bins, rate, &prepared.test, &cfg)?;
    if let experiment::CompactTiming::Disconnected { reason, .. } = &row.timing {
        return Err(Error::Structural(reason.clone()));
    }
    let out = out.map_or_else(|| run.join("bench.csv"), Path::to_path_buf);
    let csv = bench_csv(std::slice::from_ref(&row));
    write(&out, &csv)?;
    print!("{csv}");
    print_bench(&row);
    Ok(())
}

fn cmd_dump(ckpt: &Path, out: Option<&Path>, threshold: f64) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let dir = out.map_or_else(
        || ckpt.parent().unwrap_or(Path::new(".")).join("masks"),
        Path::to_path_buf,
    );
    dump_masks(&model, &dir, threshold)?;
    let bins = model.binary_masks(threshold)?;
    for l in (0..3).filter(|&l| model.config.prunable[l]) {
        let s = sparse::analyze_mask(&bins[l].mask, &model.config.layout(l)?)?;
        println!(
            "{}: {}x{} kept {} dead blocks {} dead cols {} dead rows {} residual zeros {}",
            LAYER_NAMES[l],
            s.shape.0,
            s.shape.1,
            bins[l].kept(),
            s.dead_blocks.len(),
            s.dead_cols.len(),
            s.dead_rows.len(),
            s.residual_zeros
        );
    }
    println!("masks written to {}", dir.display());
    Ok(())
}

fn cmd_export(ckpt: &Path, out: &Path, threshold: f64) -> Result<()> {
    let bytes = std::fs::read(ckpt).map_err(|e| Error::io(ckpt, e))?;
    let model = checkpoint::decode(&bytes)?;
    let cm = CompactModel::from_model(&model, threshold, format!("checkpoint sha256={}", sha256_hex(&bytes)))?;
    write(out, cm.to_text())?;
    let shapes: Vec<String> = cm
        .layers
        .iter()
        .zip(LAYER_NAMES)
        .map(|(l, n)| format!("{n} {}x{} -> {}x{}", l.shape.0, l.shape.1, l.rows.len(), l.cols.len()))
        .collect();
    println!("{}", shapes.join(", "));
    println!("compact model written to {}", out.display());
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Bench {
            run,
            checkpoint,
            masks,
            out,
            overrides,
        } => cmd_bench(&run, checkpoint.as_deref(), masks.as_deref(), out.as_deref(), &overrides),
        Command::DumpMasks { checkpoint, out, threshold } => cmd_dump(&checkpoint, out.as_deref(), threshold),
        Command::Export { checkpoint, out, threshold } => cmd_export(&checkpoint, &out, threshold),
    }
}
