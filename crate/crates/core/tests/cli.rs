//! End-to-end tests of the `ctf-prune` binary.

use std::path::Path;
use std::process::{Command, Output};

use ctf_prune::data::{self, SynthSpec};
use ctf_prune::mask::read_mask_file;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctf-prune"))
        .args(args)
        .env(ctf_prune::cli::OUT_ENV, out)
        .output()
        .expect("spawn ctf-prune")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--rate", "1.5"][..],
        &["train", "--bogus", "1"],
        &["train", "--mode", "sideways"],
        &["frobnicate"],
        &[],
    ] {
        let o = run(dir.path(), args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
}

#[test]
fn unknown_key_lists_valid_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--lamda", "3"]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("lamda") && e.contains("lambda") && e.contains("sigma_max"), "{e}");
}

#[test]
fn missing_data_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--data", "/nonexistent/data.csv", "--epochs", "2"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn train_bench_dump_export() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["train", "--name", "r", "--mode", "fine", "--rate", "0.9", "--epochs", "60", "--bench-reps", "10"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = dir.path().join("r");
    for f in ["config.txt", "metrics.csv", "model.ckpt", "bench.csv", "manifest.txt"] {
        assert!(r.join(f).is_file(), "missing {f}");
    }
    for l in ["attention", "conv", "dense"] {
        let m = read_mask_file(&r.join("masks").join(format!("{l}.mask"))).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
    let metrics = std::fs::read_to_string(r.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 61);
    let manifest = std::fs::read_to_string(r.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command=train") && manifest.contains("file=model.ckpt sha256="));
    let bench = std::fs::read_to_string(r.join("bench.csv")).unwrap();
    assert!(bench.starts_with("mode,rate,dense_ms"));

    let ckpt = r.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let o = run(dir.path(), &["bench", "--run", r.to_str().unwrap(), "--bench-reps", "10"]);
    assert!(matches!(code(&o), 0 | 4), "{}", stderr(&o));

    let dump = dir.path().join("dump");
    let o = run(dir.path(), &["dump-masks", "--checkpoint", ckpt, "--out", dump.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        std::fs::read(dump.join("conv.mask")).unwrap(),
        std::fs::read(r.join("masks").join("conv.mask")).unwrap()
    );

    let txt = dir.path().join("compact.txt");
    let o = run(dir.path(), &["export", "--checkpoint", ckpt, "--out", txt.to_str().unwrap()]);
    match code(&o) {
        0 => assert!(std::fs::read_to_string(&txt).unwrap().starts_with("ctf-prune-compact 1")),
        4 => assert!(stderr(&o).contains("structural")),
        c => panic!("export exited {c}: {}", stderr(&o)),
    }
}

#[test]
fn unpruned_model_dumps_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--name", "u", "--mode", "none", "--epochs", "5", "--bench-reps", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for l in ["attention", "conv", "dense"] {
        let m = read_mask_file(&dir.path().join("u").join("masks").join(format!("{l}.mask"))).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0), "{l}");
    }
    let bench = std::fs::read_to_string(dir.path().join("u").join("bench.csv")).unwrap();
    assert!(bench.lines().nth(1).unwrap().contains(",none,none,"), "{bench}");
}

#[test]
fn trains_from_csv_and_records_digest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        classes: 3,
        samples_per_class: 6,
        joints: 5,
        frames: 7,
        noise: 0.05,
        seed: 11,
    };
    let csv = dir.path().join("d.csv");
    data::save_csv(&data::synth_generate(&spec).unwrap(), &csv).unwrap();
    let o = run(
        dir.path(),
        &["train", "--name", "c", "--data", csv.to_str().unwrap(), "--epochs", "3", "--bench-reps", "10"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let digest = ctf_prune::experiment::sha256_hex(&std::fs::read(&csv).unwrap());
    let manifest = std::fs::read_to_string(dir.path().join("c").join("manifest.txt")).unwrap();
    assert!(manifest.contains(&format!("input_sha256={digest}")), "{manifest}");
}

#[test]
fn config_file_round_trips_through_train() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--name", "a", "--epochs", "3", "--lambda", "12.5", "--bench-reps", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = dir.path().join("a").join("config.txt");
    let o = run(
        dir.path(),
        &["train", "--name", "b", "--config", cfg.to_str().unwrap(), "--bench-reps", "10"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let read = |n: &str| std::fs::read(dir.path().join(n).join("metrics.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn small_ablation_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "ablate", "--name", "ab", "--epochs", "3", "--ablate-seeds", "2", "--ablate-rates", "0.9", "--bench-reps", "10",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("ab").join("ablation.csv")).unwrap();
    // Header, baseline, band-stop and three modes at one rate.
    assert_eq!(csv.lines().count(), 6, "{csv}");
}
