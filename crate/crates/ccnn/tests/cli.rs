//! End-to-end exercises of the command-line surface: dataset generation,
//! training, evaluation, trials, gradient checking, and kernel export,
//! including exit codes and file determinism.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ccnn::cli::run;

static DIR_COUNTER: AtomicUsize = AtomicUsize::new(0);

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!(
            "ccnn_cli_{}_{}_{}",
            tag,
            std::process::id(),
            DIR_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&dir).unwrap();
        TempDir(dir)
    }

    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}

fn cli(args: &[&str]) -> i32 {
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    run(&owned)
}

/// A config small enough for fast end-to-end runs.
fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        format!(
            "images_per_split=1\niterations=12\nbatch_size=20\n\
             conv1_kernels=2\nconv2_kernels=2\nseed=11\ndata_dir={}\n",
            dir.join("data").display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn gen_data_is_deterministic_and_complete() {
    let tmp = TempDir::new("gendata");
    let config = write_tiny_config(tmp.path());
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let code = cli(&[
            "gen-data",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    for name in ["train.ccds", "test.ccds", "train.params.txt", "test.params.txt"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // Train and test splits are distinct.
    let train = std::fs::read(out_a.join("train.ccds")).unwrap();
    let test = std::fs::read(out_a.join("test.ccds")).unwrap();
    assert_ne!(train, test);
}

#[test]
fn train_eval_export_roundtrip() {
    let tmp = TempDir::new("train");
    let config = write_tiny_config(tmp.path());
    let data_dir = tmp.path().join("data");
    assert_eq!(
        cli(&[
            "gen-data",
            "--config",
            config.to_str().unwrap(),
            "--out",
            data_dir.to_str().unwrap(),
        ]),
        0
    );

    let runs = tmp.path().join("runs");
    for model in ["complex", "real"] {
        let code = cli(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--model",
            model,
            "--out",
            runs.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "training the {model} model failed");
        assert!(runs.join(format!("metrics_{model}.csv")).exists());
        assert!(runs.join(format!("checkpoint_{model}_final.ccnn")).exists());
    }

    let metrics = std::fs::read_to_string(runs.join("metrics_complex.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,epoch,train_loss,test_loss,train_acc,test_acc,wall_ms"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");

    let checkpoint = runs.join("checkpoint_complex_final.ccnn");
    assert_eq!(
        cli(&[
            "eval",
            checkpoint.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ]),
        0
    );

    // Kernel export: once per checkpoint, byte-identical on re-export.
    let kernels_a = tmp.path().join("kernels_a");
    let kernels_b = tmp.path().join("kernels_b");
    for out in [&kernels_a, &kernels_b] {
        assert_eq!(
            cli(&[
                "export-kernels",
                checkpoint.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ]),
            0
        );
    }
    for entry in std::fs::read_dir(&kernels_a).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(kernels_a.join(&name)).unwrap();
        let b = std::fs::read(kernels_b.join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between exports");
    }
    // One CSV, PGM, PPM, and sidecar per first-layer kernel (2 kernels).
    let count = std::fs::read_dir(&kernels_a).unwrap().count();
    assert_eq!(count, 2 * 4);

    // Exporting a real checkpoint is rejected.
    let real_checkpoint = runs.join("checkpoint_real_final.ccnn");
    assert_ne!(
        cli(&[
            "export-kernels",
            real_checkpoint.to_str().unwrap(),
            "--out",
            tmp.path().join("nope").to_str().unwrap(),
        ]),
        0
    );
}

#[test]
fn training_without_dataset_is_config_error() {
    let tmp = TempDir::new("nodata");
    let config = write_tiny_config(tmp.path());
    let code = cli(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("runs").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn trials_writes_summary_and_per_trial_metrics() {
    let tmp = TempDir::new("trials");
    let config_path = tmp.path().join("trials.cfg");
    std::fs::write(
        &config_path,
        format!(
            "images_per_split=1\niterations=6\nbatch_size=20\n\
             conv1_kernels=2\nconv2_kernels=2\nseed=3\ntrials=3\ndata_dir={}\n",
            tmp.path().join("data").display()
        ),
    )
    .unwrap();
    assert_eq!(
        cli(&[
            "gen-data",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            tmp.path().join("data").to_str().unwrap(),
        ]),
        0
    );
    let out = tmp.path().join("trials_out");
    assert_eq!(
        cli(&[
            "trials",
            "--config",
            config_path.to_str().unwrap(),
            "--model",
            "real",
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    let summary = std::fs::read_to_string(out.join("summary_real.csv")).unwrap();
    let data_rows = summary
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("trial,"))
        .count();
    assert_eq!(data_rows, 3);
    for trial in 0..3 {
        assert!(out.join(format!("trial_{trial:02}_real.csv")).exists());
    }
}

#[test]
fn gradcheck_command_passes() {
    assert_eq!(cli(&["gradcheck", "--seed", "7"]), 0);
}

#[test]
fn checkpoint_resume_reproduces_uninterrupted_run() {
    let tmp = TempDir::new("resume");
    let config = write_tiny_config(tmp.path());
    let data_dir = tmp.path().join("data");
    assert_eq!(
        cli(&[
            "gen-data",
            "--config",
            config.to_str().unwrap(),
            "--out",
            data_dir.to_str().unwrap(),
        ]),
        0
    );

    // Full run: 12 iterations.
    let full = tmp.path().join("full");
    assert_eq!(
        cli(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            full.to_str().unwrap(),
        ]),
        0
    );

    // Half run then resume.
    let half = tmp.path().join("half");
    assert_eq!(
        cli(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--iterations",
            "6",
            "--out",
            half.to_str().unwrap(),
        ]),
        0
    );
    let resumed = tmp.path().join("resumed");
    assert_eq!(
        cli(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--resume",
            half.join("checkpoint_complex_final.ccnn").to_str().unwrap(),
            "--out",
            resumed.to_str().unwrap(),
        ]),
        0
    );

    let a = std::fs::read(full.join("checkpoint_complex_final.ccnn")).unwrap();
    let b = std::fs::read(resumed.join("checkpoint_complex_final.ccnn")).unwrap();
    assert_eq!(a, b, "resumed checkpoint differs from the uninterrupted run");
}
