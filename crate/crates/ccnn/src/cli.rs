//! Command-line surface: dataset generation, training, evaluation,
//! repeated trials, gradient checking, and kernel export.
//!
//! Exit codes: 0 success, 1 check/assertion failure (failed gradient
//! check, non-finite loss abort), 2 usage or configuration error.

use std::path::{Path, PathBuf};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::data::{read_dataset, write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::export::export_kernels;
use crate::gradcheck::{builtin_specs, check_network, check_real_network};
use crate::train::{
    metrics_to_csv, run_trials, train_model, trials_summary_csv, DataPair, ModelKind,
};

pub const USAGE: &str = "\
usage: ccnn <command> [flags]

commands:
  gen-data         generate the synthetic train/test dataset files
  train            train a model and write metrics + final checkpoint
  eval CHECKPOINT  evaluate a checkpoint on the train/test splits
  trials           repeated training runs with independent seeds
  gradcheck        compare backprop against finite differences
  export-kernels CHECKPOINT   write first-layer kernel maps

flags:
  --config PATH    key=value config file (defaults are desk scale)
  --model NAME     complex | real (train, trials; default complex)
  --seed N         override the config seed
  --iterations N   override the iteration count
  --paper-scale    full-scale protocol (100 images, 20000 iterations)
  --out DIR        output directory
  --resume PATH    continue training from a checkpoint (train only)
";

struct Args {
    command: String,
    positional: Vec<String>,
    config: Option<PathBuf>,
    model: ModelKind,
    seed: Option<u64>,
    iterations: Option<u64>,
    paper_scale: bool,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
}

fn parse_args(args: &[String]) -> Result<Args> {
    let mut it = args.iter().peekable();
    let command = it
        .next()
        .ok_or_else(|| Error::Config("missing command".into()))?
        .clone();
    let mut parsed = Args {
        command,
        positional: Vec::new(),
        config: None,
        model: ModelKind::Complex,
        seed: None,
        iterations: None,
        paper_scale: false,
        out: None,
        resume: None,
    };
    while let Some(arg) = it.next() {
        let mut value_of = |flag: &str| -> Result<String> {
            it.next()
                .cloned()
                .ok_or_else(|| Error::Config(format!("flag {flag} needs a value")))
        };
        match arg.as_str() {
            "--config" => parsed.config = Some(PathBuf::from(value_of("--config")?)),
            "--model" => parsed.model = ModelKind::parse(&value_of("--model")?)?,
            "--seed" => {
                parsed.seed = Some(value_of("--seed")?.parse().map_err(|_| {
                    Error::Config("--seed needs an unsigned integer".into())
                })?)
            }
            "--iterations" => {
                parsed.iterations = Some(value_of("--iterations")?.parse().map_err(|_| {
                    Error::Config("--iterations needs an unsigned integer".into())
                })?)
            }
            "--paper-scale" => parsed.paper_scale = true,
            "--out" => parsed.out = Some(PathBuf::from(value_of("--out")?)),
            "--resume" => parsed.resume = Some(PathBuf::from(value_of("--resume")?)),
            flag if flag.starts_with("--") => {
                return Err(Error::Config(format!("unknown flag {flag}")));
            }
            positional => parsed.positional.push(positional.to_string()),
        }
    }
    Ok(parsed)
}

fn load_config(args: &Args) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if args.paper_scale {
        config.apply_paper_scale();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(iterations) = args.iterations {
        config.iterations = iterations;
    }
    config.validate()?;
    Ok(config)
}

fn dataset_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("train.ccds"), dir.join("test.ccds"))
}

fn load_data(config: &ExperimentConfig) -> Result<DataPair> {
    let dir = PathBuf::from(&config.data_dir);
    let (train_path, test_path) = dataset_paths(&dir);
    if !train_path.exists() || !test_path.exists() {
        return Err(Error::Config(format!(
            "dataset not found under {dir:?}; run `ccnn gen-data --out {dir:?}` first"
        )));
    }
    let (train_seed, test_seed) = crate::data::split_seeds(config.seed);
    let train = Dataset {
        patches: read_dataset(&train_path)?,
        provenance: crate::data::Provenance {
            params: config.cell_image_params(train_seed),
            images: config.images_per_split,
            norm_min: 0.0,
            norm_max: 1.0,
        },
    };
    let test = Dataset {
        patches: read_dataset(&test_path)?,
        provenance: crate::data::Provenance {
            params: config.cell_image_params(test_seed),
            images: config.images_per_split,
            norm_min: 0.0,
            norm_max: 1.0,
        },
    };
    Ok(DataPair::new(train, test))
}

fn cmd_gen_data(args: &Args) -> Result<i32> {
    let config = load_config(args)?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.data_dir));
    std::fs::create_dir_all(&out_dir)?;

    let (train_seed, test_seed) = crate::data::split_seeds(config.seed);
    let splits = [("train", train_seed), ("test", test_seed)];
    for (name, seed) in splits {
        let params = config.cell_image_params(seed);
        let dataset = crate::data::make_dataset(config.images_per_split, &params)?;
        let path = out_dir.join(format!("{name}.ccds"));
        write_dataset(&path, &dataset)?;
        std::fs::write(
            out_dir.join(format!("{name}.params.txt")),
            crate::data::provenance_to_text(&dataset.provenance),
        )?;
        println!(
            "{name}: {} patches ({} images, cell fraction {:.3}) -> {}",
            dataset.patches.len(),
            config.images_per_split,
            dataset.cell_fraction(),
            path.display()
        );
    }
    Ok(0)
}

fn cmd_train(args: &Args) -> Result<i32> {
    let config = load_config(args)?;
    let data = load_data(&config)?;
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&out_dir)?;

    let resume = match &args.resume {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    let outcome = train_model(args.model, &config, &data, resume)?;
    std::fs::write(
        out_dir.join(format!("metrics_{}.csv", args.model.name())),
        metrics_to_csv(&outcome.metrics),
    )?;

    if !outcome.completed {
        let path = out_dir.join(format!("checkpoint_{}_diagnostic.ccnn", args.model.name()));
        save_checkpoint(&path, &outcome.checkpoint)?;
        eprintln!(
            "training aborted: non-finite loss at iteration {}; diagnostic state in {}",
            outcome.checkpoint.iteration,
            path.display()
        );
        return Ok(1);
    }

    let path = out_dir.join(format!("checkpoint_{}_final.ccnn", args.model.name()));
    save_checkpoint(&path, &outcome.checkpoint)?;
    let row = outcome.final_row();
    println!(
        "{} model, iteration {}: train loss {:.6} acc {:.4}, test loss {:.6} acc {:.4}",
        args.model.name(),
        row.iteration,
        row.train_loss,
        row.train_acc,
        row.test_loss,
        row.test_acc
    );
    println!("checkpoint: {}", path.display());
    Ok(0)
}

fn cmd_eval(args: &Args) -> Result<i32> {
    let checkpoint_path = args
        .positional
        .first()
        .ok_or_else(|| Error::Config("eval needs a checkpoint path".into()))?;
    let cp = load_checkpoint(Path::new(checkpoint_path))?;
    let config = load_config(args)?;
    let data = load_data(&config)?;
    let (train_loss, train_acc, test_loss, test_acc) =
        crate::train::evaluate_checkpoint(&cp, &data)?;
    println!(
        "{} model at iteration {}: train loss {:.6} acc {:.4}, test loss {:.6} acc {:.4}",
        cp.model_name(),
        cp.iteration,
        train_loss,
        train_acc,
        test_loss,
        test_acc
    );
    Ok(0)
}

fn cmd_trials(args: &Args) -> Result<i32> {
    let config = load_config(args)?;
    let data = load_data(&config)?;
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("trials"));
    std::fs::create_dir_all(&out_dir)?;

    let results = run_trials(args.model, &config, &data, config.trials)?;
    for r in &results {
        std::fs::write(
            out_dir.join(format!("trial_{:02}_{}.csv", r.trial, args.model.name())),
            metrics_to_csv(&r.metrics),
        )?;
    }
    let summary = trials_summary_csv(&results, config.convergence_threshold);
    std::fs::write(
        out_dir.join(format!("summary_{}.csv", args.model.name())),
        &summary,
    )?;
    print!("{summary}");
    Ok(0)
}

fn cmd_gradcheck(args: &Args) -> Result<i32> {
    let seed = args.seed.unwrap_or(1234);
    let tolerance = 1e-5;
    let mut all_passed = true;
    for (name, spec) in builtin_specs() {
        let report = check_network(&spec, 2, seed, 1e-5, tolerance)?;
        println!(
            "{}: {} (max rel err {:.3e})",
            name,
            if report.passed { "pass" } else { "FAIL" },
            report.max_error
        );
        all_passed &= report.passed;
    }
    let real_spec = crate::equivalence::build_real_counterpart(
        &crate::network::NetworkSpec::cell_detection(2, 2),
    )?;
    let report = check_real_network(&real_spec, 2, seed, 1e-5, tolerance)?;
    println!(
        "real counterpart network: {} (max rel err {:.3e})",
        if report.passed { "pass" } else { "FAIL" },
        report.max_error
    );
    all_passed &= report.passed;
    Ok(if all_passed { 0 } else { 1 })
}

fn cmd_export_kernels(args: &Args) -> Result<i32> {
    let checkpoint_path = args
        .positional
        .first()
        .ok_or_else(|| Error::Config("export-kernels needs a checkpoint path".into()))?;
    let cp = load_checkpoint(Path::new(checkpoint_path))?;
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("kernels"));
    let written = export_kernels(&cp, &out_dir)?;
    println!("wrote {} files to {}", written.len(), out_dir.display());
    Ok(0)
}

/// Dispatch a full argument list (without the binary name). Returns the
/// process exit code.
pub fn run(args: &[String]) -> i32 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            eprint!("{USAGE}");
            return 2;
        }
    };
    let result = match parsed.command.as_str() {
        "gen-data" => cmd_gen_data(&parsed),
        "train" => cmd_train(&parsed),
        "eval" => cmd_eval(&parsed),
        "trials" => cmd_trials(&parsed),
        "gradcheck" => cmd_gradcheck(&parsed),
        "export-kernels" => cmd_export_kernels(&parsed),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(0)
        }
        other => {
            eprintln!("error: unknown command {other:?}");
            eprint!("{USAGE}");
            return 2;
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFiniteLoss { .. } => 1,
                _ => 2,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn unknown_command_is_usage_error() {
        assert_eq!(run(&args(&["frobnicate"])), 2);
        assert_eq!(run(&args(&[])), 2);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(&args(&["gen-data", "--wat"])), 2);
    }

    #[test]
    fn missing_checkpoint_argument_is_usage_error() {
        assert_eq!(run(&args(&["eval"])), 2);
        assert_eq!(run(&args(&["export-kernels"])), 2);
    }

    #[test]
    fn indivisible_image_size_exits_2_naming_constraint() {
        let dir = std::env::temp_dir().join(format!("ccnn_cli_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let config_path = dir.join("bad.cfg");
        std::fs::write(&config_path, "image_size=100\n").unwrap();
        let code = run(&args(&[
            "gen-data",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            dir.join("data").to_str().unwrap(),
        ]));
        assert_eq!(code, 2);
        std::fs::remove_dir_all(&dir).ok();
    }
}
