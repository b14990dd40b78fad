//! Command-line front end: `train-inverse`, `train-compress`, `eval`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 failed check or aborted run, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{Experiment, RunConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradcheckOptions};
use crate::metrics::write_csv;
use crate::rng::Rng;
use crate::training::{evaluate_compression, evaluate_inverse, Models, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "nnpnn",
    version,
    about = "Train and evaluate networks that take networks as input"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a host to invert the networks it is given.
    TrainInverse(TrainArgs),
    /// Train an encoder/decoder pair that compresses networks into short codes.
    TrainCompress(TrainArgs),
    /// Evaluate a checkpoint on fresh random networks.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Total iteration count, overriding the configuration.
    #[arg(long)]
    iters: Option<u64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplies the number of random configurations per suite.
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::TrainInverse(a) => cmd_train(Experiment::Inverse, a),
        Command::TrainCompress(a) => cmd_train(Experiment::Compress, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e @ Error::Diverged { .. }) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn resolve_config(experiment: Experiment, args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let mut cfg: RunConfig =
                serde_json::from_value(value.clone()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if value.get("experiment").is_none() {
                cfg.experiment = experiment;
            }
            cfg
        }
        None => RunConfig::for_experiment(experiment),
    };
    if cfg.experiment != experiment {
        return Err(Error::Config(format!(
            "config names the {} experiment but the command trains {}",
            cfg.experiment.name(),
            experiment.name()
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(iters) = args.iters {
        cfg.iterations = iters;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resume(experiment: Experiment, args: &TrainArgs, path: &Path) -> Result<Trainer> {
    if args.config.is_some() {
        return Err(Error::Config("--config cannot be combined with --ckpt".into()));
    }
    let ck = load_checkpoint(path)?;
    if ck.config.experiment != experiment {
        return Err(Error::Config(format!(
            "checkpoint belongs to the {} experiment",
            ck.config.experiment.name()
        )));
    }
    if args.seed.is_some_and(|s| s != ck.config.seed) {
        return Err(Error::Config("--seed differs from the checkpoint's seed".into()));
    }
    let mut trainer = Trainer::from_checkpoint(&ck)?;
    if let Some(iters) = args.iters {
        trainer.set_iterations(iters);
    }
    Ok(trainer)
}

fn cmd_train(experiment: Experiment, args: TrainArgs) -> Result<i32> {
    let mut trainer = match &args.ckpt {
        Some(path) => resume(experiment, &args, path)?,
        None => Trainer::new(resolve_config(experiment, &args)?)?,
    };
    let out = args.out.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let resolved = serde_json::to_string_pretty(trainer.config()).expect("config serializes") + "\n";
    fs::write(out.join("config-resolved.json"), resolved)
        .map_err(|e| Error::io(out.join("config-resolved.json"), e))?;

    let until = trainer.config().iterations;
    let outcome = trainer.run_until(until, |ck| {
        save_checkpoint(ck, &out.join(format!("ckpt-{}.json", ck.iteration)))
    });
    if let Err(Error::Diverged { last_good, .. }) = &outcome {
        save_checkpoint(last_good, &out.join("ckpt-abort.json"))?;
        write_csv(trainer.history(), &out.join("metrics.csv"))?;
    }
    outcome?;

    write_csv(&trainer.final_history()?, &out.join("metrics.csv"))?;
    save_checkpoint(&trainer.checkpoint(), &out.join("ckpt-final.json"))?;
    let stats = trainer.evaluate(trainer.config().eval_trials)?;
    println!(
        "{}",
        json!({
            "experiment": experiment.name(),
            "iteration": trainer.iteration(),
            "stats": stats,
        })
    );
    Ok(EXIT_OK)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    if args.trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let ck = load_checkpoint(&args.ckpt)?;
    let trainer = Trainer::from_checkpoint(&ck)?;
    let rng = Rng::new(args.seed);
    let template = &trainer.config().target;
    let line = match trainer.models() {
        Models::Inverse { host } => {
            let stats = evaluate_inverse(host, template, &rng, args.trials)?;
            json!({
                "experiment": "inverse",
                "iteration": trainer.iteration(),
                "trials": stats.trials,
                "mean": stats.mean,
                "median": stats.median,
                "frac_within_10": stats.frac_within_10,
                "frac_within_25": stats.frac_within_25,
            })
        }
        Models::Compress { encoder, decoder } => {
            let stats = evaluate_compression(encoder, decoder, template, &rng, args.trials)?;
            json!({
                "experiment": "compress",
                "iteration": trainer.iteration(),
                "trials": stats.mse.trials,
                "mean": stats.mse.mean,
                "median": stats.mse.median,
                "ratio": stats.ratio,
            })
        }
    };
    println!("{line}");
    Ok(EXIT_OK)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let reports = run_gradcheck(&GradcheckOptions {
        seed: args.seed,
        scale: args.scale,
        flip_sign: args.inject_sign_flip,
    })?;
    for r in &reports {
        println!("{r}");
    }
    let total: usize = reports.iter().map(|r| r.configs).sum();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("at least one suite");
    println!("total configs={total} max_rel_err={:.3e}", worst.max_rel_error);
    if reports.iter().all(|r| r.passed()) {
        Ok(EXIT_OK)
    } else {
        eprintln!("gradient check failed in {}: {}", worst.name, worst.worst);
        Ok(EXIT_FAILURE)
    }
}
