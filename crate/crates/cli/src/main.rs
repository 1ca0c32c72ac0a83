use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ldmnet_cli::{compare_table, parse_config, run_compare, run_eval, run_export, run_train, CliError};

#[derive(Parser)]
#[command(name = "ldmnet", version, about = "Train and compare manifold-regularized networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and save its checkpoint and log.
    Train(Common),
    /// Report train and test accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write test-set features and their 2-D PCA projection as CSV.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train weight decay, dropout and ldmnet on the same subset.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    regularizer: Option<String>,
    #[arg(long)]
    lambda_tilde: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lr0: Option<f64>,
    /// Total epochs, split two to one between the full and reduced rate.
    #[arg(long)]
    epochs: Option<usize>,
    /// Any other key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn flag_pairs(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut pairs = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        push("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("n_per_class", self.n_per_class.map(|v| v.to_string()));
        push("regularizer", self.regularizer.clone());
        push("lambda_tilde", self.lambda_tilde.map(|v| v.to_string()));
        push("mu", self.mu.map(|v| v.to_string()));
        push("weight_decay", self.weight_decay.map(|v| v.to_string()));
        push("lr0", self.lr0.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {s:?}")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(pairs)
    }

    fn resolve(&self) -> Result<ldmnet_cli::RunConfig, CliError> {
        parse_config(self.config.as_deref(), &self.flag_pairs()?)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let out = run_train(&cfg)?;
            let test = out.model.test.expect("test set was given");
            println!(
                "{}: test accuracy {:.2}%, train loss {:.4}, test loss {:.4}",
                cfg.train.regularizer,
                100.0 * test.accuracy,
                out.model.train.mean_loss,
                test.mean_loss
            );
            println!("checkpoint: {}", out.checkpoint.display());
            println!("log: {}", out.log.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.resolve()?;
            let (train, test) = run_eval(&cfg, &checkpoint)?;
            println!(
                "train accuracy {:.2}%, loss {:.4}",
                100.0 * train.accuracy,
                train.mean_loss
            );
            println!(
                "test accuracy {:.2}%, loss {:.4}",
                100.0 * test.accuracy,
                test.mean_loss
            );
        }
        Command::ExportFeatures { common, checkpoint } => {
            let cfg = common.resolve()?;
            let path = run_export(&cfg, &checkpoint)?;
            println!("features: {}", path.display());
        }
        Command::Compare(common) => {
            let cfg = common.resolve()?;
            let rows = run_compare(&cfg)?;
            print!("{}", compare_table(&rows));
            println!("table: {}", cfg.out.join("compare.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
