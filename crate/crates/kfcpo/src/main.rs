use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kfcpo::engine::{run_eval, run_export, run_train, TrainOpts};

#[derive(Parser)]
#[command(
    name = "kfcpo",
    about = "Constrained policy optimization with Kronecker-factored natural gradients",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides train.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides train.out_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continues from a saved checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll out a trained policy and print mean return and episodic cost.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// Act with the distribution mean/argmax instead of sampling.
        #[arg(long)]
        deterministic: bool,
    },
    /// Re-render a metrics CSV to stdout.
    Export {
        #[arg(long)]
        metrics: PathBuf,
        /// Output format: csv or json.
        #[arg(long)]
        format: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => run_train(&TrainOpts {
            config_path: config,
            seed: *seed,
            out_dir: out.clone(),
            resume: resume.clone(),
            quiet: false,
        }),
        Command::Eval {
            ckpt,
            episodes,
            deterministic,
        } => run_eval(ckpt, *episodes, *deterministic),
        Command::Export { metrics, format } => {
            run_export(metrics, format).map(|text| print!("{text}"))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
