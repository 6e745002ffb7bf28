use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qhead_cli::artifacts::ERROR_FILE;
use qhead_cli::commands::{cmd_eval, cmd_generate, cmd_report_params, cmd_search, cmd_train, param_table};
use qhead_cli::{CliError, Overrides, RunConfig};

/// Quantum readout head with differentiable architecture search.
#[derive(Debug, Parser)]
#[command(name = "qhead", version)]
struct Cli {
    /// JSON run config. Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training seed (overrides `train.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-sample work. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset to `<out>/dataset.qdvr`.
    Generate,
    /// Architecture search followed by a retrain of the selected pair.
    Search,
    /// Train a fixed architecture.
    Train {
        #[arg(long)]
        architecture: Option<PathBuf>,
    },
    /// Evaluate saved parameters on every split.
    Eval {
        #[arg(long)]
        architecture: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Print the trainable parameter breakdown.
    ReportParams {
        #[arg(long)]
        architecture: Option<PathBuf>,
    },
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), CliError> {
    match cli.command {
        Command::Generate => {
            let s = cmd_generate(cfg)?;
            println!(
                "wrote {} ({} samples, class counts {:?}, train/val/test {:?})",
                s.path.display(),
                s.n_samples,
                s.class_counts,
                s.split_sizes
            );
        }
        Command::Search => {
            let (arch, s) = cmd_search(cfg)?;
            for b in &arch.blocks {
                println!("{}: candidate {} ({}) weight {:.4}", b.block, b.candidate_index, b.descriptor, b.weight);
            }
            println!(
                "ensemble val acc {:.4}; retrained test acc {:.4}, f1 {:.4}",
                s.ensemble.val.accuracy, s.retrained.test.accuracy, s.retrained.test.f1_macro
            );
        }
        Command::Train { .. } => {
            let s = cmd_train(cfg)?;
            println!("test acc {:.4}, f1 {:.4}", s.metrics.test.accuracy, s.metrics.test.f1_macro);
        }
        Command::Eval { .. } => {
            let m = cmd_eval(cfg)?;
            for (name, r) in [("train", &m.train), ("val", &m.val), ("test", &m.test)] {
                println!("{name}: acc {:.4}, f1 {:.4}, kappa {:.4}", r.accuracy, r.f1_macro, r.kappa);
            }
        }
        Command::ReportParams { .. } => {
            print!("{}", param_table(&cmd_report_params(cfg)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (architecture, params) = match &cli.command {
        Command::Train { architecture } | Command::ReportParams { architecture } => (architecture.clone(), None),
        Command::Eval { architecture, params } => (architecture.clone(), params.clone()),
        _ => (None, None),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        threads: cli.threads,
        architecture,
        params,
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides);
    let out_dir = cfg
        .as_ref()
        .map(|c| c.out.clone())
        .unwrap_or_else(|_| cli.out.clone().unwrap_or_else(|| RunConfig::default().out));
    let error_path = out_dir.join(ERROR_FILE);
    match cfg.and_then(|c| run(&cli, &c)) {
        Ok(()) => {
            let _ = std::fs::remove_file(&error_path);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = e.report();
            eprintln!("{report}");
            if out_dir.is_dir() {
                let _ = qhead_cli::artifacts::write_json(&error_path, &report);
            }
            ExitCode::FAILURE
        }
    }
}
