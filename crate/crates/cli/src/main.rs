use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mutn_cli::commands::{self, EvalArgs};
use mutn_cli::desk::Scale;
use mutn_cli::reproduce::Runner;
use mutn_cli::Result;
use mutn_core::training::ThetaSource;

/// Model-adaptive unrolled solvers: data generation, training, evaluation
/// and desk-scale experiment reproduction.
#[derive(Parser)]
#[command(name = "mutn", version)]
struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and test splits described by a config.
    GenData {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.mutn and curves.csv.
    Train {
        config: PathBuf,
        /// Dataset directory (uses train.mutn) or dataset file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint; writes metrics.csv, traces.csv and summary.txt.
    Eval {
        checkpoint: PathBuf,
        /// Dataset directory (uses test.mutn) or dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Initial mismatch-network weights: saved, uniform or xavier.
        #[arg(long, default_value = "saved")]
        theta_init: String,
        /// Override the unrolled depth or the equilibrium iteration budget.
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduce an experiment: table1, table2, fig6, fig7, fig8 or appendixB.
    Reproduce {
        name: String,
        /// desk, or smoke for a reduced rerun.
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = commands::load_config(&config)?;
            for p in commands::gen_data(&cfg, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Train { config, data, out } => {
            let cfg = commands::load_config(&config)?;
            let ckpt = commands::train(&cfg, &data, &out, cli.verbose)?;
            println!("final train mse {:.6e}, eta {:.6}", ckpt.final_train_mse, ckpt.eta);
        }
        Command::Eval { checkpoint, data, theta_init, iters, out } => {
            let args = EvalArgs { theta: ThetaSource::parse(&theta_init)?, iters };
            let ev = commands::eval(&checkpoint, &data, &args, &out)?;
            print!("{}", ev.report.summary_text());
        }
        Command::Reproduce { name, scale, out } => {
            let mut runner = Runner::new(out, Scale::parse(&scale)?, commands::env_seed()?);
            runner.verbose = cli.verbose;
            for p in runner.run(&name)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
