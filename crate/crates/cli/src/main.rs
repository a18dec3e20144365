use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "distr", about = "Continual RL experiments with diffusion-based trajectory replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured method for every seed.
    Run { config: PathBuf },
    /// Write curve.csv and curve.svg for a finished run.
    Curves { run_dir: PathBuf },
    /// Merge real and generated trajectories of one task and report MMD².
    ExportReplay {
        run_dir: PathBuf,
        #[arg(long)]
        task: usize,
    },
    /// Recompute metrics.json and summary.json from the success matrices.
    Metrics { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => distr_cli::run_file(&config).map(|dir| println!("{}", dir.display())),
        Command::Curves { run_dir } => distr_cli::curves(&run_dir).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        Command::ExportReplay { run_dir, task } => distr_cli::export_replay(&run_dir, task).map(|covs| {
            for c in covs {
                println!("task {} mmd2 {:.6}", c.task, c.mmd2);
            }
        }),
        Command::Metrics { run_dir } => {
            distr_cli::metrics(&run_dir).map(|s| println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes")))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(distr_cli::exit_code(&e) as u8)
        }
    }
}
