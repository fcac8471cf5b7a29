use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use satiredecoder::cli::{self, AppConfig, RunFlags};

#[derive(Parser)]
#[command(name = "satiredecoder", version, about = "Two-panel contrast image interpretation pipeline and evaluation harness")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a dataset: decouple, prompt, temperature sweep.
    Run {
        /// Path to the JSON config file (comments allowed).
        #[arg(long)]
        config: PathBuf,
        /// Validate config, dataset, and backend reachability; no reasoner calls.
        #[arg(long)]
        dry_run: bool,
        /// Skip the temperature sweep; run a single temperature (0.6).
        #[arg(long)]
        no_uncertainty: bool,
        /// Omit the local-entity tag sections from the prompt.
        #[arg(long)]
        no_le: bool,
        /// Omit the caption sections from the prompt.
        #[arg(long)]
        no_gs: bool,
        /// Omit the discrepancy sections from the prompt.
        #[arg(long)]
        no_da: bool,
    },
    /// Score run records against the dataset's gold annotations.
    Eval {
        /// Run directory produced by `run`.
        #[arg(long)]
        run: PathBuf,
        /// Dataset manifest with gold descriptions and objects.
        #[arg(long)]
        dataset: PathBuf,
        /// Metric report output path (default: <run>/metric_report.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional CSV export path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the per-sample uncertainty-versus-temperature table.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result: Result<i32, cli::CliError> = match args.command {
        Command::Run {
            config,
            dry_run,
            no_uncertainty,
            no_le,
            no_gs,
            no_da,
        } => AppConfig::load(&config).and_then(|config| {
            let flags = RunFlags {
                dry_run,
                no_uncertainty,
                no_le,
                no_gs,
                no_da,
            };
            cli::cmd_run(&config, &flags).map(|outcome| outcome.exit_code)
        }),
        Command::Eval {
            run,
            dataset,
            out,
            csv,
        } => cli::cmd_eval(&run, &dataset, out.as_deref(), csv.as_deref()).map(|(_, code)| code),
        Command::Report { run } => cli::cmd_report(&run),
    };
    match result {
        Ok(code) => ExitCode::from(u8::try_from(code).unwrap_or(1)),
        Err(e) => {
            eprintln!("[error] {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
