use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use isogauss::{parse_config, parse_seeds, run, Command, Error};

#[derive(Parser, Debug)]
#[command(
    name = "isogauss",
    version,
    about = "Tracking, regularization and plasticity experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// JSON config file, or `-` for stdin.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as `0..4` (inclusive), `1,5,9` or a single number.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Gradient-flow tracking of a drifting linear target.
    SimulateTracking(RunArgs),
    /// Classifier training under periodic label permutations.
    Train(RunArgs),
    /// Regularizer loss on synthetic batches.
    SigregEval(RunArgs),
    /// Random checks of the contraction and drift bounds.
    BoundsSweep(RunArgs),
    /// Monte Carlo variance of the drift residual per law.
    SteinVariance(RunArgs),
    /// Render columns of a CSV as an SVG line plot.
    Plot {
        csv: PathBuf,
        /// Comma-separated y columns.
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        /// x column; the first column when omitted.
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cmd: Cmd) -> Result<(), Error> {
    let (command, args) = match cmd {
        Cmd::Plot { csv, columns, x, out } => {
            let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
            return isogauss::plot::emit_plot(&csv, x.as_deref(), &cols, &out);
        }
        Cmd::SimulateTracking(a) => (Command::SimulateTracking, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::SigregEval(a) => (Command::SigregEval, a),
        Cmd::BoundsSweep(a) => (Command::BoundsSweep, a),
        Cmd::SteinVariance(a) => (Command::SteinVariance, a),
    };
    let mut cfg = parse_config(&args.config, Some(command))?;
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Some(spec) = args.seeds {
        cfg.seeds = parse_seeds(&spec)?;
        cfg.validate()?;
    }
    let report = run(&cfg)?;
    println!("{} -> {}", cfg.command, cfg.output_dir.display());
    for line in &report.summary {
        println!("  {line}");
    }
    println!(
        "  wrote {} files in {:.2}s",
        report.outputs.len() + 1,
        report.manifest.wall_time_seconds
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Usage(_) = e {
                eprintln!("{}", Cli::command().render_usage());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
