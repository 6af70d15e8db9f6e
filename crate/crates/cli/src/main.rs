use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use popforge_cli::{run_experiment, summarize, Composition, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(
    name = "popforge",
    version,
    about = "Population-based training of TD3 agents with mixed optimizers"
)]
#[command(after_long_help = ExperimentConfig::help_text())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines (see `--help` for keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Give Diag-GGN and K-FAC members proportionally fewer gradient steps.
    #[arg(long)]
    step_adjusted: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train single agents, one per seed.
    TrainSingle(RunArgs),
    /// Train populations, one per seed.
    TrainPbt(RunArgs),
    /// Train populations of every size in `sweep_sizes`.
    SweepPopsize(RunArgs),
    /// Learning-rate × damping grid of single agents.
    GridSearch(RunArgs),
    /// Tabulate final returns found under run directories.
    Summarize {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Composition to compute percent deltas against, e.g. adam:8.
        #[arg(long)]
        baseline: Option<Composition>,
        /// Also write summary.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &RunArgs, mode: Mode) -> Result<ExperimentConfig> {
    let mut text = match &args.config {
        Some(p) => {
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => String::new(),
    };
    if args.config.is_none() || !text.lines().any(|l| l.trim_start().starts_with("mode")) {
        text.push_str(&format!("\nmode = {}\n", mode.name()));
    }
    let mut cfg = ExperimentConfig::parse(&text)?;
    cfg.mode = mode;
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    cfg.step_adjusted |= args.step_adjusted;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (args, mode) = match &cli.command {
        Command::TrainSingle(a) => (a, Mode::Single),
        Command::TrainPbt(a) => (a, Mode::Pbt),
        Command::SweepPopsize(a) => (a, Mode::Sweep),
        Command::GridSearch(a) => (a, Mode::Grid),
        Command::Summarize {
            dirs,
            baseline,
            out,
        } => {
            let table = summarize(dirs, baseline.as_ref())?;
            if let Some(o) = out {
                std::fs::create_dir_all(o)?;
                table.write_csv(&o.join("summary.csv"))?;
            }
            print!("{}", table.to_text());
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            return Ok(());
        }
    };
    let cfg = load(args, mode)?;
    let outcome = run_experiment(&cfg)?;
    if let Some(t) = &outcome.summary {
        print!("{}", t.to_text());
    }
    if let Some(g) = &outcome.grid {
        match g.best {
            Some(i) => {
                let c = &g.cells[i];
                println!(
                    "best cell: lr={} damping={} mean={:?}",
                    c.lr, c.damping, c.mean_return
                );
            }
            None => println!("no grid cell succeeded"),
        }
    }
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
