use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergoscout::bench::{self, ExperimentConfig};
use ergoscout::planner::Method;
use ergoscout::Error;

/// Bi-level ergodic exploration simulator and benchmark harness.
#[derive(Parser, Debug)]
#[command(name = "ergoscout", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured method on each seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Override the method from the config.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Run all three methods on paired seeds and tabulate the results.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild the coarse map and a summary from a trial directory.
    Inspect {
        /// Directory written by `run` or `compare` for a single trial.
        dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write `map.pgm` and `map.csv` (defaults to the trial directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-iteration optimizer traces.
    #[arg(long)]
    trace: bool,
}

fn load(path: Option<&Path>) -> ergoscout::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

impl Common {
    fn resolve(&self) -> ergoscout::Result<(ExperimentConfig, Vec<u64>, PathBuf)> {
        let mut cfg = load(self.config.as_deref())?;
        if self.trace {
            cfg.mission.trace = true;
        }
        let seeds = match self.seed {
            Some(s) => vec![s],
            None => cfg.seeds.clone(),
        };
        let out = self.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, seeds, out))
    }
}

fn execute(cli: Cli) -> ergoscout::Result<()> {
    match cli.command {
        Command::Run { common, method } => {
            let (cfg, seeds, out) = common.resolve()?;
            let method = method.unwrap_or(cfg.method);
            for seed in seeds {
                let outcome = bench::run_trial(&cfg, method, seed)?;
                bench::write_trial(&bench::trial_dir(&out, method, seed), &outcome)?;
                println!("{}", serde_json::to_string(&outcome.metrics)?);
            }
        }
        Command::Compare { common } => {
            let (cfg, seeds, out) = common.resolve()?;
            let table = bench::compare(&cfg, &seeds, |o| {
                bench::write_trial(&bench::trial_dir(&out, o.metrics.method, o.metrics.seed), o)
            })?;
            bench::write_table(&out, &table)?;
            print!("{}", table.to_text());
        }
        Command::Inspect { dir, config, out } => {
            let cfg = load(config.as_deref())?;
            let (summary, map) = bench::inspect(&dir, &cfg.mission)?;
            let out = out.unwrap_or_else(|| dir.clone());
            std::fs::create_dir_all(&out)?;
            map.write_pgm(std::fs::File::create(out.join("map.pgm"))?)?;
            std::fs::write(out.join("map.csv"), map.to_csv())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
