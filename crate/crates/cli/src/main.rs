use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lanechange_core::harness::{run_grid, run_path_study, run_scenario, RunConfig, GRID_D0, GRID_V0};

#[derive(Parser)]
#[command(name = "lanechange", version, about = "Interactive lane-change planner experiments")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Random seed (recorded only; every run is deterministic).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Simulated duration per run in seconds.
    #[arg(long, global = true)]
    duration: Option<f64>,
    /// Controls executed per replan.
    #[arg(long, global = true)]
    lambda: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario and print its summary.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        v0: Option<f64>,
        #[arg(long)]
        d0: Option<f64>,
    },
    /// Sweep initial speed and gap.
    Grid {
        #[arg(long, value_delimiter = ',')]
        v0: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        d0: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare fixed desired-path offsets on one scenario.
    PathStudy {
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.3, 0.5])]
        offsets: Vec<f64>,
        #[arg(long, default_value_t = 2.0)]
        v0: f64,
        #[arg(long, default_value_t = 10.0)]
        d0: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: Option<&PathBuf>, o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = o.seed {
        cfg.random_seed = seed;
    }
    if let Some(d) = o.duration {
        cfg.sim_duration_s = d;
    }
    if let Some(l) = o.lambda {
        cfg.planner.lambda = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config, out, v0, d0 } => {
            let mut cfg = load(config.as_ref(), &cli.overrides)?;
            if let Some(v) = v0 {
                cfg.scenario.v0 = *v;
            }
            if let Some(d) = d0 {
                cfg.scenario.d0 = *d;
            }
            if out.is_some() {
                cfg.output_dir = out.clone();
            }
            let result = run_scenario(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&result.summary)?);
            if !result.summary.success {
                std::process::exit(2);
            }
        }
        Command::Grid { v0, d0, config, out } => {
            let mut cfg = load(config.as_ref(), &cli.overrides)?;
            if out.is_some() {
                cfg.output_dir = out.clone();
            }
            let v0s = if v0.is_empty() { GRID_V0.to_vec() } else { v0.clone() };
            let d0s = if d0.is_empty() { GRID_D0.to_vec() } else { d0.clone() };
            let report = run_grid(&v0s, &d0s, &cfg)?;
            print!("{}", report.to_table());
        }
        Command::PathStudy { offsets, v0, d0, config, out } => {
            if offsets.len() < 2 {
                bail!("--offsets needs at least two values");
            }
            let mut cfg = load(config.as_ref(), &cli.overrides)?;
            cfg.scenario.v0 = *v0;
            cfg.scenario.d0 = *d0;
            if out.is_some() {
                cfg.output_dir = out.clone();
            }
            let runs = run_path_study(offsets, &cfg)?;
            println!("offset,success,completion_time_s,max_overshoot_m,max_abs_yaw_rad");
            for r in &runs {
                let s = r.summary.as_ref();
                println!(
                    "{},{},{},{},{}",
                    r.offset,
                    s.is_some_and(|s| s.success),
                    s.and_then(|s| s.completion_time_s).map(|t| t.to_string()).unwrap_or_default(),
                    r.max_overshoot,
                    r.max_abs_yaw
                );
            }
            if let Some(dir) = &cfg.output_dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("path_study.json");
                std::fs::write(&path, serde_json::to_string(&runs)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}
