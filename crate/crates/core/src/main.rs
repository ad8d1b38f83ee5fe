use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bohmion::analytic::AppendixDemo;
use bohmion::config::{appendix_demo_from_text, ConfigError, RunConfig};
use bohmion::runner::{configure_workers, run_appendix, run_pipeline, run_relax, sweep, RunError, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "bohmion", version, about = "Two-electron 1D molecule in a laser field with Bohmian tracers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Paths {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Relax the field-free eigenstates.
    Relax(Paths),
    /// Propagate the ground state through the pulse and write snapshots.
    Propagate(Paths),
    /// Propagate with the full tracer ensemble and classify ionization.
    Trajectories(Paths),
    /// Run `trajectories` for every R and intensity in the config.
    Sweep(Paths),
    /// Analytic two-packet trajectories, product versus symmetrized pair.
    AppendixDemo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "appendix")]
        out: PathBuf,
    },
}

fn load(paths: &Paths) -> Result<(RunConfig, PathBuf), RunError> {
    let config = RunConfig::load(&paths.config)?;
    let out = paths.out.clone().unwrap_or_else(|| config.output_dir.clone());
    Ok((config, out))
}

fn load_demo(path: Option<&Path>) -> Result<AppendixDemo, RunError> {
    match path {
        None => Ok(AppendixDemo::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
            Ok(appendix_demo_from_text(&text)?)
        }
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    configure_workers()?;
    match cli.command {
        Command::Relax(paths) => {
            let (config, out) = load(&paths)?;
            run_relax(&config, &out)?;
            println!("eigenstates written to {}", out.join("eigen").display());
        }
        Command::Propagate(paths) => {
            let (config, out) = load(&paths)?;
            let (_, point) = run_pipeline(&config, &out, Stage::Propagate, RunOptions::default())?;
            println!("P_norm_loss = {:.6}", point.summary.p_norm_loss);
        }
        Command::Trajectories(paths) => {
            let (config, out) = load(&paths)?;
            let (_, point) = run_pipeline(&config, &out, Stage::Trajectories, RunOptions::default())?;
            if let Some(e) = point.ensemble {
                println!(
                    "P_norm_loss = {:.6}  P_traj = {:.6}  P_type1 = {:.6}  P_type2 = {:.6}",
                    e.p_norm_loss, e.p_trajectory, e.p_type1, e.p_type2
                );
            }
        }
        Command::Sweep(paths) => {
            let (config, out) = load(&paths)?;
            let outcome = sweep(&config, &out)?;
            for p in &outcome.points {
                match (&p.row, &p.error) {
                    (Some(row), _) => println!("R = {:<5} I = {:.2e}  P = {:.6}", p.r, p.intensity_w_cm2, row.p_total_norm),
                    (None, Some(err)) => println!("R = {:<5} I = {:.2e}  failed: {err}", p.r, p.intensity_w_cm2),
                    (None, None) => {}
                }
            }
            if outcome.failures() > 0 {
                return Err(RunError::Numerical(format!("{} sweep point(s) failed", outcome.failures())));
            }
        }
        Command::AppendixDemo { config, out } => {
            let demo = load_demo(config.as_deref())?;
            let (_, summary) = run_appendix(&demo, &out)?;
            match summary.product_crossing_time {
                Some(t) => println!("product pair crosses at t = {t:.4}"),
                None => println!("product pair does not cross"),
            }
            println!("symmetrized minimum separation = {:.4}", summary.symmetrized_min_separation);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
