use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use varifold_flow::cli_io::{self, Certificate, Preset, RunConfig};
use varifold_flow::exec::{self, Execution};
use varifold_flow::geometry::MonteCarlo;
use varifold_flow::{io, tolerances, Error, Result};

const THREADS_VAR: &str = "VFLOW_THREADS";

/// Approximate mean curvature flow of discrete varifolds.
#[derive(Parser)]
#[command(name = "vflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a flow and write frames plus trace.json.
    Simulate {
        /// TOML config; values it omits come from its preset.
        config: Option<PathBuf>,
        /// Start from a built-in preset instead of a config file.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Output directory.
        #[arg(long, short, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the resolved config as TOML and exit.
        #[arg(long)]
        print_config: bool,
        #[arg(long)]
        sequential: bool,
    },
    /// Evaluate certificates on a stored run.
    Check {
        /// trace.json or the run directory.
        manifest: PathBuf,
        /// Certificate to run (repeatable); defaults to the run's config list.
        #[arg(long = "cert", short)]
        certs: Vec<String>,
        #[arg(long)]
        sequential: bool,
    },
    /// Bounded-Lipschitz distance of two measure CSVs.
    Distance {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = tolerances::BL_SUPPORT_CAP)]
        cap: usize,
    },
    /// Region volumes of a closed mesh (.off, .obj, segment .csv).
    Volume {
        mesh: PathBuf,
        /// Clip to a ball given as x,y[,z],r.
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
        ball: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        label: usize,
        #[arg(long, default_value_t = tolerances::MC_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    manifest: String,
    frames: usize,
    initial_mass: f64,
    final_mass: f64,
    end_time: f64,
    wall_clock_seconds: f64,
    preset: &'a str,
}

fn simulate(
    config: Option<&Path>,
    preset: Option<&str>,
    out: &Path,
    seed: Option<u64>,
    print_config: bool,
    exec: Execution,
) -> Result<ExitCode> {
    let mut cfg = match (config, preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(Preset::parse(name)?),
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if print_config {
        print!("{}", cfg.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let m = cli_io::simulate(&cfg, out, exec)?;
    print_json(&SimulateSummary {
        manifest: out.join(cli_io::MANIFEST_NAME).display().to_string(),
        frames: m.frames.len(),
        initial_mass: m.masses[0],
        final_mass: *m.masses.last().unwrap(),
        end_time: *m.times.last().unwrap(),
        wall_clock_seconds: m.wall_clock_seconds,
        preset: cfg.scenario.preset.name(),
    })?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, preset, out, seed, print_config, sequential } => {
            simulate(config.as_deref(), preset.as_deref(), &out, seed, print_config, execution(sequential))
        }
        Command::Check { manifest, certs, sequential } => {
            let certs = certs.iter().map(|c| Certificate::parse(c)).collect::<Result<Vec<_>>>()?;
            let report = cli_io::check(&manifest, &certs, execution(sequential))?;
            print_json(&report)?;
            Ok(if report.all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Distance { a, b, cap } => {
            print_json(&cli_io::distance(&a, &b, cap)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Volume { mesh, ball, label, samples, seed } => {
            let mesh = io::read_mesh(&mesh)?;
            let ball = match ball {
                Some(mut v) if v.len() >= 2 => {
                    let r = v.pop().unwrap();
                    Some((v, r, label))
                }
                Some(_) => return Err(Error::Config { location: "--ball".into(), message: "expected x,y[,z],r".into() }),
                None => None,
            };
            let mc = MonteCarlo { samples, seed, ..MonteCarlo::default() };
            print_json(&cli_io::volume(&mesh, ball, &mc, Execution::Parallel)?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn threads() -> std::result::Result<Option<usize>, String> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_VAR} must be a positive integer, got '{v}'")),
        },
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match threads() {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    match exec::with_threads(threads, || run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli_io::exit_code(&e) as u8)
        }
    }
}
