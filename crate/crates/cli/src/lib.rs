//! `gridsd2e` command line: simulate data, run the training loops, sweep the
//! division depth and analyze finished runs.

pub mod artifacts;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use gridsd2e_core::analysis::{self, Complexity};
use gridsd2e_core::config::{Mode, RunConfig};
use gridsd2e_core::dataset::Dataset;
use gridsd2e_core::pipeline::{Pipeline, RunResult};
use gridsd2e_core::Error;
use serde::Serialize;

/// Overrides the directory that relative `output_dir` values live under.
pub const OUTPUT_ROOT_ENV: &str = "GRIDSD2E_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "gridsd2e", version, about = "Grid-SD2E experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the dataset a config describes to dataset.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured training loops and export artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// One interaction run per division depth.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Depths as `0..6` (inclusive), `0..=6` or `0,2,4`.
        #[arg(long)]
        n: Option<Depths>,
    },
    /// Depth selection for a sweep directory, boundary affinity for a run
    /// directory.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        /// Boundary band as a fraction of axis width.
        #[arg(long)]
        delta: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Depths(pub Vec<usize>);

impl FromStr for Depths {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let num = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad depth {t:?}: {e}"))
        };
        let v: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
            let (lo, hi) = (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?);
            if lo > hi {
                return Err(format!("empty depth range {s}"));
            }
            (lo..=hi).collect()
        } else {
            s.split(',').map(num).collect::<Result<_, _>>()?
        };
        if v.is_empty() {
            return Err("no depths given".into());
        }
        Ok(Depths(v))
    }
}

/// Why a command failed; decides the exit status.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Run(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Run(_) => 1,
            Failure::Config(_) => 2,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Config(e) | Failure::Run(e) => e,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error().fmt(f)
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e)
        } else {
            Failure::Run(e)
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(Failure::Config)
}

/// `dir` placed under `root` when one is given. Absolute paths keep only
/// their last component.
pub fn resolve_output(dir: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(root) if dir.is_absolute() => root.join(dir.file_name().unwrap_or(dir.as_os_str())),
        Some(root) => root.join(dir),
        None => dir.to_path_buf(),
    }
}

/// Run a command with the output root taken from the environment.
pub fn execute(cmd: &Command) -> Result<PathBuf, Failure> {
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
    execute_in(cmd, root.as_deref())
}

/// Run a command; returns the directory it wrote.
pub fn execute_in(cmd: &Command, root: Option<&Path>) -> Result<PathBuf, Failure> {
    match cmd {
        Command::Simulate { config } => {
            let cfg = load_config(config)?;
            let data = cfg.dataset()?;
            let dir = resolve_output(&cfg.output_dir, root);
            artifacts::write_run_dir(
                &dir,
                &[
                    ("config.toml".into(), artifacts::config_bytes(&cfg)?),
                    ("dataset.csv".into(), artifacts::dataset_bytes(&data)?),
                ],
            )?;
            log::info!("wrote {} samples to {}", data.len(), dir.display());
            Ok(dir)
        }
        Command::Run { config } => {
            let cfg = load_config(config)?;
            let data = cfg.dataset()?;
            let runs = run(&cfg, &data)?;
            let dir = resolve_output(&cfg.output_dir, root);
            artifacts::write_run_dir(&dir, &artifacts::run_files(&cfg, &data, &runs)?)?;
            for r in &runs {
                log::info!(
                    "{:?} N={}: test RMSE {:.6} (supervised {:.6}, unsupervised {:.6})",
                    r.mode,
                    r.depth,
                    r.final_test_rmse(),
                    r.baselines.supervised_rmse,
                    r.baselines.unsupervised_rmse
                );
            }
            Ok(dir)
        }
        Command::Sweep { config, n } => {
            let cfg = load_config(config)?;
            let depths = n
                .as_ref()
                .map_or_else(|| cfg.analysis.sweep.clone(), |d| d.0.clone());
            if depths.is_empty() {
                return Err(Failure::Config(Error::Config("no depths to sweep".into())));
            }
            // validate every depth before spending time on runs
            for &d in &depths {
                let mut c = cfg.clone();
                c.grid.n = d;
                c.validate().map_err(Failure::Config)?;
            }
            let data = cfg.dataset()?;
            let pc = cfg.pipeline()?;
            let factory = || cfg.decoder(&data).expect("decoder config validated");
            cfg.decoder(&data)?;
            let table = analysis::sweep_n(&pc, &data, &depths, &factory)?;
            let dir = resolve_output(&cfg.output_dir, root);
            artifacts::write_run_dir(
                &dir,
                &[
                    ("config.toml".into(), artifacts::config_bytes(&cfg)?),
                    ("sweep.csv".into(), artifacts::sweep_csv(&table)?),
                    ("timing.csv".into(), artifacts::timing_csv(&table)?),
                ],
            )?;
            if let Some(bad) = table.rows.iter().find(|r| r.error.is_some()) {
                return Err(Failure::Run(Error::State(format!(
                    "sweep row N={} failed: {}",
                    bad.n,
                    bad.error.as_deref().unwrap_or_default()
                ))));
            }
            Ok(dir)
        }
        Command::Analyze { run, gamma, delta } => analyze(run, *gamma, *delta).map(|_| run.clone()),
    }
}

/// The loops `config.mode` asks for. Self-reinforcement first needs an
/// interaction run for its model; in `self` mode only its result is kept.
pub fn run(config: &RunConfig, data: &Dataset) -> Result<Vec<RunResult>, Error> {
    let mut p = Pipeline::new(config.pipeline()?, data.clone(), config.decoder(data)?)?;
    let inter = p.run_interaction()?;
    Ok(match config.mode {
        Mode::Interaction => vec![inter],
        Mode::SelfReinforcement => vec![p.run_self_reinforcement()?],
        Mode::Both => vec![inter, p.run_self_reinforcement()?],
    })
}

#[derive(Debug, Serialize)]
pub struct Selection {
    pub gamma: f64,
    pub complexity: Complexity,
    pub selected_n: usize,
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize)]
pub struct SpatialAnalysis {
    pub delta_frac: f64,
    pub boundary_affinity: Option<f64>,
    pub events: usize,
}

fn json(v: &impl Serialize) -> Result<Vec<u8>, Error> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn analyze(dir: &Path, gamma: Option<f64>, delta: Option<f64>) -> Result<(), Failure> {
    let echo = dir.join("config.toml");
    if !echo.is_file() {
        return Err(Failure::Config(Error::Config(format!(
            "{} is not a run directory",
            dir.display()
        ))));
    }
    let cfg = load_config(&echo)?;
    artifacts::verify_run_dir(dir)?;
    let read = |name: &str| {
        std::fs::read(dir.join(name)).map_err(|e| Error::io(format!("reading {name}"), e))
    };
    let mut files = Vec::new();
    if dir.join("sweep.csv").is_file() {
        let gamma = gamma.unwrap_or(cfg.analysis.gamma);
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Failure::Config(Error::Config(format!(
                "gamma must be non-negative, got {gamma}"
            ))));
        }
        let table = artifacts::read_sweep(&read("sweep.csv")?, cfg.bounds.len())?;
        let complexity = cfg.analysis.complexity;
        let selected_n = analysis::select_n(&table, gamma, complexity)?;
        log::info!("selected N = {selected_n} at gamma {gamma}");
        files.push((
            "selected_n.json".to_string(),
            json(&Selection {
                gamma,
                complexity,
                selected_n,
                scores: analysis::scores(&table, gamma, complexity),
            })?,
        ));
    }
    if dir.join("events.csv").is_file() {
        let delta = delta.unwrap_or(cfg.analysis.delta_frac);
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Failure::Config(Error::Config(format!(
                "delta must lie in (0, 0.5), got {delta}"
            ))));
        }
        let events = artifacts::read_events(&read("events.csv")?)?;
        let data = cfg.dataset()?;
        let split = data.split(cfg.train.split)?;
        let affinity = analysis::boundary_affinity(
            &events,
            &data.label_rows(&split.train),
            &cfg.grid()?,
            delta,
        )?;
        log::info!("boundary affinity at delta {delta}: {affinity:?}");
        files.push((
            "analysis.json".to_string(),
            json(&SpatialAnalysis {
                delta_frac: delta,
                boundary_affinity: affinity,
                events: events.len(),
            })?,
        ));
    }
    if files.is_empty() {
        return Err(Failure::Config(Error::Config(format!(
            "{} has neither sweep.csv nor events.csv",
            dir.display()
        ))));
    }
    artifacts::add_to_run_dir(dir, &files)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_lists() {
        assert_eq!(
            "0..6".parse::<Depths>().unwrap().0,
            (0..=6).collect::<Vec<_>>()
        );
        assert_eq!("2..=4".parse::<Depths>().unwrap().0, vec![2, 3, 4]);
        assert_eq!("1,3, 5".parse::<Depths>().unwrap().0, vec![1, 3, 5]);
        assert!("4..2".parse::<Depths>().is_err());
        assert!("a".parse::<Depths>().is_err());
    }

    #[test]
    fn output_root_override() {
        let root = Path::new("/out");
        assert_eq!(
            resolve_output(Path::new("runs/a"), Some(root)),
            Path::new("/out/runs/a")
        );
        assert_eq!(
            resolve_output(Path::new("/abs/b"), Some(root)),
            Path::new("/out/b")
        );
        assert_eq!(
            resolve_output(Path::new("runs/a"), None),
            Path::new("runs/a")
        );
    }
}
