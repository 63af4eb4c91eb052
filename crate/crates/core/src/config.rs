//! Run configuration: one TOML file describes the data, the grid, the
//! decoders and the analysis of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::Complexity;
use crate::dataset::Dataset;
use crate::decoder::{ExplorationDecoder, OracleDecoder, PcaDecoder};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridParams, Interval, SpaceBounds, MAX_DEPTH};
use crate::pipeline::{PipelineConfig, Refit};
use crate::synth::{self, Kernel, TrajectoryKind, TrajectoryModel, TuningModel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Interaction,
    /// Interaction once to get a model, then self-reinforcement.
    #[serde(rename = "self")]
    SelfReinforcement,
    /// Report both loops.
    Both,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// Label-reading stand-in with reflected axes and noise.
    #[default]
    Oracle,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    /// Oracle only.
    pub reflect_axes: Vec<usize>,
    /// Oracle noise sd as a fraction of the narrowest axis width.
    pub noise_frac: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            kind: DecoderKind::Oracle,
            reflect_axes: Vec::new(),
            noise_frac: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploitConfig {
    pub ridge: f64,
}

impl Default for ExploitConfig {
    fn default() -> Self {
        ExploitConfig { ridge: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub self_epochs: usize,
    /// Leading fraction of samples used for training.
    pub split: f64,
    pub refit: Refit,
    pub min_refit_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            self_epochs: 1,
            split: 0.7,
            refit: Refit::None,
            min_refit_samples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Read this dataset instead of synthesizing one. Relative paths resolve
    /// against the config file's directory.
    pub csv: Option<PathBuf>,
    pub samples: usize,
    pub trajectory: TrajectoryKind,
    pub channels: usize,
    pub history: usize,
    pub kernel: Kernel,
    pub gain: f64,
    pub baseline: f64,
    pub noise_sd: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv: None,
            samples: 10_000,
            trajectory: TrajectoryKind::SmoothedRandomWalk {
                step_sd: 0.3,
                smoothing: 0.9,
            },
            channels: 40,
            history: 3,
            kernel: Kernel::Gaussian { width: 2.0 },
            gain: 1.0,
            baseline: 0.0,
            noise_sd: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Boundary band as a fraction of each axis width.
    pub delta_frac: f64,
    pub gamma: f64,
    pub complexity: Complexity,
    /// Rate map bins per axis; empty means 20 on every axis.
    pub resolution: Vec<usize>,
    /// Depths for `sweep` when the command line gives none.
    pub sweep: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            delta_frac: 0.02,
            gamma: 0.0,
            complexity: Complexity::Bits,
            resolution: Vec::new(),
            sweep: (0..=6).collect(),
        }
    }
}

fn default_bounds() -> Vec<[f64; 2]> {
    vec![[0.0, 10.0]; 2]
}

fn default_grid() -> GridParams {
    GridParams::centered(6, 0)
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_bounds")]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default = "default_grid")]
    pub grid: GridParams,
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub exploit: ExploitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c: RunConfig = toml::from_str("").expect("empty config parses");
        c.fill_defaults();
        c
    }
}

impl RunConfig {
    /// Parse, fill defaults, and validate; reports every violation at once.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(s)?;
        c.fill_defaults();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut c = RunConfig::from_toml_str(&s)?;
        if let (Some(csv), Some(dir)) = (&c.data.csv, path.parent()) {
            if csv.is_relative() {
                c.data.csv = Some(dir.join(csv));
            }
        }
        Ok(c)
    }

    /// The complete configuration, defaults included.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    fn fill_defaults(&mut self) {
        let d = self.bounds.len();
        self.grid.fill_defaults(d);
        if self.analysis.resolution.is_empty() {
            self.analysis.resolution = vec![20; d];
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let bounds = match self.space() {
            Ok(b) => Some(b),
            Err(e) => {
                v.push(format!("bounds: {e}"));
                None
            }
        };
        let d = self.bounds.len();
        if let Some(b) = &bounds {
            v.extend(self.grid.violations(b, "grid"));
        }
        if let Some(&a) = self.decoder.reflect_axes.iter().find(|&&a| a >= d) {
            v.push(format!(
                "decoder.reflect_axes: axis {a} does not exist in {d} dimensions"
            ));
        }
        if !(self.decoder.noise_frac >= 0.0 && self.decoder.noise_frac.is_finite()) {
            v.push(format!(
                "decoder.noise_frac: must be non-negative (got {})",
                self.decoder.noise_frac
            ));
        }
        if !(self.exploit.ridge >= 0.0 && self.exploit.ridge.is_finite()) {
            v.push(format!(
                "exploit.ridge: must be non-negative (got {})",
                self.exploit.ridge
            ));
        }
        if self.train.epochs == 0 {
            v.push("train.epochs: must be at least 1".into());
        }
        if self.train.self_epochs == 0 {
            v.push("train.self_epochs: must be at least 1".into());
        }
        if !(self.train.split > 0.0 && self.train.split < 1.0) {
            v.push(format!(
                "train.split: must lie in (0, 1) (got {})",
                self.train.split
            ));
        }
        let data = &self.data;
        if data.csv.is_none() {
            if data.samples < 2 {
                v.push("data.samples: need at least 2 samples".into());
            }
            if data.channels == 0 {
                v.push("data.channels: must be at least 1".into());
            }
            if data.history == 0 {
                v.push("data.history: must be at least 1".into());
            }
            if !(data.noise_sd >= 0.0 && data.noise_sd.is_finite()) {
                v.push(format!(
                    "data.noise_sd: must be non-negative (got {})",
                    data.noise_sd
                ));
            }
            if let Kernel::Gaussian { width } = data.kernel {
                if !(width > 0.0 && width.is_finite()) {
                    v.push(format!("data.kernel.width: must be positive (got {width})"));
                }
            }
            match &data.trajectory {
                TrajectoryKind::SmoothedRandomWalk { step_sd, smoothing } => {
                    if !(*step_sd >= 0.0 && step_sd.is_finite()) {
                        v.push(format!(
                            "data.trajectory.step_sd: must be non-negative (got {step_sd})"
                        ));
                    }
                    if !(0.0..1.0).contains(smoothing) {
                        v.push(format!(
                            "data.trajectory.smoothing: must lie in [0, 1) (got {smoothing})"
                        ));
                    }
                }
                TrajectoryKind::Lissajous {
                    frequencies,
                    phases,
                } => {
                    if frequencies.len() != d || phases.len() != d {
                        v.push(format!(
                            "data.trajectory: lissajous needs {d} frequencies and phases"
                        ));
                    }
                }
            }
        }
        let a = &self.analysis;
        if !(a.delta_frac > 0.0 && a.delta_frac < 0.5) {
            v.push(format!(
                "analysis.delta_frac: must lie in (0, 0.5) (got {})",
                a.delta_frac
            ));
        }
        if !(a.gamma >= 0.0 && a.gamma.is_finite()) {
            v.push(format!(
                "analysis.gamma: must be non-negative (got {})",
                a.gamma
            ));
        }
        if a.resolution.len() != d || a.resolution.contains(&0) {
            v.push(format!("analysis.resolution: need {d} positive bin counts"));
        }
        if let Some(n) = a.sweep.iter().find(|&&n| n > MAX_DEPTH) {
            v.push(format!("analysis.sweep: depth {n} exceeds {MAX_DEPTH}"));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn space(&self) -> Result<SpaceBounds> {
        let axes = self
            .bounds
            .iter()
            .map(|[lo, hi]| Interval::new(*lo, *hi))
            .collect::<Result<Vec<_>>>()?;
        SpaceBounds::new(axes)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.space()?, self.grid.clone())
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            grid: self.grid()?,
            refit: self.train.refit,
            min_refit_samples: self.train.min_refit_samples,
            ridge: self.exploit.ridge,
            epochs: self.train.epochs,
            self_epochs: self.train.self_epochs,
            train_fraction: self.train.split,
        })
    }

    /// Synthetic dataset described by `[data]`, or the CSV it points to.
    pub fn dataset(&self) -> Result<Dataset> {
        if let Some(path) = &self.data.csv {
            let ds = Dataset::load(path)?;
            if ds.dim() != self.bounds.len() {
                return Err(Error::Shape(format!(
                    "{} has {} position axes, bounds have {}",
                    path.display(),
                    ds.dim(),
                    self.bounds.len()
                )));
            }
            return Ok(ds);
        }
        let bounds = self.space()?;
        let d = &self.data;
        let traj = synth::gen_trajectory(&TrajectoryModel {
            kind: d.trajectory.clone(),
            bounds: bounds.clone(),
            steps: d.samples,
            seed: self.seed,
            start: None,
        })?;
        let tuning = TuningModel::random(
            d.channels, &bounds, d.kernel, d.gain, d.baseline, d.noise_sd, d.history, self.seed,
        );
        let neural = synth::gen_neural(&traj, &tuning, &bounds, self.seed)?;
        Dataset::new(neural, traj)
    }

    /// A fresh, unfitted exploration decoder for `data`.
    pub fn decoder(&self, data: &Dataset) -> Result<Box<dyn ExplorationDecoder>> {
        Ok(match self.decoder.kind {
            DecoderKind::Oracle => {
                let sd = self.decoder.noise_frac * self.space()?.min_width();
                Box::new(OracleDecoder::new(
                    &data.labels,
                    &self.decoder.reflect_axes,
                    sd,
                    self.seed,
                )?)
            }
            DecoderKind::Pca => Box::new(PcaDecoder::new(self.bounds.len(), self.seed)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gets_defaults_and_echo_roundtrips() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c.grid.eta, vec![1.0, 1.0]);
        assert_eq!(c.analysis.resolution, vec![20, 20]);
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::default(), c);
    }

    #[test]
    fn lambda_below_half_is_rejected_with_key() {
        let e = RunConfig::from_toml_str("[grid]\nn = 2\nlambda = [0.4, 1.0]\n").unwrap_err();
        let msg = e.to_string();
        assert!(e.is_config());
        assert!(
            msg.contains("grid.lambda[0]") && msg.contains("lambda must exceed 0.5"),
            "{msg}"
        );
    }

    #[test]
    fn wide_epsilon_is_rejected_with_key() {
        let e = RunConfig::from_toml_str("[grid]\nn = 2\nepsilon = 5.0\n").unwrap_err();
        assert!(e.to_string().contains("grid.epsilon"));
    }

    #[test]
    fn every_violation_is_reported() {
        let e =
            RunConfig::from_toml_str("[grid]\nn = 2\nlambda = [0.4, 0.3]\n[train]\nsplit = 1.5\n")
                .unwrap_err();
        let Error::Validation(v) = e else {
            panic!("{e}")
        };
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            "colour = 1",
            "[grid]\nn = 1\nlamda = [1.0, 1.0]",
            "[data.kernel]\nkind = \"linear\"\nwidth = 1.0",
        ] {
            let e = RunConfig::from_toml_str(bad).unwrap_err();
            assert!(e.is_config(), "{bad}: {e}");
        }
    }

    #[test]
    fn small_synthetic_dataset() {
        let c =
            RunConfig::from_toml_str("seed = 3\n[data]\nsamples = 50\nchannels = 4\nhistory = 2\n")
                .unwrap();
        let ds = c.dataset().unwrap();
        assert_eq!((ds.len(), ds.features(), ds.dim()), (50, 8, 2));
        assert_eq!(ds, c.dataset().unwrap());
    }
}
