//! Synthetic trajectories, tuned population responses, and an unsupervised
//! "oracle" that reproduces the mirror-symmetric decoding error on demand.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceBounds;
use crate::seeds::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryKind {
    /// Velocity-smoothed Gaussian walk with reflective walls.
    SmoothedRandomWalk { step_sd: f64, smoothing: f64 },
    /// `center + 0.95 * half_width * sin(2 pi f t / K + phase)` per axis.
    Lissajous {
        frequencies: Vec<f64>,
        phases: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryModel {
    pub kind: TrajectoryKind,
    pub bounds: SpaceBounds,
    pub steps: usize,
    pub seed: u64,
    /// Defaults to the center of the bounds.
    pub start: Option<Vec<f64>>,
}

/// `K x d` positions, all inside the bounds.
pub fn gen_trajectory(model: &TrajectoryModel) -> Result<DMatrix<f64>> {
    let d = model.bounds.dim();
    let k = model.steps;
    if k == 0 {
        return Err(Error::Config(
            "trajectory needs a positive number of steps".into(),
        ));
    }
    let mut out = DMatrix::zeros(k, d);
    match &model.kind {
        TrajectoryKind::SmoothedRandomWalk { step_sd, smoothing } => {
            if !(*step_sd >= 0.0 && (0.0..1.0).contains(smoothing)) {
                return Err(Error::Config(format!(
                    "random walk needs step_sd >= 0 and smoothing in [0, 1), got {step_sd} and {smoothing}"
                )));
            }
            let mut rng = seeds::rng(model.seed, Stream::Trajectory);
            let mut pos = match &model.start {
                Some(s) if s.len() == d => model.bounds.clamp(s),
                Some(s) => {
                    return Err(Error::Shape(format!(
                        "start has {} axes, bounds {d}",
                        s.len()
                    )))
                }
                None => model.bounds.center(),
            };
            let mut vel = vec![0.0; d];
            for t in 0..k {
                for a in 0..d {
                    out[(t, a)] = pos[a];
                }
                for a in 0..d {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    vel[a] = smoothing * vel[a] + step_sd * xi;
                    let iv = model.bounds.axis(a);
                    let mut p = pos[a] + vel[a];
                    if p > iv.hi {
                        p = 2.0 * iv.hi - p;
                        vel[a] = -vel[a];
                    }
                    if p < iv.lo {
                        p = 2.0 * iv.lo - p;
                        vel[a] = -vel[a];
                    }
                    pos[a] = iv.clamp(p);
                }
            }
        }
        TrajectoryKind::Lissajous {
            frequencies,
            phases,
        } => {
            if frequencies.len() != d || phases.len() != d {
                return Err(Error::Shape(format!(
                    "lissajous needs {d} frequencies and phases"
                )));
            }
            for t in 0..k {
                for a in 0..d {
                    let iv = model.bounds.axis(a);
                    let s = (TAU * frequencies[a] * t as f64 / k as f64 + phases[a]).sin();
                    out[(t, a)] = iv.clamp(iv.center() + 0.95 * 0.5 * iv.width() * s);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// Projection of the normalized position onto the channel's preferred
    /// direction; exactly linearly decodable.
    Linear {},
    /// Isotropic bump of the given width (axis units) at the preferred position.
    Gaussian { width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningModel {
    /// `channels x d` preferred positions (or directions for the linear kernel).
    pub preferred: DMatrix<f64>,
    pub gain: f64,
    pub baseline: f64,
    pub noise_sd: f64,
    /// Window length `T`; each sample carries the current and `T - 1` past responses.
    pub history: usize,
    pub kernel: Kernel,
}

impl TuningModel {
    /// Preferred positions drawn uniformly over the bounds.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        channels: usize,
        bounds: &SpaceBounds,
        kernel: Kernel,
        gain: f64,
        baseline: f64,
        noise_sd: f64,
        history: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seeds::rng(seed, Stream::Tuning);
        let d = bounds.dim();
        let preferred = DMatrix::from_fn(channels, d, |_, a| {
            let iv = bounds.axis(a);
            rng.gen_range(iv.lo..=iv.hi)
        });
        TuningModel {
            preferred,
            gain,
            baseline,
            noise_sd,
            history,
            kernel,
        }
    }

    pub fn channels(&self) -> usize {
        self.preferred.nrows()
    }

    fn response(&self, c: usize, pos: &[f64], bounds: &SpaceBounds) -> f64 {
        let drive = match self.kernel {
            Kernel::Linear {} => pos
                .iter()
                .enumerate()
                .map(|(a, &z)| {
                    let iv = bounds.axis(a);
                    let half = 0.5 * iv.width();
                    ((self.preferred[(c, a)] - iv.center()) / half) * ((z - iv.center()) / half)
                })
                .sum::<f64>(),
            Kernel::Gaussian { width } => {
                let r2: f64 = pos
                    .iter()
                    .enumerate()
                    .map(|(a, &z)| (z - self.preferred[(c, a)]).powi(2))
                    .sum();
                (-0.5 * r2 / (width * width)).exp()
            }
        };
        self.baseline + self.gain * drive
    }
}

/// `K x (channels * T)` windows. Feature `c * T + l` is channel `c` at lag `l`;
/// lags before the first sample repeat the first response.
pub fn gen_neural(
    trajectory: &DMatrix<f64>,
    tuning: &TuningModel,
    bounds: &SpaceBounds,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if trajectory.ncols() != bounds.dim() || tuning.preferred.ncols() != bounds.dim() {
        return Err(Error::Shape(
            "trajectory, tuning and bounds disagree on d".into(),
        ));
    }
    if !(tuning.noise_sd >= 0.0 && tuning.gain.is_finite()) {
        return Err(Error::Config(
            "tuning needs noise_sd >= 0 and a finite gain".into(),
        ));
    }
    if tuning.history == 0 {
        return Err(Error::Config("history length must be at least 1".into()));
    }
    let k = trajectory.nrows();
    let ch = tuning.channels();
    let t_len = tuning.history;
    let mut rng = seeds::rng(seed, Stream::NeuralNoise);
    let noise = Normal::new(0.0, tuning.noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut rates = DMatrix::zeros(k, ch);
    let mut pos = vec![0.0; bounds.dim()];
    for t in 0..k {
        for (a, p) in pos.iter_mut().enumerate() {
            *p = trajectory[(t, a)];
        }
        for c in 0..ch {
            let mut r = tuning.response(c, &pos, bounds);
            if tuning.noise_sd > 0.0 {
                r += noise.sample(&mut rng);
            }
            rates[(t, c)] = r;
        }
    }
    Ok(DMatrix::from_fn(k, ch * t_len, |t, f| {
        let (c, lag) = (f / t_len, f % t_len);
        rates[(t.saturating_sub(lag), c)]
    }))
}

/// Unsupervised stand-in: mirror the chosen axes about the space center and
/// add Gaussian noise of `noise_sd` (axis units) everywhere.
pub fn oracle_unsupervised(
    trajectory: &DMatrix<f64>,
    bounds: &SpaceBounds,
    reflect_axes: &[usize],
    noise_sd: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let noise = oracle_noise(trajectory.nrows(), bounds.dim(), noise_sd, seed)?;
    let center = bounds.center();
    let mut out = trajectory.clone();
    for a in 0..bounds.dim() {
        let flip = reflect_axes.contains(&a);
        for t in 0..out.nrows() {
            let z = out[(t, a)];
            out[(t, a)] = if flip { 2.0 * center[a] - z } else { z } + noise[(t, a)];
        }
    }
    Ok(out)
}

/// Per-sample noise table used by the oracle, drawn from its own stream.
pub fn oracle_noise(rows: usize, dim: usize, noise_sd: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::Config(format!(
            "oracle noise_sd must be >= 0, got {noise_sd}"
        )));
    }
    if noise_sd == 0.0 {
        return Ok(DMatrix::zeros(rows, dim));
    }
    let mut rng = seeds::rng(seed, Stream::OracleNoise);
    let n = Normal::new(0.0, noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    // row-major draw order so the table does not depend on the storage layout
    let mut m = DMatrix::zeros(rows, dim);
    for t in 0..rows {
        for a in 0..dim {
            m[(t, a)] = n.sample(&mut rng);
        }
    }
    Ok(m)
}
