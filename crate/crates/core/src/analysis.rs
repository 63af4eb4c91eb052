//! Metrics, spatial analysis of correction events, depth sweeps and the
//! minimal-depth selector.

use std::collections::{BTreeSet, HashSet};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::decoder::ExplorationDecoder;
use crate::error::{Error, Result};
use crate::grid::{Grid, SpaceBounds};
use crate::pipeline::{CorrectionEvent, Pipeline, PipelineConfig, RunResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub rmse_axis: Vec<f64>,
    /// Pearson correlation per axis; `None` when either side is constant.
    pub correlation: Vec<Option<f64>>,
}

pub fn metrics(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Metrics> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("metrics of an empty prediction".into()));
    }
    let (rmse, rmse_axis) = crate::pipeline::rmse(pred, truth);
    let correlation = (0..pred.ncols())
        .map(|a| {
            pearson(
                pred.column(a).iter().copied(),
                truth.column(a).iter().copied(),
            )
        })
        .collect();
    Ok(Metrics {
        rmse,
        rmse_axis,
        correlation,
    })
}

fn pearson(x: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = x.zip(y).collect();
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Occupancy-normalized histogram of corrected samples.
///
/// Cells are stored flat with axis 0 varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMap {
    pub resolution: Vec<usize>,
    /// Samples with at least one correction event, per cell.
    pub events: Vec<u64>,
    pub samples: Vec<u64>,
}

impl RateMap {
    pub fn cells(&self) -> usize {
        self.samples.len()
    }

    /// Multi-index of flat cell `i`.
    pub fn index(&self, mut i: usize) -> Vec<usize> {
        self.resolution
            .iter()
            .map(|&r| {
                let v = i % r;
                i /= r;
                v
            })
            .collect()
    }

    /// `None` for cells nobody visited.
    pub fn rate(&self, cell: usize) -> Option<f64> {
        (self.samples[cell] > 0).then(|| self.events[cell] as f64 / self.samples[cell] as f64)
    }

    pub fn rates(&self) -> Vec<Option<f64>> {
        (0..self.cells()).map(|c| self.rate(c)).collect()
    }
}

fn bin(bounds: &SpaceBounds, resolution: &[usize], p: &[f64]) -> usize {
    let mut flat = 0;
    let mut stride = 1;
    for (a, &r) in resolution.iter().enumerate() {
        let iv = bounds.axis(a);
        let t = (iv.clamp(p[a]) - iv.lo) / iv.width();
        let b = ((t * r as f64) as usize).min(r - 1);
        flat += b * stride;
        stride *= r;
    }
    flat
}

/// Bin the true positions of corrected samples against all `samples` (one
/// row per sample, true positions).
///
/// A sample corrected on several axes or levels counts once, so the rate of
/// every cell lies in `[0, 1]`.
pub fn correction_rate_map(
    events: &[CorrectionEvent],
    samples: &DMatrix<f64>,
    bounds: &SpaceBounds,
    resolution: &[usize],
) -> Result<RateMap> {
    let d = bounds.dim();
    if resolution.len() != d || resolution.contains(&0) {
        return Err(Error::Config(format!(
            "rate map resolution needs {d} positive entries, got {resolution:?}"
        )));
    }
    if samples.ncols() != d {
        return Err(Error::Shape(format!(
            "samples have {} axes, bounds {d}",
            samples.ncols()
        )));
    }
    let cells: usize = resolution.iter().product();
    let mut map = RateMap {
        resolution: resolution.to_vec(),
        events: vec![0; cells],
        samples: vec![0; cells],
    };
    for row in samples.row_iter() {
        let p: Vec<f64> = row.iter().copied().collect();
        map.samples[bin(bounds, resolution, &p)] += 1;
    }
    let mut seen = HashSet::new();
    for ev in events {
        if seen.insert((ev.epoch, ev.sample)) {
            map.events[bin(bounds, resolution, &ev.truth)] += 1;
        }
    }
    if let Some(c) = (0..cells).find(|&c| map.events[c] > map.samples[c]) {
        return Err(Error::Shape(format!("cell {c} has more corrected samples than samples; events do not come from these samples")));
    }
    Ok(map)
}

/// Spatial autocorrelation of a 2-D rate map over all lags
/// `(-(r-1)..=r-1)` per axis, skipping unvisited cells.
///
/// Entry `[i][j]` is the lag `(i - (r0-1), j - (r1-1))`; `None` where fewer
/// than two overlapping pairs exist or either side is flat.
pub fn autocorrelogram(map: &RateMap) -> Result<Vec<Vec<Option<f64>>>> {
    let [r0, r1] = map.resolution[..] else {
        return Err(Error::Shape(format!(
            "autocorrelogram needs a 2-D map, got {}-D",
            map.resolution.len()
        )));
    };
    let rates = map.rates();
    let at = |i: usize, j: usize| rates[i + j * r0];
    let mut out = vec![vec![None; 2 * r1 - 1]; 2 * r0 - 1];
    for (li, row) in out.iter_mut().enumerate() {
        let dx = li as isize - (r0 as isize - 1);
        for (lj, slot) in row.iter_mut().enumerate() {
            let dy = lj as isize - (r1 as isize - 1);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in 0..r0 {
                let i2 = i as isize + dx;
                if i2 < 0 || i2 >= r0 as isize {
                    continue;
                }
                for j in 0..r1 {
                    let j2 = j as isize + dy;
                    if j2 < 0 || j2 >= r1 as isize {
                        continue;
                    }
                    if let (Some(a), Some(b)) = (at(i, j), at(i2 as usize, j2 as usize)) {
                        xs.push(a);
                        ys.push(b);
                    }
                }
            }
            *slot = pearson(xs.into_iter(), ys.into_iter());
        }
    }
    Ok(out)
}

/// Node clustering of correction events.
///
/// Each event is tested on its own axis: is the true coordinate within
/// `delta_frac * width` of one of that axis's reference lines down to the
/// grid depth? The fraction of events that are, divided by the same fraction
/// over every (sample, axis) pair, is the affinity. `Ok(None)` when there are
/// no events or no sample lies near a line.
pub fn boundary_affinity(
    events: &[CorrectionEvent],
    samples: &DMatrix<f64>,
    grid: &Grid,
    delta_frac: f64,
) -> Result<Option<f64>> {
    if !(delta_frac > 0.0 && delta_frac.is_finite()) {
        return Err(Error::Config(format!(
            "delta must be positive, got {delta_frac}"
        )));
    }
    let d = grid.dim();
    if samples.ncols() != d {
        return Err(Error::Shape(format!(
            "samples have {} axes, grid {d}",
            samples.ncols()
        )));
    }
    let lines: Vec<Vec<f64>> = (0..d).map(|a| grid.reference_lines(a)).collect();
    let deltas: Vec<f64> = (0..d)
        .map(|a| delta_frac * grid.bounds().axis(a).width())
        .collect();
    let near = |a: usize, z: f64| {
        let ls = &lines[a];
        let i = ls.partition_point(|&l| l < z);
        let below = i.checked_sub(1).map(|j| z - ls[j]);
        let above = ls.get(i).map(|l| l - z);
        below.into_iter().chain(above).any(|g| g <= deltas[a])
    };
    let mut near_samples = 0usize;
    for row in samples.row_iter() {
        for a in 0..d {
            near_samples += near(a, row[a]) as usize;
        }
    }
    if events.is_empty() || near_samples == 0 {
        return Ok(None);
    }
    let near_events = events
        .iter()
        .filter(|e| near(e.axis, e.truth[e.axis]))
        .count();
    let base = near_samples as f64 / (samples.len() as f64);
    Ok(Some(near_events as f64 / events.len() as f64 / base))
}

/// Complexity term of the depth selector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    /// `d * N`: code length in bits.
    #[default]
    Bits,
    /// Number of depth-N cells holding at least one training sample.
    OccupiedCells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub test_rmse: f64,
    pub level_mismatch: Vec<f64>,
    /// Feedback bits requested from the outside: train samples × d × N.
    pub interaction_cost: usize,
    pub occupied_cells: usize,
    pub wall_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub dim: usize,
    pub rows: Vec<SweepRow>,
}

/// One interaction run per depth, in parallel. Every row starts from the same
/// configuration and a fresh decoder from `decoder`, so rows do not depend on
/// each other or on scheduling. Failed rows carry their error and the sweep
/// goes on.
pub fn sweep_n(
    config: &PipelineConfig,
    data: &Dataset,
    n_values: &[usize],
    decoder: &(dyn Fn() -> Box<dyn ExplorationDecoder> + Sync),
) -> Result<SweepTable> {
    if n_values.is_empty() {
        return Err(Error::Empty("no depths to sweep".into()));
    }
    let rows = n_values
        .par_iter()
        .map(|&n| {
            let start = Instant::now();
            let run = config
                .with_depth(n)
                .and_then(|c| Pipeline::new(c, data.clone(), decoder()))
                .and_then(|mut p| {
                    let r = p.run_interaction()?;
                    Ok((r, p))
                });
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            match run {
                Ok((r, p)) => {
                    let last = r.epochs.last().expect("runs have an epoch");
                    let g = &p.config().grid;
                    let occupied: BTreeSet<_> = r
                        .train_rows
                        .iter()
                        .map(|&k| g.encode(&data.label(k)))
                        .collect();
                    SweepRow {
                        n,
                        test_rmse: last.test_rmse,
                        level_mismatch: last.level_mismatch_rate.clone(),
                        interaction_cost: last.interaction_cost,
                        occupied_cells: occupied.len(),
                        wall_ms,
                        error: None,
                    }
                }
                Err(e) => {
                    log::error!("sweep row N={n} failed: {e}");
                    SweepRow {
                        n,
                        test_rmse: f64::NAN,
                        level_mismatch: Vec::new(),
                        interaction_cost: 0,
                        occupied_cells: 0,
                        wall_ms,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(SweepTable {
        dim: data.dim(),
        rows,
    })
}

/// `-RMSE - gamma * complexity` for every successful row.
pub fn scores(table: &SweepTable, gamma: f64, complexity: Complexity) -> Vec<(usize, f64)> {
    table
        .rows
        .iter()
        .filter(|r| r.error.is_none() && r.test_rmse.is_finite())
        .map(|r| {
            let c = match complexity {
                Complexity::Bits => (table.dim * r.n) as f64,
                Complexity::OccupiedCells => r.occupied_cells as f64,
            };
            (r.n, -r.test_rmse - gamma * c)
        })
        .collect()
}

/// Depth with the highest score; ties go to the smaller depth.
pub fn select_by_scores(scores: &[(usize, f64)]) -> Result<usize> {
    scores
        .iter()
        .copied()
        .reduce(|best, s| {
            if s.1 > best.1 || (s.1 == best.1 && s.0 < best.0) {
                s
            } else {
                best
            }
        })
        .map(|s| s.0)
        .ok_or_else(|| Error::Empty("no successful sweep rows to select from".into()))
}

pub fn select_n(table: &SweepTable, gamma: f64, complexity: Complexity) -> Result<usize> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Config(format!(
            "gamma must be non-negative, got {gamma}"
        )));
    }
    select_by_scores(&scores(table, gamma, complexity))
}

/// `1 - mean per-level mismatch rate`, per epoch; 1 when there are no levels.
pub fn order_score(run: &RunResult) -> Vec<f64> {
    run.epochs
        .iter()
        .map(|e| {
            if e.level_mismatch_rate.is_empty() {
                1.0
            } else {
                1.0 - e.level_mismatch_rate.iter().sum::<f64>() / e.level_mismatch_rate.len() as f64
            }
        })
        .collect()
}
