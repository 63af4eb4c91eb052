//! Exploration → space-division correction → exploitation.
//!
//! In interaction the feedback bits come from the true labels. In
//! self-reinforcement they come from the exploitation model's own
//! predictions, passed through the ε-band encoder, and the corrected labels
//! both retrain exploitation and pull the exploration rescale toward it.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::decoder::{Batch, ExplorationDecoder, WindowDecoder};
use crate::error::{Error, Result};
use crate::exploit::ExploitationModel;
use crate::grid::{flip, midline, BitCode, Feedback, Grid, Interval};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refit {
    /// Correct the exploration predictions as they are.
    #[default]
    None,
    /// Re-decode the samples routed into each subspace with a decoder fitted
    /// on just those samples before encoding at that level.
    Refit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub grid: Grid,
    pub refit: Refit,
    /// Subspaces with fewer samples keep their incoming predictions.
    pub min_refit_samples: usize,
    pub ridge: f64,
    pub epochs: usize,
    pub self_epochs: usize,
    pub train_fraction: f64,
}

impl PipelineConfig {
    pub fn new(grid: Grid) -> Self {
        PipelineConfig {
            grid,
            refit: Refit::None,
            min_refit_samples: 8,
            ridge: 1e-6,
            epochs: 1,
            self_epochs: 1,
            train_fraction: 0.7,
        }
    }

    pub fn with_depth(&self, n: usize) -> Result<Self> {
        Ok(PipelineConfig {
            grid: self.grid.with_depth(n)?,
            ..self.clone()
        })
    }
}

/// A repaired bit, tied to the dataset row it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub epoch: usize,
    /// Dataset row index.
    pub sample: usize,
    pub axis: usize,
    pub level: usize,
    pub pre: f64,
    pub post: f64,
    pub clamped: bool,
    /// True position of the sample.
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    /// Corrected positions, one row per batch row.
    pub corrected: DMatrix<f64>,
    pub events: Vec<CorrectionEvent>,
    /// Mismatched (sample, axis) pairs per level.
    pub level_mismatches: Vec<usize>,
    /// Any correction of this sample was clamped.
    pub flagged: Vec<bool>,
    /// Subspaces too small to refit.
    pub refit_fallbacks: usize,
}

impl CorrectionOutcome {
    pub fn mismatch_rates(&self) -> Vec<f64> {
        let denom = (self.corrected.nrows() * self.corrected.ncols()).max(1) as f64;
        self.level_mismatches
            .iter()
            .map(|&m| m as f64 / denom)
            .collect()
    }
}

/// Exploration predictions clamped into the bounds.
pub fn explore(
    decoder: &dyn ExplorationDecoder,
    batch: &Batch<'_>,
    grid: &Grid,
) -> Result<DMatrix<f64>> {
    let mut z = decoder.predict(batch)?;
    if z.ncols() != grid.dim() {
        return Err(Error::Shape(format!(
            "decoder emits {} axes, space has {}",
            z.ncols(),
            grid.dim()
        )));
    }
    for a in 0..grid.dim() {
        let iv = grid.bounds().axis(a);
        for v in z.column_mut(a).iter_mut() {
            if !v.is_finite() {
                return Err(Error::NonFinite("exploration prediction".into()));
            }
            *v = iv.clamp(*v);
        }
    }
    Ok(z)
}

/// Level-by-level correction of `predictions` (one row per `batch` row)
/// against `targets`.
///
/// Samples are routed by their target bits. With [`Refit::Refit`], from the
/// second level on every subspace gets a fresh copy of `decoder` fitted on
/// its own samples, whose outputs replace the incoming predictions before the
/// bits are compared.
#[allow(clippy::too_many_arguments)]
pub fn local_correct(
    predictions: &DMatrix<f64>,
    batch: &Batch<'_>,
    targets: &[BitCode],
    grid: &Grid,
    refit: Refit,
    min_refit_samples: usize,
    decoder: &dyn ExplorationDecoder,
    epoch: usize,
) -> Result<CorrectionOutcome> {
    let k = batch.len();
    let d = grid.dim();
    let n = grid.depth();
    if predictions.shape() != (k, d) || targets.len() != k {
        return Err(Error::Shape(format!(
            "local correction got {:?} predictions and {} targets for {k} samples",
            predictions.shape(),
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| t.depth() != n || t.dim() != d) {
        return Err(Error::Shape(format!(
            "target code {t} does not have depth {n} over {d} axes"
        )));
    }
    let mut cur = predictions.clone();
    let mut ivs: Vec<Vec<Interval>> = vec![grid.bounds().axes().to_vec(); k];
    let mut events = Vec::new();
    let mut level_mismatches = vec![0; n];
    let mut flagged = vec![false; k];
    let mut refit_fallbacks = 0;
    let min_needed = min_refit_samples.max(decoder.min_samples());

    for level in 1..=n {
        if refit == Refit::Refit && level >= 2 {
            let mut groups: BTreeMap<BitCode, Vec<usize>> = BTreeMap::new();
            for (i, t) in targets.iter().enumerate() {
                groups.entry(t.prefix(level - 1)).or_default().push(i);
            }
            for members in groups.values() {
                if members.len() < min_needed {
                    refit_fallbacks += 1;
                    continue;
                }
                let region = ivs[members[0]].clone();
                let rows: Vec<usize> = members.iter().map(|&i| batch.rows[i]).collect();
                let sub = Batch::new(batch.data, &rows);
                let mut local = decoder.boxed_clone();
                local.fit(&sub, &region)?;
                let z = local.predict(&sub)?;
                for (r, &i) in members.iter().enumerate() {
                    for a in 0..d {
                        let v = z[(r, a)];
                        if !v.is_finite() {
                            return Err(Error::NonFinite("local decoder output".into()));
                        }
                        cur[(i, a)] = region[a].clamp(v);
                    }
                }
            }
        }
        for i in 0..k {
            for a in 0..d {
                let target = targets[i].axis(a)[level - 1];
                let (z, ev, child) = grid.step_axis(a, level, cur[(i, a)], ivs[i][a], target);
                cur[(i, a)] = z;
                ivs[i][a] = child;
                if let Some(ev) = ev {
                    level_mismatches[level - 1] += 1;
                    flagged[i] |= ev.clamped;
                    let row = batch.rows[i];
                    events.push(CorrectionEvent {
                        epoch,
                        sample: row,
                        axis: a,
                        level,
                        pre: ev.pre,
                        post: ev.post,
                        clamped: ev.clamped,
                        truth: batch.data.label(row),
                    });
                }
            }
        }
    }
    Ok(CorrectionOutcome {
        corrected: cur,
        events,
        level_mismatches,
        flagged,
        refit_fallbacks,
    })
}

/// Output of one computing unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitOutput {
    pub value: f64,
    /// Bit of `value` in the unit's interval; equals the feedback bit.
    pub bit: bool,
    /// The incoming window, routed unchanged to the next unit.
    pub window: Vec<f64>,
    pub corrected: bool,
}

/// Smallest computing unit: decode the window, compare its bit against the
/// 0/1 feedback, and flip the value across the midline on disagreement.
pub fn unit_step(
    window: &[f64],
    feedback: bool,
    decoder: &dyn WindowDecoder,
    iv: Interval,
    eta: f64,
    lambda: f64,
) -> Result<UnitOutput> {
    if lambda.is_nan() || lambda <= 0.5 {
        return Err(Error::Config(format!(
            "lambda must exceed 0.5 (got {lambda})"
        )));
    }
    let m = midline(iv, eta)?;
    let decoded = decoder.decode_window(window);
    let agree = (iv.clamp(decoded) >= m) == feedback;
    let value = if agree {
        decoded
    } else {
        flip(decoded, iv, m, lambda).value
    };
    Ok(UnitOutput {
        value,
        bit: iv.clamp(value) >= m,
        window: window.to_vec(),
        corrected: !agree,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// `N = 0`: exploitation trained on raw exploration output.
    Unsupervised,
    Interaction,
    SelfReinforcement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Exploration output against the truth on the corrected samples.
    pub exploration_rmse: f64,
    /// Corrected labels against the truth.
    pub corrected_rmse: f64,
    pub test_rmse: f64,
    pub test_rmse_axis: Vec<f64>,
    /// Fraction of (sample, axis) pairs whose bit mismatched, per level.
    pub level_mismatch_rate: Vec<f64>,
    pub events: usize,
    pub dropped: usize,
    /// Bits requested from the external world.
    pub interaction_cost: usize,
    /// Rows used to train exploitation this epoch.
    pub trained_on: usize,
    pub refit_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Ridge fit on the true labels.
    pub supervised_rmse: f64,
    /// Ridge fit on uncorrected exploration output.
    pub unsupervised_rmse: f64,
}

/// Echo of the settings a run used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub bounds: Vec<[f64; 2]>,
    pub grid: crate::grid::GridParams,
    pub refit: Refit,
    pub min_refit_samples: usize,
    pub ridge: f64,
    pub epochs: usize,
    pub self_epochs: usize,
    pub train_fraction: f64,
    pub decoder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: RunMode,
    pub depth: usize,
    pub epochs: Vec<EpochMetrics>,
    pub events: Vec<CorrectionEvent>,
    pub baselines: Baselines,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Corrected labels from the last epoch, keyed by dataset row.
    pub corrected: Vec<(usize, Vec<f64>)>,
    /// Exploitation output on the test rows.
    pub exploitation: Vec<Vec<f64>>,
    pub model: ExploitationModel,
    pub config: ConfigEcho,
}

impl RunResult {
    pub fn final_test_rmse(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.test_rmse)
    }
}

/// Root mean square error over every entry, and per column.
pub fn rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let diff = pred - truth;
    let n = diff.nrows().max(1) as f64;
    let axis: Vec<f64> = diff
        .column_iter()
        .map(|c| (c.norm_squared() / n).sqrt())
        .collect();
    let all = (diff.norm_squared() / diff.len().max(1) as f64).sqrt();
    (all, axis)
}

fn rows_to_vec(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Outcome, exploration output, retrained model (if any sample was usable)
/// and the rows it was trained on.
type Round = (
    CorrectionOutcome,
    DMatrix<f64>,
    Option<ExploitationModel>,
    Vec<usize>,
);

/// Training state shared by the interaction and self-reinforcement loops.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    data: Dataset,
    split: Split,
    decoder: Box<dyn ExplorationDecoder>,
    model: Option<ExploitationModel>,
}

impl Pipeline {
    /// Splits the data and fits `decoder` on the training rows over the whole
    /// space.
    pub fn new(
        config: PipelineConfig,
        data: Dataset,
        mut decoder: Box<dyn ExplorationDecoder>,
    ) -> Result<Self> {
        if data.dim() != config.grid.dim() {
            return Err(Error::Shape(format!(
                "dataset has {} position axes, bounds have {}",
                data.dim(),
                config.grid.dim()
            )));
        }
        let split = data.split(config.train_fraction)?;
        decoder.fit(
            &Batch::new(&data, &split.train),
            config.grid.bounds().axes(),
        )?;
        Ok(Pipeline {
            config,
            data,
            split,
            decoder,
            model: None,
        })
    }

    /// Reassemble a pipeline from already fitted parts.
    pub fn from_parts(
        config: PipelineConfig,
        data: Dataset,
        split: Split,
        decoder: Box<dyn ExplorationDecoder>,
        model: Option<ExploitationModel>,
    ) -> Self {
        Pipeline {
            config,
            data,
            split,
            decoder,
            model,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn decoder(&self) -> &dyn ExplorationDecoder {
        self.decoder.as_ref()
    }

    pub fn model(&self) -> Option<&ExploitationModel> {
        self.model.as_ref()
    }

    fn echo(&self) -> ConfigEcho {
        let c = &self.config;
        ConfigEcho {
            bounds: c.grid.bounds().clone().into(),
            grid: c.grid.params().clone(),
            refit: c.refit,
            min_refit_samples: c.min_refit_samples,
            ridge: c.ridge,
            epochs: c.epochs,
            self_epochs: c.self_epochs,
            train_fraction: c.train_fraction,
            decoder: self.decoder.name().to_string(),
        }
    }

    fn fit_ridge(&self, rows: &[usize], labels: &DMatrix<f64>) -> Result<ExploitationModel> {
        let mut m = ExploitationModel::new(self.config.ridge);
        m.train(&self.data.neural_rows(rows), labels)?;
        Ok(m)
    }

    fn test_rmse(&self, model: &ExploitationModel) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let pred = model.predict(&self.data.neural_rows(&self.split.test))?;
        let (all, axis) = rmse(&pred, &self.data.label_rows(&self.split.test));
        if !all.is_finite() {
            return Err(Error::NonFinite(format!("test RMSE is {all}")));
        }
        Ok((all, axis, pred))
    }

    fn baselines(&self) -> Result<Baselines> {
        let train = &self.split.train;
        let supervised = self.fit_ridge(train, &self.data.label_rows(train))?;
        let zbar = explore(
            self.decoder.as_ref(),
            &Batch::new(&self.data, train),
            &self.config.grid,
        )?;
        let unsupervised = self.fit_ridge(train, &zbar)?;
        Ok(Baselines {
            supervised_rmse: self.test_rmse(&supervised)?.0,
            unsupervised_rmse: self.test_rmse(&unsupervised)?.0,
        })
    }

    /// Explore `rows`, correct against `targets`, and retrain exploitation
    /// on the unflagged corrected samples.
    fn correction_round(&self, rows: &[usize], targets: &[BitCode], epoch: usize) -> Result<Round> {
        let c = &self.config;
        let batch = Batch::new(&self.data, rows);
        let zbar = explore(self.decoder.as_ref(), &batch, &c.grid)?;
        let out = local_correct(
            &zbar,
            &batch,
            targets,
            &c.grid,
            c.refit,
            c.min_refit_samples,
            self.decoder.as_ref(),
            epoch,
        )?;
        if out.corrected.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("corrected labels".into()));
        }
        let keep: Vec<usize> = (0..rows.len()).filter(|&i| !out.flagged[i]).collect();
        let kept_rows: Vec<usize> = keep.iter().map(|&i| rows[i]).collect();
        let model = if keep.is_empty() {
            None
        } else {
            Some(self.fit_ridge(&kept_rows, &out.corrected.select_rows(&keep))?)
        };
        Ok((out, zbar, model, kept_rows))
    }

    /// Interaction loop: feedback bits from the true labels.
    pub fn run_interaction(&mut self) -> Result<RunResult> {
        let c = self.config.clone();
        let train = self.split.train.clone();
        let truth = self.data.label_rows(&train);
        let targets: Vec<BitCode> = truth
            .row_iter()
            .map(|r| c.grid.encode(&r.iter().copied().collect::<Vec<_>>()))
            .collect();
        let baselines = self.baselines()?;
        let mut epochs = Vec::with_capacity(c.epochs);
        let mut events = Vec::new();
        let mut last = None;
        for epoch in 0..c.epochs.max(1) {
            let (out, zbar, model, kept) = self.correction_round(&train, &targets, epoch)?;
            let model =
                model.ok_or_else(|| Error::Empty("every training sample was flagged".into()))?;
            let (test_rmse, test_rmse_axis, pred) = self.test_rmse(&model)?;
            epochs.push(EpochMetrics {
                epoch,
                exploration_rmse: rmse(&zbar, &truth).0,
                corrected_rmse: rmse(&out.corrected, &truth).0,
                test_rmse,
                test_rmse_axis,
                level_mismatch_rate: out.mismatch_rates(),
                events: out.events.len(),
                dropped: 0,
                interaction_cost: train.len() * c.grid.dim() * c.grid.depth(),
                trained_on: kept.len(),
                refit_fallbacks: out.refit_fallbacks,
            });
            self.model = Some(model);
            events.extend(out.events.iter().cloned());
            last = Some((out, pred));
        }
        let (out, pred) = last.expect("at least one epoch");
        Ok(RunResult {
            mode: if c.grid.depth() == 0 {
                RunMode::Unsupervised
            } else {
                RunMode::Interaction
            },
            depth: c.grid.depth(),
            epochs,
            events,
            baselines,
            train_rows: train.clone(),
            test_rows: self.split.test.clone(),
            corrected: train
                .iter()
                .copied()
                .zip(rows_to_vec(&out.corrected))
                .collect(),
            exploitation: rows_to_vec(&pred),
            model: self.model.clone().expect("trained above"),
            config: self.echo(),
        })
    }

    /// Self-reinforcement loop: feedback bits from the exploitation model's
    /// predictions on the training rows.
    pub fn run_self_reinforcement(&mut self) -> Result<RunResult> {
        let Some(mut model) = self.model.clone() else {
            return Err(Error::State(
                "self-reinforcement needs a trained exploitation model; run interaction first"
                    .into(),
            ));
        };
        let c = self.config.clone();
        let train = self.split.train.clone();
        let baselines = self.baselines()?;
        let mut epochs = Vec::with_capacity(c.self_epochs);
        let mut events = Vec::new();
        let mut corrected = Vec::new();
        for epoch in 0..c.self_epochs.max(1) {
            let zhat = model.predict(&self.data.neural_rows(&train))?;
            let mut survivors = Vec::new();
            let mut targets = Vec::new();
            let mut internal = Vec::new();
            let (mut dropped, mut deferred) = (0, 0);
            for (i, &row) in train.iter().enumerate() {
                let z: Vec<f64> = zhat.row(i).iter().copied().collect();
                match c.grid.feedback(&z, &self.data.label(row)) {
                    Feedback::Code { code, deferred: n } => {
                        deferred += n;
                        survivors.push(row);
                        targets.push(code);
                        internal.push(i);
                    }
                    Feedback::Dropped { .. } => dropped += 1,
                }
            }
            let (test_before, axis_before, _) = self.test_rmse(&model)?;
            let mut metrics = EpochMetrics {
                epoch,
                exploration_rmse: f64::NAN,
                corrected_rmse: f64::NAN,
                test_rmse: test_before,
                test_rmse_axis: axis_before,
                level_mismatch_rate: vec![0.0; c.grid.depth()],
                events: 0,
                dropped,
                interaction_cost: deferred,
                trained_on: 0,
                refit_fallbacks: 0,
            };
            if survivors.is_empty() {
                epochs.push(metrics);
                continue;
            }
            let (out, zbar, new_model, kept) =
                self.correction_round(&survivors, &targets, epoch)?;
            let truth = self.data.label_rows(&survivors);
            metrics.exploration_rmse = rmse(&zbar, &truth).0;
            metrics.corrected_rmse = rmse(&out.corrected, &truth).0;
            metrics.level_mismatch_rate = out.mismatch_rates();
            metrics.events = out.events.len();
            metrics.refit_fallbacks = out.refit_fallbacks;
            if let Some(m) = new_model {
                let (t, ax, _) = self.test_rmse(&m)?;
                metrics.test_rmse = t;
                metrics.test_rmse_axis = ax;
                metrics.trained_on = kept.len();
                model = m;
                let kept_idx: Vec<usize> = internal
                    .iter()
                    .zip(&out.flagged)
                    .filter(|(_, &f)| !f)
                    .map(|(&i, _)| i)
                    .collect();
                let toward = zhat.select_rows(&kept_idx);
                self.decoder
                    .refit_rescale(&Batch::new(&self.data, &kept), &toward)?;
            }
            events.extend(out.events.iter().cloned());
            corrected = survivors
                .iter()
                .copied()
                .zip(rows_to_vec(&out.corrected))
                .collect();
            epochs.push(metrics);
        }
        let (_, _, pred) = self.test_rmse(&model)?;
        self.model = Some(model.clone());
        Ok(RunResult {
            mode: RunMode::SelfReinforcement,
            depth: c.grid.depth(),
            epochs,
            events,
            baselines,
            train_rows: train,
            test_rows: self.split.test.clone(),
            corrected,
            exploitation: rows_to_vec(&pred),
            model,
            config: self.echo(),
        })
    }
}

/// Fit a pipeline and run the interaction loop once.
pub fn run_interaction(
    config: PipelineConfig,
    data: Dataset,
    decoder: Box<dyn ExplorationDecoder>,
) -> Result<(RunResult, Pipeline)> {
    let mut p = Pipeline::new(config, data, decoder)?;
    let r = p.run_interaction()?;
    Ok((r, p))
}
