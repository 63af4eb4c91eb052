//! Unsupervised exploration decoders.
//!
//! A decoder maps neural windows to raw outputs and then through a per-axis
//! affine rescale into position units. `fit` learns both for a region of the
//! space; [`ExplorationDecoder::refit_rescale`] only moves the rescale, which
//! is how self-reinforcement nudges exploration toward the exploitation
//! model.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::{Interval, SpaceBounds};
use crate::seeds::{self, Stream};
use crate::synth;

/// Rows of a dataset handed to a decoder.
#[derive(Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a Dataset,
    pub rows: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(data: &'a Dataset, rows: &'a [usize]) -> Self {
        Batch { data, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn neural(&self) -> DMatrix<f64> {
        self.data.neural_rows(self.rows)
    }
}

/// `scale * raw + offset`, per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl Rescale {
    pub fn identity(dim: usize) -> Self {
        Rescale {
            scale: vec![1.0; dim],
            offset: vec![0.0; dim],
        }
    }

    /// Maps the observed range of each raw column onto the region.
    pub fn min_max(raw: &DMatrix<f64>, region: &[Interval]) -> Self {
        let mut r = Rescale::identity(region.len());
        for (a, iv) in region.iter().enumerate() {
            let col = raw.column(a);
            let (lo, hi) = (col.min(), col.max());
            if hi > lo {
                r.scale[a] = iv.width() / (hi - lo);
                r.offset[a] = iv.lo - r.scale[a] * lo;
            } else {
                r.scale[a] = 0.0;
                r.offset[a] = iv.center();
            }
        }
        r
    }

    /// Least-squares affine fit of `raw` onto `targets`, per axis.
    pub fn least_squares(raw: &DMatrix<f64>, targets: &DMatrix<f64>) -> Self {
        let mut r = Rescale::identity(raw.ncols());
        for a in 0..raw.ncols() {
            let x = raw.column(a);
            let y = targets.column(a);
            let (mx, my) = (x.mean(), y.mean());
            let sxy: f64 = x
                .iter()
                .zip(y.iter())
                .map(|(u, v)| (u - mx) * (v - my))
                .sum();
            let sxx: f64 = x.iter().map(|u| (u - mx) * (u - mx)).sum();
            r.scale[a] = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            r.offset[a] = my - r.scale[a] * mx;
        }
        r
    }

    pub fn apply(&self, raw: &mut DMatrix<f64>) {
        for a in 0..raw.ncols() {
            for v in raw.column_mut(a).iter_mut() {
                *v = self.scale[a] * *v + self.offset[a];
            }
        }
    }
}

pub trait ExplorationDecoder: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Learn the decoder on `batch` with outputs spanning `region`.
    fn fit(&mut self, batch: &Batch<'_>, region: &[Interval]) -> Result<()>;

    fn is_fitted(&self) -> bool;

    /// Outputs before the affine rescale.
    fn raw(&self, batch: &Batch<'_>) -> Result<DMatrix<f64>>;

    fn rescale(&self) -> &Rescale;

    fn rescale_mut(&mut self) -> &mut Rescale;

    /// Smallest batch `fit` accepts.
    fn min_samples(&self) -> usize;

    fn boxed_clone(&self) -> Box<dyn ExplorationDecoder>;

    fn predict(&self, batch: &Batch<'_>) -> Result<DMatrix<f64>> {
        if !self.is_fitted() {
            return Err(Error::State(format!(
                "{} decoder used before fit",
                self.name()
            )));
        }
        let mut out = self.raw(batch)?;
        self.rescale().apply(&mut out);
        Ok(out)
    }

    /// Move only the rescale so that predictions on `batch` approach `targets`.
    fn refit_rescale(&mut self, batch: &Batch<'_>, targets: &DMatrix<f64>) -> Result<()> {
        if !self.is_fitted() {
            return Err(Error::State(format!(
                "{} decoder used before fit",
                self.name()
            )));
        }
        if batch.is_empty() {
            return Ok(());
        }
        let raw = self.raw(batch)?;
        *self.rescale_mut() = Rescale::least_squares(&raw, targets);
        Ok(())
    }
}

impl Clone for Box<dyn ExplorationDecoder> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// Projection onto the leading principal subspace of the neural windows.
///
/// The subspace is found by seeded subspace iteration on the feature
/// covariance, so the sign (and therefore any mirror image of the decoded
/// trajectory) is fixed by the seed.
#[derive(Debug, Clone)]
pub struct PcaDecoder {
    dim: usize,
    seed: u64,
    iterations: usize,
    mean: Option<DVector<f64>>,
    components: Option<DMatrix<f64>>,
    rescale: Rescale,
}

impl PcaDecoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        PcaDecoder {
            dim,
            seed,
            iterations: 60,
            mean: None,
            components: None,
            rescale: Rescale::identity(dim),
        }
    }

    /// `features x d` principal directions, once fitted.
    pub fn components(&self) -> Option<&DMatrix<f64>> {
        self.components.as_ref()
    }

    /// Linear read-out of one output axis, rescale included.
    pub fn readout(&self, axis: usize) -> Option<LinearReadout> {
        let (mean, comp) = (self.mean.as_ref()?, self.components.as_ref()?);
        let w = comp.column(axis);
        let s = self.rescale.scale[axis];
        Some(LinearReadout {
            weights: w.iter().map(|v| s * v).collect(),
            bias: self.rescale.offset[axis] - s * w.dot(mean),
        })
    }

    fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (mean, comp) = (
            self.mean.as_ref().unwrap(),
            self.components.as_ref().unwrap(),
        );
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= mean.transpose();
        }
        xc * comp
    }
}

fn principal_subspace(cov: &DMatrix<f64>, k: usize, iterations: usize, seed: u64) -> DMatrix<f64> {
    let f = cov.nrows();
    let width = (k + 2).min(f);
    let mut rng = seeds::rng(seed, Stream::Decoder);
    let mut q = DMatrix::from_fn(f, width, |_, _| StandardNormal.sample(&mut rng));
    for _ in 0..iterations {
        q = (cov * &q).qr().q();
    }
    // Rayleigh-Ritz on the small projected matrix
    let small = q.transpose() * cov * &q;
    let eig = small.symmetric_eigen();
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut comp = DMatrix::zeros(f, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut v = &q * eig.eigenvectors.column(i);
        if v.sum() < 0.0 {
            v = -v;
        }
        comp.set_column(c, &v);
    }
    comp
}

impl ExplorationDecoder for PcaDecoder {
    fn name(&self) -> &'static str {
        "pca"
    }

    fn fit(&mut self, batch: &Batch<'_>, region: &[Interval]) -> Result<()> {
        if batch.len() < self.min_samples() {
            return Err(Error::Empty(format!(
                "pca decoder needs at least {} samples, got {}",
                self.min_samples(),
                batch.len()
            )));
        }
        if region.len() != self.dim {
            return Err(Error::Shape(format!(
                "region has {} axes, decoder {}",
                region.len(),
                self.dim
            )));
        }
        let x = batch.neural();
        if x.ncols() < self.dim {
            return Err(Error::Shape(format!(
                "pca decoder needs at least {} features, got {}",
                self.dim,
                x.ncols()
            )));
        }
        let n = x.nrows() as f64;
        let mean = x.row_mean().transpose();
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = (xc.transpose() * &xc) / (n - 1.0);
        self.components = Some(principal_subspace(
            &cov,
            self.dim,
            self.iterations,
            self.seed,
        ));
        self.mean = Some(mean);
        let raw = self.project(&x);
        self.rescale = Rescale::min_max(&raw, region);
        Ok(())
    }

    fn is_fitted(&self) -> bool {
        self.components.is_some()
    }

    fn raw(&self, batch: &Batch<'_>) -> Result<DMatrix<f64>> {
        if !self.is_fitted() {
            return Err(Error::State("pca decoder used before fit".into()));
        }
        Ok(self.project(&batch.neural()))
    }

    fn rescale(&self) -> &Rescale {
        &self.rescale
    }

    fn rescale_mut(&mut self) -> &mut Rescale {
        &mut self.rescale
    }

    fn min_samples(&self) -> usize {
        self.dim + 2
    }

    fn boxed_clone(&self) -> Box<dyn ExplorationDecoder> {
        Box::new(self.clone())
    }
}

/// Test and calibration decoder: the true label mirrored about the center of
/// the fitted region on selected axes, plus a fixed per-sample noise draw.
///
/// It reads labels it was built with, never the neural data.
#[derive(Debug, Clone)]
pub struct OracleDecoder {
    labels: DMatrix<f64>,
    noise: DMatrix<f64>,
    reflect: Vec<bool>,
    center: Option<Vec<f64>>,
    rescale: Rescale,
}

impl OracleDecoder {
    pub fn new(
        labels: &DMatrix<f64>,
        reflect_axes: &[usize],
        noise_sd: f64,
        seed: u64,
    ) -> Result<Self> {
        let d = labels.ncols();
        if let Some(&a) = reflect_axes.iter().find(|&&a| a >= d) {
            return Err(Error::Config(format!(
                "reflect axis {a} does not exist in {d} dimensions"
            )));
        }
        Ok(OracleDecoder {
            labels: labels.clone(),
            noise: synth::oracle_noise(labels.nrows(), d, noise_sd, seed)?,
            reflect: (0..d).map(|a| reflect_axes.contains(&a)).collect(),
            center: None,
            rescale: Rescale::identity(d),
        })
    }

    /// Fitted on the whole space without touching any data.
    pub fn fitted(
        labels: &DMatrix<f64>,
        bounds: &SpaceBounds,
        reflect_axes: &[usize],
        noise_sd: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut o = OracleDecoder::new(labels, reflect_axes, noise_sd, seed)?;
        o.center = Some(bounds.center());
        Ok(o)
    }
}

impl ExplorationDecoder for OracleDecoder {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn fit(&mut self, _batch: &Batch<'_>, region: &[Interval]) -> Result<()> {
        if region.len() != self.reflect.len() {
            return Err(Error::Shape("region and labels disagree on d".into()));
        }
        self.center = Some(region.iter().map(Interval::center).collect());
        self.rescale = Rescale::identity(region.len());
        Ok(())
    }

    fn is_fitted(&self) -> bool {
        self.center.is_some()
    }

    fn raw(&self, batch: &Batch<'_>) -> Result<DMatrix<f64>> {
        let center = self
            .center
            .as_ref()
            .ok_or_else(|| Error::State("oracle decoder used before fit".into()))?;
        if let Some(&r) = batch.rows.iter().find(|&&r| r >= self.labels.nrows()) {
            return Err(Error::Shape(format!("oracle has no label for row {r}")));
        }
        let d = self.reflect.len();
        Ok(DMatrix::from_fn(batch.len(), d, |i, a| {
            let r = batch.rows[i];
            let z = self.labels[(r, a)];
            let base = if self.reflect[a] {
                2.0 * center[a] - z
            } else {
                z
            };
            base + self.noise[(r, a)]
        }))
    }

    fn rescale(&self) -> &Rescale {
        &self.rescale
    }

    fn rescale_mut(&mut self) -> &mut Rescale {
        &mut self.rescale
    }

    fn min_samples(&self) -> usize {
        1
    }

    fn boxed_clone(&self) -> Box<dyn ExplorationDecoder> {
        Box::new(self.clone())
    }
}

/// Reads the first `d` neural features as the position.
#[derive(Debug, Clone)]
pub struct FeatureDecoder {
    dim: usize,
    rescale: Rescale,
}

impl FeatureDecoder {
    pub fn new(dim: usize) -> Self {
        FeatureDecoder {
            dim,
            rescale: Rescale::identity(dim),
        }
    }
}

impl ExplorationDecoder for FeatureDecoder {
    fn name(&self) -> &'static str {
        "features"
    }

    fn fit(&mut self, _batch: &Batch<'_>, _region: &[Interval]) -> Result<()> {
        Ok(())
    }

    fn is_fitted(&self) -> bool {
        true
    }

    fn raw(&self, batch: &Batch<'_>) -> Result<DMatrix<f64>> {
        if batch.data.features() < self.dim {
            return Err(Error::Shape("fewer features than output axes".into()));
        }
        Ok(batch.neural().columns(0, self.dim).into_owned())
    }

    fn rescale(&self) -> &Rescale {
        &self.rescale
    }

    fn rescale_mut(&mut self) -> &mut Rescale {
        &mut self.rescale
    }

    fn min_samples(&self) -> usize {
        1
    }

    fn boxed_clone(&self) -> Box<dyn ExplorationDecoder> {
        Box::new(self.clone())
    }
}

/// Decodes one axis from a single window; the unsupervised map inside a
/// computing unit.
pub trait WindowDecoder {
    fn decode_window(&self, window: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> WindowDecoder for F {
    fn decode_window(&self, window: &[f64]) -> f64 {
        self(window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearReadout {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl WindowDecoder for LinearReadout {
    fn decode_window(&self, window: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(window)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> SpaceBounds {
        SpaceBounds::cube(2, 0.0, 10.0).unwrap()
    }

    fn labels() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 9.0, 5.0, 5.0])
    }

    #[test]
    fn unfitted_decoder_is_a_state_error() {
        let ds = Dataset::new(DMatrix::zeros(3, 4), labels()).unwrap();
        let rows = [0, 1, 2];
        let pca = PcaDecoder::new(2, 1);
        assert!(matches!(
            pca.predict(&Batch::new(&ds, &rows)),
            Err(Error::State(_))
        ));
        let o = OracleDecoder::new(&labels(), &[0], 0.0, 1).unwrap();
        assert!(matches!(
            o.predict(&Batch::new(&ds, &rows)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn oracle_mirrors_about_fitted_region() {
        let ds = Dataset::new(DMatrix::zeros(3, 1), labels()).unwrap();
        let rows = [0, 1, 2];
        let b = Batch::new(&ds, &rows);
        let o = OracleDecoder::fitted(&labels(), &bounds(), &[0, 1], 0.0, 1).unwrap();
        let p = o.predict(&b).unwrap();
        assert_eq!(
            p,
            DMatrix::from_row_slice(3, 2, &[9.0, 8.0, 7.0, 1.0, 5.0, 5.0])
        );
        let mut local = o.clone();
        local
            .fit(
                &b,
                &[
                    Interval::new(0.0, 5.0).unwrap(),
                    Interval::new(0.0, 10.0).unwrap(),
                ],
            )
            .unwrap();
        assert_eq!(local.predict(&b).unwrap()[(0, 0)], 4.0);
    }

    #[test]
    fn feature_decoder_passes_labels_through() {
        let ds = Dataset::new(labels(), labels()).unwrap();
        let rows = [2, 0];
        let p = FeatureDecoder::new(2)
            .predict(&Batch::new(&ds, &rows))
            .unwrap();
        assert_eq!(p, ds.label_rows(&rows));
    }

    #[test]
    fn pca_recovers_a_planted_subspace() {
        // features are a scrambled linear image of the 2-d labels
        let k = 200;
        let lab = DMatrix::from_fn(k, 2, |i, a| ((i * (a + 3)) % 17) as f64 * 0.5 + a as f64);
        let mix =
            DMatrix::from_row_slice(2, 5, &[1.0, 0.5, -0.3, 0.0, 2.0, 0.2, -1.0, 0.7, 1.5, 0.1]);
        let ds = Dataset::new(&lab * &mix, lab.clone()).unwrap();
        let rows: Vec<usize> = (0..k).collect();
        let b = Batch::new(&ds, &rows);
        let mut pca = PcaDecoder::new(2, 11);
        pca.fit(&b, bounds().axes()).unwrap();
        let p = pca.predict(&b).unwrap();
        for a in 0..2 {
            let col = p.column(a);
            assert!((col.min() - 0.0).abs() < 1e-9 && (col.max() - 10.0).abs() < 1e-9);
        }
        // the labels are an exact linear function of the two projections
        let mut design = DMatrix::from_element(k, 3, 1.0);
        design.columns_mut(0, 2).copy_from(&p);
        let coef = design.clone().svd(true, true).solve(&lab, 1e-12).unwrap();
        let resid = (&design * coef - &lab).norm();
        assert!(resid < 1e-6, "{resid}");
        let mut again = PcaDecoder::new(2, 11);
        again.fit(&b, bounds().axes()).unwrap();
        assert_eq!(pca.components(), again.components());
    }

    #[test]
    fn readout_matches_predict() {
        let k = 50;
        let lab = DMatrix::from_fn(k, 2, |i, a| (i as f64 * 0.37 + a as f64).sin() * 4.0 + 5.0);
        let feats = DMatrix::from_fn(k, 3, |i, f| {
            lab[(i, f % 2)] * (f as f64 + 1.0) + (i as f64 * 0.1).cos()
        });
        let ds = Dataset::new(feats, lab).unwrap();
        let rows: Vec<usize> = (0..k).collect();
        let b = Batch::new(&ds, &rows);
        let mut pca = PcaDecoder::new(2, 5);
        pca.fit(&b, bounds().axes()).unwrap();
        let p = pca.predict(&b).unwrap();
        let r = pca.readout(1).unwrap();
        for i in 0..k {
            let w: Vec<f64> = ds.neural.row(i).iter().copied().collect();
            assert!((r.decode_window(&w) - p[(i, 1)]).abs() < 1e-9);
        }
    }

    #[test]
    fn refit_rescale_learns_the_mirror() {
        let k = 40;
        let lab = DMatrix::from_fn(k, 1, |i, _| i as f64 * 0.25);
        let ds = Dataset::new(DMatrix::zeros(k, 1), lab.clone()).unwrap();
        let rows: Vec<usize> = (0..k).collect();
        let b = Batch::new(&ds, &rows);
        let bnd = SpaceBounds::cube(1, 0.0, 10.0).unwrap();
        let mut o = OracleDecoder::fitted(&lab, &bnd, &[0], 0.0, 1).unwrap();
        o.refit_rescale(&b, &lab).unwrap();
        let p = o.predict(&b).unwrap();
        assert!((p - lab).amax() < 1e-9);
    }
}
