//! Supervised exploitation: ridge regression from neural windows to positions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear map `prediction = intercept + (x - feature_mean) * weights`, with an
/// unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploitationModel {
    /// Requested ridge strength.
    pub ridge: f64,
    /// Strength actually used by the last fit; larger than `ridge` when the
    /// normal equations had to be regularized further.
    pub effective_ridge: f64,
    pub feature_mean: Vec<f64>,
    /// Row-major `features x d`.
    pub weights: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

impl ExploitationModel {
    pub fn new(ridge: f64) -> Self {
        ExploitationModel {
            ridge,
            effective_ridge: ridge,
            feature_mean: Vec::new(),
            weights: Vec::new(),
            intercept: Vec::new(),
        }
    }

    pub fn is_trained(&self) -> bool {
        !self.intercept.is_empty()
    }

    pub fn train(&mut self, neural: &DMatrix<f64>, labels: &DMatrix<f64>) -> Result<()> {
        let (n, f) = neural.shape();
        let d = labels.ncols();
        if labels.nrows() != n {
            return Err(Error::Shape(format!(
                "{n} neural rows but {} label rows",
                labels.nrows()
            )));
        }
        if n == 0 {
            return Err(Error::Empty(
                "no samples to train the exploitation model".into(),
            ));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!(
                "ridge must be non-negative, got {}",
                self.ridge
            )));
        }
        let mean = neural.row_mean();
        let label_mean = labels.row_mean();
        let mut xc = neural.clone();
        for mut row in xc.row_iter_mut() {
            row -= &mean;
        }
        let mut yc = labels.clone();
        for mut row in yc.row_iter_mut() {
            row -= &label_mean;
        }
        let gram = xc.transpose() * &xc;
        let rhs = xc.transpose() * &yc;
        let scale = (gram.trace() / f.max(1) as f64).max(1.0);
        let mut lambda = self.ridge;
        let weights = loop {
            let mut a = gram.clone();
            for i in 0..f {
                a[(i, i)] += lambda;
            }
            match a.cholesky() {
                Some(ch) => break ch.solve(&rhs),
                None => {
                    let next = if lambda > 0.0 {
                        lambda * 10.0
                    } else {
                        1e-12 * scale
                    };
                    log::warn!(
                        "singular normal equations at ridge {lambda:e}; retrying with {next:e}"
                    );
                    if next > 1e6 * scale {
                        return Err(Error::NonFinite("normal equations stay singular".into()));
                    }
                    lambda = next;
                }
            }
        };
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("exploitation weights".into()));
        }
        let intercept: Vec<f64> = (0..d).map(|a| label_mean[a]).collect();
        self.effective_ridge = lambda;
        self.feature_mean = mean.iter().copied().collect();
        self.weights = (0..f)
            .map(|i| weights.row(i).iter().copied().collect())
            .collect();
        self.intercept = intercept;
        Ok(())
    }

    pub fn predict(&self, neural: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !self.is_trained() {
            return Err(Error::State(
                "exploitation model used before training".into(),
            ));
        }
        let f = self.feature_mean.len();
        if neural.ncols() != f {
            return Err(Error::Shape(format!(
                "model expects {f} features, got {}",
                neural.ncols()
            )));
        }
        let d = self.intercept.len();
        let w = DMatrix::from_fn(f, d, |i, a| self.weights[i][a]);
        let mean = DVector::from_column_slice(&self.feature_mean).transpose();
        let mut xc = neural.clone();
        for mut row in xc.row_iter_mut() {
            row -= &mean;
        }
        let mut out = xc * w;
        for mut row in out.row_iter_mut() {
            for (a, v) in row.iter_mut().enumerate() {
                *v += self.intercept[a];
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("exploitation predictions".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rmse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        ((a - b).norm_squared() / a.len() as f64).sqrt()
    }

    #[test]
    fn exact_linear_recovery() {
        let x = DMatrix::from_fn(60, 4, |i, j| {
            ((i * 7 + j * 3) % 11) as f64 - 5.0 + (i as f64 * 0.3 + j as f64).sin()
        });
        let w = DMatrix::from_row_slice(4, 2, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0, -1.0, 0.25]);
        let y = &x * &w + DMatrix::from_fn(60, 2, |_, a| 4.0 + a as f64);
        let mut m = ExploitationModel::new(1e-12);
        m.train(&x, &y).unwrap();
        assert!(rmse(&m.predict(&x).unwrap(), &y) < 1e-6);
    }

    #[test]
    fn zero_features_predict_the_mean() {
        let x = DMatrix::zeros(5, 3);
        let y = DMatrix::from_row_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 10.0]);
        let mut m = ExploitationModel::new(1e-6);
        m.train(&x, &y).unwrap();
        let p = m.predict(&x).unwrap();
        assert!(p.iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn singular_system_gets_more_ridge() {
        let x = DMatrix::from_fn(10, 3, |i, j| {
            if j == 2 {
                i as f64
            } else {
                (i * (j + 1)) as f64
            }
        });
        let y = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let mut m = ExploitationModel::new(0.0);
        m.train(&x, &y).unwrap();
        assert!(m.effective_ridge > 0.0);
        assert!(rmse(&m.predict(&x).unwrap(), &y) < 1e-3);
    }

    #[test]
    fn untrained_and_shape_errors() {
        let m = ExploitationModel::new(1.0);
        assert!(matches!(
            m.predict(&DMatrix::zeros(1, 1)),
            Err(Error::State(_))
        ));
        let mut m = ExploitationModel::new(1.0);
        assert!(m
            .train(&DMatrix::zeros(3, 1), &DMatrix::zeros(2, 1))
            .is_err());
        m.train(&DMatrix::zeros(3, 2), &DMatrix::zeros(3, 1))
            .unwrap();
        assert!(m.predict(&DMatrix::zeros(1, 3)).is_err());
    }
}
