use serde::{Deserialize, Serialize};

use super::{midline, BitCode, Grid, Interval};
use crate::error::{Error, Result};

/// Outcome of one symmetric flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub value: f64,
    /// `z + 2 * lambda * (mid - z)` before any clamping.
    pub raw: f64,
    /// The raw value left the interval and was clamped back.
    pub clamped: bool,
    /// Rounding (or a value exactly on the midline) kept the flip on the
    /// original side; the value was moved to the nearest point across.
    pub snapped: bool,
}

/// Flip `z` across the midline: `z + 2 * lambda * (mid - z)`, clamped into
/// `iv`. With `lambda == 1` this is an exact reflection.
pub fn correct_axis(z: f64, iv: Interval, eta: f64, lambda: f64) -> Result<f64> {
    Ok(correct_axis_detailed(z, iv, eta, lambda)?.value)
}

pub fn correct_axis_detailed(z: f64, iv: Interval, eta: f64, lambda: f64) -> Result<Correction> {
    if lambda.is_nan() || lambda <= 0.5 {
        return Err(Error::Config(format!(
            "lambda must exceed 0.5 (got {lambda})"
        )));
    }
    Ok(flip(z, iv, midline(iv, eta)?, lambda))
}

/// The corrected value always ends on the other side of `mid` from where
/// `z` started; `lambda > 0.5` guarantees that in exact arithmetic.
#[inline]
pub(crate) fn flip(z: f64, iv: Interval, mid: f64, lambda: f64) -> Correction {
    let from = iv.clamp(z) >= mid;
    let raw = z + 2.0 * lambda * (mid - z);
    let mut value = iv.clamp(raw);
    let clamped = value != raw;
    let mut snapped = false;
    if (value >= mid) == from {
        value = if from { mid.next_down() } else { mid };
        snapped = true;
    }
    Correction {
        value,
        raw,
        clamped,
        snapped,
    }
}

/// One mismatched bit and its repair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelEvent {
    pub axis: usize,
    /// 1-based division level.
    pub level: usize,
    pub pre: f64,
    pub post: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub value: Vec<f64>,
    pub events: Vec<LevelEvent>,
}

impl Grid {
    /// One level on one axis: compare the bit of `z` in `iv` against
    /// `target`, flip on mismatch, and return the target child interval.
    #[inline]
    pub(crate) fn step_axis(
        &self,
        axis: usize,
        level: usize,
        z: f64,
        iv: Interval,
        target: bool,
    ) -> (f64, Option<LevelEvent>, Interval) {
        let m = self.mid(axis, iv);
        let child = iv.split(m, target);
        if (iv.clamp(z) >= m) == target {
            return (z, None, child);
        }
        let c = flip(z, iv, m, self.params.lambda[axis]);
        let ev = LevelEvent {
            axis,
            level,
            pre: z,
            post: c.value,
            clamped: c.clamped,
        };
        (c.value, Some(ev), child)
    }

    /// Multilevel correction of a prediction against the true code.
    ///
    /// Each axis descends the true path. At every level the bit of the current
    /// value is recomputed inside the current subspace; on mismatch the value
    /// is flipped across that subspace's midline and an event is recorded.
    /// When the two codes agree the prediction is returned untouched.
    pub fn update(&self, pred: &[f64], code_pred: &BitCode, code_true: &BitCode) -> Result<Update> {
        let d = self.dim();
        if pred.len() != d || code_pred.dim() != d || code_true.dim() != d {
            return Err(Error::Shape(format!(
                "update needs {d}-dimensional inputs (prediction {}, codes {} and {})",
                pred.len(),
                code_pred.dim(),
                code_true.dim()
            )));
        }
        if code_pred.depth() != code_true.depth() {
            return Err(Error::Shape(format!(
                "codes have different depths {} and {}",
                code_pred.depth(),
                code_true.depth()
            )));
        }
        if code_pred == code_true {
            return Ok(Update {
                value: pred.to_vec(),
                events: Vec::new(),
            });
        }
        let mut value = pred.to_vec();
        let mut events = Vec::new();
        for (a, z) in value.iter_mut().enumerate() {
            let mut iv = self.bounds.axis(a);
            for (j, &target) in code_true.axis(a).iter().enumerate() {
                let (next, ev, child) = self.step_axis(a, j + 1, *z, iv, target);
                *z = next;
                events.extend(ev);
                iv = child;
            }
        }
        Ok(Update { value, events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridParams, SpaceBounds};
    use approx::assert_abs_diff_eq;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    #[test]
    fn correct_axis_examples() {
        assert_eq!(correct_axis(2.0, iv(0.0, 10.0), 1.0, 1.0).unwrap(), 8.0);
        assert_eq!(correct_axis(2.0, iv(0.0, 10.0), 1.0, 0.75).unwrap(), 6.5);
        assert_abs_diff_eq!(
            correct_axis(7.0, iv(0.0, 10.0), 0.8, 1.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn escaping_correction_is_clamped_and_flagged() {
        let c = correct_axis_detailed(1.0, iv(0.0, 10.0), 1.0, 1.4).unwrap();
        assert_abs_diff_eq!(c.raw, 12.2, epsilon = 1e-12);
        assert_eq!(c.value, 10.0);
        assert!(c.clamped);
    }

    #[test]
    fn value_on_midline_still_crosses() {
        let c = correct_axis_detailed(5.0, iv(0.0, 10.0), 1.0, 1.0).unwrap();
        assert!(c.snapped);
        assert!(c.value < 5.0);
        assert_abs_diff_eq!(c.value, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_small_lambda() {
        assert!(correct_axis(2.0, iv(0.0, 10.0), 1.0, 0.5).is_err());
    }

    fn line() -> Grid {
        Grid::new(
            SpaceBounds::cube(1, 0.0, 10.0).unwrap(),
            GridParams::centered(2, 1),
        )
        .unwrap()
    }

    #[test]
    fn update_two_levels() {
        let g = line();
        let code_pred = g.encode(&[3.1]);
        assert_eq!(code_pred.axis(0), &[false, true]);
        let code_true = BitCode::new(vec![vec![true, true]]).unwrap();
        let up = g.update(&[3.1], &code_pred, &code_true).unwrap();
        assert_abs_diff_eq!(up.value[0], 8.1, epsilon = 1e-12);
        let levels: Vec<_> = up.events.iter().map(|e| e.level).collect();
        assert_eq!(levels, vec![1, 2]);
        assert_abs_diff_eq!(up.events[0].post, 6.9, epsilon = 1e-12);
    }

    #[test]
    fn update_keeps_matching_prediction() {
        let g = line();
        let c = g.encode(&[7.0]);
        let up = g.update(&[7.0], &c, &c).unwrap();
        assert_eq!(up.value, vec![7.0]);
        assert!(up.events.is_empty());
    }

    #[test]
    fn update_at_depth_zero_is_identity() {
        let g = line().with_depth(0).unwrap();
        let e = BitCode::empty(1);
        let up = g.update(&[3.3], &e, &e).unwrap();
        assert_eq!(up.value, vec![3.3]);
    }

    #[test]
    fn update_rejects_mismatched_shapes() {
        let g = line();
        let c = g.encode(&[1.0]);
        assert!(g.update(&[1.0, 2.0], &c, &c).is_err());
        assert!(g.update(&[1.0], &c, &c.prefix(1)).is_err());
    }
}
