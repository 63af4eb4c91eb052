//! Recursive binary division of an axis-aligned activity space.
//!
//! Every axis is split independently at a reference line (the midline),
//! optionally offset by `eta`. A position is hashed to one bit per axis per
//! level by descending into the child interval that contains it; the code is
//! many-to-one and only locates a position to its depth-`N` cell.
//!
//! Intervals below the root are half-open on the side that touches a
//! midline: the lower child of `[lo, hi]` is `[lo, mid)` and the upper child is
//! `[mid, hi]`, which matches the `>=` tie rule of the interaction encoder.

mod correct;
mod deflected;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use correct::flip;
pub use correct::{correct_axis, correct_axis_detailed, Correction, LevelEvent, Update};
pub use deflected::{correct_axis_deflected, encode_bit_deflected, PlaneAxis};

/// Deepest division accepted by [`Grid::new`]. Validation walks every
/// interval of every axis, so this also bounds that cost.
pub const MAX_DEPTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// `hi` itself lies outside the interval.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hi_open: bool,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config(format!(
                "interval [{lo}, {hi}] is not finite"
            )));
        }
        if lo >= hi {
            return Err(Error::Config(format!(
                "interval [{lo}, {hi}] needs min < max"
            )));
        }
        Ok(Interval {
            lo,
            hi,
            hi_open: false,
        })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.lo
            && if self.hi_open {
                z < self.hi
            } else {
                z <= self.hi
            }
    }

    /// Largest value that still belongs to the interval.
    pub fn upper(&self) -> f64 {
        if self.hi_open {
            self.hi.next_down()
        } else {
            self.hi
        }
    }

    pub fn clamp(&self, z: f64) -> f64 {
        z.max(self.lo).min(self.upper())
    }

    /// Child interval selected by `bit` around an already computed midline.
    pub(crate) fn split(&self, mid: f64, bit: bool) -> Interval {
        if bit {
            Interval {
                lo: mid,
                hi: self.hi,
                hi_open: self.hi_open,
            }
        } else {
            Interval {
                lo: self.lo,
                hi: mid,
                hi_open: true,
            }
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let close = if self.hi_open { ')' } else { ']' };
        write!(f, "[{}, {}{}", self.lo, self.hi, close)
    }
}

/// Per-axis `[min, max]` extent of the activity space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct SpaceBounds {
    axes: Vec<Interval>,
}

impl SpaceBounds {
    pub fn new(axes: Vec<Interval>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("bounds need at least one axis".into()));
        }
        for iv in &axes {
            Interval::new(iv.lo, iv.hi)?;
        }
        let axes = axes
            .into_iter()
            .map(|iv| Interval {
                hi_open: false,
                ..iv
            })
            .collect();
        Ok(SpaceBounds { axes })
    }

    /// Same `[lo, hi]` on every one of `dim` axes.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        SpaceBounds::new(vec![Interval::new(lo, hi)?; dim])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, a: usize) -> Interval {
        self.axes[a]
    }

    pub fn axes(&self) -> &[Interval] {
        &self.axes
    }

    pub fn center(&self) -> Vec<f64> {
        self.axes.iter().map(Interval::center).collect()
    }

    pub fn min_width(&self) -> f64 {
        self.axes
            .iter()
            .map(Interval::width)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn clamp(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .zip(&self.axes)
            .map(|(&z, iv)| iv.clamp(z))
            .collect()
    }
}

impl TryFrom<Vec<[f64; 2]>> for SpaceBounds {
    type Error = Error;

    fn try_from(raw: Vec<[f64; 2]>) -> Result<Self> {
        let axes = raw
            .into_iter()
            .map(|[lo, hi]| Interval::new(lo, hi))
            .collect::<Result<Vec<_>>>()?;
        SpaceBounds::new(axes)
    }
}

impl From<SpaceBounds> for Vec<[f64; 2]> {
    fn from(b: SpaceBounds) -> Self {
        b.axes.iter().map(|iv| [iv.lo, iv.hi]).collect()
    }
}

/// What the self-reinforcement encoder does with a value inside the ε band.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandPolicy {
    /// Forget the sample.
    #[default]
    Dropout,
    /// Ask the external world for the bit instead.
    FallbackToInteraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    /// Division depth; the code length per axis.
    pub n: usize,
    /// Reference-center offset rate per axis.
    #[serde(default)]
    pub eta: Vec<f64>,
    /// Symmetric-distance offset rate per axis.
    #[serde(default)]
    pub lambda: Vec<f64>,
    /// Half-width of the uncertainty band, in axis units.
    #[serde(default)]
    pub epsilon: f64,
    /// Deflection of the x-axis, radians. Only the deflected operators use it.
    #[serde(default)]
    pub alpha: f64,
    /// Deflection of the y-axis, radians.
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub band_policy: BandPolicy,
}

impl GridParams {
    /// Centered midlines, exact reflection, no band.
    pub fn centered(n: usize, dim: usize) -> Self {
        GridParams {
            n,
            eta: vec![1.0; dim],
            lambda: vec![1.0; dim],
            epsilon: 0.0,
            alpha: 0.0,
            beta: 0.0,
            band_policy: BandPolicy::Dropout,
        }
    }

    /// Replaces empty `eta` / `lambda` lists with 1.0 on every axis.
    pub fn fill_defaults(&mut self, dim: usize) {
        if self.eta.is_empty() {
            self.eta = vec![1.0; dim];
        }
        if self.lambda.is_empty() {
            self.lambda = vec![1.0; dim];
        }
    }

    /// All invariant violations against `bounds`, each prefixed by `prefix`
    /// (for example `"grid"`).
    pub fn violations(&self, bounds: &SpaceBounds, prefix: &str) -> Vec<String> {
        let d = bounds.dim();
        let mut out = Vec::new();
        if self.n > MAX_DEPTH {
            out.push(format!("{prefix}.n: depth must be at most {MAX_DEPTH}"));
        }
        if self.eta.len() != d {
            out.push(format!(
                "{prefix}.eta: expected {d} values, got {}",
                self.eta.len()
            ));
        }
        if self.lambda.len() != d {
            out.push(format!(
                "{prefix}.lambda: expected {d} values, got {}",
                self.lambda.len()
            ));
        }
        for (a, &l) in self.lambda.iter().enumerate() {
            if !(l.is_finite() && l > 0.5) {
                out.push(format!(
                    "{prefix}.lambda[{a}]: lambda must exceed 0.5 (got {l})"
                ));
            }
        }
        for (a, &e) in self.eta.iter().enumerate() {
            if !(e.is_finite() && e > 0.0 && e < 2.0) {
                out.push(format!(
                    "{prefix}.eta[{a}]: eta must lie in (0, 2) (got {e})"
                ));
            }
        }
        let half = 0.5 * bounds.min_width();
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            out.push(format!(
                "{prefix}.epsilon: must be a non-negative number (got {})",
                self.epsilon
            ));
        } else if self.epsilon >= half {
            out.push(format!(
                "{prefix}.epsilon: must be below half the narrowest axis width {half} (got {})",
                self.epsilon
            ));
        }
        if !self.alpha.is_finite() {
            out.push(format!("{prefix}.alpha: must be finite"));
        }
        if !self.beta.is_finite() {
            out.push(format!("{prefix}.beta: must be finite"));
        }
        if out.is_empty() {
            for (a, iv) in bounds.axes().iter().enumerate() {
                if let Some(bad) = first_escaping_midline(*iv, self.eta[a], self.n) {
                    out.push(format!(
                        "{prefix}.eta[{a}]: reference line leaves the subspace {bad} at some level"
                    ));
                }
            }
        }
        out
    }
}

/// Depth-first search for an interval, at depth < `n`, whose offset midline is
/// not strictly inside it.
fn first_escaping_midline(root: Interval, eta: f64, n: usize) -> Option<Interval> {
    let mut stack = vec![(root, 0usize)];
    while let Some((iv, depth)) = stack.pop() {
        if depth >= n {
            continue;
        }
        let m = raw_midline(iv, eta);
        if !(m > iv.lo && m < iv.hi) {
            return Some(iv);
        }
        stack.push((iv.split(m, false), depth + 1));
        stack.push((iv.split(m, true), depth + 1));
    }
    None
}

#[inline]
fn raw_midline(iv: Interval, eta: f64) -> f64 {
    iv.center() * eta
}

/// Offset reference line `((min + max) / 2) * eta` of one axis interval.
pub fn midline(iv: Interval, eta: f64) -> Result<f64> {
    let m = raw_midline(iv, eta);
    if m > iv.lo && m < iv.hi {
        Ok(m)
    } else {
        Err(Error::Config(format!(
            "midline {m} (eta {eta}) is outside the open interval ({}, {})",
            iv.lo, iv.hi
        )))
    }
}

/// Upper child for `true`, lower child for `false`.
pub fn child_bounds(iv: Interval, eta: f64, bit: bool) -> Result<Interval> {
    Ok(iv.split(midline(iv, eta)?, bit))
}

/// Interaction encoder: 1 iff the (clamped) value is at or above the midline.
pub fn encode_bit_inter(z: f64, iv: Interval, eta: f64) -> Result<bool> {
    Ok(iv.clamp(z) >= midline(iv, eta)?)
}

/// Result of encoding one bit in self-reinforcement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitOutcome {
    Bit(bool),
    /// Inside the ε band under [`BandPolicy::Dropout`].
    Dropped,
    /// Inside the ε band under [`BandPolicy::FallbackToInteraction`]; the
    /// caller has to supply the interaction bit.
    Deferred,
}

/// Self-reinforcement encoder. Both comparisons are strict, so a value sitting
/// exactly on the midline lands in the band even with `epsilon == 0`.
pub fn encode_bit_self(
    z: f64,
    iv: Interval,
    eta: f64,
    epsilon: f64,
    policy: BandPolicy,
) -> Result<BitOutcome> {
    Ok(self_bit(iv.clamp(z), midline(iv, eta)?, epsilon, policy))
}

#[inline]
fn self_bit(z: f64, mid: f64, epsilon: f64, policy: BandPolicy) -> BitOutcome {
    if z > mid + epsilon {
        BitOutcome::Bit(true)
    } else if z < mid - epsilon {
        BitOutcome::Bit(false)
    } else {
        match policy {
            BandPolicy::Dropout => BitOutcome::Dropped,
            BandPolicy::FallbackToInteraction => BitOutcome::Deferred,
        }
    }
}

/// Per-axis bit strings of equal length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitCode {
    axes: Vec<Vec<bool>>,
}

impl BitCode {
    pub fn new(axes: Vec<Vec<bool>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Shape("a code needs at least one axis".into()));
        }
        let n = axes[0].len();
        if axes.iter().any(|a| a.len() != n) {
            return Err(Error::Shape(
                "all axes of a code must share one length".into(),
            ));
        }
        Ok(BitCode { axes })
    }

    pub fn empty(dim: usize) -> Self {
        BitCode {
            axes: vec![Vec::new(); dim],
        }
    }

    pub fn depth(&self) -> usize {
        self.axes[0].len()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, a: usize) -> &[bool] {
        &self.axes[a]
    }

    pub fn prefix(&self, depth: usize) -> BitCode {
        BitCode {
            axes: self
                .axes
                .iter()
                .map(|a| a[..depth.min(a.len())].to_vec())
                .collect(),
        }
    }

    pub fn is_prefix_of(&self, other: &BitCode) -> bool {
        self.dim() == other.dim()
            && self
                .axes
                .iter()
                .zip(&other.axes)
                .all(|(a, b)| b.starts_with(a))
    }
}

impl fmt::Display for BitCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, axis) in self.axes.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            for &b in axis {
                f.write_str(if b { "1" } else { "0" })?;
            }
        }
        Ok(())
    }
}

/// Where and why a self-reinforcement code stopped early on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Halt {
    /// 1-based level whose bit fell in the band.
    pub level: usize,
    pub outcome: BitOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisEncoding {
    pub bits: Vec<bool>,
    pub halt: Option<Halt>,
}

/// Self-reinforcement code: axes that hit the band are truncated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfEncoding {
    pub axes: Vec<AxisEncoding>,
}

impl SelfEncoding {
    pub fn is_complete(&self) -> bool {
        self.axes.iter().all(|a| a.halt.is_none())
    }

    pub fn dropped(&self) -> bool {
        self.axes.iter().any(|a| {
            matches!(
                a.halt,
                Some(Halt {
                    outcome: BitOutcome::Dropped,
                    ..
                })
            )
        })
    }

    pub fn into_code(self) -> Option<BitCode> {
        if !self.is_complete() {
            return None;
        }
        Some(BitCode {
            axes: self.axes.into_iter().map(|a| a.bits).collect(),
        })
    }
}

/// Self-reinforcement feedback for one sample after band handling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Feedback {
    /// A full code; `deferred` counts bits supplied by the external world.
    Code {
        code: BitCode,
        deferred: usize,
    },
    Dropped {
        axis: usize,
        level: usize,
    },
}

/// Validated bounds and parameters. All methods are infallible once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    bounds: SpaceBounds,
    params: GridParams,
}

impl Grid {
    pub fn new(bounds: SpaceBounds, params: GridParams) -> Result<Self> {
        let v = params.violations(&bounds, "grid");
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        Ok(Grid { bounds, params })
    }

    pub fn bounds(&self) -> &SpaceBounds {
        &self.bounds
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn depth(&self) -> usize {
        self.params.n
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Same bounds, different depth. Validation is rerun because deeper
    /// levels can push an offset midline out of its subspace.
    pub fn with_depth(&self, n: usize) -> Result<Grid> {
        Grid::new(
            self.bounds.clone(),
            GridParams {
                n,
                ..self.params.clone()
            },
        )
    }

    #[inline]
    pub(crate) fn mid(&self, axis: usize, iv: Interval) -> f64 {
        raw_midline(iv, self.params.eta[axis])
    }

    /// Interaction code of a position (clamped into the bounds first).
    pub fn encode(&self, point: &[f64]) -> BitCode {
        debug_assert_eq!(point.len(), self.dim());
        let axes = (0..self.dim())
            .map(|a| {
                let z = point[a];
                let mut iv = self.bounds.axis(a);
                let mut bits = Vec::with_capacity(self.params.n);
                for _ in 0..self.params.n {
                    let m = self.mid(a, iv);
                    let b = iv.clamp(z) >= m;
                    bits.push(b);
                    iv = iv.split(m, b);
                }
                bits
            })
            .collect();
        BitCode { axes }
    }

    /// Self-reinforcement code. A band hit at level `j` stops that axis with
    /// `j - 1` bits and records the outcome.
    pub fn encode_self(&self, point: &[f64]) -> SelfEncoding {
        debug_assert_eq!(point.len(), self.dim());
        let p = &self.params;
        let axes = (0..self.dim())
            .map(|a| {
                let z = point[a];
                let mut iv = self.bounds.axis(a);
                let mut bits = Vec::with_capacity(p.n);
                for level in 1..=p.n {
                    let m = self.mid(a, iv);
                    match self_bit(iv.clamp(z), m, p.epsilon, p.band_policy) {
                        BitOutcome::Bit(b) => {
                            bits.push(b);
                            iv = iv.split(m, b);
                        }
                        outcome => {
                            return AxisEncoding {
                                bits,
                                halt: Some(Halt { level, outcome }),
                            }
                        }
                    }
                }
                AxisEncoding { bits, halt: None }
            })
            .collect();
        SelfEncoding { axes }
    }

    /// Self-reinforcement feedback for `internal`, resolving band hits with
    /// the configured policy. Deferred bits are answered by the interaction
    /// encoder applied to `external` inside the current subspace.
    pub fn feedback(&self, internal: &[f64], external: &[f64]) -> Feedback {
        let p = &self.params;
        let mut axes = Vec::with_capacity(self.dim());
        let mut deferred = 0;
        for a in 0..self.dim() {
            let mut iv = self.bounds.axis(a);
            let mut bits = Vec::with_capacity(p.n);
            for level in 1..=p.n {
                let m = self.mid(a, iv);
                let b = match self_bit(iv.clamp(internal[a]), m, p.epsilon, p.band_policy) {
                    BitOutcome::Bit(b) => b,
                    BitOutcome::Deferred => {
                        deferred += 1;
                        iv.clamp(external[a]) >= m
                    }
                    BitOutcome::Dropped => return Feedback::Dropped { axis: a, level },
                };
                bits.push(b);
                iv = iv.split(m, b);
            }
            axes.push(bits);
        }
        Feedback::Code {
            code: BitCode { axes },
            deferred,
        }
    }

    /// The depth-`code.depth()` cell a code names.
    pub fn cell(&self, code: &BitCode) -> Vec<Interval> {
        (0..self.dim())
            .map(|a| {
                code.axis(a)
                    .iter()
                    .fold(self.bounds.axis(a), |iv, &b| iv.split(self.mid(a, iv), b))
            })
            .collect()
    }

    /// Sorted reference lines of depth `1..=n` on one axis (`2^n - 1` of them).
    pub fn reference_lines(&self, axis: usize) -> Vec<f64> {
        let mut lines = Vec::with_capacity((1usize << self.params.n).saturating_sub(1));
        let mut stack = vec![(self.bounds.axis(axis), 0usize)];
        while let Some((iv, depth)) = stack.pop() {
            if depth >= self.params.n {
                continue;
            }
            let m = self.mid(axis, iv);
            lines.push(m);
            stack.push((iv.split(m, false), depth + 1));
            stack.push((iv.split(m, true), depth + 1));
        }
        lines.sort_by(f64::total_cmp);
        lines
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    #[test]
    fn midline_examples() {
        assert_eq!(midline(iv(0.0, 10.0), 1.0).unwrap(), 5.0);
        assert_eq!(midline(iv(0.0, 10.0), 0.8).unwrap(), 4.0);
        assert_eq!(midline(iv(2.0, 6.0), 1.0).unwrap(), 4.0);
    }

    #[test]
    fn midline_outside_is_config_error() {
        let err = midline(iv(5.0, 10.0), 0.6).unwrap_err();
        assert!(err.is_config(), "{err}");
        assert!(midline(iv(0.0, 10.0), 2.0).is_err());
    }

    #[test]
    fn child_bounds_examples() {
        let c = child_bounds(iv(0.0, 10.0), 1.0, true).unwrap();
        assert_eq!((c.lo, c.hi), (5.0, 10.0));
        let c = child_bounds(iv(0.0, 10.0), 1.0, false).unwrap();
        assert_eq!((c.lo, c.hi), (0.0, 5.0));
        assert!(c.hi_open);
        let c = child_bounds(iv(5.0, 10.0), 1.0, false).unwrap();
        assert_eq!((c.lo, c.hi), (5.0, 7.5));
    }

    #[test]
    fn children_partition_parent() {
        let p = iv(-3.0, 7.0);
        let lo = child_bounds(p, 1.1, false).unwrap();
        let hi = child_bounds(p, 1.1, true).unwrap();
        assert_eq!(lo.lo, p.lo);
        assert_eq!(hi.hi, p.hi);
        assert_eq!(lo.hi, hi.lo);
        assert!(!lo.contains(lo.hi) && hi.contains(hi.lo));
    }

    #[test]
    fn inter_examples() {
        let r = iv(0.0, 10.0);
        assert!(encode_bit_inter(7.0, r, 1.0).unwrap());
        assert!(encode_bit_inter(5.0, r, 1.0).unwrap());
        assert!(!encode_bit_inter(4.9, r, 1.0).unwrap());
        // clamped before encoding
        assert!(encode_bit_inter(42.0, r, 1.0).unwrap());
        assert!(!encode_bit_inter(-1.0, r, 1.0).unwrap());
    }

    #[test]
    fn self_examples() {
        let r = iv(0.0, 10.0);
        use BandPolicy::*;
        assert_eq!(
            encode_bit_self(5.3, r, 1.0, 0.2, Dropout).unwrap(),
            BitOutcome::Bit(true)
        );
        assert_eq!(
            encode_bit_self(5.1, r, 1.0, 0.2, Dropout).unwrap(),
            BitOutcome::Dropped
        );
        assert_eq!(
            encode_bit_self(5.1, r, 1.0, 0.2, FallbackToInteraction).unwrap(),
            BitOutcome::Deferred
        );
        assert_eq!(
            encode_bit_self(4.7, r, 1.0, 0.2, Dropout).unwrap(),
            BitOutcome::Bit(false)
        );
    }

    #[test]
    fn self_tie_at_midline_is_band_even_without_epsilon() {
        let r = iv(0.0, 10.0);
        assert_eq!(
            encode_bit_self(5.0, r, 1.0, 0.0, BandPolicy::Dropout).unwrap(),
            BitOutcome::Dropped
        );
    }

    #[test]
    fn encode_code_examples() {
        let g = Grid::new(
            SpaceBounds::cube(1, 0.0, 10.0).unwrap(),
            GridParams::centered(2, 1),
        )
        .unwrap();
        assert_eq!(g.encode(&[7.5]).axis(0), &[true, true]);
        assert_eq!(g.encode(&[3.1]).axis(0), &[false, true]);
        let g0 = g.with_depth(0).unwrap();
        assert_eq!(g0.encode(&[3.1]).depth(), 0);
        assert_eq!(g0.encode(&[3.1]), BitCode::empty(1));
    }

    #[test]
    fn self_encoding_truncates_at_band() {
        let mut p = GridParams::centered(3, 1);
        p.epsilon = 0.2;
        let g = Grid::new(SpaceBounds::cube(1, 0.0, 10.0).unwrap(), p).unwrap();
        // level 1 ok (6.3 > 5.2), level 2 midline 7.5 ok, level 3 midline 6.25 hit
        let e = g.encode_self(&[6.3]);
        assert_eq!(e.axes[0].bits, vec![true, false]);
        assert_eq!(
            e.axes[0].halt,
            Some(Halt {
                level: 3,
                outcome: BitOutcome::Dropped
            })
        );
        assert!(e.dropped());
        assert!(e.into_code().is_none());
    }

    #[test]
    fn feedback_defers_to_external_bits() {
        let mut p = GridParams::centered(2, 1);
        p.epsilon = 0.3;
        p.band_policy = BandPolicy::FallbackToInteraction;
        let g = Grid::new(SpaceBounds::cube(1, 0.0, 10.0).unwrap(), p).unwrap();
        // internal 5.1 is inside the band, the external world says 4.0
        match g.feedback(&[5.1], &[4.0]) {
            Feedback::Code { code, deferred } => {
                assert_eq!(deferred, 1);
                assert_eq!(code.axis(0), &[false, true]);
            }
            other => panic!("unexpected {other:?}"),
        }
        p = g.params().clone();
        p.band_policy = BandPolicy::Dropout;
        let g = Grid::new(g.bounds().clone(), p).unwrap();
        assert_eq!(
            g.feedback(&[5.1], &[4.0]),
            Feedback::Dropped { axis: 0, level: 1 }
        );
    }

    #[test]
    fn validation_collects_every_violation() {
        let b = SpaceBounds::cube(2, 0.0, 10.0).unwrap();
        let mut p = GridParams::centered(3, 2);
        p.lambda = vec![0.4, 0.5];
        p.epsilon = 5.0;
        let v = p.violations(&b, "grid");
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v[0].contains("lambda must exceed 0.5"));
        assert!(v.iter().any(|s| s.starts_with("grid.epsilon")));
    }

    #[test]
    fn escaping_offset_midline_is_rejected() {
        let b = SpaceBounds::cube(1, 0.0, 10.0).unwrap();
        let mut p = GridParams::centered(1, 1);
        p.eta = vec![1.4];
        assert!(Grid::new(b.clone(), p.clone()).is_ok());
        p.n = 2; // [7, 10] has midline 8.5 * 1.4 = 11.9
        let err = Grid::new(b, p).unwrap_err();
        assert!(err.to_string().contains("grid.eta[0]"), "{err}");
    }

    #[test]
    fn reference_lines_centered() {
        let g = Grid::new(
            SpaceBounds::cube(1, 0.0, 8.0).unwrap(),
            GridParams::centered(3, 1),
        )
        .unwrap();
        assert_eq!(
            g.reference_lines(0),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        );
    }

    #[test]
    fn cell_locates_code() {
        let g = Grid::new(
            SpaceBounds::cube(2, 0.0, 10.0).unwrap(),
            GridParams::centered(2, 2),
        )
        .unwrap();
        let cell = g.cell(&g.encode(&[3.1, 9.0]));
        assert_eq!((cell[0].lo, cell[0].hi), (2.5, 5.0));
        assert_eq!((cell[1].lo, cell[1].hi), (7.5, 10.0));
        assert!(cell[0].contains(3.1) && cell[1].contains(9.0));
    }

    #[test]
    fn bounds_serde_as_pairs() {
        let b: SpaceBounds = serde_json::from_str("[[0, 10], [-1, 1]]").unwrap();
        assert_eq!(b.dim(), 2);
        assert_eq!(
            serde_json::to_string(&b).unwrap(),
            "[[0.0,10.0],[-1.0,1.0]]"
        );
        assert!(serde_json::from_str::<SpaceBounds>("[[3, 1]]").is_err());
    }
}
