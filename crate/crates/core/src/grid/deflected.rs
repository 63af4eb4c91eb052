//! Two-dimensional encoder and corrector for a self-built frame whose axes
//! are deflected by `alpha` (x-axis) and `beta` (y-axis).
//!
//! The x bit is a half-plane test against the deflected y'-axis through the
//! offset reference center; the y bit uses the deflected x'-axis. Writing the
//! boundary as a half-plane avoids the `cot(beta)` / `tan(alpha)` slope form,
//! which is undefined at zero deflection.

use serde::{Deserialize, Serialize};

use super::{midline, GridParams, SpaceBounds};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaneAxis {
    X,
    Y,
}

fn reference_center(bounds: &SpaceBounds, params: &GridParams) -> Result<[f64; 2]> {
    if bounds.dim() != 2 || params.eta.len() != 2 {
        return Err(Error::Shape(format!(
            "deflected operators are planar, got {} axes",
            bounds.dim()
        )));
    }
    Ok([
        midline(bounds.axis(0), params.eta[0])?,
        midline(bounds.axis(1), params.eta[1])?,
    ])
}

/// Unit normal of the boundary line used for `axis`.
fn normal(params: &GridParams, axis: PlaneAxis) -> [f64; 2] {
    match axis {
        PlaneAxis::X => [params.beta.cos(), params.beta.sin()],
        PlaneAxis::Y => [-params.alpha.sin(), params.alpha.cos()],
    }
}

/// Bit of `point` on `axis`; a point on the boundary line encodes as 1.
pub fn encode_bit_deflected(
    point: [f64; 2],
    bounds: &SpaceBounds,
    params: &GridParams,
    axis: PlaneAxis,
) -> Result<bool> {
    let c = reference_center(bounds, params)?;
    let p = bounds.clamp(&point);
    let n = normal(params, axis);
    Ok(n[0] * (p[0] - c[0]) + n[1] * (p[1] - c[1]) >= 0.0)
}

/// Corrected coordinate on `axis`: the matching component of the mirror
/// image of `(x_pred, y_pred)` about the boundary line for that axis.
pub fn correct_axis_deflected(
    x_pred: f64,
    y_pred: f64,
    bounds: &SpaceBounds,
    params: &GridParams,
    axis: PlaneAxis,
) -> Result<f64> {
    let c = reference_center(bounds, params)?;
    let fx = c[0] - x_pred;
    let fy = c[1] - y_pred;
    Ok(match axis {
        PlaneAxis::X => {
            let (s, co) = params.beta.sin_cos();
            x_pred + 2.0 * co * co * fx + 2.0 * s * co * fy
        }
        PlaneAxis::Y => {
            let (s, co) = params.alpha.sin_cos();
            y_pred + 2.0 * co * co * fy - 2.0 * s * co * fx
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn square() -> SpaceBounds {
        SpaceBounds::cube(2, 0.0, 10.0).unwrap()
    }

    fn angles(alpha_deg: f64, beta_deg: f64) -> GridParams {
        GridParams {
            alpha: alpha_deg.to_radians(),
            beta: beta_deg.to_radians(),
            ..GridParams::centered(1, 2)
        }
    }

    #[test]
    fn zero_deflection_reduces_to_main_rule() {
        assert!(
            encode_bit_deflected([7.0, 3.0], &square(), &angles(0.0, 0.0), PlaneAxis::X).unwrap()
        );
        assert!(
            !encode_bit_deflected([7.0, 3.0], &square(), &angles(0.0, 0.0), PlaneAxis::Y).unwrap()
        );
        let x =
            correct_axis_deflected(2.0, 3.0, &square(), &angles(0.0, 0.0), PlaneAxis::X).unwrap();
        assert_eq!(x, 8.0);
    }

    #[test]
    fn point_on_line_encodes_one() {
        for axis in [PlaneAxis::X, PlaneAxis::Y] {
            assert!(
                encode_bit_deflected([5.0, 5.0], &square(), &angles(20.0, 35.0), axis).unwrap()
            );
        }
    }

    #[test]
    fn thirty_degree_correction() {
        let x =
            correct_axis_deflected(2.0, 3.0, &square(), &angles(0.0, 30.0), PlaneAxis::X).unwrap();
        let s = 30f64.to_radians().sin();
        let c = 30f64.to_radians().cos();
        assert_abs_diff_eq!(x, 2.0 + 1.5 * 3.0 + 2.0 * s * c * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_center_is_fixed() {
        let p = angles(17.0, -40.0);
        for axis in [PlaneAxis::X, PlaneAxis::Y] {
            let v = correct_axis_deflected(5.0, 5.0, &square(), &p, axis).unwrap();
            assert_abs_diff_eq!(v, 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_planar_bounds() {
        let b = SpaceBounds::cube(3, 0.0, 1.0).unwrap();
        assert!(
            encode_bit_deflected([0.2, 0.2], &b, &GridParams::centered(1, 3), PlaneAxis::X)
                .is_err()
        );
    }
}
