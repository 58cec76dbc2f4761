//! Outage-optimal elevation angle and UAV altitude under DF relaying.
//!
//! The DF outage is 1 − Q₁(x, y)·(1 − F₂(γ_th)), and only Q₁ depends on the
//! elevation, so the optimum follows from the RF hop alone.

use std::f64::consts::FRAC_PI_2;

use crate::channel::{Geometry, RfLinkParams};
use crate::error::{domain, invalid, Error, Result};
use crate::metrics::outage_df;
use crate::specfun::{bessel_i_scaled, marcum_q1};
use crate::stats::LinkEnsemble;

/// Solution of the altitude optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltitudeSolution {
    pub theta_opt: f64,
    pub h_opt: f64,
    pub op_at_opt: f64,
    pub iterations: usize,
    /// Bracket value at the returned angle.
    pub residual: f64,
}

/// Marcum-Q arguments and their elevation derivatives.
struct MarcumArgs {
    x: f64,
    y: f64,
    /// Bracketed factor of dQ/dθ; dQ/dθ = y·e^{-(x²+y²)/2}·I₀(xy)·bracket.
    bracket: f64,
}

fn marcum_args(theta: f64, r1: f64, rf: &RfLinkParams, threshold: f64, avg_snr1: f64) -> Result<MarcumArgs> {
    if !(theta > 0.0 && theta < FRAC_PI_2) {
        return Err(domain("marcum_theta_derivative", format!("elevation {theta} outside (0, pi/2)")));
    }
    if !(r1 > 0.0) {
        return Err(invalid("r1", format!("{r1} must be positive")));
    }
    let k = rf.k_factor(theta);
    let dk = rf.k_slope() * k;
    let alpha = rf.pathloss_exponent(theta)?;
    let dalpha = rf.pathloss_exponent_derivative(theta)?;
    let d = r1 / theta.cos() / rf.ref_distance;
    let loss = rf.path_loss_const * d.powf(alpha);
    let x = (2.0 * k).sqrt();
    let y = (2.0 * threshold * (1.0 + k) * loss / avg_snr1).sqrt();
    let xy = x * y;
    let ratio = bessel_i_scaled(1, xy)? / bessel_i_scaled(0, xy)?;
    let bracket = ratio * dk / x - 0.5 * y * (dk / (1.0 + k) + dalpha * d.ln() + alpha * theta.tan());
    Ok(MarcumArgs { x, y, bracket })
}

/// dQ₁(x(θ), y(θ))/dθ for the RF hop at horizontal distance r1.
pub fn marcum_theta_derivative(
    theta: f64,
    r1: f64,
    rf: &RfLinkParams,
    threshold: f64,
    avg_snr1: f64,
) -> Result<f64> {
    let MarcumArgs { x, y, bracket } = marcum_args(theta, r1, rf, threshold, avg_snr1)?;
    let ln_pref = y.ln() - 0.5 * (x - y) * (x - y) + bessel_i_scaled(0, x * y)?.ln();
    let v = ln_pref.exp() * bracket;
    if !v.is_finite() {
        return Err(domain("marcum_theta_derivative", "overflow"));
    }
    Ok(v)
}

/// Q₁(x(θ), y(θ)): probability that the RF hop is not in outage.
pub fn rf_success(theta: f64, r1: f64, rf: &RfLinkParams, threshold: f64, avg_snr1: f64) -> Result<f64> {
    let a = marcum_args(theta, r1, rf, threshold, avg_snr1)?;
    marcum_q1(a.x, a.y)
}

const SCAN_POINTS: usize = 600;
const EDGE: f64 = 1e-3;

/// Elevation maximizing Q₁, the root of the bracketed derivative factor.
/// Takes no optical-hop parameters: the optimum does not depend on them.
pub fn optimal_elevation(r1: f64, rf: &RfLinkParams, threshold: f64, avg_snr1: f64) -> Result<(f64, usize, f64)> {
    rf.validate()?;
    if !(threshold > 0.0) || !(avg_snr1 > 0.0) {
        return Err(invalid("threshold/avg_snr1", "must be positive"));
    }
    let f = |t: f64| marcum_args(t, r1, rf, threshold, avg_snr1).map(|a| a.bracket);
    let lo = EDGE;
    let hi = FRAC_PI_2 - EDGE;
    let step = (hi - lo) / SCAN_POINTS as f64;
    let mut prev_t = lo;
    let mut prev = f(lo)?;
    let first = prev;
    // The maximizer is the last crossing from + to −.
    let mut bracket = None;
    for i in 1..=SCAN_POINTS {
        let t = lo + step * i as f64;
        let v = f(t)?;
        if prev > 0.0 && v <= 0.0 {
            bracket = Some((prev_t, t, prev, v));
        }
        prev_t = t;
        prev = v;
    }
    let (mut a, mut b, mut fa, mut fb) = bracket.ok_or(Error::NoInteriorOptimum {
        lo,
        hi,
        lo_sign: first.signum(),
        hi_sign: prev.signum(),
    })?;
    let mut iterations = 0;
    let mut best = (a, fa);
    while iterations < 200 {
        iterations += 1;
        // Secant step, falling back to bisection when it leaves the bracket.
        let mut t = if fb != fa { b - fb * (b - a) / (fb - fa) } else { 0.5 * (a + b) };
        if !(t > a && t < b) || iterations % 3 == 0 {
            t = 0.5 * (a + b);
        }
        let v = f(t)?;
        best = (t, v);
        if v == 0.0 || (b - a) < 1e-15 {
            break;
        }
        if v > 0.0 {
            a = t;
            fa = v;
        } else {
            b = t;
            fb = v;
        }
        if v.abs() <= 1e-13 && (b - a) < 1e-12 {
            break;
        }
    }
    Ok((best.0, iterations, best.1.abs()))
}

/// Optimal elevation and altitude; the outage at the optimum is evaluated on
/// `ens` (DF relaying) with its geometry replaced.
pub fn optimal_altitude(r1: f64, threshold: f64, ens: &LinkEnsemble) -> Result<AltitudeSolution> {
    let (theta, iterations, residual) = optimal_elevation(r1, &ens.rf, threshold, ens.avg_snr1)?;
    let h = r1 * theta.tan();
    let geom = Geometry::new(h, r1)?;
    let op = outage_df(threshold, &ens.with_geometry(geom))?;
    Ok(AltitudeSolution {
        theta_opt: theta,
        h_opt: h,
        op_at_opt: op,
        iterations,
        residual,
    })
}

/// Brute-force minimization of the DF outage over an altitude grid; returns
/// the best altitude and the grid spacing.
pub fn grid_optimal_altitude(
    r1: f64,
    threshold: f64,
    ens: &LinkEnsemble,
    h_lo: f64,
    h_hi: f64,
    points: usize,
) -> Result<(f64, f64)> {
    if !(h_lo > 0.0 && h_hi > h_lo) || points < 2 {
        return Err(invalid("altitude grid", format!("[{h_lo}, {h_hi}] with {points} points")));
    }
    let cell = (h_hi - h_lo) / (points - 1) as f64;
    let mut best = (f64::NAN, f64::INFINITY);
    for i in 0..points {
        let h = h_lo + cell * i as f64;
        let op = outage_df(threshold, &ens.with_geometry(Geometry::new(h, r1)?))?;
        if op < best.1 {
            best = (h, op);
        }
    }
    Ok((best.0, cell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{db_to_linear, egg_table_lookup, LosModel, Water};
    use crate::stats::{reference_ensemble, RelayMode};

    fn table_rf() -> RfLinkParams {
        RfLinkParams {
            los: LosModel::calibrated(),
            ..RfLinkParams::default()
        }
    }

    const TABLE_SNR_DB: f64 = 20.815;

    #[test]
    fn derivative_matches_finite_difference() {
        let rf = table_rf();
        let (gth, g1) = (db_to_linear(1.5), db_to_linear(TABLE_SNR_DB));
        for i in 0..20 {
            let t = 0.15 + 1.3 * i as f64 / 19.0;
            let h = 1e-6;
            let fd = (rf_success(t + h, 900.0, &rf, gth, g1).unwrap() - rf_success(t - h, 900.0, &rf, gth, g1).unwrap())
                / (2.0 * h);
            let d = marcum_theta_derivative(t, 900.0, &rf, gth, g1).unwrap();
            assert!((fd - d).abs() <= 1e-5 * d.abs() + 1e-9, "t={t}: {fd} vs {d}");
        }
    }

    #[test]
    fn sign_change_in_default_scenario() {
        let rf = RfLinkParams::default();
        let (gth, g1) = (db_to_linear(1.5), db_to_linear(15.0));
        let v: Vec<f64> = (0..50)
            .map(|i| marcum_theta_derivative(0.1 + 1.4 * i as f64 / 49.0, 500.0, &rf, gth, g1).unwrap())
            .collect();
        assert!(v.windows(2).any(|w| w[0] > 0.0 && w[1] <= 0.0));
    }

    #[test]
    fn table_rows_and_trend() {
        let rf = table_rf();
        let (gth, g1) = (db_to_linear(1.5), db_to_linear(TABLE_SNR_DB));
        let mut prev = FRAC_PI_2;
        for (r1, want) in [(500.0, 70.9), (1000.0, 62.0), (1500.0, 54.3)] {
            let (t, _, res) = optimal_elevation(r1, &rf, gth, g1).unwrap();
            assert!((t.to_degrees() - want).abs() < 0.2, "r1={r1}: {}", t.to_degrees());
            assert!(res < 1e-10);
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn altitude_is_optical_independent_and_local_minimum() {
        let gth = db_to_linear(1.5);
        let mut ens = reference_ensemble().with_relay(RelayMode::Df).with_avg_snr_db(TABLE_SNR_DB);
        ens.rf = table_rf();
        let a = optimal_altitude(1200.0, gth, &ens).unwrap();
        ens.egg = egg_table_lookup(Water::Salty, 16.5, None).unwrap();
        let b = optimal_altitude(1200.0, gth, &ens).unwrap();
        assert_eq!(a.h_opt.to_bits(), b.h_opt.to_bits());
        assert_eq!(a.h_opt, 1200.0 * a.theta_opt.tan());
        for f in [0.95, 1.05] {
            let op = outage_df(gth, &ens.with_geometry(Geometry::new(b.h_opt * f, 1200.0).unwrap())).unwrap();
            assert!(op >= b.op_at_opt);
        }
        let (hg, cell) = grid_optimal_altitude(1200.0, gth, &ens, 200.0, 4000.0, 200).unwrap();
        assert!((hg - b.h_opt).abs() <= cell);
    }

    #[test]
    fn no_interior_optimum_reported() {
        // Without elevation-dependent gains, raising the UAV only lengthens the link.
        let rf = RfLinkParams {
            k0_db: 10.0,
            k90_db: 10.0,
            a1: -1e-9,
            ..RfLinkParams::default()
        };
        let e = optimal_elevation(800.0, &rf, 1.4, 30.0).unwrap_err();
        assert!(matches!(e, Error::NoInteriorOptimum { .. }));
    }
}
