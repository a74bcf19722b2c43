//! Large-`n` expansion constants of the log determinant.
//!
//! For the weight of an [`EnsembleSpec`](crate::ensemble::EnsembleSpec) the
//! partition-function determinant expands as
//!
//! ```text
//! ln D_n = C1 n^2 + C2 n + C3 ln n + C4 + o(1)
//! ```
//!
//! with `C1`, `C2`, `C3` in closed form from the equilibrium data:
//! `C1 = (ln c1)/2 + theta (ln c0)/2`, `C2` collects the universal
//! `ln(2 pi) - (ln theta)/2 + (1 - theta)(ln c0)/2` part plus one
//! logarithmic-potential term per algebraic singularity and one
//! counting-function term per jump, and `C3 = -1/4 + (a_0^2 + a_{m+1}^2)/2 +
//! sum (a_j^2/4 - b_j^2)`.  The weight-dependent part of `C2` exponentiates
//! to the constant `H0` that also controls the norming-constant recurrence.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::ensemble::{EnsembleSpec, ValidatedSpec};
use crate::equilibrium::{EquilibriumData, EquilibriumError};

/// Closed-form expansion constants for one spec.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticConstants {
    pub c1: f64,
    #[serde(with = "crate::ensemble::complex_pair")]
    pub c2: Complex64,
    #[serde(with = "crate::ensemble::complex_pair")]
    pub c3: Complex64,
    /// Weight-dependent constant `H0 = exp(int W d mu) *
    /// prod e^{alpha_j U(t_j)} * prod e^{i pi beta_j (2 F(t_j) - 1)}`.
    #[serde(with = "crate::ensemble::complex_pair")]
    pub h0: Complex64,
    /// `max_j |Re beta_j|`; controls the expansion's error-term exponent.
    pub beta_max: f64,
}

fn check_match(spec: &EnsembleSpec, data: &EquilibriumData) {
    assert!(
        spec.a == data.a && spec.b == data.b && spec.theta == data.theta,
        "equilibrium data was solved for a different (a, b, theta) than the spec"
    );
}

/// Compute the expansion constants for a validated spec.
pub fn constants(
    spec: &ValidatedSpec,
    data: &EquilibriumData,
) -> Result<AsymptoticConstants, EquilibriumError> {
    let spec = spec.spec();
    check_match(spec, data);

    let mut ln_h0 = Complex64::new(0.0, 0.0);
    if !spec.w_smooth.is_empty() {
        let coeffs = spec.w_smooth.clone();
        ln_h0.re += data.integrate_against_density(
            move |x| crate::ensemble::horner(&coeffs, x),
            256,
        )?;
    }
    // edge algebraic factors contribute alpha * U(edge)
    ln_h0 += spec.alpha_left * data.log_potential(data.a)?;
    ln_h0 += spec.alpha_right * data.log_potential(data.b)?;

    let mut c3 = Complex64::new(-0.25, 0.0)
        + (spec.alpha_left * spec.alpha_left + spec.alpha_right * spec.alpha_right) * 0.5;
    let mut beta_max = 0.0f64;
    for s in &spec.singularities {
        ln_h0 += s.alpha * data.log_potential(s.t)?;
        let centered = 2.0 * data.cdf(s.t)? - 1.0;
        ln_h0 += Complex64::new(0.0, PI) * s.beta * centered;
        c3 += s.alpha * s.alpha * 0.25 - s.beta * s.beta;
        beta_max = beta_max.max(s.beta.re.abs());
    }

    let c1 = 0.5 * data.c1.ln() + 0.5 * data.theta * data.c0.ln();
    let c2 = Complex64::new(
        0.5 * (1.0 - data.theta) * data.c0.ln() - 0.5 * data.theta.ln() + (2.0 * PI).ln(),
        0.0,
    ) + ln_h0;

    Ok(AsymptoticConstants {
        c1,
        c2,
        c3,
        h0: ln_h0.exp(),
        beta_max,
    })
}

/// Predicted squared inverse norming constant,
/// `kappa_n^{-2} ~ 2 pi e^{-n ell} H0 c0 / (theta sqrt(c0 / (c1 theta)))`.
pub fn kappa_inv_sq_prediction(
    n: usize,
    data: &EquilibriumData,
    consts: &AsymptoticConstants,
) -> Complex64 {
    let ln_mag = (2.0 * PI).ln() - n as f64 * data.ell + data.c0.ln()
        - data.theta.ln()
        - 0.5 * ((data.c0 / (data.c1 * data.theta)).ln());
    consts.h0 * ln_mag.exp()
}

/// Predicted mean and variance of the counting function `N_n(t)`:
/// `(n F(t), ln n / (2 pi^2))`.
pub fn predict_counting_stats(
    t: f64,
    n: usize,
    data: &EquilibriumData,
) -> Result<(f64, f64), EquilibriumError> {
    Ok((n as f64 * data.cdf(t)?, (n as f64).ln() / (2.0 * PI * PI)))
}

/// Predicted mean and variance of `ln |p_n(t)|` for the characteristic
/// polynomial at an interior point: `(n U(t), ln n / 2)`.
pub fn predict_logabs_stats(
    t: f64,
    n: usize,
    data: &EquilibriumData,
) -> Result<(f64, f64), EquilibriumError> {
    Ok((n as f64 * data.log_potential(t)?, 0.5 * (n as f64).ln()))
}

/// Classical location `kappa_k`: the `k/n` quantile of the equilibrium
/// measure, found by bisection.  Requires `1 <= k <= n`; `kappa_n = b`.
pub fn classical_location(
    k: usize,
    n: usize,
    data: &EquilibriumData,
) -> Result<f64, EquilibriumError> {
    assert!(k >= 1 && k <= n, "quantile index must satisfy 1 <= k <= n");
    if k == n {
        return Ok(data.b);
    }
    let target = k as f64 / n as f64;
    let (mut lo, mut hi) = (data.a, data.b);
    for _ in 0..80 {
        let midpt = 0.5 * (lo + hi);
        if data.cdf(midpt)? < target {
            lo = midpt;
        } else {
            hi = midpt;
        }
        if hi - lo <= 1e-12 * (data.b - data.a) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
