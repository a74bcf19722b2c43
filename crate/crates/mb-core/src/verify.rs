//! Cross-checks between the determinant oracle and the analytic constants:
//! least-squares extraction of the `C1 n^2 + C2 n + C3 log n + C4` expansion
//! from sweeps, convergence reports for the norming-constant prediction, and
//! closed-form reference values for the explicitly solvable linear case.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::asymptotics::{constants, kappa_inv_sq_prediction};
use crate::ensemble::ValidatedSpec;
use crate::equilibrium::{solve_coefficients, EquilibriumError};
use crate::oracle::{det_sweep, DeterminantRecord, OracleError, PrecisionPolicy};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("design matrix rank-deficient: {detail}")]
    RankDeficient { detail: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Which regressors entered the fit.  The four expansion terms are always
/// present; the remainder column `n^{-(1-4*beta_max)}` is optional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegressorSet {
    pub quadratic: bool,
    pub linear: bool,
    pub log_n: bool,
    pub constant: bool,
    pub inverse_n: bool,
}

/// Fitted expansion coefficients for one real data track (either the log
/// magnitude or, for complex weights, the unwrapped phase).
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub fitted_c1: f64,
    pub fitted_c2: f64,
    pub fitted_c3: f64,
    pub fitted_c4: f64,
    pub residual_rms: f64,
    pub n_range: (usize, usize),
    pub regressors_used: RegressorSet,
}

/// Least squares of `log|D_n|` on `{n^2, n, log n, 1}`, optionally extended
/// by the remainder regressor `n^{-(1-4*beta_max)}` (pass `beta_max = 0`
/// when no jump exponents are present).
pub fn fit_constants(
    records: &[DeterminantRecord],
    use_inverse_n: bool,
    beta_max: f64,
) -> Result<FitResult, VerifyError> {
    let ys: Vec<f64> = records.iter().map(|r| r.log_abs).collect();
    fit_series(records, &ys, use_inverse_n, beta_max)
}

/// Same design matrix fitted to the unwrapped phase track; recovers the
/// imaginary parts of `C2 .. C4` for genuinely complex weights.
pub fn fit_phase(
    records: &[DeterminantRecord],
    use_inverse_n: bool,
    beta_max: f64,
) -> Result<FitResult, VerifyError> {
    let ys: Vec<f64> = records.iter().map(|r| r.phase).collect();
    fit_series(records, &ys, use_inverse_n, beta_max)
}

fn fit_series(
    records: &[DeterminantRecord],
    ys: &[f64],
    use_inverse_n: bool,
    beta_max: f64,
) -> Result<FitResult, VerifyError> {
    let ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    if ns.iter().collect::<HashSet<_>>().len() != ns.len() {
        return Err(VerifyError::RankDeficient {
            detail: "duplicate n values in the record set".into(),
        });
    }
    let n_cols = if use_inverse_n { 5 } else { 4 };
    if ns.len() < n_cols + 2 {
        return Err(VerifyError::RankDeficient {
            detail: format!(
                "{} records for {} regressors; need at least {}",
                ns.len(),
                n_cols,
                n_cols + 2
            ),
        });
    }
    let remainder_exp = 1.0 - 4.0 * beta_max;
    if use_inverse_n && remainder_exp <= 0.0 {
        return Err(VerifyError::RankDeficient {
            detail: format!("remainder exponent 1 - 4*beta_max = {remainder_exp} is not positive"),
        });
    }

    let rows = ns.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n_cols);
    cols.push(ns.iter().map(|&n| (n * n) as f64).collect());
    cols.push(ns.iter().map(|&n| n as f64).collect());
    cols.push(ns.iter().map(|&n| (n as f64).ln()).collect());
    cols.push(vec![1.0; rows]);
    if use_inverse_n {
        cols.push(ns.iter().map(|&n| (n as f64).powf(-remainder_exp)).collect());
    }

    let beta = least_squares(&mut cols, ys)?;

    let fitted = |i: usize| beta.get(i).copied().unwrap_or(0.0);
    let mut ss = 0.0;
    for r in 0..rows {
        let model: f64 = (0..n_cols).map(|c| beta[c] * cols[c][r]).sum();
        ss += (ys[r] - model).powi(2);
    }
    Ok(FitResult {
        fitted_c1: fitted(0),
        fitted_c2: fitted(1),
        fitted_c3: fitted(2),
        fitted_c4: fitted(3),
        residual_rms: (ss / rows as f64).sqrt(),
        n_range: (
            *ns.iter().min().expect("nonempty"),
            *ns.iter().max().expect("nonempty"),
        ),
        regressors_used: RegressorSet {
            quadratic: true,
            linear: true,
            log_n: true,
            constant: true,
            inverse_n: use_inverse_n,
        },
    })
}

/// Dense least squares via modified Gram-Schmidt QR with column scaling.
/// `cols` is overwritten.  Sizes here are tiny (<= 5 columns).
fn least_squares(cols: &mut [Vec<f64>], y: &[f64]) -> Result<Vec<f64>, VerifyError> {
    let m = cols.len();

    let mut scales = vec![0.0; m];
    for (j, col) in cols.iter_mut().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(VerifyError::RankDeficient {
                detail: format!("column {j} has zero or non-finite norm"),
            });
        }
        scales[j] = norm;
        col.iter_mut().for_each(|v| *v /= norm);
    }

    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r = vec![vec![0.0; m]; m];
    for j in 0..m {
        let mut v = cols[j].clone();
        // two orthogonalization passes keep Q orthonormal despite the
        // near-collinear {n^2, n, log n, 1} design
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let dot: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
                r[i][j] += dot;
                v.iter_mut().zip(qi).for_each(|(vv, qq)| *vv -= dot * qq);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(VerifyError::RankDeficient {
                detail: format!("column {j} is numerically collinear (residual norm {norm:.2e})"),
            });
        }
        r[j][j] = norm;
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }

    // back-substitute R beta = Q^T y, then undo the column scaling
    let qty: Vec<f64> = q
        .iter()
        .map(|qi| qi.iter().zip(y).map(|(a, b)| a * b).sum())
        .collect();
    let mut beta = vec![0.0; m];
    for j in (0..m).rev() {
        let tail: f64 = (j + 1..m).map(|k| r[j][k] * beta[k]).sum();
        beta[j] = (qty[j] - tail) / r[j][j];
    }
    for j in 0..m {
        beta[j] /= scales[j];
    }
    // restore caller-visible columns to their unscaled values for residuals
    for (j, col) in cols.iter_mut().enumerate() {
        col.iter_mut().for_each(|v| *v *= scales[j]);
    }
    Ok(beta)
}

/// One row of the norming-constant convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct KappaRow {
    pub n: usize,
    pub oracle_inv_sq: f64,
    pub predicted_inv_sq: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaReport {
    pub rows: Vec<KappaRow>,
    /// `|ratio - 1|` non-increasing across the listed n beyond 8.
    pub deviation_decreasing_beyond_8: bool,
    /// `|ratio - 1| <= 0.5/n` at the largest listed n.
    pub largest_within_half_over_n: bool,
}

/// Compare the exact `kappa_n^{-2} = D_{n+1}/D_n` against its predicted
/// leading behavior for every listed `n`.  Positive-weight configurations
/// only (the prediction and the ratios are then real).
pub fn kappa_convergence_report(
    spec: &ValidatedSpec,
    policy: &PrecisionPolicy,
    n_list: &[usize],
) -> Result<KappaReport, VerifyError> {
    assert!(
        spec.spec().is_positive_weight(),
        "kappa convergence report is defined for positive weights"
    );
    let mut ns: Vec<usize> = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    assert!(!ns.is_empty() && ns[0] >= 1, "need at least one n >= 1");

    let s = spec.spec();
    let data = solve_coefficients(s.a, s.b, s.theta, 1e-13)?;
    let consts = constants(spec, &data)?;

    let (n_lo, n_hi) = (ns[0], *ns.last().expect("nonempty") + 1);
    let records = det_sweep(spec, n_lo, n_hi, policy)?;

    let rows: Vec<KappaRow> = ns
        .iter()
        .map(|&n| {
            let la = records[n - n_lo].log_abs;
            let la_next = records[n + 1 - n_lo].log_abs;
            let oracle_inv_sq = (la_next - la).exp();
            let predicted_inv_sq = kappa_inv_sq_prediction(n, &data, &consts).re;
            KappaRow {
                n,
                oracle_inv_sq,
                predicted_inv_sq,
                ratio: oracle_inv_sq / predicted_inv_sq,
            }
        })
        .collect();

    let devs: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.n >= 8)
        .map(|r| (r.n, (r.ratio - 1.0).abs()))
        .collect();
    let deviation_decreasing_beyond_8 = devs.windows(2).all(|w| w[1].1 <= w[0].1);
    let largest_within_half_over_n = devs
        .last()
        .map(|&(n, d)| d <= 0.5 / n as f64)
        .unwrap_or(false);

    Ok(KappaReport {
        rows,
        deviation_decreasing_beyond_8,
        largest_within_half_over_n,
    })
}

/// Closed-form reference values for the explicitly solvable `theta = 1`
/// case, used as cross-module goldens.
#[derive(Debug, Clone, Serialize)]
pub struct Theta1Reference {
    pub c0: f64,
    pub c1: f64,
    /// `|s|` on the spectral curve, constant for `theta = 1`.
    pub i1_plus_abs: f64,
    /// Leading constant `log((b - a)/4)`.
    pub c1_const: f64,
    /// `log(2 pi)` for the unit weight.
    pub c2_const: f64,
    pub c3_const: f64,
    /// `(x, rho(x))` at the three quartiles of `[a, b]`.
    pub rho_samples: Vec<(f64, f64)>,
}

pub fn theta1_reference(a: f64, b: f64) -> Theta1Reference {
    assert!(a > 0.0 && b > a, "need 0 < a < b");
    let (sa, sb) = (a.sqrt(), b.sqrt());
    let c0 = 0.25 * (sb + sa).powi(2);
    let c1 = 0.25 * (sb - sa).powi(2);
    let rho_samples = [0.25, 0.5, 0.75]
        .iter()
        .map(|q| {
            let x = a + q * (b - a);
            (x, 1.0 / (std::f64::consts::PI * ((x - a) * (b - x)).sqrt()))
        })
        .collect();
    Theta1Reference {
        c0,
        c1,
        i1_plus_abs: (c0 / c1).sqrt(),
        c1_const: ((b - a) / 4.0).ln(),
        c2_const: (2.0 * std::f64::consts::PI).ln(),
        c3_const: -0.25,
        rho_samples,
    }
}
