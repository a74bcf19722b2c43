//! Metropolis sampling of the biorthogonal log-gas and the CLT / rigidity
//! diagnostics computed from sampled configurations.
//!
//! The target law on `(a,b)^n` is
//!
//! ```text
//!   p(x) ∝ prod_{j<k} |x_k - x_j| |x_k^θ - x_j^θ| prod_j w(x_j)
//! ```
//!
//! for the positive base weight `w`.  [`sample`] runs single-site Gaussian
//! random-walk Metropolis with reflection at the interval ends; the step size
//! is tuned during burn-in only, so the recorded stretch of the chain is a
//! genuine Markov chain with the correct stationary law.  Chains with
//! distinct seeds are independent and may run in parallel; a single chain is
//! sequential and bit-reproducible from its seed.

use crate::asymptotics::{classical_location, predict_counting_stats, predict_logabs_stats};
use crate::ensemble::{horner, EnsembleSpec, ValidatedSpec};
use crate::equilibrium::{solve_coefficients, EquilibriumData, EquilibriumError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

/// Minimum pooled effective sample size accepted by [`clt_report`].
pub const MIN_EFFECTIVE_SAMPLES: f64 = 1e4;

/// Pass thresholds for the CLT diagnostics: `|mean|`, `|variance - 1|` and
/// `|cross-correlation|` of the normalized statistics.  Desk-scale choices;
/// the limit theorem itself carries no finite-n error bound.
pub const CLT_MEAN_TOL: f64 = 0.2;
pub const CLT_VAR_TOL: f64 = 0.3;
pub const CLT_CROSS_TOL: f64 = 0.2;

/// Number of grid points used for the sup statistic in [`rigidity_report`].
pub const RIGIDITY_GRID: usize = 512;

const TUNE_WINDOW: usize = 200;
const ACCEPT_LO: f64 = 0.3;
const ACCEPT_HI: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid chain configuration: {detail}")]
    BadChainConfig { detail: String },
    #[error("evaluation point {t} coincides with a sampled point")]
    CoincidesWithPoint { t: f64 },
    #[error("pooled effective sample size {ess:.1} is below the required {required:.0}")]
    InsufficientESS { ess: f64, required: f64 },
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Length, burn-in, thinning, initial step size and seed of one chain.
///
/// `steps` counts single-site proposals; `thin` is measured in the same
/// units, so a value around `n` stores roughly one configuration per sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ChainConfig {
    pub n: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal_sigma: f64,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |detail: String| Err(SamplerError::BadChainConfig { detail });
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.burn_in >= self.steps {
            return fail(format!(
                "burn_in {} must be smaller than steps {}",
                self.burn_in, self.steps
            ));
        }
        if self.thin == 0 {
            return fail("thin must be at least 1".into());
        }
        if self.steps - self.burn_in < self.thin {
            return fail(format!(
                "steps {} after burn_in {} leave no configuration to record at thin {}",
                self.steps, self.burn_in, self.thin
            ));
        }
        if !self.proposal_sigma.is_finite() || self.proposal_sigma <= 0.0 {
            return fail(format!("proposal_sigma {} must be positive", self.proposal_sigma));
        }
        Ok(())
    }
}

/// Recorded output of one chain: sorted configurations strictly inside
/// `(a, b)`, the post-burn-in acceptance rate, and an effective-sample-size
/// estimate from the integrated autocorrelation of the midpoint counting
/// function.  The acceptance rate can reach 1 only for a flat density (a
/// single free particle under the unit weight).
#[derive(Debug, Clone, Serialize)]
pub struct SampleBatch {
    pub configurations: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub ess_estimate: f64,
}

fn assert_base_weight(s: &EnsembleSpec) {
    let ok = s.alpha_left.im == 0.0
        && s.alpha_right.im == 0.0
        && s
            .singularities
            .iter()
            .all(|f| f.alpha.norm_sqr() == 0.0 && f.beta.norm_sqr() == 0.0);
    assert!(
        ok,
        "sampling requires the positive base weight: real edge exponents and no interior singular factors"
    );
}

/// Unnormalized log of the joint density at `config`.
///
/// Requires the positive base weight (real edge exponents, no interior
/// singular factors).  Returns `-inf` for coincident points or points not
/// strictly inside `(a, b)`, so a Metropolis move proposing such a state is
/// rejected without special-casing.
pub fn log_density(config: &[f64], spec: &ValidatedSpec) -> f64 {
    let s = spec.spec();
    assert_base_weight(s);
    let mut total = 0.0;
    for (j, &x) in config.iter().enumerate() {
        if x <= s.a || x >= s.b {
            return f64::NEG_INFINITY;
        }
        total += horner(&s.w_smooth, x);
        total += s.alpha_left.re * (x - s.a).ln();
        total += s.alpha_right.re * (s.b - x).ln();
        for &y in &config[j + 1..] {
            let d = (x - y).abs();
            if d == 0.0 {
                return f64::NEG_INFINITY;
            }
            total += d.ln();
            let dth = if s.theta == 1.0 {
                d
            } else {
                (x.powf(s.theta) - y.powf(s.theta)).abs()
            };
            if dth == 0.0 {
                return f64::NEG_INFINITY;
            }
            total += dth.ln();
        }
    }
    total
}

/// Change in [`log_density`] when `xs[site]` moves to `y`, in O(n).
/// `xth` caches `x^θ` and is unused when `θ = 1`.
fn site_delta(
    s: &EnsembleSpec,
    xs: &[f64],
    xth: &[f64],
    theta_one: bool,
    site: usize,
    y: f64,
    yth: f64,
) -> f64 {
    let x_old = xs[site];
    let mut delta = 0.0;
    for j in 0..xs.len() {
        if j == site {
            continue;
        }
        let dn = (y - xs[j]).abs();
        if dn == 0.0 {
            return f64::NEG_INFINITY;
        }
        let dd = (x_old - xs[j]).abs();
        if theta_one {
            delta += 2.0 * (dn.ln() - dd.ln());
        } else {
            let tn = (yth - xth[j]).abs();
            if tn == 0.0 {
                return f64::NEG_INFINITY;
            }
            let td = (xth[site] - xth[j]).abs();
            delta += dn.ln() - dd.ln() + tn.ln() - td.ln();
        }
    }
    delta += horner(&s.w_smooth, y) - horner(&s.w_smooth, x_old);
    delta += s.alpha_left.re * ((y - s.a).ln() - (x_old - s.a).ln());
    delta += s.alpha_right.re * ((s.b - y).ln() - (s.b - x_old).ln());
    delta
}

/// Fold a proposal back into `(a, b)` by reflection.  `None` when the folded
/// value lands exactly on an endpoint: the move is rejected upstream rather
/// than evaluated there, which matters for negative edge exponents.
fn reflect_into(mut y: f64, a: f64, b: f64) -> Option<f64> {
    if !y.is_finite() {
        return None;
    }
    let mut guard = 0;
    while y <= a || y >= b {
        if y == a || y == b {
            return None;
        }
        y = if y < a { 2.0 * a - y } else { 2.0 * b - y };
        guard += 1;
        if guard > 64 {
            return None;
        }
    }
    Some(y)
}

fn equilibrium_quantile(data: &EquilibriumData, q: f64) -> Result<f64, EquilibriumError> {
    let (mut lo, mut hi) = (data.a, data.b);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if data.cdf(mid)? < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Run one Metropolis chain and record every `thin`-th configuration after
/// burn-in, sorted ascending.
///
/// The chain starts from the equilibrium quantiles `(k - 1/2)/n`, proposes
/// single-site Gaussian moves reflected into `(a, b)`, and accepts on the
/// exact [`log_density`] difference.  During burn-in the step size is
/// retuned every 200 proposals toward an acceptance rate in `[0.3, 0.5]`
/// and is frozen afterwards.  Identical `ChainConfig` (including the seed)
/// reproduces the batch bit for bit.
pub fn sample(spec: &ValidatedSpec, cfg: &ChainConfig) -> Result<SampleBatch, SamplerError> {
    cfg.validate()?;
    let s = spec.spec();
    assert_base_weight(s);
    let data = solve_coefficients(s.a, s.b, s.theta, 1e-13)?;

    let n = cfg.n;
    let mut xs = Vec::with_capacity(n);
    for k in 1..=n {
        xs.push(equilibrium_quantile(&data, (k as f64 - 0.5) / n as f64)?);
    }
    let theta_one = s.theta == 1.0;
    let mut xth: Vec<f64> = if theta_one {
        Vec::new()
    } else {
        xs.iter().map(|&x| x.powf(s.theta)).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = s.b - s.a;
    let mut sigma = cfg.proposal_sigma.min(width);
    let sigma_floor = 1e-6 * width;
    let mut stored: Vec<Vec<f64>> = Vec::with_capacity((cfg.steps - cfg.burn_in) / cfg.thin);
    let (mut window_proposals, mut window_accepts) = (0usize, 0usize);
    let (mut post_proposals, mut post_accepts) = (0u64, 0u64);

    for step in 0..cfg.steps {
        let site = step % n;
        let z: f64 = rng.sample(StandardNormal);
        let mut accepted = false;
        if let Some(y) = reflect_into(xs[site] + sigma * z, s.a, s.b) {
            let yth = if theta_one { y } else { y.powf(s.theta) };
            let delta = site_delta(s, &xs, &xth, theta_one, site, y, yth);
            if delta >= 0.0 || (1.0 - rng.random::<f64>()).ln() < delta {
                xs[site] = y;
                if !theta_one {
                    xth[site] = yth;
                }
                accepted = true;
            }
        }

        if step < cfg.burn_in {
            window_proposals += 1;
            window_accepts += accepted as usize;
            if window_proposals == TUNE_WINDOW {
                let rate = window_accepts as f64 / TUNE_WINDOW as f64;
                if rate < ACCEPT_LO {
                    sigma = (sigma * 0.8).max(sigma_floor);
                } else if rate > ACCEPT_HI {
                    sigma = (sigma * 1.25).min(width);
                }
                window_proposals = 0;
                window_accepts = 0;
            }
        } else {
            post_proposals += 1;
            post_accepts += accepted as u64;
            if (step - cfg.burn_in + 1) % cfg.thin == 0 {
                let mut snap = xs.clone();
                snap.sort_unstable_by(f64::total_cmp);
                stored.push(snap);
            }
        }
    }

    let mid = 0.5 * (s.a + s.b);
    let series: Vec<f64> = stored
        .iter()
        .map(|c| counting_function(c, mid) as f64)
        .collect();
    let ess_estimate = integrated_autocorr_ess(&series);
    Ok(SampleBatch {
        configurations: stored,
        acceptance_rate: post_accepts as f64 / post_proposals as f64,
        ess_estimate,
    })
}

/// `#\{x_j <= t\}` for a sorted configuration.
pub fn counting_function(config: &[f64], t: f64) -> usize {
    config.partition_point(|&x| x <= t)
}

/// `sum_j log|t - x_j|`, the log-magnitude of the characteristic polynomial
/// of the configuration at `t`.
pub fn log_abs_charpoly(config: &[f64], t: f64) -> Result<f64, SamplerError> {
    let mut total = 0.0;
    for &x in config {
        if x == t {
            return Err(SamplerError::CoincidesWithPoint { t });
        }
        total += (t - x).abs().ln();
    }
    Ok(total)
}

/// Effective sample size of a stored batch, recomputed from its midpoint
/// counting-function series.  Used when configurations are reloaded from
/// disk and the original estimate is gone.
pub fn effective_sample_size(configurations: &[Vec<f64>], a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let series: Vec<f64> = configurations
        .iter()
        .map(|c| counting_function(c, mid) as f64)
        .collect();
    integrated_autocorr_ess(&series)
}

/// Effective sample size from the integrated autocorrelation time, with the
/// sum over lags truncated at the first nonpositive pair of autocovariances
/// (Geyer's initial positive sequence).  Returns 0 for series too short or
/// too degenerate to estimate.
fn integrated_autocorr_ess(series: &[f64]) -> f64 {
    let m = series.len();
    if m < 8 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / m as f64;
    let gamma = |k: usize| -> f64 {
        (0..m - k)
            .map(|i| (series[i] - mean) * (series[i + k] - mean))
            .sum::<f64>()
            / m as f64
    };
    let g0 = gamma(0);
    if g0 <= 0.0 {
        return 0.0;
    }
    let mut tau = -1.0;
    let mut j = 0;
    while 2 * j + 1 < m / 2 {
        let pair = gamma(2 * j) + gamma(2 * j + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair / g0;
        j += 1;
    }
    m as f64 / tau.max(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct CltRow {
    pub statistic: String,
    pub t: f64,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub mean_ok: bool,
    pub variance_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCorrelation {
    pub first: String,
    pub second: String,
    pub value: f64,
}

/// Gaussianity diagnostics for the normalized linear statistics.  `pass`
/// aggregates the per-row mean/variance checks and the cross-correlation
/// checks at the tolerances [`CLT_MEAN_TOL`], [`CLT_VAR_TOL`],
/// [`CLT_CROSS_TOL`].
#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub n: usize,
    pub configurations: usize,
    pub dropped_configurations: usize,
    pub pooled_ess: f64,
    pub rows: Vec<CltRow>,
    pub cross_correlations: Vec<CrossCorrelation>,
    pub pass: bool,
}

/// Normalize the counting function and the log-magnitude of the
/// characteristic polynomial at each `t` to approximately standard Gaussian
/// variables, and summarize their joint empirical law.
///
/// For each `t` the statistics are
/// `M = (log|p_n(t)| - n U(t)) / sqrt(log n / 2)` and
/// `N = (N_n(t) - n F(t)) / sqrt(log n / (2 pi^2))`, with `U` and `F` the
/// equilibrium log-potential and distribution function.  Configurations
/// containing an evaluation point exactly are dropped (and counted).
/// Errors with `InsufficientESS` when the batches pool fewer than
/// [`MIN_EFFECTIVE_SAMPLES`] effective samples.
pub fn clt_report(
    batches: &[SampleBatch],
    t_list: &[f64],
    data: &EquilibriumData,
) -> Result<CltReport, SamplerError> {
    assert!(!batches.is_empty(), "need at least one batch");
    assert!(!t_list.is_empty(), "need at least one evaluation point");
    let n = batches[0].configurations[0].len();
    let total: usize = batches.iter().map(|b| b.configurations.len()).sum();

    let pooled_ess: f64 = batches.iter().map(|b| b.ess_estimate).sum();
    if pooled_ess < MIN_EFFECTIVE_SAMPLES {
        return Err(SamplerError::InsufficientESS {
            ess: pooled_ess,
            required: MIN_EFFECTIVE_SAMPLES,
        });
    }

    let mut centers = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let (m_mean, m_var) = predict_logabs_stats(t, n, data)?;
        let (n_mean, n_var) = predict_counting_stats(t, n, data)?;
        centers.push((m_mean, m_var.sqrt(), n_mean, n_var.sqrt()));
    }

    let n_stats = 2 * t_list.len();
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(total); n_stats];
    let mut dropped = 0usize;
    for batch in batches {
        for config in &batch.configurations {
            assert_eq!(config.len(), n, "batches must share one matrix size");
            let mut values = Vec::with_capacity(n_stats);
            let mut usable = true;
            for (i, &t) in t_list.iter().enumerate() {
                match log_abs_charpoly(config, t) {
                    Ok(lp) => {
                        let (m_mean, m_sd, n_mean, n_sd) = centers[i];
                        values.push((lp - m_mean) / m_sd);
                        values.push((counting_function(config, t) as f64 - n_mean) / n_sd);
                    }
                    Err(_) => {
                        usable = false;
                        break;
                    }
                }
            }
            if usable {
                for (k, v) in values.into_iter().enumerate() {
                    series[k].push(v);
                }
            } else {
                dropped += 1;
            }
        }
    }

    let labels: Vec<String> = t_list
        .iter()
        .flat_map(|t| [format!("M(t={t})"), format!("N(t={t})")])
        .collect();
    let mut rows = Vec::with_capacity(n_stats);
    let mut pass = true;
    for (k, s) in series.iter().enumerate() {
        let (mean, variance, skewness, excess_kurtosis) = moments4(s);
        let mean_ok = mean.abs() <= CLT_MEAN_TOL;
        let variance_ok = (variance - 1.0).abs() <= CLT_VAR_TOL;
        pass &= mean_ok && variance_ok;
        rows.push(CltRow {
            statistic: labels[k].clone(),
            t: t_list[k / 2],
            mean,
            variance,
            skewness,
            excess_kurtosis,
            mean_ok,
            variance_ok,
        });
    }
    let mut cross_correlations = Vec::new();
    for i in 0..n_stats {
        for j in i + 1..n_stats {
            let value = correlation(&series[i], &series[j]);
            pass &= value.abs() <= CLT_CROSS_TOL;
            cross_correlations.push(CrossCorrelation {
                first: labels[i].clone(),
                second: labels[j].clone(),
                value,
            });
        }
    }

    Ok(CltReport {
        n,
        configurations: series[0].len(),
        dropped_configurations: dropped,
        pooled_ess,
        rows,
        cross_correlations,
        pass,
    })
}

/// Empirical check of the rigidity bounds: per configuration, the sup over a
/// [`RIGIDITY_GRID`]-point grid in `[a + delta, b - delta]` of
/// `|N_n(x) - n F(x)|`, and the worst rescaled gap
/// `rho(kappa_k) |xi_k - kappa_k|` over bulk indices `k` in
/// `[delta n, (1 - delta) n]`.  Violation frequencies are reported against
/// the bounds `sqrt(1 + eps)/pi * log n` and the same divided by `n`.
#[derive(Debug, Clone, Serialize)]
pub struct RigidityReport {
    pub n: usize,
    pub configurations: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub sup_bound: f64,
    pub gap_bound: f64,
    pub sup_violation_frequency: f64,
    pub gap_violation_frequency: f64,
    pub median_sup: f64,
    pub median_gap: f64,
}

pub fn rigidity_report(
    batches: &[SampleBatch],
    delta: f64,
    epsilon: f64,
    data: &EquilibriumData,
) -> Result<RigidityReport, SamplerError> {
    assert!(!batches.is_empty(), "need at least one batch");
    let width = data.b - data.a;
    assert!(
        delta > 0.0 && delta < 0.5 * width,
        "delta must lie in (0, (b - a)/2)"
    );
    assert!(epsilon > 0.0, "epsilon must be positive");
    let n = batches[0].configurations[0].len();
    let nf = n as f64;
    let sup_bound = (1.0 + epsilon).sqrt() / PI * nf.ln();
    let gap_bound = sup_bound / nf;

    let (lo, hi) = (data.a + delta, data.b - delta);
    let mut grid = Vec::with_capacity(RIGIDITY_GRID);
    let mut expected = Vec::with_capacity(RIGIDITY_GRID);
    for g in 0..RIGIDITY_GRID {
        let x = lo + (hi - lo) * g as f64 / (RIGIDITY_GRID - 1) as f64;
        grid.push(x);
        expected.push(nf * data.cdf(x)?);
    }

    let k_lo = (delta * nf).ceil().max(1.0) as usize;
    let k_hi = (((1.0 - delta) * nf).floor() as usize).min(n);
    let mut kappa = Vec::new();
    let mut rho = Vec::new();
    if k_lo <= k_hi {
        for k in k_lo..=k_hi {
            let loc = classical_location(k, n, data)?;
            kappa.push(loc);
            rho.push(data.density(loc)?);
        }
    }

    let mut sups = Vec::new();
    let mut gaps = Vec::new();
    for batch in batches {
        for config in &batch.configurations {
            assert_eq!(config.len(), n, "batches must share one matrix size");
            let mut sup = 0.0f64;
            for (g, &x) in grid.iter().enumerate() {
                sup = sup.max((counting_function(config, x) as f64 - expected[g]).abs());
            }
            sups.push(sup);
            if !kappa.is_empty() {
                let mut worst = 0.0f64;
                for (i, k) in (k_lo..=k_hi).enumerate() {
                    worst = worst.max(rho[i] * (config[k - 1] - kappa[i]).abs());
                }
                gaps.push(worst);
            }
        }
    }

    let frequency = |values: &[f64], bound: f64| {
        if values.is_empty() {
            0.0
        } else {
            values.iter().filter(|&&v| v > bound).count() as f64 / values.len() as f64
        }
    };
    Ok(RigidityReport {
        n,
        configurations: sups.len(),
        delta,
        epsilon,
        sup_bound,
        gap_bound,
        sup_violation_frequency: frequency(&sups, sup_bound),
        gap_violation_frequency: frequency(&gaps, gap_bound),
        median_sup: median(&mut sups),
        median_gap: if gaps.is_empty() { 0.0 } else { median(&mut gaps) },
    })
}

fn moments4(values: &[f64]) -> (f64, f64, f64, f64) {
    let m = values.len() as f64;
    assert!(m >= 2.0, "need at least two values");
    let mean = values.iter().sum::<f64>() / m;
    let (mut c2, mut c3, mut c4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        c2 += d2;
        c3 += d2 * d;
        c4 += d2 * d2;
    }
    let variance = c2 / (m - 1.0);
    let s2 = c2 / m;
    if s2 <= 0.0 {
        return (mean, variance, 0.0, 0.0);
    }
    let skewness = (c3 / m) / s2.powf(1.5);
    let excess_kurtosis = (c4 / m) / (s2 * s2) - 3.0;
    (mean, variance, skewness, excess_kurtosis)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let m = a.len() as f64;
    let ma = a.iter().sum::<f64>() / m;
    let mb = b.iter().sum::<f64>() / m;
    let (mut caa, mut cbb, mut cab) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        caa += da * da;
        cbb += db * db;
        cab += da * db;
    }
    if caa <= 0.0 || cbb <= 0.0 {
        0.0
    } else {
        cab / (caa * cbb).sqrt()
    }
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_unstable_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}
