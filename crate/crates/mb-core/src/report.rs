//! Run manifests, CSV interchange, and the end-to-end report bundle.
//!
//! Structured results are JSON; numeric sweeps travel as CSV.  Every file
//! artifact a run emits is listed in a [`RunManifest`] together with a
//! SHA-256 content digest, so a run is reproducible from its manifest alone
//! (numeric outputs are byte-identical given the same inputs; only the
//! timestamps differ).

use crate::asymptotics::{constants, AsymptoticConstants};
use crate::ensemble::{validate_spec, EnsembleError, EnsembleSpec, ValidationMode};
use crate::equilibrium::{solve_coefficients, EquilibriumData, EquilibriumError};
use crate::oracle::{det_sweep, DeterminantRecord, OracleError, PrecisionPolicy};
use crate::sampler::{
    clt_report, rigidity_report, sample, ChainConfig, CltReport, RigidityReport, SampleBatch,
    SamplerError,
};
use crate::verify::{
    fit_constants, kappa_convergence_report, theta1_reference, KappaReport, Theta1Reference,
    VerifyError,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// Default absolute tolerances on the fitted expansion constants.
pub const FIT_TOL_C1: f64 = 5e-4;
pub const FIT_TOL_C2: f64 = 5e-3;
pub const FIT_TOL_C3: f64 = 5e-2;

#[derive(Debug, Error)]
#[error("{path}:{line}: {detail}")]
pub struct CsvError {
    pub path: String,
    pub line: usize,
    pub detail: String,
}

/// Failure of one pipeline stage, tagged with whether it is a numerical
/// failure (exit code 2) or an input/validation problem (exit code 1).
#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
    pub numerical: bool,
}

impl StageError {
    fn validation(stage: &'static str, err: impl std::fmt::Display) -> Self {
        StageError {
            stage,
            message: err.to_string(),
            numerical: false,
        }
    }

    fn numerical(stage: &'static str, err: impl std::fmt::Display) -> Self {
        StageError {
            stage,
            message: err.to_string(),
            numerical: true,
        }
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_bytes(&fs::read(path)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Reproducibility metadata for one invocation: the exact command line, the
/// digest of the spec file, every seed used, the tool version, RFC 3339
/// timestamps, and a content digest per emitted artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub tool_version: String,
    pub spec_sha256: Option<String>,
    pub seeds: Vec<u64>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub artifacts: Vec<ArtifactDigest>,
}

impl RunManifest {
    pub fn new(command_line: Vec<String>) -> Self {
        RunManifest {
            command_line,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            spec_sha256: None,
            seeds: Vec::new(),
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: None,
            artifacts: Vec::new(),
        }
    }

    pub fn set_spec_file(&mut self, path: &Path) -> io::Result<()> {
        self.spec_sha256 = Some(sha256_file(path)?);
        Ok(())
    }

    pub fn record_seeds(&mut self, seeds: impl IntoIterator<Item = u64>) {
        self.seeds.extend(seeds);
    }

    /// Digest a file that the run has just written and list it.
    pub fn record_artifact(&mut self, path: &Path) -> io::Result<()> {
        let bytes = fs::metadata(path)?.len();
        self.artifacts.push(ArtifactDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
            bytes,
        });
        Ok(())
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(chrono::Utc::now().to_rfc3339());
    }

    pub fn write_json(&self, path: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text)
    }
}

// ---------------------------------------------------------------------------
// CSV interchange.  f64 values are printed with `{}` (shortest
// representation that round-trips), so read(write(x)) == x bitwise.

pub fn write_dets_csv<W: Write>(w: &mut W, records: &[DeterminantRecord]) -> io::Result<()> {
    writeln!(w, "n,log_abs,phase,precision_bits,err_estimate")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.n, r.log_abs, r.phase, r.precision_bits, r.err_estimate
        )?;
    }
    Ok(())
}

pub fn read_dets_csv(path: &Path) -> Result<Vec<DeterminantRecord>, CsvError> {
    let err = |line: usize, detail: String| CsvError {
        path: path.display().to_string(),
        line,
        detail,
    };
    let file = fs::File::open(path).map_err(|e| err(0, e.to_string()))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(err(1, e.to_string())),
        None => return Err(err(1, "empty file".into())),
    };
    if header.trim() != "n,log_abs,phase,precision_bits,err_estimate" {
        return Err(err(1, format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| err(idx + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(idx + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        let parse = |s: &str| -> Result<f64, CsvError> {
            s.trim()
                .parse()
                .map_err(|e| err(idx + 1, format!("bad float {s:?}: {e}")))
        };
        records.push(DeterminantRecord {
            n: fields[0]
                .trim()
                .parse()
                .map_err(|e| err(idx + 1, format!("bad n {:?}: {e}", fields[0])))?,
            log_abs: parse(fields[1])?,
            phase: parse(fields[2])?,
            precision_bits: fields[3]
                .trim()
                .parse()
                .map_err(|e| err(idx + 1, format!("bad precision {:?}: {e}", fields[3])))?,
            err_estimate: parse(fields[4])?,
        });
    }
    Ok(records)
}

/// Columns `chain,index,x0..x{n-1}`; one row per stored configuration.
pub fn write_samples_csv<W: Write>(w: &mut W, batches: &[SampleBatch]) -> io::Result<()> {
    let n = batches
        .first()
        .and_then(|b| b.configurations.first())
        .map_or(0, |c| c.len());
    write!(w, "chain,index")?;
    for j in 0..n {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for (chain, batch) in batches.iter().enumerate() {
        for (index, config) in batch.configurations.iter().enumerate() {
            write!(w, "{chain},{index}")?;
            for x in config {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Configurations grouped per chain, in stored order.
pub fn read_samples_csv(path: &Path) -> Result<Vec<Vec<Vec<f64>>>, CsvError> {
    let err = |line: usize, detail: String| CsvError {
        path: path.display().to_string(),
        line,
        detail,
    };
    let file = fs::File::open(path).map_err(|e| err(0, e.to_string()))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(err(1, e.to_string())),
        None => return Err(err(1, "empty file".into())),
    };
    if !header.starts_with("chain,index") {
        return Err(err(1, format!("unexpected header {header:?}")));
    }
    let width = header.split(',').count();
    if width < 3 {
        return Err(err(1, "no coordinate columns".into()));
    }
    let mut chains: BTreeMap<u64, Vec<Vec<f64>>> = BTreeMap::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| err(idx + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(err(
                idx + 1,
                format!("expected {width} fields, got {}", fields.len()),
            ));
        }
        let chain: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| err(idx + 1, format!("bad chain id {:?}: {e}", fields[0])))?;
        let mut config = Vec::with_capacity(width - 2);
        for f in &fields[2..] {
            config.push(
                f.trim()
                    .parse()
                    .map_err(|e| err(idx + 1, format!("bad float {f:?}: {e}")))?,
            );
        }
        chains.entry(chain).or_default().push(config);
    }
    if chains.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    Ok(chains.into_values().collect())
}

/// One equilibrium-grid row: density, distribution function, logarithmic
/// potential, and the boundary inverse of the conformal map.
#[derive(Debug, Clone, Serialize)]
pub struct EqRow {
    pub x: f64,
    pub rho: f64,
    pub cdf: f64,
    pub logpot: f64,
    pub re_i1plus: f64,
    pub im_i1plus: f64,
}

/// Evaluate the equilibrium data on `grid` midpoints strictly inside
/// `(a, b)` (the density diverges at both hard edges).
pub fn equilibrium_grid(
    data: &EquilibriumData,
    grid: usize,
) -> Result<Vec<EqRow>, EquilibriumError> {
    assert!(grid >= 1, "need at least one grid point");
    let mut rows = Vec::with_capacity(grid);
    for i in 0..grid {
        let x = data.a + (data.b - data.a) * (i as f64 + 0.5) / grid as f64;
        let s = data.inverse_boundary_upper(x)?.s;
        rows.push(EqRow {
            x,
            rho: data.density(x)?,
            cdf: data.cdf(x)?,
            logpot: data.log_potential(x)?,
            re_i1plus: s.re,
            im_i1plus: s.im,
        });
    }
    Ok(rows)
}

pub fn write_eq_csv<W: Write>(w: &mut W, rows: &[EqRow]) -> io::Result<()> {
    writeln!(w, "x,rho,cdf,logpot,re_i1plus,im_i1plus")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.x, r.rho, r.cdf, r.logpot, r.re_i1plus, r.im_i1plus
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Fit check: fitted expansion constants against their closed forms.

#[derive(Debug, Clone, Serialize)]
pub struct FitCheckReport {
    pub fitted: BTreeMap<String, f64>,
    pub analytic: BTreeMap<String, f64>,
    pub abs_err: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub residual_rms: f64,
    pub n_range: (usize, usize),
    pub pass: bool,
}

/// Fit `log|D_n|` over the records and compare `C1..C3` with the closed
/// forms (real parts; the phase track is a separate fit).  The remainder
/// regressor is included whenever the record set can support five columns.
pub fn fit_check(
    records: &[DeterminantRecord],
    consts: &AsymptoticConstants,
    tolerances: (f64, f64, f64),
) -> Result<FitCheckReport, VerifyError> {
    let use_inverse_n = records.len() >= 8;
    let fit = fit_constants(records, use_inverse_n, consts.beta_max)?;
    let fitted = BTreeMap::from([
        ("C1".to_string(), fit.fitted_c1),
        ("C2".to_string(), fit.fitted_c2),
        ("C3".to_string(), fit.fitted_c3),
        ("C4".to_string(), fit.fitted_c4),
    ]);
    let analytic = BTreeMap::from([
        ("C1".to_string(), consts.c1),
        ("C2".to_string(), consts.c2.re),
        ("C3".to_string(), consts.c3.re),
    ]);
    let abs_err = BTreeMap::from([
        ("C1".to_string(), (fit.fitted_c1 - consts.c1).abs()),
        ("C2".to_string(), (fit.fitted_c2 - consts.c2.re).abs()),
        ("C3".to_string(), (fit.fitted_c3 - consts.c3.re).abs()),
    ]);
    let tol = BTreeMap::from([
        ("C1".to_string(), tolerances.0),
        ("C2".to_string(), tolerances.1),
        ("C3".to_string(), tolerances.2),
    ]);
    let pass = abs_err.iter().all(|(k, e)| e <= &tol[k]);
    Ok(FitCheckReport {
        fitted,
        analytic,
        abs_err,
        tolerances: tol,
        residual_rms: fit.residual_rms,
        n_range: fit.n_range,
        pass,
    })
}

// ---------------------------------------------------------------------------
// End-to-end pipeline.

/// Monte-Carlo budget for the sampler stage of [`end_to_end_report`].
/// `chains = 0` skips the stage.
#[derive(Debug, Clone, Serialize)]
pub struct SamplerBudget {
    pub n: usize,
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// CLT evaluation points; empty means the 30% and 70% points of `[a, b]`.
    pub t_list: Vec<f64>,
    /// Rigidity margin; `0.0` means a tenth of the interval width.
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for SamplerBudget {
    fn default() -> Self {
        SamplerBudget {
            n: 100,
            chains: 16,
            steps: 150_000,
            burn_in: 30_000,
            thin: 60,
            seed: 7,
            t_list: Vec::new(),
            delta: 0.0,
            epsilon: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Everything one invocation learned, with one pass/fail line per check.
#[derive(Debug, Serialize)]
pub struct EndToEndReport {
    pub spec: EnsembleSpec,
    pub equilibrium: EquilibriumData,
    pub constants: AsymptoticConstants,
    pub golden: Option<Theta1Reference>,
    pub determinants: Vec<DeterminantRecord>,
    pub fit: FitCheckReport,
    pub kappa: Option<KappaReport>,
    pub clt: Option<CltReport>,
    pub rigidity: Option<RigidityReport>,
    pub checks: Vec<NamedCheck>,
    pub manifest: RunManifest,
}

fn check(name: &str, pass: bool, detail: String) -> NamedCheck {
    NamedCheck {
        name: name.to_string(),
        pass,
        detail,
    }
}

/// Run equilibrium, constants, the determinant sweep over the inclusive
/// `fit_window`, the fit, the norming-constant convergence table, and
/// (budget permitting) the sampler diagnostics, collecting a named
/// pass/fail verdict per stage.
///
/// Stage failures are annotated with the stage name; whether they exit as
/// validation or numerical errors follows the underlying error type.
pub fn end_to_end_report(
    spec: &EnsembleSpec,
    policy: &PrecisionPolicy,
    fit_window: (usize, usize),
    budget: &SamplerBudget,
    mut manifest: RunManifest,
) -> Result<EndToEndReport, StageError> {
    let (n_lo, n_hi) = fit_window;
    if !(1 <= n_lo && n_lo < n_hi) {
        return Err(StageError::validation(
            "fit",
            format!("fit window ({n_lo}, {n_hi}) must satisfy 1 <= lo < hi"),
        ));
    }

    // the equilibrium-side constraint window is the binding one here
    let validated = validate_spec(spec, ValidationMode::Equilibrium)
        .map_err(|e: EnsembleError| StageError::validation("equilibrium", e))?;
    let data = solve_coefficients(spec.a, spec.b, spec.theta, 1e-13)
        .map_err(|e: EquilibriumError| StageError::numerical("equilibrium", e))?;
    let consts =
        constants(&validated, &data).map_err(|e| StageError::numerical("constants", e))?;

    let mut checks = Vec::new();

    let golden = if spec.theta == 1.0 {
        let reference = theta1_reference(spec.a, spec.b);
        let mut worst_const: f64 = (data.c0 - reference.c0).abs();
        worst_const = worst_const.max((data.c1 - reference.c1).abs());
        worst_const = worst_const.max((consts.c1 - reference.c1_const).abs());
        let mut worst_rho: f64 = 0.0;
        for &(x, r) in &reference.rho_samples {
            let rho = data
                .density(x)
                .map_err(|e| StageError::numerical("equilibrium", e))?;
            worst_rho = worst_rho.max((rho - r).abs());
        }
        checks.push(check(
            "theta1_closed_forms",
            worst_const <= 1e-12 && worst_rho <= 1e-10,
            format!("max constant error {worst_const:.2e}, max density error {worst_rho:.2e}"),
        ));
        Some(reference)
    } else {
        None
    };

    let determinants = det_sweep(&validated, n_lo, n_hi, policy)
        .map_err(|e: OracleError| StageError::numerical("oracle", e))?;
    let worst_err = determinants
        .iter()
        .map(|r| r.err_estimate)
        .fold(0.0f64, f64::max);
    checks.push(check(
        "oracle_precision_recheck",
        worst_err <= 1e-10,
        format!("worst doubled-precision disagreement {worst_err:.2e}"),
    ));

    let fit = fit_check(
        &determinants,
        &consts,
        (FIT_TOL_C1, FIT_TOL_C2, FIT_TOL_C3),
    )
    .map_err(|e: VerifyError| StageError::numerical("fit", e))?;
    checks.push(check(
        "fit_within_tolerance",
        fit.pass,
        format!(
            "abs errors C1 {:.2e}, C2 {:.2e}, C3 {:.2e}",
            fit.abs_err["C1"], fit.abs_err["C2"], fit.abs_err["C3"]
        ),
    ));

    let kappa = if spec.is_positive_weight() {
        let ns: Vec<usize> = (n_lo..=n_hi).collect();
        let report = kappa_convergence_report(&validated, policy, &ns)
            .map_err(|e| StageError::numerical("kappa", e))?;
        checks.push(check(
            "kappa_ratio_convergence",
            report.deviation_decreasing_beyond_8 && report.largest_within_half_over_n,
            format!(
                "decreasing beyond 8: {}, within 0.5/n at the top: {}",
                report.deviation_decreasing_beyond_8, report.largest_within_half_over_n
            ),
        ));
        Some(report)
    } else {
        None
    };

    let base_weight = spec.is_positive_weight()
        && spec
            .singularities
            .iter()
            .all(|f| f.alpha.norm_sqr() == 0.0 && f.beta.norm_sqr() == 0.0);
    let (clt, rigidity) = if budget.chains > 0 && base_weight {
        let cfg = ChainConfig {
            n: budget.n,
            steps: budget.steps,
            burn_in: budget.burn_in,
            thin: budget.thin,
            proposal_sigma: 0.1 * (spec.b - spec.a),
            seed: budget.seed,
        };
        manifest.record_seeds((0..budget.chains as u64).map(|c| budget.seed + c));
        let batches: Vec<SampleBatch> = (0..budget.chains as u64)
            .into_par_iter()
            .map(|c| {
                sample(
                    &validated,
                    &ChainConfig {
                        seed: budget.seed + c,
                        ..cfg.clone()
                    },
                )
            })
            .collect::<Result<_, SamplerError>>()
            .map_err(|e| StageError::numerical("sample", e))?;

        let t_list = if budget.t_list.is_empty() {
            vec![
                spec.a + 0.3 * (spec.b - spec.a),
                spec.a + 0.7 * (spec.b - spec.a),
            ]
        } else {
            budget.t_list.clone()
        };
        let clt = match clt_report(&batches, &t_list, &data) {
            Ok(r) => {
                checks.push(check(
                    "clt_thresholds",
                    r.pass,
                    format!("pooled ess {:.0}", r.pooled_ess),
                ));
                Some(r)
            }
            Err(SamplerError::InsufficientESS { ess, required }) => {
                checks.push(check(
                    "clt_thresholds",
                    false,
                    format!("insufficient effective samples: {ess:.0} < {required:.0}"),
                ));
                None
            }
            Err(e) => return Err(StageError::numerical("clt", e)),
        };

        let delta = if budget.delta > 0.0 {
            budget.delta
        } else {
            0.1 * (spec.b - spec.a)
        };
        let rig = rigidity_report(&batches, delta, budget.epsilon, &data)
            .map_err(|e| StageError::numerical("rigidity", e))?;
        checks.push(check(
            "rigidity_violation_frequency",
            rig.sup_violation_frequency <= 0.05,
            format!(
                "sup violations {:.1}%, gap violations {:.1}%",
                100.0 * rig.sup_violation_frequency,
                100.0 * rig.gap_violation_frequency
            ),
        ));
        (clt, Some(rig))
    } else {
        (None, None)
    };

    manifest.finish();
    Ok(EndToEndReport {
        spec: spec.clone(),
        equilibrium: data,
        constants: consts,
        golden,
        determinants,
        fit,
        kappa,
        clt,
        rigidity,
        checks,
        manifest,
    })
}
