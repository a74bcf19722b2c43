//! Command-line front end: subcommand routing, config ingestion, report
//! emission, and reproducibility metadata.
//!
//! Exit-code discipline: 0 on success, 1 on validation problems (bad flags,
//! missing or malformed files, specs outside the admissible parameter
//! windows), 2 on numerical failures (quadrature stall, singular matrices,
//! rank-deficient fits, insufficient effective samples).
//!
//! Structured results go to standard output as JSON, numeric sweeps as CSV
//! (inline or to `--out`).  Every invocation that writes files also writes a
//! `<first-artifact>.manifest.json` run manifest digesting all of them.

use crate::asymptotics::{constants, AsymptoticConstants};
use crate::ensemble::{validate_spec, EnsembleError, EnsembleSpec, ValidationMode};
use crate::equilibrium::{solve_coefficients, EquilibriumError};
use crate::oracle::{det_sweep, OracleError, PrecisionPolicy};
use crate::report::{
    end_to_end_report, equilibrium_grid, fit_check, read_dets_csv, read_samples_csv,
    write_dets_csv, write_eq_csv, write_samples_csv, CsvError, RunManifest, SamplerBudget,
    StageError, FIT_TOL_C1, FIT_TOL_C2, FIT_TOL_C3,
};
use crate::sampler::{
    clt_report, effective_sample_size, rigidity_report, sample, ChainConfig, SampleBatch,
    SamplerError,
};
use crate::verify::VerifyError;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<CsvError> for CliError {
    fn from(e: CsvError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::BadChainConfig { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        if e.numerical {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mb",
    version,
    about = "Muttalib-Borodin determinants: equilibrium measures, asymptotic \
             constants, exact extended-precision values, and Monte-Carlo checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the equilibrium problem; tabulate density, cdf, log-potential
    Eq(EqArgs),
    /// Closed-form expansion constants of the log determinant
    Constants(ConstantsArgs),
    /// Extended-precision determinant sweep, written as CSV
    Oracle(OracleArgs),
    /// Fit expansion constants from a determinant CSV and compare to closed forms
    Fit(FitArgs),
    /// Run Metropolis chains and store sampled configurations as CSV
    Sample(SampleArgs),
    /// Gaussian-fluctuation diagnostics from stored samples
    Clt(CltArgs),
    /// Rigidity diagnostics from stored samples
    Rigidity(RigidityArgs),
    /// Full pipeline: equilibrium, constants, sweep, fit, convergence, sampling
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct EqArgs {
    /// Ensemble description (JSON)
    #[arg(long)]
    spec: PathBuf,
    /// Number of interior grid points
    #[arg(long, default_value_t = 512)]
    grid: usize,
    /// Write the grid as CSV here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit the solved equilibrium data as JSON instead of the grid
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ConstantsArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Emit {C1, C2, C3, H0, ell, beta_max} as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 1)]
    nmin: usize,
    #[arg(long, default_value_t = 20)]
    nmax: usize,
    /// Write the sweep as CSV here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Determinant sweep produced by `mb oracle`
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Also write the JSON report to this file
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Number of points per configuration
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Independent chains (seeded seed, seed+1, ...)
    #[arg(long, default_value_t = 32)]
    chains: usize,
    /// Single-site proposals per chain
    #[arg(long, default_value_t = 200_000)]
    steps: usize,
    /// Proposals discarded before recording; default steps/5
    #[arg(long)]
    burn_in: Option<usize>,
    /// Record every thin-th configuration; default max(n/2, 1)
    #[arg(long)]
    thin: Option<usize>,
    /// Initial proposal step; default (b-a)/10, retuned during burn-in
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output CSV (chain,index,x0..)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CltArgs {
    /// Samples CSV produced by `mb sample`
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Evaluation point; repeat for several
    #[arg(long = "t", required = true)]
    t: Vec<f64>,
    /// Also write the JSON report to this file
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RigidityArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Margin from the interval ends; default (b-a)/10
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Also write the JSON report to this file
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Fit window (inclusive)
    #[arg(long, default_value_t = 8)]
    nmin: usize,
    #[arg(long, default_value_t = 24)]
    nmax: usize,
    /// Points per sampled configuration
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Monte-Carlo chains; 0 skips the sampler stage
    #[arg(long, default_value_t = 16)]
    chains: usize,
    #[arg(long, default_value_t = 150_000)]
    steps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write the JSON bundle here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse `argv` (including the program name) and run the selected command.
/// Never panics on user input; returns the process exit code.
pub fn dispatch<I>(argv: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let argv: Vec<String> = argv.into_iter().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    match cli.command {
        Command::Eq(args) => cmd_eq(args, argv),
        Command::Constants(args) => cmd_constants(args),
        Command::Oracle(args) => cmd_oracle(args, argv),
        Command::Fit(args) => cmd_fit(args, argv),
        Command::Sample(args) => cmd_sample(args, argv),
        Command::Clt(args) => cmd_clt(args, argv),
        Command::Rigidity(args) => cmd_rigidity(args, argv),
        Command::Report(args) => cmd_report(args, argv),
    }
}

fn load_spec(path: &Path) -> Result<EnsembleSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Default precision policy with `base_bits` overridden by the
/// `MB_PRECISION_BITS` environment variable when set.
pub fn policy_from_env() -> Result<PrecisionPolicy, CliError> {
    policy_from_bits(std::env::var("MB_PRECISION_BITS").ok().as_deref())
}

fn policy_from_bits(raw: Option<&str>) -> Result<PrecisionPolicy, CliError> {
    let mut policy = PrecisionPolicy::default();
    if let Some(raw) = raw {
        let bits: usize = raw.trim().parse().map_err(|_| {
            CliError::Validation(format!(
                "MB_PRECISION_BITS={raw:?} is not a positive integer"
            ))
        })?;
        if !(64..=1 << 20).contains(&bits) {
            return Err(CliError::Validation(format!(
                "MB_PRECISION_BITS={bits} outside [64, 1048576]"
            )));
        }
        policy.base_bits = bits;
    }
    Ok(policy)
}

fn manifest_sidecar_path(artifact: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", artifact.display()))
}

/// Digest the artifacts into the manifest and write it next to the first one.
fn seal_manifest(mut manifest: RunManifest, artifacts: &[&Path]) -> Result<(), CliError> {
    for artifact in artifacts {
        manifest.record_artifact(artifact)?;
    }
    manifest.finish();
    if let Some(first) = artifacts.first() {
        manifest.write_json(&manifest_sidecar_path(first))?;
    }
    Ok(())
}

fn print_stdout(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn cmd_eq(args: EqArgs, argv: Vec<String>) -> Result<(), CliError> {
    let spec = load_spec(&args.spec)?;
    validate_spec(&spec, ValidationMode::Equilibrium)?;
    let data = solve_coefficients(spec.a, spec.b, spec.theta, 1e-13)?;
    if args.json {
        return print_stdout(&serde_json::to_string_pretty(&data).expect("serializes"));
    }
    if args.grid == 0 {
        return Err(CliError::Validation("grid must be at least 1".into()));
    }
    let rows = equilibrium_grid(&data, args.grid)?;
    match args.out {
        Some(out) => {
            let mut buf = Vec::new();
            write_eq_csv(&mut buf, &rows)?;
            fs::write(&out, &buf)?;
            let mut manifest = RunManifest::new(argv);
            manifest.set_spec_file(&args.spec)?;
            seal_manifest(manifest, &[&out])?;
        }
        None => {
            let mut buf = Vec::new();
            write_eq_csv(&mut buf, &rows)?;
            print_stdout(std::str::from_utf8(&buf).expect("csv is utf-8"))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ConstantsOut<'a> {
    #[serde(flatten)]
    constants: &'a AsymptoticConstants,
    ell: f64,
}

fn cmd_constants(args: ConstantsArgs) -> Result<(), CliError> {
    let spec = load_spec(&args.spec)?;
    let validated = validate_spec(&spec, ValidationMode::Equilibrium)?;
    let data = solve_coefficients(spec.a, spec.b, spec.theta, 1e-13)?;
    let consts = constants(&validated, &data)?;
    if args.json {
        let out = ConstantsOut {
            constants: &consts,
            ell: data.ell,
        };
        print_stdout(&serde_json::to_string_pretty(&out).expect("serializes"))
    } else {
        print_stdout(&format!(
            "C1 = {}\nC2 = {} + {}i\nC3 = {} + {}i\nH0 = {} + {}i\nell = {}\nbeta_max = {}",
            consts.c1,
            consts.c2.re,
            consts.c2.im,
            consts.c3.re,
            consts.c3.im,
            consts.h0.re,
            consts.h0.im,
            data.ell,
            consts.beta_max
        ))
    }
}

fn cmd_oracle(args: OracleArgs, argv: Vec<String>) -> Result<(), CliError> {
    if args.nmin < 1 || args.nmin > args.nmax {
        return Err(CliError::Validation(format!(
            "need 1 <= nmin <= nmax, got ({}, {})",
            args.nmin, args.nmax
        )));
    }
    let spec = load_spec(&args.spec)?;
    let validated = validate_spec(&spec, ValidationMode::Oracle)?;
    let policy = policy_from_env()?;
    let records = det_sweep(&validated, args.nmin, args.nmax, &policy)?;
    let mut buf = Vec::new();
    write_dets_csv(&mut buf, &records)?;
    match args.out {
        Some(out) => {
            fs::write(&out, &buf)?;
            let mut manifest = RunManifest::new(argv);
            manifest.set_spec_file(&args.spec)?;
            seal_manifest(manifest, &[&out])?;
        }
        None => print_stdout(std::str::from_utf8(&buf).expect("csv is utf-8"))?,
    }
    Ok(())
}

fn cmd_fit(args: FitArgs, argv: Vec<String>) -> Result<(), CliError> {
    let spec = load_spec(&args.spec)?;
    let validated = validate_spec(&spec, ValidationMode::Equilibrium)?;
    let records = read_dets_csv(&args.dets)?;
    let data = solve_coefficients(spec.a, spec.b, spec.theta, 1e-13)?;
    let consts = constants(&validated, &data)?;
    let report = fit_check(&records, &consts, (FIT_TOL_C1, FIT_TOL_C2, FIT_TOL_C3))?;
    let text = serde_json::to_string_pretty(&report).expect("serializes");
    print_stdout(&text)?;
    if let Some(out) = args.json {
        fs::write(&out, &text)?;
        let mut manifest = RunManifest::new(argv);
        manifest.set_spec_file(&args.spec)?;
        seal_manifest(manifest, &[&out])?;
    }
    Ok(())
}

fn base_weight_guard(spec: &EnsembleSpec) -> Result<(), CliError> {
    let base = spec.is_positive_weight()
        && spec
            .singularities
            .iter()
            .all(|f| f.alpha.norm_sqr() == 0.0 && f.beta.norm_sqr() == 0.0);
    if base {
        Ok(())
    } else {
        Err(CliError::Validation(
            "sampling requires the positive base weight: real edge exponents and no \
             interior singular factors"
                .into(),
        ))
    }
}

#[derive(Serialize)]
struct SampleSummary {
    chains: usize,
    n: usize,
    stored_configurations: usize,
    acceptance_rates: Vec<f64>,
    ess_estimates: Vec<f64>,
    pooled_ess: f64,
}

fn cmd_sample(args: SampleArgs, argv: Vec<String>) -> Result<(), CliError> {
    let spec = load_spec(&args.spec)?;
    let validated = validate_spec(&spec, ValidationMode::Oracle)?;
    base_weight_guard(&spec)?;
    if args.chains == 0 {
        return Err(CliError::Validation("need at least one chain".into()));
    }
    let cfg = ChainConfig {
        n: args.n,
        steps: args.steps,
        burn_in: args.burn_in.unwrap_or(args.steps / 5),
        thin: args.thin.unwrap_or((args.n / 2).max(1)),
        proposal_sigma: args.sigma.unwrap_or(0.1 * (spec.b - spec.a)),
        seed: args.seed,
    };
    cfg.validate().map_err(CliError::from)?;

    let batches: Vec<SampleBatch> = (0..args.chains as u64)
        .into_par_iter()
        .map(|c| {
            sample(
                &validated,
                &ChainConfig {
                    seed: args.seed + c,
                    ..cfg.clone()
                },
            )
        })
        .collect::<Result<_, SamplerError>>()?;

    let mut buf = Vec::new();
    write_samples_csv(&mut buf, &batches)?;
    fs::write(&args.out, &buf)?;

    let summary = SampleSummary {
        chains: args.chains,
        n: args.n,
        stored_configurations: batches.iter().map(|b| b.configurations.len()).sum(),
        acceptance_rates: batches.iter().map(|b| b.acceptance_rate).collect(),
        ess_estimates: batches.iter().map(|b| b.ess_estimate).collect(),
        pooled_ess: batches.iter().map(|b| b.ess_estimate).sum(),
    };
    print_stdout(&serde_json::to_string_pretty(&summary).expect("serializes"))?;

    let mut manifest = RunManifest::new(argv);
    manifest.set_spec_file(&args.spec)?;
    manifest.record_seeds((0..args.chains as u64).map(|c| args.seed + c));
    seal_manifest(manifest, &[&args.out])?;
    Ok(())
}

/// Rebuild batches from a samples CSV.  The acceptance rate is not stored in
/// the CSV and is reloaded as NaN; the downstream reports never read it.
fn reload_batches(path: &Path, a: f64, b: f64) -> Result<Vec<SampleBatch>, CliError> {
    let chains = read_samples_csv(path)?;
    Ok(chains
        .into_iter()
        .map(|configurations| {
            let ess_estimate = effective_sample_size(&configurations, a, b);
            SampleBatch {
                configurations,
                acceptance_rate: f64::NAN,
                ess_estimate,
            }
        })
        .collect())
}

fn emit_json_report<T: Serialize>(
    report: &T,
    json_out: Option<&Path>,
    spec_path: &Path,
    argv: Vec<String>,
) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).expect("serializes");
    print_stdout(&text)?;
    if let Some(out) = json_out {
        fs::write(out, &text)?;
        let mut manifest = RunManifest::new(argv);
        manifest.set_spec_file(spec_path)?;
        seal_manifest(manifest, &[out])?;
    }
    Ok(())
}

fn cmd_clt(args: CltArgs, argv: Vec<String>) -> Result<(), CliError> {
    let spec = load_spec(&args.spec)?;
    validate_spec(&spec, ValidationMode::Equilibrium)?;
    let data = solve_coefficients(spec.a, spec.b, spec.theta, 1e-13)?;
    let batches = reload_batches(&args.samples, spec.a, spec.b)?;
    let report = clt_report(&batches, &args.t, &data)?;
    emit_json_report(&report, args.json.as_deref(), &args.spec, argv)
}

fn cmd_rigidity(args: RigidityArgs, argv: Vec<String>) -> Result<(), CliError> {
    let spec = load_spec(&args.spec)?;
    validate_spec(&spec, ValidationMode::Equilibrium)?;
    let width = spec.b - spec.a;
    let delta = args.delta.unwrap_or(0.1 * width);
    if !(delta > 0.0 && delta < 0.5 * width) {
        return Err(CliError::Validation(format!(
            "delta {delta} outside (0, {})",
            0.5 * width
        )));
    }
    if args.epsilon <= 0.0 {
        return Err(CliError::Validation(format!(
            "epsilon {} must be positive",
            args.epsilon
        )));
    }
    let data = solve_coefficients(spec.a, spec.b, spec.theta, 1e-13)?;
    let batches = reload_batches(&args.samples, spec.a, spec.b)?;
    let report = rigidity_report(&batches, delta, args.epsilon, &data)?;
    emit_json_report(&report, args.json.as_deref(), &args.spec, argv)
}

fn cmd_report(args: ReportArgs, argv: Vec<String>) -> Result<(), CliError> {
    let spec = load_spec(&args.spec)?;
    let policy = policy_from_env()?;
    let mut manifest = RunManifest::new(argv);
    manifest.set_spec_file(&args.spec)?;
    let budget = SamplerBudget {
        n: args.n,
        chains: args.chains,
        steps: args.steps,
        burn_in: args.steps / 5,
        thin: (args.n / 2).max(1),
        seed: args.seed,
        ..SamplerBudget::default()
    };
    let bundle = end_to_end_report(&spec, &policy, (args.nmin, args.nmax), &budget, manifest)?;
    let text = serde_json::to_string_pretty(&bundle).expect("serializes");
    match args.out {
        Some(out) => {
            fs::write(&out, &text)?;
            let mut sidecar = RunManifest::new(bundle.manifest.command_line.clone());
            sidecar.spec_sha256 = bundle.manifest.spec_sha256.clone();
            sidecar.seeds = bundle.manifest.seeds.clone();
            seal_manifest(sidecar, &[&out])?;
            for check in &bundle.checks {
                print_stdout(&format!(
                    "{} {} - {}",
                    if check.pass { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                ))?;
            }
        }
        None => print_stdout(&text)?,
    }
    Ok(())
}
