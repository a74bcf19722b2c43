//! Exact moment determinants in software floats.
//!
//! The normalizing constant of the ensemble equals the determinant of the
//! mixed moment matrix `M[j][k] = int x^{k+j*theta} w(x) dx`.  This module
//! computes those moments with per-panel tanh-sinh quadrature at a precision
//! that grows linearly with the matrix size, factorizes with partial
//! pivoting, and recomputes everything at a multiple of the precision so the
//! returned records carry an observed (not modeled) error estimate.
//!
//! The determinant is wildly ill-conditioned as a function of the moments --
//! small matrices on `[1, 4]` already mix scales of hundreds of digits --
//! which is why there is no f64 fallback anywhere in this module.

use std::collections::{HashMap, HashSet};

use astro_float::BigFloat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bigfloat::{carg_f64, frexp_big, to_f64, BigCtx, ComplexBig};
use crate::ensemble::{EnsembleSpec, ValidatedSpec};
use crate::quadrature::{CanonNode, TsTable};

/// Adaptive refinement stops here; a healthy panel converges around level 6.
const LEVEL_CAP: usize = 12;
/// Never trust agreement between the very coarse first levels.
const MIN_CHECK_LEVEL: usize = 3;

/// How many mantissa bits to carry, as a function of matrix size.
///
/// Working precision for an `n x n` determinant is
/// `max(base_bits, per_n_bits * n)`; every determinant is recomputed at
/// `verify_factor` times that to measure the actually-achieved accuracy.
#[derive(Debug, Clone, Serialize)]
pub struct PrecisionPolicy {
    pub base_bits: usize,
    pub per_n_bits: usize,
    pub verify_factor: usize,
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        PrecisionPolicy {
            base_bits: 256,
            per_n_bits: 24,
            verify_factor: 2,
        }
    }
}

impl PrecisionPolicy {
    pub fn working_bits(&self, n: usize) -> usize {
        self.base_bits.max(self.per_n_bits * n)
    }

    pub fn verify_bits(&self, n: usize) -> usize {
        self.working_bits(n) * self.verify_factor.max(1)
    }
}

/// One determinant: `log|D_n|`, its accumulated phase, and how well the
/// doubled-precision recomputation agreed.
///
/// `phase` is continuous in `n` within one sweep (unwrapped against the
/// previous record); a standalone record carries the principal value.
/// `err_estimate` is the larger of the relative `log_abs` discrepancy and
/// the phase discrepancy in turns between the two precision runs.
#[derive(Debug, Clone, Serialize)]
pub struct DeterminantRecord {
    pub n: usize,
    pub log_abs: f64,
    pub phase: f64,
    pub precision_bits: usize,
    pub err_estimate: f64,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(
        "quadrature stalled on panel [{lo}, {hi}] at level {level} (relative step {err:.3e})"
    )]
    QuadratureStall {
        lo: f64,
        hi: f64,
        level: usize,
        err: f64,
    },
    #[error("moment matrix singular at n={n}: pivot {pivot_index} below noise threshold")]
    SingularMatrix { n: usize, pivot_index: usize },
    #[error("incompatible spec pair: {detail}")]
    SpecMismatch { detail: String },
}

/// `int_a^b x^{k+j*theta} w(x) dx` at the working precision implied by the
/// matrix the entry would belong to (`n = max(j, k) + 1`).
pub fn moment(
    j: usize,
    k: usize,
    spec: &ValidatedSpec,
    policy: &PrecisionPolicy,
) -> Result<ComplexBig, OracleError> {
    let bits = policy.working_bits(j.max(k) + 1);
    let mut eng = MomentEngine::new(spec.spec(), bits);
    let key = eng.scheme.key(j, k);
    eng.require(&[key])?;
    Ok(eng.cache[&key].clone())
}

/// Determinant of the size-`n` moment matrix, with doubled-precision check.
pub fn log_det(
    n: usize,
    spec: &ValidatedSpec,
    policy: &PrecisionPolicy,
) -> Result<DeterminantRecord, OracleError> {
    assert!(n >= 1, "determinant size must be at least 1");
    Ok(det_sweep(spec, n, n, policy)?.pop().expect("one record"))
}

/// Determinants for every `n` in `n_min..=n_max`.
///
/// Moments are computed once per precision and shared across the sweep, and
/// phases are unwrapped record-to-record, so this is both faster and better
/// defined than repeated single calls.
pub fn det_sweep(
    spec: &ValidatedSpec,
    n_min: usize,
    n_max: usize,
    policy: &PrecisionPolicy,
) -> Result<Vec<DeterminantRecord>, OracleError> {
    assert!(n_min >= 1 && n_min <= n_max, "need 1 <= n_min <= n_max");
    let p_work = policy.working_bits(n_max);
    let p_check = policy.verify_bits(n_max);
    let main = sweep_at(spec.spec(), n_min, n_max, p_work)?;
    let check = sweep_at(spec.spec(), n_min, n_max, p_check)?;

    let records = main
        .iter()
        .zip(check.iter())
        .enumerate()
        .map(|(i, (m, c))| {
            let rel_la = (m.0 - c.0).abs() / c.0.abs().max(1.0);
            let d_phase = (m.1 - c.1).abs() / std::f64::consts::TAU;
            DeterminantRecord {
                n: n_min + i,
                log_abs: m.0,
                phase: m.1,
                precision_bits: p_work,
                err_estimate: rel_la.max(d_phase),
            }
        })
        .collect();
    Ok(records)
}

/// `kappa_n^2 = D_n / D_{n+1}` with `D_0 = 1`; positive real for positive
/// weights, complex in general.
pub fn kappa_sq(
    n: usize,
    spec: &ValidatedSpec,
    policy: &PrecisionPolicy,
) -> Result<Complex64, OracleError> {
    let (la_n, ph_n, la_next, ph_next) = if n == 0 {
        let r = log_det(1, spec, policy)?;
        (0.0, 0.0, r.log_abs, r.phase)
    } else {
        let rs = det_sweep(spec, n, n + 1, policy)?;
        (rs[0].log_abs, rs[0].phase, rs[1].log_abs, rs[1].phase)
    };
    Ok(Complex64::from_polar(
        (la_n - la_next).exp(),
        ph_n - ph_next,
    ))
}

/// Ratio `D_n(w) / D_n(base) * prod_k e^{i pi n beta_k}`.
///
/// This equals the ensemble average of
/// `prod_k |p_n(t_k)|^{alpha_k} e^{2 pi i beta_k N_n(t_k)}` taken under the
/// base weight, which is what the sampler estimates empirically.  `base`
/// must be `spec` with every interior singularity switched off.
pub fn mgf_ratio(
    spec: &ValidatedSpec,
    base: &ValidatedSpec,
    n: usize,
    policy: &PrecisionPolicy,
) -> Result<Complex64, OracleError> {
    let f = spec.spec();
    let b = base.spec();
    let same_field = |x: f64, y: f64| x.to_bits() == y.to_bits();
    if !(same_field(f.a, b.a) && same_field(f.b, b.b) && same_field(f.theta, b.theta)) {
        return Err(OracleError::SpecMismatch {
            detail: "interval or theta differ between numerator and base".into(),
        });
    }
    if f.w_smooth != b.w_smooth || f.alpha_left != b.alpha_left || f.alpha_right != b.alpha_right {
        return Err(OracleError::SpecMismatch {
            detail: "smooth part or edge exponents differ between numerator and base".into(),
        });
    }
    if b
        .singularities
        .iter()
        .any(|s| s.alpha != Complex64::ZERO || s.beta != Complex64::ZERO)
    {
        return Err(OracleError::SpecMismatch {
            detail: "base weight must have all interior exponents zero".into(),
        });
    }

    let num = log_det(n, spec, policy)?;
    let den = log_det(n, base, policy)?;
    let ratio = Complex64::from_polar((num.log_abs - den.log_abs).exp(), num.phase - den.phase);
    let beta_sum: Complex64 = f.singularities.iter().map(|s| s.beta).sum();
    let convention = (Complex64::I * std::f64::consts::PI * n as f64 * beta_sum).exp();
    Ok(ratio * convention)
}

/// One full sweep at a fixed precision: `(log_abs, unwrapped phase)` per n.
fn sweep_at(
    spec: &EnsembleSpec,
    n_min: usize,
    n_max: usize,
    bits: usize,
) -> Result<Vec<(f64, f64)>, OracleError> {
    let mut eng = MomentEngine::new(spec, bits);
    let mut keys = Vec::new();
    let mut seen = HashSet::new();
    for j in 0..n_max {
        for k in 0..n_max {
            let key = eng.scheme.key(j, k);
            if seen.insert(key) {
                keys.push(key);
            }
        }
    }
    eng.require(&keys)?;

    let mut out = Vec::with_capacity(n_max - n_min + 1);
    let mut prev_phase = 0.0;
    for n in n_min..=n_max {
        let m = eng.matrix(n);
        let (la, raw_phase) = log_det_lu(&mut eng.ctx, m)
            .map_err(|pivot_index| OracleError::SingularMatrix { n, pivot_index })?;
        let phase = prev_phase + wrap_to_pi(raw_phase - prev_phase);
        prev_phase = phase;
        out.push((to_f64(&la), phase));
    }
    Ok(out)
}

/// Reduce to `(-pi, pi]`.
fn wrap_to_pi(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut y = x % tau;
    if y <= -std::f64::consts::PI {
        y += tau;
    } else if y > std::f64::consts::PI {
        y -= tau;
    }
    y
}

/// In-place partial-pivot elimination; returns `Sum ln|U_ii|` (still in
/// extended precision) and the accumulated argument including the row-swap
/// sign.  `Err(column)` when a pivot falls below `2^{-p/2}` of the largest
/// initial entry.
fn log_det_lu(ctx: &mut BigCtx, mut m: Vec<Vec<ComplexBig>>) -> Result<(BigFloat, f64), usize> {
    let n = m.len();
    let mut max_nsq = ctx.big(0.0);
    for row in &m {
        for e in row {
            let nsq = ctx.cnorm_sq(e);
            if nsq.partial_cmp(&max_nsq) == Some(std::cmp::Ordering::Greater) {
                max_nsq = nsq;
            }
        }
    }
    // |pivot| >= 2^{-p/2} * max|entry|, squared to avoid roots
    let threshold = ctx.scale2(&max_nsq, -(ctx.p as i64));

    let mut log_abs = ctx.big(0.0);
    let mut phase = 0.0;
    let mut swaps = 0usize;
    for col in 0..n {
        let mut best = col;
        let mut best_nsq = ctx.cnorm_sq(&m[col][col]);
        for (off, row) in m[col + 1..].iter().enumerate() {
            let nsq = ctx.cnorm_sq(&row[col]);
            if nsq.partial_cmp(&best_nsq) == Some(std::cmp::Ordering::Greater) {
                best = col + 1 + off;
                best_nsq = nsq;
            }
        }
        if best_nsq.partial_cmp(&threshold) != Some(std::cmp::Ordering::Greater) {
            return Err(col);
        }
        if best != col {
            m.swap(col, best);
            swaps += 1;
        }

        let pivot = m[col][col].clone();
        let ln_nsq = ctx.ln(&best_nsq);
        log_abs = ctx.add(&log_abs, &ctx.scale2(&ln_nsq, -1));
        phase += carg_f64(&pivot);

        let (top, below) = m.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in below {
            if row[col].re.is_zero() && row[col].im.is_zero() {
                continue;
            }
            let f = ctx.cdiv(&row[col], &pivot);
            for k in col + 1..n {
                let t = ctx.cmul(&f, &pivot_row[k]);
                row[k] = ctx.csub(&row[k], &t);
            }
        }
    }
    if swaps % 2 == 1 {
        phase += std::f64::consts::PI;
    }
    Ok((log_abs, phase))
}

/// Exponent bookkeeping: when `theta` is (exactly) rational `p/q` with a
/// small denominator, the exponents `k + j*theta` live on the lattice
/// `(k*q + j*p)/q` and moments dedupe across the matrix -- at `theta = 1`
/// this is precisely the Hankel property, and at rational `theta` it cuts
/// the O(n^2) distinct exponents down to O(n).
#[derive(Debug, Clone, Copy)]
struct ExponentScheme {
    theta: f64,
    rational: Option<(i64, i64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum MomentKey {
    Lattice(i64),
    Pair(u32, u32),
}

impl ExponentScheme {
    fn new(theta: f64) -> Self {
        ExponentScheme {
            theta,
            rational: rational_approx(theta),
        }
    }

    fn key(&self, j: usize, k: usize) -> MomentKey {
        match self.rational {
            Some((p, q)) => MomentKey::Lattice(k as i64 * q + j as i64 * p),
            None => MomentKey::Pair(j as u32, k as u32),
        }
    }

    /// The exponent as an exact extended-precision value.
    fn mu(&self, ctx: &BigCtx, key: MomentKey) -> BigFloat {
        match (key, self.rational) {
            (MomentKey::Lattice(idx), Some((_, q))) => ctx.div(&ctx.int(idx), &ctx.int(q)),
            (MomentKey::Pair(j, k), _) => {
                let jt = ctx.mul(&ctx.int(j as i64), &ctx.big(self.theta));
                ctx.add(&ctx.int(k as i64), &jt)
            }
            (MomentKey::Lattice(_), None) => unreachable!("lattice key without rational theta"),
        }
    }
}

/// Continued-fraction reconstruction of `theta` as `p/q`, accepted only when
/// the quotient reproduces the f64 to a few ulps with `q <= 1024`.
fn rational_approx(theta: f64) -> Option<(i64, i64)> {
    let (mut p0, mut q0) = (1i64, 0i64);
    let (mut p1, mut q1) = (theta.floor() as i64, 1i64);
    let mut frac = theta - theta.floor();
    for _ in 0..64 {
        if q1 > 1024 {
            return None;
        }
        if (theta - p1 as f64 / q1 as f64).abs() <= 4.0 * f64::EPSILON * theta {
            return Some((p1, q1));
        }
        if frac == 0.0 {
            return None;
        }
        let inv = 1.0 / frac;
        let a = inv.floor();
        frac = inv - a;
        let a = a as i64;
        let p2 = a.checked_mul(p1)?.checked_add(p0)?;
        let q2 = a.checked_mul(q1)?.checked_add(q0)?;
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
    }
    None
}

/// Which panel endpoint (if any) an anchor coincides with; endpoint
/// distances come from the canonical node table, everything else is safe to
/// form by subtraction because other anchors are at least a full panel away.
enum AnchorRole {
    Lo,
    Hi,
    Far(BigFloat),
}

/// One `|x - t|^alpha` factor as it appears from inside a given panel.
struct AnchorTerm {
    role: AnchorRole,
    alpha_re: Option<BigFloat>,
    alpha_im: Option<BigFloat>,
}

/// Integration panel between consecutive anchors, with its constant jump
/// factor and the per-panel view of every singular term.
struct Panel {
    lo: f64,
    hi: f64,
    lo_big: BigFloat,
    hi_big: BigFloat,
    /// Half-width: maps canonical `[-1, 1]` nodes onto the panel.
    r: BigFloat,
    ln_r: BigFloat,
    /// Product of the one-sided jump constants, constant on the open panel.
    omega: Option<ComplexBig>,
    terms: Vec<AnchorTerm>,
}

/// Everything cached about one node of one panel level: the factors of the
/// integrand that do not depend on the exponent `mu`.
struct PanelNode {
    ln_x: BigFloat,
    /// Canonical weight times `e^{Re E(x)}` with `E` collecting `W` and all
    /// `alpha log` terms.
    factor: BigFloat,
    /// `(cos Im E, sin Im E)` when the weight has a genuinely complex power.
    trig: Option<(BigFloat, BigFloat)>,
}

struct MomentEngine {
    scheme: ExponentScheme,
    ctx: BigCtx,
    table: TsTable,
    panels: Vec<Panel>,
    w_coeffs: Vec<BigFloat>,
    /// nodes[panel][level]
    nodes: Vec<Vec<Vec<PanelNode>>>,
    cache: HashMap<MomentKey, ComplexBig>,
}

impl MomentEngine {
    fn new(spec: &EnsembleSpec, bits: usize) -> Self {
        let mut ctx = BigCtx::new(bits);
        let table = TsTable::new(bits);
        let scheme = ExponentScheme::new(spec.theta);
        let w_coeffs: Vec<BigFloat> = spec.w_smooth.iter().map(|&c| ctx.big(c)).collect();

        let mut anchors: Vec<(f64, Complex64)> = Vec::new();
        anchors.push((spec.a, spec.alpha_left));
        for s in &spec.singularities {
            anchors.push((s.t, s.alpha));
        }
        anchors.push((spec.b, spec.alpha_right));

        let mut panels = Vec::with_capacity(anchors.len() - 1);
        for w in anchors.windows(2) {
            let (lo, hi) = (w[0].0, w[1].0);
            let r = ctx.scale2(&ctx.sub(&ctx.big(hi), &ctx.big(lo)), -1);
            let ln_r = ctx.ln(&r);

            // exact signed sum of the jump exponents seen from this panel
            let mut sum_re = ctx.big(0.0);
            let mut sum_im = ctx.big(0.0);
            let mut any = false;
            for s in &spec.singularities {
                if s.beta == Complex64::ZERO {
                    continue;
                }
                any = true;
                let sign = if s.t >= hi { 1.0 } else { -1.0 };
                sum_re = ctx.add(&sum_re, &ctx.big(sign * s.beta.re));
                sum_im = ctx.add(&sum_im, &ctx.big(sign * s.beta.im));
            }
            // omega = e^{i pi (sum_re + i sum_im)}
            let omega = if any {
                let pi = ctx.pi();
                let arg = ctx.mul(&pi, &sum_re);
                let mag = {
                    let e = ctx.mul(&pi, &sum_im).neg();
                    ctx.exp(&e)
                };
                let cos = ctx.cos(&arg);
                let sin = ctx.sin(&arg);
                let re = ctx.mul(&mag, &cos);
                let im = ctx.mul(&mag, &sin);
                Some(ComplexBig { re, im })
            } else {
                None
            };

            let terms = anchors
                .iter()
                .filter(|(_, alpha)| *alpha != Complex64::ZERO)
                .map(|&(pos, alpha)| AnchorTerm {
                    role: if pos == lo {
                        AnchorRole::Lo
                    } else if pos == hi {
                        AnchorRole::Hi
                    } else {
                        AnchorRole::Far(ctx.big(pos))
                    },
                    alpha_re: (alpha.re != 0.0).then(|| ctx.big(alpha.re)),
                    alpha_im: (alpha.im != 0.0).then(|| ctx.big(alpha.im)),
                })
                .collect();

            panels.push(Panel {
                lo,
                hi,
                lo_big: ctx.big(lo),
                hi_big: ctx.big(hi),
                r,
                ln_r,
                omega,
                terms,
            });
        }

        let nodes = panels.iter().map(|_| Vec::new()).collect();
        MomentEngine {
            scheme,
            ctx,
            table,
            panels,
            w_coeffs,
            nodes,
            cache: HashMap::new(),
        }
    }

    /// Compute and cache every listed moment that is not already known.
    fn require(&mut self, keys: &[MomentKey]) -> Result<(), OracleError> {
        let missing: Vec<MomentKey> = {
            let mut seen = HashSet::new();
            keys.iter()
                .copied()
                .filter(|k| !self.cache.contains_key(k) && seen.insert(*k))
                .collect()
        };
        if missing.is_empty() {
            return Ok(());
        }
        let mus: Vec<BigFloat> = missing
            .iter()
            .map(|&k| self.scheme.mu(&self.ctx, k))
            .collect();

        let mut totals = vec![ComplexBig::zero(&self.ctx); missing.len()];
        for panel_idx in 0..self.panels.len() {
            let sums = self.panel_sums(panel_idx, &mus)?;
            let panel = &self.panels[panel_idx];
            for (total, sum) in totals.iter_mut().zip(sums) {
                let mut v = self.ctx.cmul_real(&sum, &panel.r);
                if let Some(omega) = &panel.omega {
                    v = self.ctx.cmul(&v, omega);
                }
                *total = self.ctx.cadd(total, &v);
            }
        }
        for (key, total) in missing.into_iter().zip(totals) {
            self.cache.insert(key, total);
        }
        Ok(())
    }

    /// Adaptive canonical-level refinement of all requested exponents on one
    /// panel, sharing the node cache across exponents and levels.
    fn panel_sums(
        &mut self,
        panel_idx: usize,
        mus: &[BigFloat],
    ) -> Result<Vec<ComplexBig>, OracleError> {
        let bits = self.ctx.p;
        let mut sums = vec![ComplexBig::zero(&self.ctx); mus.len()];
        let mut done = vec![false; mus.len()];
        let mut errs = vec![f64::INFINITY; mus.len()];

        for level in 0..=LEVEL_CAP {
            self.ensure_nodes(panel_idx, level);
            let nodes: &[PanelNode] = &self.nodes[panel_idx][level];

            let active: Vec<usize> = (0..mus.len()).filter(|&i| !done[i]).collect();
            let parts: Vec<(usize, ComplexBig)> = active
                .par_iter()
                .map_init(
                    || BigCtx::new(bits),
                    |tctx, &i| (i, level_part(tctx, nodes, &mus[i])),
                )
                .collect();

            let ctx = &self.ctx;
            for (i, part) in parts {
                let s_new = if level == 0 {
                    part
                } else {
                    let half = cscale2(ctx, &sums[i], -1);
                    let add = cscale2(ctx, &part, -(level as i64));
                    ctx.cadd(&half, &add)
                };
                if level >= MIN_CHECK_LEVEL {
                    let diff = ctx.csub(&s_new, &sums[i]);
                    match rel_exponent(ctx, &diff, &s_new) {
                        None => {
                            done[i] = true;
                            errs[i] = 0.0;
                        }
                        Some(e) => {
                            errs[i] = (e as f64).exp2();
                            if e <= -((bits as i64) / 2) {
                                done[i] = true;
                            }
                        }
                    }
                }
                sums[i] = s_new;
            }
            if done.iter().all(|&d| d) {
                return Ok(sums);
            }
        }

        let worst = errs
            .iter()
            .zip(&done)
            .filter(|(_, &d)| !d)
            .map(|(&e, _)| e)
            .fold(0.0, f64::max);
        Err(OracleError::QuadratureStall {
            lo: self.panels[panel_idx].lo,
            hi: self.panels[panel_idx].hi,
            level: LEVEL_CAP,
            err: worst,
        })
    }

    fn ensure_nodes(&mut self, panel_idx: usize, level: usize) {
        while self.nodes[panel_idx].len() <= level {
            let l = self.nodes[panel_idx].len();
            self.table.ensure(&mut self.ctx, l);
            let built = build_panel_nodes(
                &mut self.ctx,
                self.table.level(l),
                &self.panels[panel_idx],
                &self.w_coeffs,
            );
            self.nodes[panel_idx].push(built);
        }
    }

    /// The leading `n x n` block as a dense complex matrix.
    fn matrix(&self, n: usize) -> Vec<Vec<ComplexBig>> {
        (0..n)
            .map(|j| {
                (0..n)
                    .map(|k| self.cache[&self.scheme.key(j, k)].clone())
                    .collect()
            })
            .collect()
    }
}

/// Level contribution of one exponent: `sum_nodes factor * x^mu * trig`.
fn level_part(ctx: &mut BigCtx, nodes: &[PanelNode], mu: &BigFloat) -> ComplexBig {
    let mut re = ctx.big(0.0);
    let mut im = ctx.big(0.0);
    for node in nodes {
        let e = ctx.mul(mu, &node.ln_x);
        let p = ctx.exp(&e);
        let f = ctx.mul(&p, &node.factor);
        match &node.trig {
            None => re = ctx.add(&re, &f),
            Some((c, s)) => {
                re = ctx.add(&re, &ctx.mul(&f, c));
                im = ctx.add(&im, &ctx.mul(&f, s));
            }
        }
    }
    ComplexBig { re, im }
}

/// Materialize the mu-independent part of the integrand on one canonical
/// level of one panel.
fn build_panel_nodes(
    ctx: &mut BigCtx,
    canon: &[CanonNode],
    panel: &Panel,
    w_coeffs: &[BigFloat],
) -> Vec<PanelNode> {
    canon
        .iter()
        .map(|node| {
            let near_lo = node.dist_lo.partial_cmp(&node.dist_hi) != Some(std::cmp::Ordering::Greater);
            // build x from the nearer endpoint so tiny distances stay exact
            let x = if near_lo {
                let d = ctx.mul(&panel.r, &node.dist_lo);
                ctx.add(&panel.lo_big, &d)
            } else {
                let d = ctx.mul(&panel.r, &node.dist_hi);
                ctx.sub(&panel.hi_big, &d)
            };
            let ln_x = ctx.ln(&x);

            let mut e_re = if w_coeffs.is_empty() {
                None
            } else {
                Some(horner_big(ctx, w_coeffs, &x))
            };
            let mut e_im: Option<BigFloat> = None;
            for term in &panel.terms {
                let ln_d = match &term.role {
                    AnchorRole::Lo => ctx.add(&panel.ln_r, &node.ln_dist_lo),
                    AnchorRole::Hi => ctx.add(&panel.ln_r, &node.ln_dist_hi),
                    AnchorRole::Far(pos) => {
                        let d = ctx.sub(&x, pos).abs();
                        ctx.ln(&d)
                    }
                };
                if let Some(a) = &term.alpha_re {
                    let t = ctx.mul(a, &ln_d);
                    e_re = Some(match e_re {
                        None => t,
                        Some(acc) => ctx.add(&acc, &t),
                    });
                }
                if let Some(a) = &term.alpha_im {
                    let t = ctx.mul(a, &ln_d);
                    e_im = Some(match e_im {
                        None => t,
                        Some(acc) => ctx.add(&acc, &t),
                    });
                }
            }

            let factor = match e_re {
                None => node.weight.clone(),
                Some(e) => {
                    let g = ctx.exp(&e);
                    ctx.mul(&node.weight, &g)
                }
            };
            let trig = e_im.map(|e| (ctx.cos(&e), ctx.sin(&e)));
            PanelNode { ln_x, factor, trig }
        })
        .collect()
}

fn horner_big(ctx: &BigCtx, coeffs: &[BigFloat], x: &BigFloat) -> BigFloat {
    let mut acc = ctx.big(0.0);
    for c in coeffs.iter().rev() {
        acc = ctx.add(&ctx.mul(&acc, x), c);
    }
    acc
}

fn cscale2(ctx: &BigCtx, z: &ComplexBig, k: i64) -> ComplexBig {
    ComplexBig {
        re: ctx.scale2(&z.re, k),
        im: ctx.scale2(&z.im, k),
    }
}

/// Approximate `log2(|d| / |s|)`, exponent arithmetic only so it cannot
/// under- or overflow.  `None` means `d` is exactly zero.
fn rel_exponent(ctx: &BigCtx, d: &ComplexBig, s: &ComplexBig) -> Option<i64> {
    let dn = ctx.cnorm_sq(d);
    if dn.is_zero() {
        return None;
    }
    let sn = ctx.cnorm_sq(s);
    if sn.is_zero() {
        return Some(i64::MAX / 2);
    }
    let (_, de) = frexp_big(&dn);
    let (_, se) = frexp_big(&sn);
    Some((de as i64 - se as i64) / 2)
}
