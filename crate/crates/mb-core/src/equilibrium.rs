//! Equilibrium measure of the ensemble via its conformal-map representation.
//!
//! For `theta > 0` and `0 < a < b` the equilibrium measure `rho(x) dx` on
//! `[a, b]` is encoded by the rational-power map
//!
//! ```text
//! J(s) = (c1 s + c0) ((s + 1) / s)^{1/theta}
//! ```
//!
//! with `c0 > c1 > 0` fixed by requiring that the two critical values of `J`
//! on the real axis equal `a` and `b`.  The inverse branch `I(x)` that maps
//! the upper side of `[a, b]` into the upper half plane determines the
//! density, its counting function, and the logarithmic potential in closed
//! form.  This module solves for `(c0, c1)`, tabulates the boundary inverse,
//! and exposes the derived quantities.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::quadrature::tanh_sinh_f64;

#[derive(Debug, thiserror::Error)]
pub enum EquilibriumError {
    #[error("map argument on the branch cut [-1, 0]: s = {s}")]
    BranchCutError { s: Complex64 },
    #[error("failed to bracket the interval-ratio equation: {detail}")]
    BracketFailure { detail: String },
    #[error("solver finished but residual {residual} exceeds tolerance {tol}")]
    ToleranceNotMet { residual: f64, tol: f64 },
    #[error("Newton iteration diverged near s = {last} (|J(s) - x| = {residual})")]
    NewtonDivergence { last: Complex64, residual: f64 },
    #[error("continuation stalled after {attempts} refinements toward x = {target}")]
    ContinuationStall { target: Complex64, attempts: usize },
    #[error("non-finite sample value at x = {x}")]
    NonFiniteSample { x: f64 },
    #[error("x = {x} is outside the open support ({a}, {b})")]
    OutsideSupport { x: f64, a: f64, b: f64 },
}

/// One tabulated point of the boundary inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub x: f64,
    /// Upper-boundary inverse `I(x)`, with `Im > 0` inside `(a, b)`.
    pub s: Complex64,
    /// Derivative `I'(x) = 1 / J'(I(x))`.
    pub ds_dx: Complex64,
}

/// Solved equilibrium data for one `(a, b, theta)` triple.
///
/// Scalar fields are the map coefficients and derived constants:
/// `s_a < -1 < 0 < 1/theta < s_b` are the critical points, `d_a`, `d_b` the
/// (positive) residue weights of the density, and `ell` the Lagrange
/// multiplier of the equilibrium problem, `ell = -ln c1 - theta ln c0`.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumData {
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub c0: f64,
    pub c1: f64,
    pub s_a: f64,
    pub s_b: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub ell: f64,
    #[serde(skip_serializing)]
    table: BoundaryTable,
}

#[derive(Debug, Clone, Default)]
struct BoundaryTable {
    x: Vec<f64>,
    s: Vec<Complex64>,
}

const X_RESIDUAL_TOL: f64 = 1e-13;
const TABLE_SIZE: usize = 1200;

fn on_cut(s: Complex64) -> bool {
    s.im == 0.0 && (-1.0..=0.0).contains(&s.re)
}

/// `((s+1)/s)^{1/theta}`, principal branch (real positive off `[-1, 0]`
/// on the real axis).
fn branch_factor(s: Complex64, theta: f64) -> Complex64 {
    (((s + 1.0) / s).ln() / theta).exp()
}

fn map_j_raw(s: Complex64, c0: f64, c1: f64, theta: f64) -> Complex64 {
    if s == Complex64::new(-1.0, 0.0) {
        return Complex64::new(0.0, 0.0);
    }
    (c1 * s + c0) * branch_factor(s, theta)
}

fn j_prime_raw(s: Complex64, c0: f64, c1: f64, theta: f64) -> Complex64 {
    let g = branch_factor(s, theta);
    g * (c1 - (c1 * s + c0) / (theta * s * (s + 1.0)))
}

fn j_second_raw(s: Complex64, c0: f64, c1: f64, theta: f64) -> Complex64 {
    let g = branch_factor(s, theta);
    let ss1 = theta * s * (s + 1.0);
    let h = c1 - (c1 * s + c0) / ss1;
    g * (-(h + c1) / ss1 + (c1 * s + c0) * (2.0 * s + 1.0) / (ss1 * s * (s + 1.0)))
}

/// Critical points of `J` as functions of `ratio = c0 / c1` and `theta`,
/// returned as `(s_a, s_b)` with `s_a < -1` and `s_b > 1/theta`.
///
/// They satisfy `s_a * s_b = -ratio / theta` and
/// `s_a + s_b = (1 - theta) / theta`.
pub fn critical_points(ratio: f64, theta: f64) -> (f64, f64) {
    let disc = (4.0 * theta * ratio + (1.0 - theta) * (1.0 - theta)).sqrt();
    let base = (1.0 - theta) / (2.0 * theta);
    (base - disc / (2.0 * theta), base + disc / (2.0 * theta))
}

/// Damped Newton iteration for `J(s) = target` from a given seed.
///
/// Iterates toward the `f64` noise floor of the map evaluation; `tol` is the
/// acceptance threshold used only when damping can no longer make progress.
/// Near the edges this matters: the residual gets divided by a small `J'`,
/// so stopping early at `tol` would cost several digits in `s`.
fn newton_map(
    target: Complex64,
    seed: Complex64,
    c0: f64,
    c1: f64,
    theta: f64,
    tol: f64,
) -> Option<Complex64> {
    let mut s = seed;
    if on_cut(s) {
        return None;
    }
    let tight = 4.0 * f64::EPSILON * target.norm().max(c0);
    let mut resid = map_j_raw(s, c0, c1, theta) - target;
    for _ in 0..60 {
        if resid.norm() <= tight {
            return Some(s);
        }
        let jp = j_prime_raw(s, c0, c1, theta);
        if jp.norm() == 0.0 || !jp.is_finite() {
            break;
        }
        let mut step = -resid / jp;
        let mut accepted = false;
        for _ in 0..12 {
            let cand = s + step;
            if !on_cut(cand) && cand.is_finite() {
                let r2 = map_j_raw(cand, c0, c1, theta) - target;
                if r2.norm() < resid.norm() {
                    s = cand;
                    resid = r2;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if resid.norm() <= tol.max(tight) {
        Some(s)
    } else {
        None
    }
}

/// Solve for the map coefficients on `[a, b]` and tabulate the boundary
/// inverse.
///
/// `tol` bounds the final map residual: `|J(s_a) - a|` and `|J(s_b) - b|`
/// must not exceed `tol * (b - a)`.
pub fn solve_coefficients(
    a: f64,
    b: f64,
    theta: f64,
    tol: f64,
) -> Result<EquilibriumData, EquilibriumError> {
    assert!(
        a.is_finite() && b.is_finite() && a > 0.0 && b > a && theta > 0.0,
        "solve_coefficients requires 0 < a < b and theta > 0"
    );
    let log_ratio = (b / a).ln();

    // F(x) = ln J1(s_b(x); x) - ln J1(s_a(x); x) - ln(b/a), where
    // J1(s; x) = (s + x)((s+1)/s)^{1/theta} is the map with c1 = 1, c0 = x.
    // F is strictly decreasing on x > 1 with F(1+) = +inf, and the envelope
    // identity gives F'(x) = 1/(s_b + x) - 1/(s_a + x).
    let f_val = |x: f64| -> f64 {
        let (sa, sb) = critical_points(x, theta);
        let lb = (sb + x).ln() + ((sb + 1.0) / sb).ln() / theta;
        let la = (sa + x).ln() + ((sa + 1.0) / sa).ln() / theta;
        lb - la - log_ratio
    };
    let f_deriv = |x: f64| -> f64 {
        let (sa, sb) = critical_points(x, theta);
        1.0 / (sb + x) - 1.0 / (sa + x)
    };

    // Bracket the root, expanding from the theta = 1 closed form.
    let sqrt_r = (b / a).sqrt();
    let mut lo = 1.0 + 1e-14;
    let mut hi = ((sqrt_r + 1.0) / (sqrt_r - 1.0)).powi(2).max(lo * 2.0);
    let mut expansions = 0;
    while f_val(hi) > 0.0 {
        hi *= 4.0;
        expansions += 1;
        if !hi.is_finite() || expansions > 200 {
            return Err(EquilibriumError::BracketFailure {
                detail: format!("no sign change up to x = {hi} for theta = {theta}, b/a = {}", b / a),
            });
        }
    }
    if f_val(lo) < 0.0 {
        return Err(EquilibriumError::BracketFailure {
            detail: format!("F({lo}) < 0; interval ratio {} too close to 1", b / a),
        });
    }

    // Safeguarded Newton on F.
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f_val(x);
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = -fx / f_deriv(x);
        let mut next = x + step;
        if !(lo < next && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x {
            x = next;
            break;
        }
        x = next;
    }

    let (s_a, s_b) = critical_points(x, theta);
    let ln_j1_b = (s_b + x).ln() + ((s_b + 1.0) / s_b).ln() / theta;
    let c1 = b * (-ln_j1_b).exp();
    let c0 = x * c1;

    let ra = (map_j_raw(Complex64::new(s_a, 0.0), c0, c1, theta).re - a).abs();
    let rb = (map_j_raw(Complex64::new(s_b, 0.0), c0, c1, theta).re - b).abs();
    let residual = ra.max(rb) / (b - a);
    if residual > tol {
        return Err(EquilibriumError::ToleranceNotMet { residual, tol });
    }

    let d_a = s_a * (1.0 + s_a) * (s_b * theta - 1.0) / (s_b - s_a);
    let d_b = s_b * (1.0 + s_b) * (1.0 - s_a * theta) / (s_b - s_a);
    let ell = -c1.ln() - theta * c0.ln();

    let mut data = EquilibriumData {
        a,
        b,
        theta,
        c0,
        c1,
        s_a,
        s_b,
        d_a,
        d_b,
        ell,
        table: BoundaryTable::default(),
    };
    data.build_table()?;
    Ok(data)
}

/// Evaluate the map `J` at `s`; `s` must avoid the branch cut `[-1, 0]`.
pub fn map_j(data: &EquilibriumData, s: Complex64) -> Result<Complex64, EquilibriumError> {
    if on_cut(s) {
        return Err(EquilibriumError::BranchCutError { s });
    }
    Ok(map_j_raw(s, data.c0, data.c1, data.theta))
}

impl EquilibriumData {
    fn x_tol(&self) -> f64 {
        X_RESIDUAL_TOL * self.b.max(1.0)
    }

    /// Seed for the boundary inverse near an edge, from the square-root
    /// expansion of `J` around the corresponding critical point.
    fn edge_seed(&self, x: f64) -> Complex64 {
        let da = x - self.a;
        let db = self.b - x;
        if da <= db {
            let j2 = j_second_raw(Complex64::new(self.s_a, 0.0), self.c0, self.c1, self.theta).re;
            Complex64::new(self.s_a, (2.0 * da / j2.abs()).sqrt())
        } else {
            let j2 = j_second_raw(Complex64::new(self.s_b, 0.0), self.c0, self.c1, self.theta).re;
            Complex64::new(self.s_b, (2.0 * db / j2).sqrt())
        }
    }

    fn build_table(&mut self) -> Result<(), EquilibriumError> {
        let m = TABLE_SIZE;
        let mid = 0.5 * (self.a + self.b);
        let half = 0.5 * (self.b - self.a);
        let tol = self.x_tol();

        // March from the right edge toward the left edge, clustering nodes
        // near both edges where the inverse has square-root behavior; the
        // cosine grid keeps the arc-length step in s roughly uniform.
        let xs: Vec<f64> = (1..m)
            .rev()
            .map(|i| mid - half * (PI * i as f64 / m as f64).cos())
            .collect();
        let mut x_col = Vec::with_capacity(m - 1);
        let mut s_col = Vec::with_capacity(m - 1);

        let mut s = {
            let x0 = xs[0];
            let seed = self.edge_seed(x0);
            newton_map(Complex64::new(x0, 0.0), seed, self.c0, self.c1, self.theta, tol)
                .ok_or(EquilibriumError::NewtonDivergence {
                    last: seed,
                    residual: f64::NAN,
                })?
        };
        x_col.push(xs[0]);
        s_col.push(s);

        for w in xs.windows(2) {
            let (prev_x, next_x) = (w[0], w[1]);
            // step toward next_x, bisecting the x-step whenever Newton from
            // the previous inverse fails
            let mut pending = vec![next_x];
            let mut cur_x = prev_x;
            let mut attempts = 0;
            while let Some(target) = pending.pop() {
                attempts += 1;
                if attempts > 400 {
                    return Err(EquilibriumError::ContinuationStall {
                        target: Complex64::new(target, 0.0),
                        attempts,
                    });
                }
                match newton_map(Complex64::new(target, 0.0), s, self.c0, self.c1, self.theta, tol)
                {
                    Some(next_s) if next_s.im > 0.0 => {
                        s = next_s;
                        cur_x = target;
                    }
                    _ => {
                        pending.push(target);
                        pending.push(0.5 * (cur_x + target));
                    }
                }
            }
            x_col.push(next_x);
            s_col.push(s);
        }

        // reverse into ascending-x order
        x_col.reverse();
        s_col.reverse();
        self.table = BoundaryTable { x: x_col, s: s_col };
        Ok(())
    }

    /// Upper-boundary inverse `I(x)` for `x` strictly inside `(a, b)`.
    pub fn inverse_boundary_upper(&self, x: f64) -> Result<BoundaryPoint, EquilibriumError> {
        if !x.is_finite() || x <= self.a || x >= self.b {
            return Err(EquilibriumError::OutsideSupport {
                x,
                a: self.a,
                b: self.b,
            });
        }
        let idx = self.table.x.partition_point(|&v| v < x);
        let mut best: Option<Complex64> = None;
        for j in [idx.wrapping_sub(1), idx] {
            if let Some(&xs) = self.table.x.get(j) {
                let better = match best {
                    None => true,
                    Some(_) => {
                        (xs - x).abs() < (self.table.x[idx.wrapping_sub(1)] - x).abs()
                    }
                };
                if better {
                    best = Some(self.table.s[j]);
                }
            }
        }
        let seed = match best {
            Some(s) => s,
            None => self.edge_seed(x),
        };
        // near the edges the tabulated seed may be relatively far; prefer the
        // square-root expansion there
        let seed = if x < self.table.x[0] || x > *self.table.x.last().unwrap() {
            self.edge_seed(x)
        } else {
            seed
        };
        let s = newton_map(Complex64::new(x, 0.0), seed, self.c0, self.c1, self.theta, self.x_tol())
            .filter(|s| s.im > 0.0)
            .ok_or(EquilibriumError::NewtonDivergence {
                last: seed,
                residual: (map_j_raw(seed, self.c0, self.c1, self.theta) - x).norm(),
            })?;
        let ds_dx = 1.0 / j_prime_raw(s, self.c0, self.c1, self.theta);
        Ok(BoundaryPoint { x, s, ds_dx })
    }

    /// Equilibrium density, zero outside the open interval.
    pub fn density(&self, x: f64) -> Result<f64, EquilibriumError> {
        if !x.is_finite() {
            return Err(EquilibriumError::NonFiniteSample { x });
        }
        if x <= self.a || x >= self.b {
            return Ok(0.0);
        }
        let bp = self.inverse_boundary_upper(x)?;
        // rho = -(1/pi) Im( I'(x) / I(x) )
        Ok((-(bp.ds_dx / bp.s).im / PI).max(0.0))
    }

    /// Density evaluated through the residue decomposition
    /// `rho(x) = -(1/(pi x)) [ d_a Im 1/(s - s_a) + d_b Im 1/(s - s_b) ]`,
    /// `s = I(x)`.  Agrees with [`Self::density`] to quadrature accuracy and
    /// serves as an internal cross-check.
    pub fn density_residue_form(&self, x: f64) -> Result<f64, EquilibriumError> {
        if !x.is_finite() {
            return Err(EquilibriumError::NonFiniteSample { x });
        }
        if x <= self.a || x >= self.b {
            return Ok(0.0);
        }
        let s = self.inverse_boundary_upper(x)?.s;
        let term = self.d_a * (1.0 / (s - self.s_a)).im + self.d_b * (1.0 / (s - self.s_b)).im;
        Ok((-term / (PI * x)).max(0.0))
    }

    /// Distribution function `F(t) = mu([a, t])`, clamped to `[0, 1]`.
    pub fn cdf(&self, t: f64) -> Result<f64, EquilibriumError> {
        if !t.is_finite() {
            return Err(EquilibriumError::NonFiniteSample { x: t });
        }
        if t <= self.a {
            return Ok(0.0);
        }
        if t >= self.b {
            return Ok(1.0);
        }
        let s = self.inverse_boundary_upper(t)?.s;
        Ok((1.0 - s.arg() / PI).clamp(0.0, 1.0))
    }

    /// Logarithmic potential `U(t) = int ln|t - y| d mu(y)`, in closed form
    /// `ln(c1 |I(t)|)`.  Defined for every real `t > 0`; on the support the
    /// boundary inverse is used, outside the outer inverse.
    pub fn log_potential(&self, t: f64) -> Result<f64, EquilibriumError> {
        if !t.is_finite() || t <= 0.0 {
            return Err(EquilibriumError::NonFiniteSample { x: t });
        }
        let s_abs = if t == self.a {
            self.s_a.abs()
        } else if t == self.b {
            self.s_b
        } else if t > self.a && t < self.b {
            self.inverse_boundary_upper(t)?.s.norm()
        } else {
            self.inverse_outer(Complex64::new(t, 0.0))?.norm()
        };
        Ok((self.c1 * s_abs).ln())
    }

    /// Inverse of `J` on the exterior domain (the branch with
    /// `I(z) ~ z / c1` at infinity), for `z` off the support `[a, b]`.
    pub fn inverse_outer(&self, z: Complex64) -> Result<Complex64, EquilibriumError> {
        if !z.is_finite() {
            return Err(EquilibriumError::NonFiniteSample { x: z.re });
        }
        if z.im == 0.0 && z.re >= self.a && z.re <= self.b {
            // the support is the branch cut of the exterior inverse, except
            // for its ends which are regular critical values
            if z.re == self.a {
                return Ok(Complex64::new(self.s_a, 0.0));
            }
            if z.re == self.b {
                return Ok(Complex64::new(self.s_b, 0.0));
            }
            return Err(EquilibriumError::BranchCutError { s: z });
        }
        let tol = self.x_tol().max(1e-13 * z.norm());

        // direct Newton from the asymptotic seed, validated against the
        // exclusion region bounded by the tabulated curve
        if let Some(s) = newton_map(z, z / self.c1, self.c0, self.c1, self.theta, tol) {
            let sign_ok = z.im == 0.0 || z.im.signum() == s.im.signum() || s.im == 0.0;
            if sign_ok && self.is_outside_exclusion(s) {
                return Ok(s);
            }
        }

        // radial continuation from far away along the ray of constant arg(z);
        // the ray never meets [a, b] because real z inside was handled above
        let s_max = self.s_a.abs().max(self.s_b);
        let far = (16.0 * (s_max + 1.0) * self.c1 + 4.0 * self.c0).max(4.0 * z.norm());
        let scale = far / z.norm();
        let steps = 64;
        let mut s = z * scale / self.c1;
        let mut cur = z * scale;
        let mut pending: Vec<Complex64> = (0..=steps)
            .map(|k| z * scale.powf(k as f64 / steps as f64))
            .collect();
        let mut attempts = 0usize;
        while let Some(target) = pending.pop() {
            attempts += 1;
            if attempts > 4000 {
                return Err(EquilibriumError::ContinuationStall {
                    target: z,
                    attempts,
                });
            }
            let step_tol = self.x_tol().max(1e-13 * target.norm());
            match newton_map(target, s, self.c0, self.c1, self.theta, step_tol) {
                Some(next) => {
                    s = next;
                    cur = target;
                }
                None => {
                    pending.push(target);
                    pending.push(0.5 * (cur + target));
                }
            }
        }
        if self.is_outside_exclusion(s) || z.im == 0.0 {
            Ok(s)
        } else {
            Err(EquilibriumError::NewtonDivergence {
                last: s,
                residual: (map_j_raw(s, self.c0, self.c1, self.theta) - z).norm(),
            })
        }
    }

    /// Even-odd test against the region enclosed by the boundary curve and
    /// its conjugate.  The exterior inverse must land outside this region.
    fn is_outside_exclusion(&self, s: Complex64) -> bool {
        let q = Complex64::new(s.re, s.im.abs());
        if q.re < self.s_a || q.re > self.s_b {
            return true;
        }
        // polygon: s_a -> boundary curve -> s_b -> back along the real axis
        let n = self.table.s.len();
        let mut inside = false;
        let mut prev = Complex64::new(self.s_a, 0.0);
        let mut toggle = |p1: Complex64, p2: Complex64| {
            if (p1.im > q.im) != (p2.im > q.im) {
                let xcross = p1.re + (q.im - p1.im) * (p2.re - p1.re) / (p2.im - p1.im);
                if q.re < xcross {
                    inside = !inside;
                }
            }
        };
        for i in 0..n {
            toggle(prev, self.table.s[i]);
            prev = self.table.s[i];
        }
        toggle(prev, Complex64::new(self.s_b, 0.0));
        toggle(
            Complex64::new(self.s_b, 0.0),
            Complex64::new(self.s_a, 0.0),
        );
        !inside
    }

    /// Square-root edge coefficients `(A_a, A_b)`:
    /// `rho(x) ~ A_a / sqrt(x - a)` as `x -> a+` and
    /// `rho(x) ~ A_b / sqrt(b - x)` as `x -> b-`.
    pub fn edge_coefficients(&self) -> (f64, f64) {
        let j2a = j_second_raw(Complex64::new(self.s_a, 0.0), self.c0, self.c1, self.theta).re;
        let j2b = j_second_raw(Complex64::new(self.s_b, 0.0), self.c0, self.c1, self.theta).re;
        let aa = 1.0 / (2.0_f64.sqrt() * PI * self.s_a.abs() * j2a.abs().sqrt());
        let ab = 1.0 / (2.0_f64.sqrt() * PI * self.s_b * j2b.sqrt());
        (aa, ab)
    }

    /// Integrate `f` against the equilibrium measure with the substitution
    /// `x = (a+b)/2 + ((b-a)/2) cos(phi)` and `nodes` midpoint values in
    /// `phi`.  The transformed integrand extends to a smooth even function,
    /// so the rule converges spectrally for analytic `f`.
    pub fn integrate_against_density(
        &self,
        f: impl Fn(f64) -> f64,
        nodes: usize,
    ) -> Result<f64, EquilibriumError> {
        let mid = 0.5 * (self.a + self.b);
        let half = 0.5 * (self.b - self.a);
        let h = PI / nodes as f64;
        let mut sum = 0.0;
        for i in 0..nodes {
            let phi = (i as f64 + 0.5) * h;
            let x = mid - half * phi.cos();
            let val = f(x);
            if !val.is_finite() {
                return Err(EquilibriumError::NonFiniteSample { x });
            }
            sum += val * self.density(x)? * half * phi.sin() * h;
        }
        Ok(sum)
    }

    /// Residual of the variational equality on the support:
    ///
    /// ```text
    /// int ln|x - y| d mu(y) + int ln|x^theta - y^theta| d mu(y) + ell
    /// ```
    ///
    /// which vanishes identically for the true equilibrium measure.  Each
    /// integral is split at `y = x` and handled by double-exponential
    /// quadrature, so the logarithmic singularity sits at panel endpoints.
    pub fn el_residual(&self, x: f64) -> Result<f64, EquilibriumError> {
        if x <= self.a || x >= self.b {
            return Err(EquilibriumError::OutsideSupport {
                x,
                a: self.a,
                b: self.b,
            });
        }
        // On each side the distance |x - y| arrives cancellation-free from
        // the quadrature; ln|x^theta - y^theta| is rebuilt from it through
        // ln_1p/exp_m1 so the kernel stays accurate arbitrarily close to x.
        let kernel = |y: f64, d: f64, sign: f64| -> f64 {
            let rho = self.density(y).unwrap_or(0.0);
            if rho == 0.0 || d == 0.0 {
                return 0.0;
            }
            let l = (sign * d / y).ln_1p();
            let theta_log = self.theta * y.ln() + (self.theta * l).exp_m1().abs().ln();
            (d.ln() + theta_log) * rho
        };
        let left = tanh_sinh_f64(&|y, _dl, dh| kernel(y, dh, 1.0), self.a, x, 1e-11, 11);
        let right = tanh_sinh_f64(&|y, dl, _dh| kernel(y, dl, -1.0), x, self.b, 1e-11, 11);
        let total = left + right + self.ell;
        if !total.is_finite() {
            return Err(EquilibriumError::NonFiniteSample { x });
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn theta1_data() -> EquilibriumData {
        solve_coefficients(1.0, 4.0, 1.0, 1e-12).unwrap()
    }

    #[test]
    fn critical_points_closed_forms() {
        let (sa, sb) = critical_points(9.0, 1.0);
        assert_relative_eq!(sa, -3.0, max_relative = 1e-14);
        assert_relative_eq!(sb, 3.0, max_relative = 1e-14);

        // ratio 2, theta 2: roots of 2 s^2 + s - 1 = 0 scaled form,
        // s = (-1 -+ sqrt(17)) / 4, with s_a s_b = -ratio/theta
        let (sa, sb) = critical_points(2.0, 2.0);
        assert_relative_eq!(sa, (-1.0 - 17.0_f64.sqrt()) / 4.0, max_relative = 1e-14);
        assert_relative_eq!(sb, (-1.0 + 17.0_f64.sqrt()) / 4.0, max_relative = 1e-14);
        assert_relative_eq!(sa * sb, -1.0, max_relative = 1e-13);
    }

    #[test]
    fn theta_one_coefficients_and_constants() {
        let d = theta1_data();
        assert_relative_eq!(d.c0, 2.25, max_relative = 1e-12);
        assert_relative_eq!(d.c1, 0.25, max_relative = 1e-12);
        assert_relative_eq!(d.s_a, -3.0, max_relative = 1e-12);
        assert_relative_eq!(d.s_b, 3.0, max_relative = 1e-12);
        assert_relative_eq!(d.d_a, 2.0, max_relative = 1e-11);
        assert_relative_eq!(d.d_b, 8.0, max_relative = 1e-11);
        assert_relative_eq!(d.ell, -(0.25_f64.ln()) - 2.25_f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn map_values_theta_one() {
        let d = theta1_data();
        let j = |s: Complex64| map_j(&d, s).unwrap();
        assert_relative_eq!(j(Complex64::new(3.0, 0.0)).re, 4.0, max_relative = 1e-13);
        assert_relative_eq!(j(Complex64::new(-3.0, 0.0)).re, 1.0, max_relative = 1e-13);
        let v = j(Complex64::new(0.0, 3.0));
        assert_relative_eq!(v.re, 2.5, max_relative = 1e-13);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-13);
        assert!(matches!(
            map_j(&d, Complex64::new(-0.5, 0.0)),
            Err(EquilibriumError::BranchCutError { .. })
        ));
    }

    #[test]
    fn theta_one_density_cdf_potential() {
        let d = theta1_data();
        assert_relative_eq!(d.density(2.5).unwrap(), 2.0 / (3.0 * PI), max_relative = 1e-11);
        // arcsine law on [1, 4]
        for &x in &[1.2f64, 1.9, 2.5, 3.3, 3.9] {
            let expect = 1.0 / (PI * ((x - 1.0) * (4.0 - x)).sqrt());
            assert_relative_eq!(d.density(x).unwrap(), expect, max_relative = 1e-10);
            assert_relative_eq!(
                d.density_residue_form(x).unwrap(),
                expect,
                max_relative = 1e-10
            );
            assert_relative_eq!(d.log_potential(x).unwrap(), 0.75_f64.ln(), max_relative = 1e-11);
            let f_expect = 1.0 - (2.0 * (x - 2.5) / 3.0).acos() / PI;
            assert_relative_eq!(d.cdf(x).unwrap(), f_expect, max_relative = 1e-10);
        }
        assert_relative_eq!(d.cdf(1.75).unwrap(), 1.0 / 3.0, max_relative = 1e-11);
        assert_eq!(d.cdf(1.0).unwrap(), 0.0);
        assert_eq!(d.cdf(4.0).unwrap(), 1.0);
        // potential at the edges: ln(c1 |s_edge|)
        assert_relative_eq!(d.log_potential(1.0).unwrap(), 0.75_f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(d.log_potential(4.0).unwrap(), 0.75_f64.ln(), max_relative = 1e-12);
        let (aa, ab) = d.edge_coefficients();
        assert_relative_eq!(aa, 1.0 / (3.0_f64.sqrt() * PI), max_relative = 1e-10);
        assert_relative_eq!(ab, 1.0 / (3.0_f64.sqrt() * PI), max_relative = 1e-10);
    }

    #[test]
    fn outer_inverse_examples() {
        let d = theta1_data();
        let s = d.inverse_outer(Complex64::new(5.0, 0.0)).unwrap();
        assert_relative_eq!(s.re, 9.0, max_relative = 1e-12);
        // J(s) = 0.5 solves 0.25 s^2 + 2 s + 2.25 = 0 outside the curve
        let s = d.inverse_outer(Complex64::new(0.5, 0.0)).unwrap();
        assert_relative_eq!(s.re, -4.0 - 7.0_f64.sqrt(), max_relative = 1e-12);
        // asymptotic linearity
        let s = d.inverse_outer(Complex64::new(1e6, 0.0)).unwrap();
        assert_relative_eq!(s.re, 4e6, max_relative = 1e-4);
        // complex roundtrip
        for &z in &[
            Complex64::new(2.5, 0.8),
            Complex64::new(1.1, -0.05),
            Complex64::new(-2.0, 0.3),
            Complex64::new(3.9, 1e-4),
        ] {
            let s = d.inverse_outer(z).unwrap();
            let back = map_j(&d, s).unwrap();
            assert!((back - z).norm() <= 1e-10 * z.norm().max(1.0));
        }
        assert!(matches!(
            d.inverse_outer(Complex64::new(2.5, 0.0)),
            Err(EquilibriumError::BranchCutError { .. })
        ));
    }

    #[test]
    fn boundary_inverse_roundtrip_generic_theta() {
        for &theta in &[0.5, 1.0, 2.0, 3.7] {
            let d = solve_coefficients(1.0, 4.0, theta, 1e-12).unwrap();
            assert!(d.s_a < -1.0 && d.s_b > 1.0 / theta);
            assert_relative_eq!(d.s_a * d.s_b, -d.c0 / (d.c1 * theta), max_relative = 1e-10);
            assert!(d.c0 > d.c1 && d.c1 > 0.0);
            assert!(d.d_a > 0.0 && d.d_b > 0.0);
            for i in 0..=40 {
                let x = 1.0 + 3.0 * (i as f64 + 0.5) / 41.0;
                let bp = d.inverse_boundary_upper(x).unwrap();
                assert!(bp.s.im > 0.0);
                let back = map_j(&d, bp.s).unwrap();
                assert!((back.re - x).abs() <= 1e-11 * 4.0, "theta {theta} x {x}");
                assert!(back.im.abs() <= 1e-11);
                assert!(d.density(x).unwrap() >= 0.0);
            }
            // mass normalization and cdf consistency
            let mass = d.integrate_against_density(|_| 1.0, 256).unwrap();
            assert_relative_eq!(mass, 1.0, max_relative = 1e-9);
            let mut prev = 0.0;
            for i in 1..=30 {
                let t = 1.0 + 3.0 * i as f64 / 31.0;
                let f = d.cdf(t).unwrap();
                assert!(f >= prev - 1e-12);
                prev = f;
            }
        }
    }

    #[test]
    fn moments_against_arcsine_law() {
        let d = theta1_data();
        let m1 = d.integrate_against_density(|x| x, 256).unwrap();
        let m2 = d.integrate_against_density(|x| x * x, 256).unwrap();
        assert_relative_eq!(m1, 2.5, max_relative = 1e-11);
        assert_relative_eq!(m2, 2.5 * 2.5 + 1.125, max_relative = 1e-11);
    }

    #[test]
    fn log_potential_matches_direct_quadrature() {
        for &theta in &[1.0, 2.0] {
            let d = solve_coefficients(1.0, 4.0, theta, 1e-12).unwrap();
            for &t in &[1.7, 2.5, 3.4] {
                let rho = |y: f64| d.density(y).unwrap_or(0.0);
                let direct = tanh_sinh_f64(&|y, _dl, dh| dh.ln() * rho(y), 1.0, t, 1e-11, 11)
                    + tanh_sinh_f64(&|y, dl, _dh| dl.ln() * rho(y), t, 4.0, 1e-11, 11);
                assert_relative_eq!(
                    d.log_potential(t).unwrap(),
                    direct,
                    epsilon = 1e-8,
                    max_relative = 1e-8
                );
            }
        }
    }

    #[test]
    fn variational_equality_residual_vanishes() {
        for &theta in &[0.5, 1.0, 2.0, 3.7] {
            let d = solve_coefficients(1.0, 4.0, theta, 1e-12).unwrap();
            for &x in &[1.3, 2.0, 2.5, 3.7] {
                let r = d.el_residual(x).unwrap();
                assert!(r.abs() <= 1e-7, "theta {theta}, x {x}: residual {r}");
            }
        }
    }

    #[test]
    fn edge_coefficient_matches_local_density() {
        for &theta in &[1.0, 2.0] {
            let d = solve_coefficients(1.0, 4.0, theta, 1e-12).unwrap();
            let (aa, ab) = d.edge_coefficients();
            let x = 1.0 + 1e-7 * 3.0;
            let local = d.density(x).unwrap() * (x - 1.0).sqrt();
            assert_relative_eq!(local, aa, max_relative = 2e-3);
            let x = 4.0 - 1e-7 * 3.0;
            let local = d.density(x).unwrap() * (4.0 - x).sqrt();
            assert_relative_eq!(local, ab, max_relative = 2e-3);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn solve_invariants_hold(
            theta in 0.3f64..4.0,
            a in 0.2f64..2.0,
            ratio in 1.2f64..20.0,
        ) {
            let b = a * ratio;
            let d = solve_coefficients(a, b, theta, 1e-10).unwrap();
            prop_assert!(d.c0 > d.c1 && d.c1 > 0.0);
            prop_assert!(d.s_a < -1.0);
            prop_assert!(d.s_b > 1.0 / theta);
            prop_assert!((d.s_a * d.s_b + d.c0 / (d.c1 * theta)).abs() < 1e-8 * (d.c0 / d.c1));
            let mass = d.integrate_against_density(|_| 1.0, 200).unwrap();
            prop_assert!((mass - 1.0).abs() < 1e-7);
            let x = 0.5 * (a + b);
            let bp = d.inverse_boundary_upper(x).unwrap();
            let back = map_j(&d, bp.s).unwrap();
            prop_assert!((back.re - x).abs() < 1e-9 * b);
        }
    }
}
