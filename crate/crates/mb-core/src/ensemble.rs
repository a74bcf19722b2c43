//! Ensemble specification: weight parameters, validation, and pointwise
//! weight evaluation.
//!
//! The weight on `[a, b]` is
//!
//! ```text
//! w(x) = e^{W(x)} (x - a)^{alpha_left} (b - x)^{alpha_right}
//!        * prod_j |x - t_j|^{alpha_j} omega_j(x)
//! ```
//!
//! where `W` is a real polynomial and `omega_j(x)` equals `e^{i pi beta_j}`
//! for `x < t_j` and `e^{-i pi beta_j}` for `x > t_j`.  All exponents may be
//! complex; purely imaginary `beta_j` with real `alpha_j` keeps the weight
//! positive.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Serialize a complex number as a `[re, im]` pair.
pub(crate) mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(c: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [c.re, c.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

/// One interior singular factor `|x - t|^alpha omega_beta(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhSingularity {
    pub t: f64,
    #[serde(default, with = "complex_pair")]
    pub alpha: Complex64,
    #[serde(default, with = "complex_pair")]
    pub beta: Complex64,
}

/// Full description of the ensemble weight and the interval.
///
/// `w_smooth` holds the coefficients of `W` in increasing-degree order and
/// serializes under the key `"W"`.  All optional fields default to the trivial
/// value, so `{"a": 1.0, "b": 4.0, "theta": 1.0}` is the unit weight on
/// `[1, 4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    #[serde(default, rename = "W")]
    pub w_smooth: Vec<f64>,
    #[serde(default, with = "complex_pair")]
    pub alpha_left: Complex64,
    #[serde(default, with = "complex_pair")]
    pub alpha_right: Complex64,
    #[serde(default)]
    pub singularities: Vec<FhSingularity>,
}

impl EnsembleSpec {
    /// Unit weight on `[a, b]` with parameter `theta`.
    pub fn plain(a: f64, b: f64, theta: f64) -> Self {
        EnsembleSpec {
            a,
            b,
            theta,
            w_smooth: Vec::new(),
            alpha_left: Complex64::new(0.0, 0.0),
            alpha_right: Complex64::new(0.0, 0.0),
            singularities: Vec::new(),
        }
    }

    /// Copy of `self` with every interior singular factor removed; edge
    /// exponents and `W` are kept.  This is the reference weight for
    /// moment-generating-function ratios.
    pub fn base_spec(&self) -> Self {
        let mut s = self.clone();
        s.singularities.clear();
        s
    }

    /// True when the weight is real and positive on the open interval:
    /// real edge exponents, real interior `alpha`, purely imaginary `beta`.
    pub fn is_positive_weight(&self) -> bool {
        self.alpha_left.im == 0.0
            && self.alpha_right.im == 0.0
            && self
                .singularities
                .iter()
                .all(|s| s.alpha.im == 0.0 && s.beta.re == 0.0)
    }
}

/// Which constraint window applies to `Re beta`.
///
/// Equilibrium-side formulas need `|Re beta_j| < 1/4`; the determinant oracle
/// works on the wider strip `-1/2 < Re beta_j <= 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    Equilibrium,
    Oracle,
}

/// Witness that a spec passed [`validate_spec`] under a given mode.
#[derive(Debug, Clone)]
pub struct ValidatedSpec {
    spec: EnsembleSpec,
    mode: ValidationMode,
}

impl ValidatedSpec {
    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn mode(&self) -> ValidationMode {
        self.mode
    }

    pub fn into_spec(self) -> EnsembleSpec {
        self.spec
    }
}

/// Side selector for weight evaluation at a jump location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    LeftLimit,
    RightLimit,
    Interior,
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left-limit" | "left" => Ok(Side::LeftLimit),
            "right-limit" | "right" => Ok(Side::RightLimit),
            "interior" => Ok(Side::Interior),
            other => Err(format!(
                "unknown side {other:?}; expected left-limit, right-limit, or interior"
            )),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::LeftLimit => "left-limit",
            Side::RightLimit => "right-limit",
            Side::Interior => "interior",
        })
    }
}

/// Weight value together with the branch actually used.
///
/// `side` is [`Side::Interior`] unless `x` coincided with a jump location,
/// in which case it records the requested one-sided limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightValue {
    pub value: Complex64,
    pub side: Side,
}

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("interval must satisfy 0 < a < b with finite endpoints, got a = {a}, b = {b}")]
    NonpositiveInterval { a: f64, b: f64 },
    #[error("theta must be a positive finite number, got {0}")]
    NonpositiveTheta(f64),
    #[error("singularity locations must be strictly increasing inside (a, b): {detail}")]
    OrderingViolation { detail: String },
    #[error("{which} = {value} is outside the admissible range ({constraint})")]
    ExponentOutOfRange {
        which: String,
        value: Complex64,
        constraint: &'static str,
    },
    #[error("x = {x} is outside the weight support [{a}, {b}]")]
    DomainError { x: f64, a: f64, b: f64 },
    #[error("weight at jump location t = {t} requires an explicit one-sided limit")]
    SideRequired { t: f64 },
}

fn check_alpha(which: String, alpha: Complex64) -> Result<(), EnsembleError> {
    if !alpha.re.is_finite() || !alpha.im.is_finite() || alpha.re <= -1.0 {
        return Err(EnsembleError::ExponentOutOfRange {
            which,
            value: alpha,
            constraint: "Re alpha > -1 and finite",
        });
    }
    Ok(())
}

/// Check all structural invariants of a spec and stamp it with the mode.
///
/// Beyond the shared constraints (`0 < a < b`, `theta > 0`, `Re alpha > -1`
/// everywhere, interior locations strictly increasing inside the open
/// interval), the mode controls the admissible strip for `Re beta_j`:
/// `(-1/4, 1/4)` for [`ValidationMode::Equilibrium`], `(-1/2, 1/2]` for
/// [`ValidationMode::Oracle`].
pub fn validate_spec(
    spec: &EnsembleSpec,
    mode: ValidationMode,
) -> Result<ValidatedSpec, EnsembleError> {
    if !spec.a.is_finite() || !spec.b.is_finite() || spec.a <= 0.0 || spec.b <= spec.a {
        return Err(EnsembleError::NonpositiveInterval {
            a: spec.a,
            b: spec.b,
        });
    }
    if !spec.theta.is_finite() || spec.theta <= 0.0 {
        return Err(EnsembleError::NonpositiveTheta(spec.theta));
    }
    for (i, c) in spec.w_smooth.iter().enumerate() {
        if !c.is_finite() {
            return Err(EnsembleError::ExponentOutOfRange {
                which: format!("W[{i}]"),
                value: Complex64::new(*c, 0.0),
                constraint: "finite polynomial coefficient",
            });
        }
    }
    check_alpha("alpha_left".into(), spec.alpha_left)?;
    check_alpha("alpha_right".into(), spec.alpha_right)?;

    let mut prev = spec.a;
    for (j, s) in spec.singularities.iter().enumerate() {
        if !s.t.is_finite() || s.t <= prev || s.t >= spec.b {
            return Err(EnsembleError::OrderingViolation {
                detail: format!(
                    "t[{j}] = {} must lie in ({prev}, {}) strictly",
                    s.t, spec.b
                ),
            });
        }
        prev = s.t;
        check_alpha(format!("alpha[{j}]"), s.alpha)?;
        let ok = s.beta.re.is_finite()
            && s.beta.im.is_finite()
            && match mode {
                ValidationMode::Equilibrium => s.beta.re.abs() < 0.25,
                ValidationMode::Oracle => s.beta.re > -0.5 && s.beta.re <= 0.5,
            };
        if !ok {
            return Err(EnsembleError::ExponentOutOfRange {
                which: format!("beta[{j}]"),
                value: s.beta,
                constraint: match mode {
                    ValidationMode::Equilibrium => "-1/4 < Re beta < 1/4 (equilibrium mode)",
                    ValidationMode::Oracle => "-1/2 < Re beta <= 1/2 (oracle mode)",
                },
            });
        }
    }

    Ok(ValidatedSpec {
        spec: spec.clone(),
        mode,
    })
}

/// The smooth exponent `W(x)` evaluated by Horner's rule.
pub fn smooth_part(spec: &EnsembleSpec, x: f64) -> Result<f64, EnsembleError> {
    if !x.is_finite() || x < spec.a || x > spec.b {
        return Err(EnsembleError::DomainError {
            x,
            a: spec.a,
            b: spec.b,
        });
    }
    Ok(horner(&spec.w_smooth, x))
}

pub(crate) fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Fold the factor `dist^expo` (`dist >= 0`) into a running log-magnitude
/// and phase.  At `dist == 0` the limit convention applies: the factor is
/// `1` if `expo == 0`, vanishes if `Re expo > 0`, and has infinite magnitude
/// otherwise.
fn fold_power(dist: f64, expo: Complex64, logmag: &mut f64, phase: &mut f64) {
    if dist > 0.0 {
        let l = dist.ln();
        *logmag += expo.re * l;
        *phase += expo.im * l;
    } else if expo.re > 0.0 {
        *logmag = f64::NEG_INFINITY;
    } else if expo.re != 0.0 || expo.im != 0.0 {
        *logmag = f64::INFINITY;
    }
}

/// Fold `e^{+i pi beta}` (left of the jump) or `e^{-i pi beta}` (right).
fn fold_jump(beta: Complex64, left_of_t: bool, logmag: &mut f64, phase: &mut f64) {
    let sign = if left_of_t { 1.0 } else { -1.0 };
    *logmag -= sign * PI * beta.im;
    *phase += sign * PI * beta.re;
}

/// Evaluate the weight at `x`.
///
/// At a jump location the caller must pick [`Side::LeftLimit`] or
/// [`Side::RightLimit`]; requesting [`Side::Interior`] there returns
/// [`EnsembleError::SideRequired`].  Away from all jump locations the side
/// argument is ignored.  Endpoint values follow the limit conventions of
/// `(x-a)^alpha` / `(b-x)^alpha` (zero, one, or infinite magnitude).
pub fn weight_eval(
    spec: &EnsembleSpec,
    x: f64,
    side: Side,
) -> Result<WeightValue, EnsembleError> {
    // Accumulate ln|w| and arg w separately: a plain complex product would
    // turn (zero factor) * (infinite factor) into NaN even when the weight
    // value is well defined.
    let mut logmag = smooth_part(spec, x)?;
    let mut phase = 0.0;

    fold_power(x - spec.a, spec.alpha_left, &mut logmag, &mut phase);
    fold_power(spec.b - x, spec.alpha_right, &mut logmag, &mut phase);

    let mut used = Side::Interior;
    for s in &spec.singularities {
        if x == s.t {
            let left = match side {
                Side::LeftLimit => true,
                Side::RightLimit => false,
                Side::Interior => return Err(EnsembleError::SideRequired { t: s.t }),
            };
            used = side;
            fold_power(0.0, s.alpha, &mut logmag, &mut phase);
            fold_jump(s.beta, left, &mut logmag, &mut phase);
        } else {
            fold_power((x - s.t).abs(), s.alpha, &mut logmag, &mut phase);
            fold_jump(s.beta, x < s.t, &mut logmag, &mut phase);
        }
    }

    let value = if logmag == f64::INFINITY {
        Complex64::new(f64::INFINITY, 0.0)
    } else if logmag == f64::NEG_INFINITY {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::from_polar(logmag.exp(), phase)
    };
    Ok(WeightValue { value, side: used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn fh(t: f64, alpha: Complex64, beta: Complex64) -> FhSingularity {
        FhSingularity { t, alpha, beta }
    }

    #[test]
    fn parses_full_schema() {
        let json = r#"{
            "a": 1.0, "b": 4.0, "theta": 2.0,
            "W": [0.0, -0.5],
            "alpha_left": [0.5, 0.0],
            "alpha_right": [0.0, 0.0],
            "singularities": [
                {"t": 2.5, "alpha": [1.0, 0.0], "beta": [0.0, 0.1]}
            ]
        }"#;
        let spec: EnsembleSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.w_smooth, vec![0.0, -0.5]);
        assert_eq!(spec.alpha_left, Complex64::new(0.5, 0.0));
        assert_eq!(spec.singularities[0].beta, Complex64::new(0.0, 0.1));
        let back: EnsembleSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn missing_fields_default_to_unit_weight() {
        let spec: EnsembleSpec =
            serde_json::from_str(r#"{"a": 1.0, "b": 4.0, "theta": 1.0}"#).unwrap();
        assert_eq!(spec, EnsembleSpec::plain(1.0, 4.0, 1.0));
        let w = weight_eval(&spec, 2.5, Side::Interior).unwrap();
        assert_eq!(w.value, Complex64::new(1.0, 0.0));
        assert_eq!(w.side, Side::Interior);
    }

    #[test]
    fn rejects_bad_interval_and_theta() {
        let spec = EnsembleSpec::plain(0.0, 4.0, 1.0);
        assert!(matches!(
            validate_spec(&spec, ValidationMode::Equilibrium),
            Err(EnsembleError::NonpositiveInterval { .. })
        ));
        let spec = EnsembleSpec::plain(2.0, 2.0, 1.0);
        assert!(matches!(
            validate_spec(&spec, ValidationMode::Equilibrium),
            Err(EnsembleError::NonpositiveInterval { .. })
        ));
        let spec = EnsembleSpec::plain(1.0, 4.0, -1.0);
        assert!(matches!(
            validate_spec(&spec, ValidationMode::Equilibrium),
            Err(EnsembleError::NonpositiveTheta(_))
        ));
    }

    #[test]
    fn rejects_misordered_singularities() {
        let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
        let z = Complex64::new(0.0, 0.0);
        spec.singularities = vec![fh(3.0, z, z), fh(2.0, z, z)];
        assert!(matches!(
            validate_spec(&spec, ValidationMode::Oracle),
            Err(EnsembleError::OrderingViolation { .. })
        ));
        spec.singularities = vec![fh(4.0, z, z)];
        assert!(validate_spec(&spec, ValidationMode::Oracle).is_err());
    }

    #[test]
    fn beta_window_depends_on_mode() {
        let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
        spec.singularities = vec![fh(
            2.5,
            Complex64::new(0.0, 0.0),
            Complex64::new(0.3, 0.0),
        )];
        assert!(matches!(
            validate_spec(&spec, ValidationMode::Equilibrium),
            Err(EnsembleError::ExponentOutOfRange { .. })
        ));
        assert!(validate_spec(&spec, ValidationMode::Oracle).is_ok());

        spec.singularities[0].beta = Complex64::new(0.5, 0.0);
        assert!(validate_spec(&spec, ValidationMode::Oracle).is_ok());
        spec.singularities[0].beta = Complex64::new(-0.5, 0.0);
        assert!(validate_spec(&spec, ValidationMode::Oracle).is_err());
        spec.singularities[0].beta = Complex64::new(0.0, 0.1);
        assert!(validate_spec(&spec, ValidationMode::Equilibrium).is_ok());
    }

    #[test]
    fn rejects_exponents_at_or_below_minus_one() {
        let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
        spec.alpha_left = Complex64::new(-1.0, 0.0);
        assert!(matches!(
            validate_spec(&spec, ValidationMode::Oracle),
            Err(EnsembleError::ExponentOutOfRange { .. })
        ));
        spec.alpha_left = Complex64::new(-0.999, 0.0);
        assert!(validate_spec(&spec, ValidationMode::Oracle).is_ok());
    }

    #[test]
    fn smooth_part_is_horner() {
        let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
        spec.w_smooth = vec![1.0, -2.0, 0.5];
        let x = 3.0_f64;
        assert_relative_eq!(
            smooth_part(&spec, x).unwrap(),
            1.0 - 2.0 * x + 0.5 * x * x
        );
        assert!(matches!(
            smooth_part(&spec, 4.5),
            Err(EnsembleError::DomainError { .. })
        ));
    }

    #[test]
    fn pure_alpha_factor() {
        let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
        spec.singularities = vec![fh(
            2.0,
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        )];
        let w = weight_eval(&spec, 3.0, Side::Interior).unwrap();
        assert_relative_eq!(w.value.re, 1.0);
        assert_abs_diff_eq!(w.value.im, 0.0);
        let w = weight_eval(&spec, 1.5, Side::Interior).unwrap();
        assert_relative_eq!(w.value.re, 0.5);
    }

    #[test]
    fn imaginary_beta_gives_positive_step_weight() {
        let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
        spec.singularities = vec![fh(
            2.0,
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.1),
        )];
        let w = weight_eval(&spec, 1.5, Side::Interior).unwrap();
        assert_relative_eq!(w.value.re, (-0.1 * PI).exp(), max_relative = 1e-14);
        assert_abs_diff_eq!(w.value.im, 0.0);
        // spot value quoted to six digits
        assert_abs_diff_eq!(w.value.re, 0.730403, epsilon = 5e-7);
        let w = weight_eval(&spec, 3.0, Side::Interior).unwrap();
        assert_relative_eq!(w.value.re, (0.1 * PI).exp(), max_relative = 1e-14);
    }

    #[test]
    fn one_sided_limits_at_jump() {
        let beta = Complex64::new(0.3, 0.0);
        let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
        spec.singularities = vec![fh(2.0, Complex64::new(0.0, 0.0), beta)];

        assert!(matches!(
            weight_eval(&spec, 2.0, Side::Interior),
            Err(EnsembleError::SideRequired { t }) if t == 2.0
        ));
        let l = weight_eval(&spec, 2.0, Side::LeftLimit).unwrap();
        let r = weight_eval(&spec, 2.0, Side::RightLimit).unwrap();
        assert_eq!(l.side, Side::LeftLimit);
        assert_eq!(r.side, Side::RightLimit);
        // ratio of limits across the jump is e^{-2 i pi beta}
        let ratio = r.value / l.value;
        let expect = (Complex64::new(0.0, -2.0 * PI) * beta).exp();
        assert_relative_eq!(ratio.re, expect.re, max_relative = 1e-13);
        assert_relative_eq!(ratio.im, expect.im, max_relative = 1e-13);
    }

    #[test]
    fn endpoint_conventions() {
        let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
        spec.alpha_left = Complex64::new(0.5, 0.0);
        let w = weight_eval(&spec, 1.0, Side::Interior).unwrap();
        assert_eq!(w.value, Complex64::new(0.0, 0.0));

        spec.alpha_left = Complex64::new(-0.5, 0.0);
        let w = weight_eval(&spec, 1.0, Side::Interior).unwrap();
        assert!(w.value.re.is_infinite());

        spec.alpha_left = Complex64::new(0.0, 0.0);
        spec.w_smooth = vec![2.0];
        let w = weight_eval(&spec, 1.0, Side::Interior).unwrap();
        assert_relative_eq!(w.value.re, 2.0_f64.exp());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn jump_relation_holds_for_any_beta(re in -0.49f64..=0.5, im in -1.0f64..1.0) {
            let beta = Complex64::new(re, im);
            let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
            spec.singularities = vec![fh(2.5, Complex64::new(0.0, 0.0), beta)];
            validate_spec(&spec, ValidationMode::Oracle).unwrap();
            let l = weight_eval(&spec, 2.5, Side::LeftLimit).unwrap().value;
            let r = weight_eval(&spec, 2.5, Side::RightLimit).unwrap().value;
            let expect = (Complex64::new(0.0, -2.0 * PI) * beta).exp();
            let ratio = r / l;
            prop_assert!((ratio - expect).norm() < 1e-12 * expect.norm());
        }

        #[test]
        fn positive_weight_class_is_positive(
            x in 1.0001f64..3.9999,
            b_im in -1.0f64..1.0,
            al in -0.9f64..2.0,
        ) {
            let mut spec = EnsembleSpec::plain(1.0, 4.0, 1.0);
            spec.alpha_left = Complex64::new(al, 0.0);
            spec.singularities = vec![fh(
                2.0,
                Complex64::new(al.max(0.0), 0.0),
                Complex64::new(0.0, b_im),
            )];
            prop_assume!(x != 2.0);
            prop_assert!(spec.is_positive_weight());
            let w = weight_eval(&spec, x, Side::Interior).unwrap().value;
            prop_assert!(w.re > 0.0);
            prop_assert!(w.im.abs() <= 1e-13 * w.re);
        }
    }
}
