//! Thin context layer over extended-precision reals plus a complex pair
//! type.  All operations round to a context-wide precision; transcendental
//! functions share one constants cache.

use astro_float::{BigFloat, Consts, RoundingMode, Sign};

/// Shared precision, rounding mode, and constants cache.
pub struct BigCtx {
    pub p: usize,
    pub rm: RoundingMode,
    cc: Consts,
}

impl BigCtx {
    pub fn new(p: usize) -> Self {
        BigCtx {
            p,
            rm: RoundingMode::ToEven,
            cc: Consts::new().expect("constants cache allocation"),
        }
    }

    pub fn big(&self, v: f64) -> BigFloat {
        BigFloat::from_f64(v, self.p)
    }

    pub fn int(&self, v: i64) -> BigFloat {
        BigFloat::from_i64(v, self.p)
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.p, self.rm)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.p, self.rm)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.p, self.rm)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, self.p, self.rm)
    }

    pub fn sqrt(&self, a: &BigFloat) -> BigFloat {
        a.sqrt(self.p, self.rm)
    }

    pub fn exp(&mut self, a: &BigFloat) -> BigFloat {
        a.exp(self.p, self.rm, &mut self.cc)
    }

    pub fn ln(&mut self, a: &BigFloat) -> BigFloat {
        a.ln(self.p, self.rm, &mut self.cc)
    }

    pub fn sin(&mut self, a: &BigFloat) -> BigFloat {
        a.sin(self.p, self.rm, &mut self.cc)
    }

    pub fn cos(&mut self, a: &BigFloat) -> BigFloat {
        a.cos(self.p, self.rm, &mut self.cc)
    }

    pub fn pi(&mut self) -> BigFloat {
        self.cc.pi(self.p, self.rm)
    }

    /// `a * 2^k` without rounding error beyond the context precision.
    pub fn scale2(&self, a: &BigFloat, k: i64) -> BigFloat {
        // astro-float has no ldexp; multiply by an exact power of two
        let two_k = BigFloat::from_f64(2.0, self.p).powi(
            k.unsigned_abs() as usize,
            self.p,
            self.rm,
        );
        if k >= 0 {
            self.mul(a, &two_k)
        } else {
            self.div(a, &two_k)
        }
    }
}

/// Round to the nearest `f64` (two top mantissa words suffice).
pub fn to_f64(a: &BigFloat) -> f64 {
    if a.is_zero() {
        return 0.0;
    }
    if a.is_nan() {
        return f64::NAN;
    }
    if a.is_inf_pos() {
        return f64::INFINITY;
    }
    if a.is_inf_neg() {
        return f64::NEG_INFINITY;
    }
    match a.as_raw_parts() {
        None => f64::NAN,
        Some((m, _used, sign, e, _inexact)) => {
            let top = m[m.len() - 1] as f64 / 18446744073709551616.0;
            let mut frac = top;
            if m.len() >= 2 {
                frac += m[m.len() - 2] as f64 / 18446744073709551616.0 / 18446744073709551616.0;
            }
            let mag = frac * 2f64.powi(e);
            if sign == Sign::Neg {
                -mag
            } else {
                mag
            }
        }
    }
}

/// Mantissa fraction in `[0.5, 1)` and binary exponent, for scale-free
/// comparisons and phase extraction.  Zero maps to `(0.0, i32::MIN)`.
pub(crate) fn frexp_big(a: &BigFloat) -> (f64, i32) {
    if a.is_zero() {
        return (0.0, i32::MIN);
    }
    match a.as_raw_parts() {
        None => (f64::NAN, 0),
        Some((m, _used, sign, e, _)) => {
            let mut frac = m[m.len() - 1] as f64 / 18446744073709551616.0;
            if m.len() >= 2 {
                frac += m[m.len() - 2] as f64 / 18446744073709551616.0 / 18446744073709551616.0;
            }
            if sign == Sign::Neg {
                frac = -frac;
            }
            (frac, e)
        }
    }
}

/// Complex number with extended-precision parts.
#[derive(Debug, Clone)]
pub struct ComplexBig {
    pub re: BigFloat,
    pub im: BigFloat,
}

impl ComplexBig {
    pub fn zero(ctx: &BigCtx) -> Self {
        ComplexBig {
            re: ctx.big(0.0),
            im: ctx.big(0.0),
        }
    }

    pub fn from_c64(ctx: &BigCtx, v: num_complex::Complex64) -> Self {
        ComplexBig {
            re: ctx.big(v.re),
            im: ctx.big(v.im),
        }
    }

    pub fn to_c64(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(to_f64(&self.re), to_f64(&self.im))
    }
}

impl BigCtx {
    pub fn cadd(&self, a: &ComplexBig, b: &ComplexBig) -> ComplexBig {
        ComplexBig {
            re: self.add(&a.re, &b.re),
            im: self.add(&a.im, &b.im),
        }
    }

    pub fn csub(&self, a: &ComplexBig, b: &ComplexBig) -> ComplexBig {
        ComplexBig {
            re: self.sub(&a.re, &b.re),
            im: self.sub(&a.im, &b.im),
        }
    }

    pub fn cmul(&self, a: &ComplexBig, b: &ComplexBig) -> ComplexBig {
        ComplexBig {
            re: self.sub(&self.mul(&a.re, &b.re), &self.mul(&a.im, &b.im)),
            im: self.add(&self.mul(&a.re, &b.im), &self.mul(&a.im, &b.re)),
        }
    }

    pub fn cmul_real(&self, a: &ComplexBig, r: &BigFloat) -> ComplexBig {
        ComplexBig {
            re: self.mul(&a.re, r),
            im: self.mul(&a.im, r),
        }
    }

    pub fn cdiv(&self, a: &ComplexBig, b: &ComplexBig) -> ComplexBig {
        let den = self.add(&self.mul(&b.re, &b.re), &self.mul(&b.im, &b.im));
        ComplexBig {
            re: self.div(
                &self.add(&self.mul(&a.re, &b.re), &self.mul(&a.im, &b.im)),
                &den,
            ),
            im: self.div(
                &self.sub(&self.mul(&a.im, &b.re), &self.mul(&a.re, &b.im)),
                &den,
            ),
        }
    }

    /// `exp(re + i im)`; skips the trigonometric pair when `im == 0`.
    pub fn cexp(&mut self, e: &ComplexBig) -> ComplexBig {
        let mag = self.exp(&e.re);
        if e.im.is_zero() {
            ComplexBig {
                re: mag,
                im: self.big(0.0),
            }
        } else {
            let c = self.cos(&e.im);
            let s = self.sin(&e.im);
            ComplexBig {
                re: self.mul(&mag, &c),
                im: self.mul(&mag, &s),
            }
        }
    }

    pub fn cabs(&self, a: &ComplexBig) -> BigFloat {
        if a.im.is_zero() {
            return a.re.abs();
        }
        if a.re.is_zero() {
            return a.im.abs();
        }
        self.sqrt(&self.add(
            &self.mul(&a.re, &a.re),
            &self.mul(&a.im, &a.im),
        ))
    }

    /// Squared modulus compared at full precision.
    pub fn cnorm_sq(&self, a: &ComplexBig) -> BigFloat {
        self.add(&self.mul(&a.re, &a.re), &self.mul(&a.im, &a.im))
    }
}

/// Argument of a big complex value at `f64` accuracy, robust to exponents
/// far outside the `f64` range.
pub fn carg_f64(a: &ComplexBig) -> f64 {
    let (fr, er) = frexp_big(&a.re);
    let (fi, ei) = frexp_big(&a.im);
    if fi == 0.0 && fr == 0.0 {
        return 0.0;
    }
    let shift = er.max(ei);
    let sr = if er == i32::MIN {
        0.0
    } else {
        fr * 2f64.powi((er - shift).max(-1000))
    };
    let si = if ei == i32::MIN {
        0.0
    } else {
        fi * 2f64.powi((ei - shift).max(-1000))
    };
    si.atan2(sr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    #[test]
    fn roundtrip_and_arithmetic() {
        let ctx = BigCtx::new(256);
        for &v in &[0.0, 1.0, -2.5, 1e-300, 3.7e250, -0.1] {
            assert_eq!(to_f64(&ctx.big(v)), v);
        }
        let a = ctx.big(1.25);
        let b = ctx.big(0.4);
        assert_relative_eq!(to_f64(&ctx.mul(&a, &b)), 0.5, max_relative = 1e-15);
        assert_relative_eq!(to_f64(&ctx.div(&a, &b)), 3.125, max_relative = 1e-15);
    }

    #[test]
    fn transcendentals_reach_context_precision() {
        let mut ctx = BigCtx::new(320);
        let x = ctx.big(2.0);
        let l = ctx.ln(&x);
        let back = ctx.exp(&l);
        let err = ctx.sub(&back, &x).abs();
        // |exp(ln 2) - 2| below 2^-300
        assert!(err.partial_cmp(&ctx.scale2(&ctx.big(1.0), -300)).unwrap() == std::cmp::Ordering::Less);
    }

    #[test]
    fn complex_ops_match_f64() {
        let mut ctx = BigCtx::new(256);
        let z1 = Complex64::new(1.3, -0.7);
        let z2 = Complex64::new(-0.2, 2.1);
        let a = ComplexBig::from_c64(&ctx, z1);
        let b = ComplexBig::from_c64(&ctx, z2);
        let prod = ctx.cmul(&a, &b).to_c64();
        assert_relative_eq!(prod.re, (z1 * z2).re, max_relative = 1e-14);
        assert_relative_eq!(prod.im, (z1 * z2).im, max_relative = 1e-14);
        let quot = ctx.cdiv(&a, &b).to_c64();
        assert_relative_eq!(quot.re, (z1 / z2).re, max_relative = 1e-14);
        assert_relative_eq!(quot.im, (z1 / z2).im, max_relative = 1e-14);
        let ex = ctx.cexp(&a).to_c64();
        assert_relative_eq!(ex.re, z1.exp().re, max_relative = 1e-14);
        assert_relative_eq!(ex.im, z1.exp().im, max_relative = 1e-14);
        assert_relative_eq!(carg_f64(&a), z1.arg(), max_relative = 1e-13);
        assert_relative_eq!(to_f64(&ctx.cabs(&a)), z1.norm(), max_relative = 1e-14);
    }

    #[test]
    fn huge_exponents_survive_phase_extraction() {
        let ctx = BigCtx::new(256);
        let big_pos = ctx.scale2(&ctx.big(1.5), 5000);
        assert_eq!(to_f64(&big_pos), f64::INFINITY);
        let z = ComplexBig {
            re: big_pos.clone(),
            im: big_pos.neg(),
        };
        assert_relative_eq!(carg_f64(&z), -std::f64::consts::FRAC_PI_4, max_relative = 1e-14);
        let tiny = ctx.scale2(&ctx.big(1.0), -5000);
        assert_eq!(to_f64(&tiny), 0.0);
        assert!(!tiny.is_zero());
    }
}
