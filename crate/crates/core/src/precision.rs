//! Double-double scalars used for every pole/residue sum.
//!
//! Partial-fraction expansions of cascaded real poles routinely carry
//! residues many orders of magnitude larger than the transfer function they
//! sum to, so evaluating `Σ c b^T / (s - λ)` in plain `f64` can lose every
//! significant digit. All sums over model terms are carried out with
//! [`Dd`] (about 32 significant digits) and rounded to `f64` at the edges.

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use num_complex::Complex64;
use num_traits::Zero;
use twofloat::TwoFloat;

/// Real double-double number.
pub type Dd = TwoFloat;

/// Complex double-double number.
pub type Cdd = num_complex::Complex<TwoFloat>;

/// ln 2 split into two non-overlapping doubles.
const LN_2: Dd = twofloat::consts::LN_2;

#[inline]
pub fn dd(x: f64) -> Dd {
    Dd::from(x)
}

/// Builds a double-double from an unevaluated sum `hi + lo`.
#[inline]
pub fn dd_from_parts(hi: f64, lo: f64) -> Dd {
    Dd::from(hi) + Dd::from(lo)
}

#[inline]
pub fn cdd(z: Complex64) -> Cdd {
    Cdd::new(dd(z.re), dd(z.im))
}

#[inline]
pub fn to_f64(x: Dd) -> f64 {
    x.hi() + x.lo()
}

#[inline]
pub fn to_c64(z: Cdd) -> Complex64 {
    Complex64::new(to_f64(z.re), to_f64(z.im))
}

#[inline]
pub fn czero() -> Cdd {
    Cdd::zero()
}

#[inline]
pub fn cabs(z: Cdd) -> f64 {
    to_c64(z).norm()
}

/// `e^x` to full double-double accuracy.
///
/// Reduces by `k ln 2`, scales the remainder by `2^-8`, sums a Taylor series
/// and squares back.
pub fn exp(x: Dd) -> Dd {
    let hi = x.hi();
    if hi.is_nan() {
        return Dd::NAN;
    }
    if hi < -745.2 {
        return dd(0.0);
    }
    if hi > 709.7 {
        return dd(f64::INFINITY);
    }
    let k = (hi / std::f64::consts::LN_2).round();
    let r = (x - LN_2 * k) * (1.0 / 256.0);
    // |r| <= 1.36e-3, twelve terms reach well below 1e-34.
    let mut term = dd(1.0);
    let mut sum = dd(1.0);
    for i in 1..=12 {
        term = term * r / (i as f64);
        sum += term;
    }
    for _ in 0..8 {
        sum = sum * sum;
    }
    scale_pow2(sum, k as i32)
}

/// `x / y` to double-double accuracy.
///
/// `TwoFloat`'s own quotient forms `1 - y_hi / y_hi` without a fused
/// multiply-add and silently drops the low word, so every double-double
/// quotient in the crate goes through here.
pub fn ddiv(x: Dd, y: Dd) -> Dd {
    let th = x.hi() / y.hi();
    let r = y * th;
    let ph = x.hi() - r.hi();
    let dl = x.lo() - r.lo();
    let tl = (ph + dl) / y.hi();
    Dd::new_add(th, tl)
}

const FRAC_PI_2: Dd = twofloat::consts::FRAC_PI_2;

/// `(sin x, cos x)` to double-double accuracy for moderate `|x|`.
///
/// Reduces by multiples of `π/2` and sums both Taylor series on the
/// remainder.
pub fn sin_cos(x: Dd) -> (Dd, Dd) {
    if !x.hi().is_finite() {
        return (Dd::NAN, Dd::NAN);
    }
    let k = (x.hi() / std::f64::consts::FRAC_PI_2).round();
    let r = x - FRAC_PI_2 * k;
    let r2 = r * r;
    // |r| <= π/4: 2 n! > 0.8^(2n) 1e32 by n = 30
    let (mut sin, mut cos) = (r, dd(1.0));
    let (mut ts, mut tc) = (r, dd(1.0));
    for i in 1..=15 {
        let n = 2.0 * i as f64;
        tc = -(tc * r2) / ((n - 1.0) * n);
        ts = -(ts * r2) / (n * (n + 1.0));
        cos += tc;
        sin += ts;
    }
    match (k as i64).rem_euclid(4) {
        0 => (sin, cos),
        1 => (cos, -sin),
        2 => (-sin, -cos),
        _ => (-cos, sin),
    }
}

fn scale_pow2(x: Dd, k: i32) -> Dd {
    // split so each factor stays a normal double
    let mut out = x;
    let mut k = k;
    while k != 0 {
        let step = k.clamp(-1000, 1000);
        out *= 2f64.powi(step);
        k -= step;
    }
    out
}

/// `e^z` for complex double-double `z`.
pub fn cexp(z: Cdd) -> Cdd {
    let m = exp(z.re);
    if z.im.hi() == 0.0 && z.im.lo() == 0.0 {
        return Cdd::new(m, dd(0.0));
    }
    let (s, c) = sin_cos(z.im);
    Cdd::new(m * c, m * s)
}

/// Unit-modulus delay factor `e^{μ τ}` used by delay blocks evaluated at `-μ`.
#[inline]
pub fn delay_factor(pole: Cdd, tau: f64) -> Cdd {
    if tau == 0.0 {
        return Cdd::new(dd(1.0), dd(0.0));
    }
    cexp(pole * dd(tau))
}

/// Complex reciprocal with a single real division.
#[inline]
pub fn crecip(z: Cdd) -> Cdd {
    let d = z.re * z.re + z.im * z.im;
    Cdd::new(ddiv(z.re, d), -ddiv(z.im, d))
}

/// Mantissa bits of [`Wide`].
pub(crate) const WIDE_BITS: usize = 320;

/// Binary float for the few sums whose cancellation exceeds double-double
/// range (self inner products of models with huge residues).
pub(crate) type Wide = FBig<HalfEven, 2>;

pub(crate) fn wide(x: Dd) -> Wide {
    let part = |v: f64| Wide::try_from(v).expect("finite").with_precision(WIDE_BITS).value();
    part(x.hi()) + part(x.lo())
}

pub(crate) fn wide_to_dd(x: &Wide) -> Dd {
    let hi = x.to_f64().value();
    let rest = x - wide(dd(hi));
    dd_from_parts(hi, rest.to_f64().value())
}

/// Complex [`Wide`] with just the operations the H2 sums need.
#[derive(Clone, Debug)]
pub(crate) struct CWide {
    pub re: Wide,
    pub im: Wide,
}

impl CWide {
    pub fn zero() -> Self {
        let z = wide(dd(0.0));
        Self { re: z.clone(), im: z }
    }

    pub fn from_cdd(z: Cdd) -> Self {
        Self {
            re: wide(z.re),
            im: wide(z.im),
        }
    }

    pub fn to_cdd(&self) -> Cdd {
        Cdd::new(wide_to_dd(&self.re), wide_to_dd(&self.im))
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            re: &self.re + &o.re,
            im: &self.im + &o.im,
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self {
            re: &self.re * &o.re - &self.im * &o.im,
            im: &self.re * &o.im + &self.im * &o.re,
        }
    }

    pub fn div(&self, o: &Self) -> Self {
        let d = &o.re * &o.re + &o.im * &o.im;
        Self {
            re: (&self.re * &o.re + &self.im * &o.im) / &d,
            im: (&self.im * &o.re - &self.re * &o.im) / &d,
        }
    }

    pub fn neg(&self) -> Self {
        Self {
            re: -self.re.clone(),
            im: -self.im.clone(),
        }
    }
}
