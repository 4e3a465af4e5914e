//! Flat exponentials `e(u) = exp(-1/(q u^p))`, the weighted variant
//! `E(y) = y^(-delta) e(y)`, their inverses and the clamped maps used to
//! split the integration box.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real parameter that remembers an exact rational value when it was
/// given as one. Case dispatch compares the exact value when present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealParam {
    pub value: f64,
    /// `(numerator, denominator)` in lowest terms with a positive denominator.
    pub exact: Option<(i64, i64)>,
}

impl RealParam {
    pub fn real(value: f64) -> Self {
        RealParam { value, exact: None }
    }

    pub fn rational(num: i64, den: i64) -> Self {
        let r = Ratio::new(num, den);
        RealParam {
            value: *r.numer() as f64 / *r.denom() as f64,
            exact: Some((*r.numer(), *r.denom())),
        }
    }

    pub fn integer(n: i64) -> Self {
        Self::rational(n, 1)
    }

    pub fn ratio(&self) -> Option<Ratio<i64>> {
        self.exact.map(|(n, d)| Ratio::new(n, d))
    }

    /// Exact integer value, if the parameter is a known rational integer.
    pub fn as_integer(&self) -> Option<i64> {
        self.ratio().filter(|r| r.is_integer()).map(|r| r.to_integer())
    }
}

impl RealParam {
    /// Exact comparison when both sides are exact, float comparison otherwise.
    pub fn cmp_param(&self, other: &RealParam) -> std::cmp::Ordering {
        match (self.ratio(), other.ratio()) {
            (Some(x), Some(y)) => x.cmp(&y),
            _ => self.value.total_cmp(&other.value),
        }
    }

    pub fn is_exactly(&self, other: &RealParam) -> bool {
        match (self.ratio(), other.ratio()) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    fn combine(self, other: RealParam, exact: impl Fn(Ratio<i64>, Ratio<i64>) -> Option<Ratio<i64>>, float: impl Fn(f64, f64) -> f64) -> RealParam {
        let value = float(self.value, other.value);
        match (self.ratio(), other.ratio()) {
            (Some(x), Some(y)) => match exact(x, y) {
                Some(r) => RealParam::rational(*r.numer(), *r.denom()),
                None => RealParam::real(value),
            },
            _ => RealParam::real(value),
        }
    }
}

impl std::ops::Add for RealParam {
    type Output = RealParam;
    fn add(self, o: RealParam) -> RealParam {
        self.combine(o, |x, y| x.checked_add(&y), |x, y| x + y)
    }
}

impl std::ops::Sub for RealParam {
    type Output = RealParam;
    fn sub(self, o: RealParam) -> RealParam {
        self.combine(o, |x, y| x.checked_sub(&y), |x, y| x - y)
    }
}

impl std::ops::Mul for RealParam {
    type Output = RealParam;
    fn mul(self, o: RealParam) -> RealParam {
        self.combine(o, |x, y| x.checked_mul(&y), |x, y| x * y)
    }
}

impl std::ops::Div for RealParam {
    type Output = RealParam;
    fn div(self, o: RealParam) -> RealParam {
        self.combine(o, |x, y| if *y.numer() == 0 { None } else { x.checked_div(&y) }, |x, y| x / y)
    }
}

impl std::ops::Neg for RealParam {
    type Output = RealParam;
    fn neg(self) -> RealParam {
        RealParam { value: -self.value, exact: self.exact.map(|(n, d)| (-n, d)) }
    }
}

impl From<f64> for RealParam {
    fn from(v: f64) -> Self {
        RealParam::real(v)
    }
}

impl fmt::Display for RealParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exact {
            Some((n, 1)) => write!(f, "{n}"),
            Some((n, d)) => write!(f, "{n}/{d}"),
            None => write!(f, "{}", self.value),
        }
    }
}

impl FromStr for RealParam {
    type Err = Error;

    /// Accepts `num/den`, integers and terminating decimals (all kept exact),
    /// and falls back to a plain float for anything else `f64` can parse.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidParameter(format!("cannot parse `{s}` as a number"));
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(Error::InvalidParameter(format!("zero denominator in `{s}`")));
            }
            return Ok(RealParam::rational(n, d));
        }
        if let Some(exact) = parse_decimal(s) {
            return Ok(exact);
        }
        let v: f64 = s.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        Ok(RealParam::real(v))
    }
}

fn parse_decimal(s: &str) -> Option<RealParam> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    if frac_part.len() > 15 || int_part.len() > 15 {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let num: i64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let den = 10i64.checked_pow(frac_part.len() as u32)?;
    Some(RealParam::rational(if neg { -num } else { num }, den))
}

/// Parameters `(p, q)` of the flat function `e_{p,q}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatParams {
    pub p: RealParam,
    pub q: u32,
}

impl FlatParams {
    pub fn new(p: RealParam, q: u32) -> Result<Self> {
        if !(p.value > 0.0) || !p.value.is_finite() {
            return Err(Error::InvalidParameter(format!("flatness exponent p must be positive, got {p}")));
        }
        if q < 2 || q % 2 != 0 {
            return Err(Error::InvalidParameter(format!("q must be an even integer >= 2, got {q}")));
        }
        Ok(FlatParams { p, q })
    }

    /// Shorthand for integer or rational `p = num/den`.
    pub fn rational(num: i64, den: i64, q: u32) -> Result<Self> {
        Self::new(RealParam::rational(num, den), q)
    }

    #[inline]
    pub fn pf(&self) -> f64 {
        self.p.value
    }

    #[inline]
    pub fn qf(&self) -> f64 {
        self.q as f64
    }

    /// `log e(u) = -1/(q u^p)`; `-inf` at `u = 0`.
    #[inline]
    pub fn ln_e(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -1.0 / (self.qf() * u.powf(self.pf()))
    }

    /// Same as [`FlatParams::ln_e`] with `log u` as the argument.
    #[inline]
    pub fn ln_e_of_log(&self, lu: f64) -> f64 {
        -(-self.pf() * lu).exp() / self.qf()
    }

    /// `e(u)`; exactly 0 at the origin and wherever the exponential underflows.
    pub fn e(&self, u: f64) -> f64 {
        self.ln_e(u).exp()
    }

    /// `e^{-1}(x) = (-q log x)^(-1/p)` for `0 < x < 1`.
    pub fn inv_e(&self, x: f64) -> Result<f64> {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Domain(format!("inverse flat map needs 0 < x < 1, got {x}")));
        }
        Ok((-self.qf() * x.ln()).powf(-1.0 / self.pf()))
    }

    /// `log E(y) = -delta log y - 1/(q y^p)`.
    pub fn ln_big_e(&self, delta: f64, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -delta * y.ln() + self.ln_e(y)
    }

    /// `E(y) = y^(-delta) e(y)`, 0 at the origin.
    pub fn big_e(&self, delta: f64, y: f64) -> f64 {
        self.ln_big_e(delta, y).exp()
    }

    /// `dE/dy = E(y) (p/(q y^(p+1)) - delta/y)`.
    pub fn big_e_derivative(&self, delta: f64, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let p = self.pf();
        self.big_e(delta, y) * (p / (self.qf() * y.powf(p + 1.0)) - delta / y)
    }

    /// Right end `(p/(q delta))^(1/p)` of the interval where `E` increases.
    pub fn big_e_monotone_limit(&self, delta: f64) -> f64 {
        (self.pf() / (self.qf() * delta)).powf(1.0 / self.pf())
    }

    /// Inverse of `E` on `[0, r2]`, clamped to `r2` for `x >= E(r2)`.
    pub fn inv_big_e(&self, delta: f64, r2: f64, x: f64) -> Result<f64> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
        }
        if !(r2 > 0.0 && r2 < self.big_e_monotone_limit(delta)) {
            return Err(Error::InvalidParameter(format!(
                "r2 = {r2} must lie in (0, {}) for delta = {delta}",
                self.big_e_monotone_limit(delta)
            )));
        }
        if x.is_nan() || x < 0.0 {
            return Err(Error::Domain(format!("inverse of E needs x >= 0, got {x}")));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        let target = x.ln();
        if target >= self.ln_big_e(delta, r2) {
            return Ok(r2);
        }
        let g = |y: f64| self.ln_big_e(delta, y) - target;
        let (mut lo, mut hi) = (0.0_f64, r2);
        while hi - lo > 1e-8 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Newton on log E, whose derivative -delta/y + p/(q y^(p+1)) is
        // positive throughout the monotone range.
        let p = self.pf();
        let mut y = 0.5 * (lo + hi);
        for _ in 0..10 {
            let slope = -delta / y + p / (self.qf() * y.powf(p + 1.0));
            let step = g(y) / slope;
            let next = (y - step).clamp(0.5 * y, (2.0 * y).min(r2));
            let done = (next - y).abs() <= 1e-15 * y;
            y = next;
            if done {
                break;
            }
        }
        Ok(y)
    }

    /// `(rho, tau)` where `rho` is `e^{-1}` and `tau` is `E^{-1}`, both
    /// clamped at `r2`. Always `tau <= rho <= r2`.
    pub fn clamped_maps(&self, delta: f64, r2: f64, x: f64) -> Result<(f64, f64)> {
        let tau = self.inv_big_e(delta, r2, x)?;
        let rho = if x == 0.0 {
            0.0
        } else if x >= self.e(r2) {
            r2
        } else {
            self.inv_e(x)?
        };
        Ok((rho, tau.min(rho)))
    }
}

/// The rectangle `[0, r1] x [0, r2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub r1: f64,
    pub r2: f64,
}

impl BoxDomain {
    pub fn new(r1: f64, r2: f64) -> Result<Self> {
        for (name, r) in [("r1", r1), ("r2", r2)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0,1), got {r}")));
            }
        }
        Ok(BoxDomain { r1, r2 })
    }
}

/// Strict bounds on the splitting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleBounds {
    /// `max{(p+1)/q, (b(alpha+1)/a + p - 1)/q}`, for the unsplit continuation.
    pub delta_min: f64,
    /// `min{(p/(p+1))^(1/p), (p/(b(alpha+1)/a + p - 1))^(1/p)}`.
    pub r2_max: f64,
    /// `max{(p+1)/q, (b/a + 2p - 1)/q}`, for the continuation split by `lambda`.
    pub delta_min_split: f64,
    /// `min{(p/(p+1))^(1/p), (p/(b/a + 2p - 1))^(1/p)}`.
    pub r2_max_split: f64,
}

pub fn admissible_params(a: u32, b: u32, alpha: u32, fp: &FlatParams) -> AdmissibleBounds {
    let (a, b, alpha) = (a as f64, b as f64, alpha as f64);
    let (p, q) = (fp.pf(), fp.qf());
    let first = (p + 1.0) / q;
    let plain = (b * (alpha + 1.0) / a + p - 1.0) / q;
    let split = (b / a + 2.0 * p - 1.0) / q;
    let root = |d: f64| if d > 0.0 { (p / d).powf(1.0 / p) } else { f64::INFINITY };
    AdmissibleBounds {
        delta_min: first.max(plain),
        r2_max: root(p + 1.0).min(root(b * (alpha + 1.0) / a + p - 1.0)),
        delta_min_split: first.max(split),
        r2_max_split: root(p + 1.0).min(root(b / a + 2.0 * p - 1.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(p: f64, q: u32) -> FlatParams {
        FlatParams::new(RealParam::real(p), q).unwrap()
    }

    #[test]
    fn flat_values() {
        let f = fp(1.0, 2);
        assert_eq!(f.e(0.0), 0.0);
        assert!((f.e(1.0) - (-0.5f64).exp()).abs() < 1e-16);
        assert!((fp(2.0, 2).e(0.5) - (-2.0f64).exp()).abs() < 1e-16);
        assert_eq!(f.e(1e-4), 0.0);
    }

    #[test]
    fn inverse_round_trip() {
        let f = fp(1.0, 2);
        assert!((f.inv_e((-0.5f64).exp()).unwrap() - 1.0).abs() < 1e-14);
        for u in [0.1, 0.3, 0.7] {
            let back = f.inv_e(f.e(u)).unwrap();
            assert!((back - u).abs() < 1e-12 * u);
        }
        assert!(f.inv_e(0.0).is_err());
        assert!(f.inv_e(1.0).is_err());
        let mut prev = f64::INFINITY;
        for k in 1..30 {
            let v = f.inv_e(10f64.powi(-k)).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn weighted_flat_map() {
        let f = fp(1.0, 2);
        assert_eq!(f.big_e(2.0, 0.0), 0.0);
        let want = 100.0 * (-5.0f64).exp();
        assert!((f.big_e(2.0, 0.1) - want).abs() < 1e-14 * want);
        let top = f.big_e_monotone_limit(2.0);
        for k in 1..1000 {
            let y = top * k as f64 / 1000.0;
            let h = 1e-7 * y;
            assert!(f.ln_big_e(2.0, y + h) > f.ln_big_e(2.0, y), "y = {y}");
            assert!(f.big_e_derivative(2.0, y) >= 0.0);
            assert!(f.big_e(2.0, y + top / 1000.0) >= f.big_e(2.0, y));
        }
    }

    #[test]
    fn inverse_weighted_map() {
        let f = fp(1.0, 2);
        assert_eq!(f.inv_big_e(2.0, 0.2, 0.0).unwrap(), 0.0);
        let x = f.big_e(2.0, 0.05);
        assert!((f.inv_big_e(2.0, 0.2, x).unwrap() - 0.05).abs() < 1e-14);
        let top = f.big_e(2.0, 0.2);
        assert_eq!(f.inv_big_e(2.0, 0.2, top * 1.5).unwrap(), 0.2);
        assert!(f.inv_big_e(2.0, 0.3, 0.1).is_err());
    }

    #[test]
    fn clamped_map_ordering() {
        let f = fp(1.0, 2);
        assert_eq!(f.clamped_maps(2.0, 0.2, 0.0).unwrap(), (0.0, 0.0));
        let (rho, _) = f.clamped_maps(2.0, 0.2, 0.5).unwrap();
        assert_eq!(rho, 0.2);
        for k in 0..200 {
            let x = 10f64.powf(-0.2 * k as f64);
            let (rho, tau) = f.clamped_maps(2.0, 0.2, x).unwrap();
            assert!(tau <= rho && rho <= 0.2, "x = {x}");
        }
    }

    #[test]
    fn admissible_example() {
        let f = FlatParams::rational(1, 1, 2).unwrap();
        let b = admissible_params(2, 4, 0, &f);
        assert_eq!(b.delta_min, 1.0);
        assert_eq!(b.delta_min_split, 1.5);
        assert!((b.r2_max_split - 1.0 / 3.0).abs() < 1e-15);
        assert!((b.r2_max - 0.5).abs() < 1e-15);
        let g = FlatParams::rational(1, 1, 4).unwrap();
        let c = admissible_params(2, 4, 0, &g);
        assert_eq!(c.delta_min, 0.5 * b.delta_min);
        assert_eq!(c.delta_min_split, 0.5 * b.delta_min_split);
    }

    #[test]
    fn flatness_beats_polynomials() {
        let f = fp(1.0, 2);
        for n in [1, 10, 50] {
            let log_ratio = |k: i32| f.ln_e(10f64.powi(-k)) + n as f64 * k as f64 * 10f64.ln();
            for k in 3..6 {
                assert!(log_ratio(k + 1) < log_ratio(k), "n={n} k={k}");
            }
            assert!(f.e(1e-6) / 1e-6f64.powi(n) < 1e-100);
            assert!(log_ratio(6) < -400.0);
        }
    }

    #[test]
    fn parse_params() {
        let p: RealParam = "1/2".parse().unwrap();
        assert_eq!(p.exact, Some((1, 2)));
        let p: RealParam = "0.4".parse().unwrap();
        assert_eq!(p.exact, Some((2, 5)));
        let p: RealParam = "3".parse().unwrap();
        assert_eq!(p.as_integer(), Some(3));
        let p: RealParam = "1e-3".parse().unwrap();
        assert_eq!(p.exact, None);
        assert!("x".parse::<RealParam>().is_err());
        assert!("1/0".parse::<RealParam>().is_err());
    }
}
