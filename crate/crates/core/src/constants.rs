//! Limit constants and expansion coefficients.
//!
//! Every moment `int_0^inf v^A (log v)^k e(v) dv` is computed by quadrature in
//! the variable `t = log v`. For `k = 0` it is also compared with the closed
//! form obtained from the substitution `s = 1/(q v^p)`:
//! `(1/p) q^((-A-1)/p) Gamma((-A-1)/p)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flatcore::{FlatParams, RealParam};
use crate::quad::{integrate_tail, QuadResult, Tolerance, TOL_1D};

/// Relative agreement required between quadrature and closed form.
pub const ORACLE_TOL: f64 = 1e-8;

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_6;

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

pub fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `(1/p) q^((-A-1)/p) Gamma((-A-1)/p)`, valid for `A < -1`.
pub fn flat_moment_oracle(a_exp: f64, fp: &FlatParams) -> f64 {
    let (p, q) = (fp.pf(), fp.qf());
    let s = (-a_exp - 1.0) / p;
    q.powf(s) * gamma(s) / p
}

/// `int_0^inf v^A (1 - e(v)) dv = q^(-(A+1)/p) Gamma(1 - (A+1)/p) / (A+1)`,
/// valid for `-1 < A < p - 1`. Obtained by integrating by parts once.
pub fn complement_moment_oracle(a_exp: f64, fp: &FlatParams) -> f64 {
    let (p, q) = (fp.pf(), fp.qf());
    let s = (a_exp + 1.0) / p;
    q.powf(-s) * gamma(1.0 - s) / (a_exp + 1.0)
}

fn check_quad(r: QuadResult, what: &str) -> Result<f64> {
    if r.converged && r.value.is_finite() {
        Ok(r.value)
    } else {
        Err(Error::NonConvergence(format!("{what}: value {} with error estimate {}", r.value, r.abs_err_estimate)))
    }
}

/// Quadrature of `int_0^inf v^A (log v)^k e(v) dv` without the closed-form check.
pub fn flat_moment_quadrature(a_exp: f64, k: u32, fp: &FlatParams) -> Result<f64> {
    if !(a_exp < -1.0) {
        return Err(Error::Divergent(format!("moment of v^{a_exp} e(v) needs exponent < -1")));
    }
    let (p, q) = (fp.pf(), fp.qf());
    let rate = -(a_exp + 1.0);
    let g = move |t: f64| {
        let flat = -(-p * t).exp() / q;
        let v = ((a_exp + 1.0) * t + flat).exp();
        if v == 0.0 { 0.0 } else { v * t.powi(k as i32) }
    };
    // Below t_lo the flat factor is below exp(-745); the integrand is 0.
    let t_lo = -(745.0 * q).ln() / p;
    let t_edge = -q.ln() / p;
    let mut points = vec![t_lo, t_edge, t_edge.max(0.0) + 1.0];
    if k > 0 {
        let peak = k as f64 / rate;
        points.extend([peak, 4.0 * peak]);
    }
    let tol = scaled_tolerance(&g, &points, k);
    check_quad(integrate_tail(g, &points, tol), "flat moment")
}

/// For sign-changing integrands a purely relative target can be unreachable;
/// add an absolute floor proportional to the integral of `|g|`.
fn scaled_tolerance<G: Fn(f64) -> f64>(g: &G, points: &[f64], k: u32) -> Tolerance {
    if k % 2 == 0 {
        return TOL_1D;
    }
    let mass = integrate_tail(|t| g(t).abs(), points, Tolerance::rel(1e-6)).value;
    Tolerance { abs: 1e-13 * mass, rel: TOL_1D.rel }
}

/// `int_0^inf v^A (log v)^k e_{p,q}(v) dv` for `A < -1`. For `k = 0` the
/// quadrature must match the Gamma closed form to [`ORACLE_TOL`].
pub fn const_flat_moment(a_exp: f64, k: u32, fp: &FlatParams) -> Result<f64> {
    let value = flat_moment_quadrature(a_exp, k, fp)?;
    if k == 0 {
        let oracle = flat_moment_oracle(a_exp, fp);
        if (value - oracle).abs() > ORACLE_TOL * oracle.abs() {
            return Err(Error::OracleMismatch { what: format!("flat moment with exponent {a_exp}"), oracle, quadrature: value });
        }
    }
    Ok(value)
}

/// Quadrature of `int_0^inf v^A (1 - e(v)) dv`, `-1 < A < p - 1`.
pub fn complement_moment_quadrature(a_exp: f64, fp: &FlatParams) -> Result<f64> {
    let (p, q) = (fp.pf(), fp.qf());
    if !(a_exp > -1.0 && a_exp < p - 1.0) {
        return Err(Error::Divergent(format!("moment of v^{a_exp}(1 - e(v)) needs -1 < exponent < p - 1 = {}", p - 1.0)));
    }
    let g = move |t: f64| {
        let flat = -(-p * t).exp() / q;
        ((a_exp + 1.0) * t).exp() * (-flat.exp_m1())
    };
    let edge = -q.ln() / p;
    let right = integrate_tail(g, &[edge, edge + 1.0], TOL_1D);
    let left = integrate_tail(|s| g(-s), &[-edge, -edge + 1.0], TOL_1D);
    check_quad(right.combine(left), "complement moment")
}

/// `int_0^inf v^A (1 - e(v)) dv` with the closed-form check.
pub fn const_complement_moment(a_exp: f64, fp: &FlatParams) -> Result<f64> {
    let value = complement_moment_quadrature(a_exp, fp)?;
    let oracle = complement_moment_oracle(a_exp, fp);
    if (value - oracle).abs() > ORACLE_TOL * oracle.abs() {
        return Err(Error::OracleMismatch { what: format!("complement moment with exponent {a_exp}"), oracle, quadrature: value });
    }
    Ok(value)
}

/// `C = int u^(-b/a-p) e(u) du`.
pub fn const_c(a: u32, b: u32, fp: &FlatParams) -> Result<f64> {
    const_flat_moment(-(b as f64) / a as f64 - fp.pf(), 0, fp)
}

/// `C~ = int u^(-p-1) e(u) du`, equal to `q/p`.
pub fn const_ctilde(fp: &FlatParams) -> Result<f64> {
    const_flat_moment(-fp.pf() - 1.0, 0, fp)
}

/// `C_beta = int u^(-b/a-p+beta) e(u) du`, requires `beta < b/a + p - 1`.
pub fn const_c_beta(a: u32, b: u32, beta: u32, fp: &FlatParams) -> Result<f64> {
    const_flat_moment(-(b as f64) / a as f64 - fp.pf() + beta as f64, 0, fp)
}

/// `A_beta = int u^(-b/a+beta) e(u) du`, requires `beta < b/a - 1`.
pub fn const_a_beta(a: u32, b: u32, beta: u32, fp: &FlatParams) -> Result<f64> {
    const_flat_moment(-(b as f64) / a as f64 + beta as f64, 0, fp)
}

/// `C^ = int x^(-a/b) (1 - e(x)) dx`, requires `a < b` and `p > 1 - a/b`.
pub fn const_chat(a: u32, b: u32, fp: &FlatParams) -> Result<f64> {
    if a >= b {
        return Err(Error::InvalidParameter(format!("C^ needs a < b, got a = {a}, b = {b}")));
    }
    let threshold = RealParam::integer(1) - RealParam::rational(a as i64, b as i64);
    if fp.p.cmp_param(&threshold) != std::cmp::Ordering::Greater {
        return Err(Error::Divergent(format!("C^ needs p > 1 - a/b = {threshold}, got p = {}", fp.p)));
    }
    const_complement_moment(-(a as f64) / b as f64, fp)
}

pub fn chat_oracle(a: u32, b: u32, fp: &FlatParams) -> f64 {
    complement_moment_oracle(-(a as f64) / b as f64, fp)
}

/// Coefficients of the power-log expansions of `K(X) = int_0^r u^(A+BX) e(u)^X du`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCoefficients {
    /// `a[m][l] = B^m / (l! (m-l)! p^l) int v^A (log v)^(m-l) e(v) dv`, empty unless `A < -1`.
    pub a_ml: Vec<Vec<f64>>,
    /// `c[n][j]`: coefficient of `(log X)^j` in the upper-limit value of
    /// `int^r v^A (log v - log X)^n dv`; empty when `A = -1`.
    pub c_nj: Vec<Vec<f64>>,
    /// `log r + int_0^1 e(v)/v dv + int_1^inf (e(v)-1)/v dv`.
    pub d0: f64,
    /// `(log r)^2 + int_0^1 log(v) e(v)/v dv + int_1^inf log(v) (e(v)-1)/v dv`.
    pub d1: f64,
}

/// Closed form of `c[n][j]`.
pub fn c_nj_closed_form(a_exp: f64, r: f64, n: u32, j: u32) -> f64 {
    let lr = r.ln();
    let s = a_exp + 1.0;
    let sum: f64 = (0..=(n - j))
        .map(|k| {
            let sign = if (k + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * lr.powi((n - j - k) as i32) / (factorial(n - j - k) * s.powi(k as i32 + 1))
        })
        .sum();
    r.powf(s) * factorial(n) / factorial(j) * sum
}

/// The split integrals `(int_0^1 + int_1^inf)` entering `d0` and `d1`.
fn log_split_integrals(fp: &FlatParams) -> Result<(f64, f64)> {
    let (p, q) = (fp.pf(), fp.qf());
    // v = e^(-t) on (0,1): e(v) = exp(-e^(pt)/q).
    let inner = |t: f64| (-(p * t).exp() / q).exp();
    // v = e^t on (1,inf): e(v) - 1 = expm1(-e^(-pt)/q).
    let outer = |t: f64| (-(-p * t).exp() / q).exp_m1();
    let cut = (750.0 * q).ln() / p;
    let pts = [0.0, 1.0, cut];
    let i0 = check_quad(integrate_tail(inner, &pts, TOL_1D), "d0 inner")?;
    let i1 = check_quad(integrate_tail(outer, &[0.0, 1.0, 1.0 / p], TOL_1D), "d0 outer")?;
    let j0 = check_quad(integrate_tail(|t| -t * inner(t), &pts, Tolerance { abs: 1e-15, rel: TOL_1D.rel }), "d1 inner")?;
    let j1 = check_quad(integrate_tail(|t| t * outer(t), &[0.0, 1.0, 1.0 / p, 4.0 / p], Tolerance { abs: 1e-15, rel: TOL_1D.rel }), "d1 outer")?;
    Ok((i0 + i1, j0 + j1))
}

/// `a_ml` for `m, l <= depth`, `c_nj` for `n, j <= depth`, and `d0`, `d1`.
pub fn expansion_coeffs(a_exp: f64, b_coef: f64, r: f64, fp: &FlatParams, depth: usize) -> Result<ExpansionCoefficients> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!("r must lie in (0,1), got {r}")));
    }
    let p = fp.pf();
    let mut a_ml = Vec::new();
    if a_exp < -1.0 {
        let moments: Vec<f64> = (0..=depth as u32)
            .map(|k| const_flat_moment(a_exp, k, fp))
            .collect::<Result<_>>()?;
        for m in 0..=depth as u32 {
            let row = (0..=m)
                .map(|l| b_coef.powi(m as i32) / (factorial(l) * factorial(m - l) * p.powi(l as i32)) * moments[(m - l) as usize])
                .collect();
            a_ml.push(row);
        }
    }
    let mut c_nj = Vec::new();
    if a_exp != -1.0 {
        for n in 0..=depth as u32 {
            c_nj.push((0..=n).map(|j| c_nj_closed_form(a_exp, r, n, j)).collect());
        }
    }
    let (first, second) = log_split_integrals(fp)?;
    let lr = r.ln();
    Ok(ExpansionCoefficients { a_ml, c_nj, d0: lr + first, d1: lr * lr + second })
}
