//! The one-dimensional integrals
//! `K(X) = int_0^r u^(A+BX) e(u)^X du` and `K~(X) = int_0^r u^(A+BX) (1 - e(u)^X) du`,
//! their expansions as `X -> 0+`, and continuation of `int_0^T u^mu g(u) du`
//! in `mu` by subtracting Taylor terms.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::constants::{const_complement_moment, const_flat_moment, expansion_coeffs};
use crate::error::{Error, Result};
use crate::flatcore::{FlatParams, RealParam};
use crate::quad::{integrate, integrate_segments, integrate_tail, EndBehavior, QuadResult, SingularityHint, Tolerance, TOL_1D};
use crate::verify::{LimitModel, ScalingVariable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralKind {
    /// `int u^(A+BX) e(u)^X du`.
    K,
    /// `int u^(A+BX) (1 - e(u)^X) du`.
    Ktilde,
}

/// Position of `A` relative to `-1`, with the integrality of `(A+1)/p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceClass {
    BelowNonInteger,
    BelowInteger,
    Critical,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneDimIntegralSpec {
    pub a_exp: RealParam,
    pub b_coef: f64,
    pub r: f64,
    pub fp: FlatParams,
    pub kind: IntegralKind,
}

impl OneDimIntegralSpec {
    pub fn new(a_exp: RealParam, b_coef: f64, r: f64, fp: FlatParams, kind: IntegralKind) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidParameter(format!("r must lie in (0,1), got {r}")));
        }
        if !a_exp.value.is_finite() || !b_coef.is_finite() {
            return Err(Error::InvalidParameter("A and B must be finite".into()));
        }
        Ok(OneDimIntegralSpec { a_exp, b_coef, r, fp, kind })
    }

    /// `(A+1)/p`, exact when both `A` and `p` are.
    pub fn scaled_exponent(&self) -> RealParam {
        (self.a_exp + RealParam::integer(1)) / self.fp.p
    }

    pub fn class(&self) -> ConvergenceClass {
        match self.a_exp.cmp_param(&RealParam::integer(-1)) {
            Ordering::Greater => ConvergenceClass::Above,
            Ordering::Equal => ConvergenceClass::Critical,
            Ordering::Less => {
                if self.scaled_exponent().as_integer().is_some() {
                    ConvergenceClass::BelowInteger
                } else {
                    ConvergenceClass::BelowNonInteger
                }
            }
        }
    }

    /// The same integral after `w = u^p`, which turns `e_{p,q}` into `e_{1,q}`:
    /// `K = (1/p) K'` with `A' = (A+1)/p - 1`, `B' = B/p`, `r' = r^p`.
    pub fn reduced(&self) -> Result<OneDimIntegralSpec> {
        let p = self.fp.p;
        Ok(OneDimIntegralSpec {
            a_exp: self.scaled_exponent() - RealParam::integer(1),
            b_coef: self.b_coef / p.value,
            r: self.r.powf(p.value),
            fp: FlatParams::new(RealParam::integer(1), self.fp.q)?,
            kind: self.kind,
        })
    }
}

/// Breakpoints for `int_{t0}^inf exp(-kappa t - c e^(p t)) dt` and a point
/// beyond which the integrand is below `exp(-60)` times its maximum.
pub(crate) fn flat_profile_points(kappa: f64, c: f64, p: f64, t0: f64) -> (Vec<f64>, f64) {
    let phi = |t: f64| -kappa * t - c * (p * t).exp();
    let t_peak = if kappa < 0.0 && c > 0.0 { ((-kappa / (p * c)).ln() / p).max(t0) } else { t0 };
    let top = phi(t_peak);
    let mut points = vec![t0, t_peak];
    if c > 0.0 {
        let t_flat = (1.0 / c).ln() / p;
        if t_flat > t0 {
            points.push(t_flat);
        }
        let width = 1.0 / (p * kappa.abs().max(1.0)).sqrt();
        for k in [-4.0, -1.0, 1.0, 4.0] {
            let t = t_peak + k * width;
            if t > t0 {
                points.push(t);
            }
        }
    } else if kappa > 0.0 {
        points.push(t0 + 1.0 / kappa);
    }
    let mut step = 1.0;
    let mut end = t_peak + step;
    while phi(end) > top - 60.0 && step < 1e12 {
        step *= 2.0;
        end = t_peak + step;
    }
    points.retain(|&t| t < end);
    (points, end)
}

/// Direct quadrature of `K(X)` at the default tolerance.
pub fn eval_k_direct(spec: &OneDimIntegralSpec, x: f64) -> Result<QuadResult> {
    eval_k_direct_tol(spec, x, TOL_1D)
}

/// Direct quadrature of `K(X)` in the variable `t = -log u`.
pub fn eval_k_direct_tol(spec: &OneDimIntegralSpec, x: f64, tol: Tolerance) -> Result<QuadResult> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("K(X) needs X > 0, got {x}")));
    }
    let (p, q) = (spec.fp.pf(), spec.fp.qf());
    let kappa = spec.a_exp.value + spec.b_coef * x + 1.0;
    let c = x / q;
    let t0 = -spec.r.ln();
    let g = move |t: f64| (-kappa * t - c * (p * t).exp()).exp();
    let (mut points, end) = flat_profile_points(kappa, c, p, t0);
    points.push(end);
    Ok(integrate_segments(g, &points, tol))
}

/// Direct quadrature of `K~(X)`; requires `A > -1`.
pub fn eval_ktilde_direct(spec: &OneDimIntegralSpec, x: f64) -> Result<QuadResult> {
    eval_ktilde_direct_tol(spec, x, TOL_1D)
}

pub fn eval_ktilde_direct_tol(spec: &OneDimIntegralSpec, x: f64, tol: Tolerance) -> Result<QuadResult> {
    if spec.class() != ConvergenceClass::Above {
        return Err(Error::Divergent(format!("K~ needs A > -1, got A = {}", spec.a_exp)));
    }
    if !(x > 0.0) {
        return Err(Error::Domain(format!("K~(X) needs X > 0, got {x}")));
    }
    let (p, q) = (spec.fp.pf(), spec.fp.qf());
    let kappa = spec.a_exp.value + spec.b_coef * x + 1.0;
    if !(kappa > 0.0) {
        return Err(Error::Divergent(format!("A + B X + 1 = {kappa} must be positive")));
    }
    let c = x / q;
    let t0 = -spec.r.ln();
    let g = move |t: f64| (-kappa * t).exp() * (-(-c * (p * t).exp()).exp_m1());
    let t_flat = (1.0 / c).ln() / p;
    let points: Vec<f64> = [t0, t_flat - 4.0 / p, t_flat - 1.0 / p, t_flat, t_flat + 1.0 / p, t_flat + 1.0 / kappa, t_flat + 10.0 / kappa]
        .into_iter()
        .filter(|&t| t >= t0)
        .collect();
    Ok(integrate_tail(g, &points, tol))
}

/// Predicted normalisation and limit of `K(X)` as `X -> 0+`.
pub fn limit_k(spec: &OneDimIntegralSpec) -> Result<(LimitModel, f64)> {
    if spec.kind != IntegralKind::K {
        return Err(Error::InvalidParameter("limit_k is for K, not K~".into()));
    }
    let e = spec.scaled_exponent();
    let a = spec.a_exp.value;
    match spec.class() {
        ConvergenceClass::Above => {
            let limit = spec.r.powf(a + 1.0) / (a + 1.0);
            let log = e.is_exactly(&RealParam::integer(1));
            let mut model = LimitModel::constant(ScalingVariable::Direct).with_correction(e.value.min(1.0));
            model.log_correction = log;
            Ok((model, limit))
        }
        ConvergenceClass::Critical => Ok((LimitModel::log_only(ScalingVariable::Direct), 1.0 / spec.fp.pf())),
        class => {
            let mut model = LimitModel::power(-e.value, ScalingVariable::Direct).with_correction(1.0);
            model.log_correction = class == ConvergenceClass::BelowInteger;
            Ok((model, const_flat_moment(a, 0, &spec.fp)?))
        }
    }
}

/// Predicted normalisation and limit of `K~(X)` as `X -> 0+`.
pub fn limit_ktilde(spec: &OneDimIntegralSpec) -> Result<(LimitModel, f64)> {
    if spec.class() != ConvergenceClass::Above {
        return Err(Error::Divergent(format!("K~ needs A > -1, got A = {}", spec.a_exp)));
    }
    let p = spec.fp.p;
    let q = spec.fp.qf();
    let threshold = p - RealParam::integer(1);
    let a = spec.a_exp.value;
    match spec.a_exp.cmp_param(&threshold) {
        Ordering::Less => {
            let e = spec.scaled_exponent().value;
            let model = LimitModel::power(-e, ScalingVariable::Direct).with_correction((1.0 - e).min(e).max(0.1));
            Ok((model, const_complement_moment(a, &spec.fp)?))
        }
        Ordering::Equal => {
            let model = LimitModel::power_times_log(-1.0, ScalingVariable::Direct);
            Ok((model, 1.0 / (p.value * q)))
        }
        Ordering::Greater => {
            let s = a - p.value + 1.0;
            let e = spec.scaled_exponent().value;
            let model = LimitModel::power(-1.0, ScalingVariable::Direct).with_correction((e - 1.0).min(1.0).max(0.1));
            Ok((model, spec.r.powf(s) / (q * s)))
        }
    }
}

/// One term `coeff * X^x_power * (log X)^log_power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTerm {
    pub coeff: f64,
    pub x_power: f64,
    pub log_power: u32,
}

/// Truncated expansion; the remainder is `O(X^remainder_order |log X|^remainder_log_power)`.
/// A `remainder_order` of 0 means only `o(1)` is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLogExpansion {
    pub terms: Vec<ExpansionTerm>,
    pub remainder_order: f64,
    pub remainder_log_power: u32,
}

impl PowerLogExpansion {
    pub fn eval(&self, x: f64) -> f64 {
        let lx = x.ln();
        self.terms.iter().map(|t| t.coeff * x.powf(t.x_power) * lx.powi(t.log_power as i32)).sum()
    }

    fn sort(&mut self) {
        self.terms.sort_by(|a, b| a.x_power.total_cmp(&b.x_power).then(b.log_power.cmp(&a.log_power)));
    }

    fn scaled(mut self, factor: f64) -> Self {
        for t in &mut self.terms {
            t.coeff *= factor;
        }
        self
    }
}

/// Largest admissible depth for the expansion of `K`.
pub fn max_depth(spec: &OneDimIntegralSpec) -> usize {
    let s = -spec.scaled_exponent().value;
    match spec.class() {
        ConvergenceClass::BelowNonInteger => (s + 1.0).floor().max(0.0) as usize,
        ConvergenceClass::BelowInteger => spec.scaled_exponent().as_integer().map(|n| (-n) as usize).unwrap_or(0),
        _ => 0,
    }
}

/// Expansion of `K(X)` as `X -> 0+`. General `p` is reduced to `p = 1`
/// through `w = u^p`. `depth` defaults to the full truncation.
pub fn expand_k(spec: &OneDimIntegralSpec, depth: Option<usize>) -> Result<PowerLogExpansion> {
    if spec.kind != IntegralKind::K {
        return Err(Error::InvalidParameter("expand_k applies to K only".into()));
    }
    let full = max_depth(spec);
    let depth = depth.unwrap_or(full);
    if depth > full {
        return Err(Error::UnsupportedDepth { requested: depth, max: full });
    }
    let p = spec.fp.pf();
    let red = spec.reduced()?;
    let (a1, b1, r1) = (red.a_exp.value, red.b_coef, red.r);
    let constant = ExpansionTerm { coeff: spec.r.powf(spec.a_exp.value + 1.0) / (spec.a_exp.value + 1.0), x_power: 0.0, log_power: 0 };
    let term = |coeff: f64, x_power: f64, log_power: u32| ExpansionTerm { coeff, x_power, log_power };
    let mut out = match spec.class() {
        ConvergenceClass::Above => {
            return Ok(PowerLogExpansion { terms: vec![constant], remainder_order: 0.0, remainder_log_power: 0 });
        }
        ConvergenceClass::Critical => {
            let c = expansion_coeffs(-1.0, b1, r1, &red.fp, 0)?;
            let lr = r1.ln();
            let q = red.fp.qf();
            // int_1^{r/X} log(v)/v dv = (log r - log X)^2 / 2, so the
            // X (log X)^2 contributions of X^{BX} and of v^{BX} do not cancel.
            let e = PowerLogExpansion {
                terms: vec![
                    term(-1.0, 0.0, 1),
                    term(c.d0, 0.0, 0),
                    term(-0.5 * b1, 1.0, 2),
                    term(b1 * (c.d0 - lr), 1.0, 1),
                    term(1.0 / (q * r1) + b1 * (c.d1 - 0.5 * lr * lr), 1.0, 0),
                ],
                remainder_order: 2.0,
                remainder_log_power: 3,
            };
            e.scaled(1.0 / p)
        }
        ConvergenceClass::BelowNonInteger => {
            let c = expansion_coeffs(a1, b1, r1, &red.fp, depth)?;
            let lead = a1 + 1.0;
            let mut terms = Vec::new();
            for m in 0..=depth {
                for l in 0..=m {
                    terms.push(term(c.a_ml[m][l] / p, lead + m as f64, l as u32));
                }
            }
            terms.push(constant);
            let (remainder_order, remainder_log_power) = if depth == full { (1.0, 0) } else { (lead + depth as f64 + 1.0, depth as u32 + 1) };
            PowerLogExpansion { terms, remainder_order, remainder_log_power }
        }
        ConvergenceClass::BelowInteger => {
            let n = full;
            let c = expansion_coeffs(a1, b1, r1, &red.fp, n + 1)?;
            let lead = a1 + 1.0;
            let mut terms = Vec::new();
            for m in 0..depth.min(n) {
                for l in 0..=m {
                    terms.push(term(c.a_ml[m][l] / p, lead + m as f64, l as u32));
                }
            }
            if depth == n {
                for l in 1..=n {
                    terms.push(term(c.a_ml[n][l] / p, 0.0, l as u32));
                }
                terms.push(term(c.a_ml[n][0] / p + constant.coeff, 0.0, 0));
                for l in 1..=n + 1 {
                    terms.push(term(c.a_ml[n + 1][l] / p, 1.0, l as u32));
                }
                PowerLogExpansion { terms, remainder_order: 1.0, remainder_log_power: 0 }
            } else {
                terms.push(constant);
                PowerLogExpansion { terms, remainder_order: lead + depth as f64, remainder_log_power: depth as u32 }
            }
        }
    };
    out.sort();
    Ok(out)
}

/// `int_0^T u^mu g(u) du` continued in `mu` past `-1` by subtracting the
/// first `J` Taylor terms of `g`:
/// `sum_{j<J} g_j T^(mu+j+1)/(mu+j+1) + int_0^T u^mu (g(u) - sum_{j<J} g_j u^j) du`.
///
/// `taylor` holds `g_j` for at least `j < J`. Extra entries are used to
/// evaluate the subtracted remainder near 0, where `g(u) - sum g_j u^j`
/// would otherwise be lost to cancellation.
pub fn continue_monomial_weight<G: Fn(f64) -> f64>(mu: f64, g: G, taylor: &[f64], t_end: f64, j_terms: usize) -> Result<f64> {
    if taylor.len() < j_terms {
        return Err(Error::InvalidParameter(format!("{} Taylor coefficients given, {j_terms} needed", taylor.len())));
    }
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!("upper limit must be positive, got {t_end}")));
    }
    if !(mu > -(j_terms as f64) - 1.0) {
        return Err(Error::Divergent(format!("mu = {mu} needs more than {j_terms} subtracted terms")));
    }
    for j in 0..j_terms {
        if (mu + j as f64 + 1.0).abs() < 1e-12 {
            return Err(Error::Pole(format!("mu = {mu} is the pole -{}", j + 1)));
        }
    }
    let closed: f64 = (0..j_terms)
        .map(|j| {
            let s = mu + j as f64 + 1.0;
            taylor[j] * t_end.powf(s) / s
        })
        .sum();
    let series_tail = |u: f64| -> f64 { taylor[j_terms..].iter().enumerate().map(|(i, c)| c * u.powi((j_terms + i) as i32)).sum() };
    // Switch to the series where its truncation error is below rounding.
    let extra = taylor.len() - j_terms;
    let switch = if extra > 0 { (1e-16f64).powf(1.0 / (taylor.len() as f64)).min(t_end) } else { 0.0 };
    let remainder = |u: f64| -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let diff = if u < switch {
            series_tail(u)
        } else {
            g(u) - taylor[..j_terms].iter().enumerate().map(|(j, c)| c * u.powi(j as i32)).sum::<f64>()
        };
        u.powf(mu) * diff
    };
    let gamma = (mu + j_terms as f64).min(10.0);
    let hint = if gamma < 0.0 { SingularityHint::left(EndBehavior::Algebraic(gamma)) } else { SingularityHint::REGULAR };
    let r = integrate(remainder, 0.0, t_end, hint, Tolerance { abs: 1e-14, rel: 1e-12 });
    if !r.converged {
        return Err(Error::NonConvergence(format!("Taylor remainder integral: error estimate {}", r.abs_err_estimate)));
    }
    Ok(closed + r.value)
}

/// Power-law factor `X^(-(A+1)/p)` that normalises `K(X)` when `A < -1`.
pub fn leading_scale(spec: &OneDimIntegralSpec, x: f64) -> f64 {
    x.powf(-spec.scaled_exponent().value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(a: RealParam, b: f64, r: f64, p: RealParam, q: u32, kind: IntegralKind) -> OneDimIntegralSpec {
        OneDimIntegralSpec::new(a, b, r, FlatParams::new(p, q).unwrap(), kind).unwrap()
    }

    #[test]
    fn classes() {
        let one = RealParam::integer(1);
        let k = |a: RealParam| spec(a, 1.0, 0.5, one, 2, IntegralKind::K).class();
        assert_eq!(k(RealParam::rational(-5, 2)), ConvergenceClass::BelowNonInteger);
        assert_eq!(k(RealParam::integer(-3)), ConvergenceClass::BelowInteger);
        assert_eq!(k(RealParam::integer(-1)), ConvergenceClass::Critical);
        assert_eq!(k(RealParam::integer(0)), ConvergenceClass::Above);
        let half = spec(RealParam::integer(-2), 1.0, 0.5, RealParam::rational(1, 2), 2, IntegralKind::K);
        assert_eq!(half.class(), ConvergenceClass::BelowInteger);
        let third = spec(RealParam::integer(-2), 1.0, 0.5, RealParam::real(0.3), 2, IntegralKind::K);
        assert_eq!(third.class(), ConvergenceClass::BelowNonInteger);
    }

    #[test]
    fn monomial_continuation_closed_forms() {
        for mu in [-1.7, -1.3, -0.5, 0.4] {
            let v = continue_monomial_weight(mu, |_| 1.0, &[1.0], 1.0, 1).unwrap();
            assert!((v - 1.0 / (mu + 1.0)).abs() < 1e-12);
        }
        let v = continue_monomial_weight(-1.5, |u| 1.0 + u, &[1.0, 1.0], 1.0, 2).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(matches!(continue_monomial_weight(-1.0, |_| 1.0, &[1.0], 1.0, 1), Err(Error::Pole(_))));
        assert!(matches!(continue_monomial_weight(-2.5, |_| 1.0, &[1.0], 1.0, 1), Err(Error::Divergent(_))));
    }

    #[test]
    fn monomial_continuation_matches_direct() {
        let taylor = [1.0, 0.0, -0.5, 0.0, 1.0 / 24.0, 0.0, -1.0 / 720.0, 0.0, 1.0 / 40320.0];
        let sub = continue_monomial_weight(-0.5, f64::cos, &taylor[..2], 1.0, 2).unwrap();
        let direct = integrate(|u: f64| u.powf(-0.5) * u.cos(), 0.0, 1.0, SingularityHint::left(EndBehavior::Algebraic(-0.5)), Tolerance::abs(1e-13));
        assert!((sub - direct.value).abs() < 1e-10, "{sub} vs {}", direct.value);
    }
}
