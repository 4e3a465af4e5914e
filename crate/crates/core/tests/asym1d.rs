use flatzeta_core::asym1d::{
    continue_monomial_weight, eval_k_direct, eval_ktilde_direct, expand_k, limit_k, limit_ktilde, max_depth, ConvergenceClass, IntegralKind,
    OneDimIntegralSpec,
};
use flatzeta_core::constants::{const_flat_moment, gamma};
use flatzeta_core::flatcore::{FlatParams, RealParam};
use flatzeta_core::verify::ModelKind;
use flatzeta_core::Error;
use proptest::prelude::*;

fn spec(a: RealParam, p: RealParam, kind: IntegralKind) -> OneDimIntegralSpec {
    OneDimIntegralSpec::new(a, 1.0, 0.5, FlatParams::new(p, 2).unwrap(), kind).unwrap()
}

fn one() -> RealParam {
    RealParam::integer(1)
}

/// Lower incomplete gamma by its power series; fine for small `c`.
fn lower_gamma(a: f64, c: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..200 {
        term *= c / (a + n as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    c.powf(a) * (-c).exp() * sum
}

/// Upper incomplete gamma for non-integer `a`.
fn upper_gamma(a: f64, c: f64) -> f64 {
    if a > 0.0 {
        gamma(a) - lower_gamma(a, c)
    } else {
        (upper_gamma(a + 1.0, c) - c.powf(a) * (-c).exp()) / a
    }
}

/// `K(X)` for `p = 1`, `B = 1`, `q = 2`, `r = 1/2` through `v = X/(q u)`,
/// which gives `(X/q)^s Gamma(-s, X)` with `s = A + X + 1`.
fn k_oracle(a_exp: f64, x: f64) -> f64 {
    let s = a_exp + x + 1.0;
    (x / 2.0).powf(s) * upper_gamma(-s, x)
}

#[test]
fn k_matches_incomplete_gamma() {
    for a in [0.0, -2.5, -1.0, -3.0] {
        let sp = spec(RealParam::real(a), one(), IntegralKind::K);
        for x in [0.1, 0.01, 1e-3] {
            let v = eval_k_direct(&sp, x).unwrap();
            let o = k_oracle(a, x);
            assert!(v.converged);
            assert!((v.value - o).abs() < 1e-9 * o.abs(), "A = {a}, X = {x}: {} vs {o}", v.value);
        }
    }
}

#[test]
fn ktilde_complements_k() {
    for a in [0.0, 0.5, -0.5] {
        let k = spec(RealParam::real(a), one(), IntegralKind::K);
        let kt = spec(RealParam::real(a), one(), IntegralKind::Ktilde);
        for x in [0.1, 1e-3, 1e-6] {
            let s = a + x + 1.0;
            let total = 0.5f64.powf(s) / s;
            let sum = eval_k_direct(&k, x).unwrap().value + eval_ktilde_direct(&kt, x).unwrap().value;
            assert!((sum - total).abs() < 1e-10 * total);
        }
    }
    let below = spec(RealParam::integer(-2), one(), IntegralKind::Ktilde);
    assert!(matches!(eval_ktilde_direct(&below, 0.1), Err(Error::Divergent(_))));
}

#[test]
fn classes_and_depths() {
    let k = |a: RealParam, p: RealParam| spec(a, p, IntegralKind::K);
    assert_eq!(k(RealParam::rational(-5, 2), one()).class(), ConvergenceClass::BelowNonInteger);
    assert_eq!(max_depth(&k(RealParam::rational(-5, 2), one())), 2);
    assert_eq!(k(RealParam::integer(-3), one()).class(), ConvergenceClass::BelowInteger);
    assert_eq!(max_depth(&k(RealParam::integer(-3), one())), 2);
    assert_eq!(k(RealParam::integer(-1), one()).class(), ConvergenceClass::Critical);
    assert_eq!(k(RealParam::integer(0), one()).class(), ConvergenceClass::Above);
    let err = expand_k(&k(RealParam::rational(-5, 2), one()), Some(5)).unwrap_err();
    assert_eq!(err, Error::UnsupportedDepth { requested: 5, max: 2 });
}

fn residuals(sp: &OneDimIntegralSpec, ks: std::ops::RangeInclusive<i32>) -> Vec<(f64, f64)> {
    let e = expand_k(sp, None).unwrap();
    ks.map(|k| 0.5f64.powi(k)).map(|x| (x, (eval_k_direct(sp, x).unwrap().value - e.eval(x)).abs())).collect()
}

#[test]
fn remainder_below_linear_bound() {
    let sp = spec(RealParam::rational(-5, 2), one(), IntegralKind::K);
    let res = residuals(&sp, 6..=16);
    let c = (res[0].1 / res[0].0).max(res[1].1 / res[1].0);
    for (x, r) in &res {
        assert!(*r <= c * x, "residual {r} at X = {x} above {}", c * x);
    }
}

/// `residual(X/2) / residual(X) <= 1.5 * 2^-order` on grids that stop
/// before the residual sinks below the rounding error of the leading term.
#[test]
fn remainder_ratios() {
    let cases = [
        (RealParam::rational(-5, 2), one(), 3..=16),
        (RealParam::integer(-3), one(), 3..=10),
        (RealParam::integer(-1), one(), 9..=17),
        (RealParam::rational(-5, 2), RealParam::rational(1, 2), 4..=10),
        (RealParam::rational(-7, 2), RealParam::integer(2), 3..=17),
    ];
    for (a, p, ks) in cases {
        let sp = spec(a, p, IntegralKind::K);
        let order = expand_k(&sp, None).unwrap().remainder_order;
        let res = residuals(&sp, ks);
        for w in res.windows(2) {
            let ratio = w[1].1 / w[0].1;
            assert!(ratio <= 1.5 * 0.5f64.powf(order), "A = {a}, p = {p}: ratio {ratio} at X = {}", w[1].0);
        }
    }
}

#[test]
fn expansion_leading_term_is_flat_moment() {
    let sp = spec(RealParam::rational(-5, 2), one(), IntegralKind::K);
    let e = expand_k(&sp, None).unwrap();
    let lead = e.terms.first().unwrap();
    assert_eq!(lead.x_power, -1.5);
    assert_eq!(lead.log_power, 0);
    let fp = FlatParams::rational(1, 1, 2).unwrap();
    assert!((lead.coeff - const_flat_moment(-2.5, 0, &fp).unwrap()).abs() < 1e-12);
}

#[test]
fn limit_models() {
    let (m, l) = limit_k(&spec(RealParam::integer(0), one(), IntegralKind::K)).unwrap();
    assert_eq!(m.kind, ModelKind::Constant);
    assert!(m.log_correction);
    assert_eq!(l, 0.5);
    let (m, l) = limit_k(&spec(RealParam::integer(-1), RealParam::integer(2), IntegralKind::K)).unwrap();
    assert_eq!(m.kind, ModelKind::LogOnly);
    assert_eq!(l, 0.5);
    let (m, _) = limit_k(&spec(RealParam::rational(-5, 2), one(), IntegralKind::K)).unwrap();
    assert_eq!((m.kind, m.exponent), (ModelKind::Power, 1.5));
    let (m, l) = limit_ktilde(&spec(RealParam::integer(0), one(), IntegralKind::Ktilde)).unwrap();
    assert_eq!((m.kind, l), (ModelKind::PowerTimesLog, 0.5));
    assert!(limit_k(&spec(RealParam::integer(0), one(), IntegralKind::Ktilde)).is_err());
}

#[test]
fn monomial_weight_continuation_reproduces_gamma() {
    // Gamma(-1/2) = int_0^T u^(-3/2)(e^-u - 1) du + T^(-1/2)/(-1/2) + O(e^-T).
    let taylor: Vec<f64> = (0..8).map(|j| (-1.0f64).powi(j) / gamma(j as f64 + 1.0)).collect();
    let v = continue_monomial_weight(-1.5, |u| (-u).exp(), &taylor, 40.0, 1).unwrap();
    assert!((v - gamma(-0.5)).abs() < 1e-9);
    let v = continue_monomial_weight(-2.5, |u| (-u).exp(), &taylor, 40.0, 2).unwrap();
    assert!((v - gamma(-1.5)).abs() < 1e-9);
    assert!(continue_monomial_weight(-2.5, |u| (-u).exp(), &taylor, 40.0, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn k_is_monotone_decreasing_in_x(a in -0.9f64..2.0, x in 1e-4f64..0.2) {
        let sp = spec(RealParam::real(a), one(), IntegralKind::K);
        let lo = eval_k_direct(&sp, x).unwrap().value;
        let hi = eval_k_direct(&sp, 1.5 * x).unwrap().value;
        prop_assert!(hi < lo);
    }

    #[test]
    fn k_oracle_agreement(a in -4.0f64..1.0, x in 1e-3f64..0.2) {
        prop_assume!((a + 1.0).abs() > 0.05 && (a + 2.0).abs() > 0.05 && (a + 3.0).abs() > 0.05);
        let sp = spec(RealParam::real(a), one(), IntegralKind::K);
        let v = eval_k_direct(&sp, x).unwrap().value;
        let o = k_oracle(a, x);
        prop_assert!((v - o).abs() < 1e-8 * o.abs());
    }
}
