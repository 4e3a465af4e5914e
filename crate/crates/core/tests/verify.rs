use flatzeta_core::asym1d::{eval_k_direct, IntegralKind, OneDimIntegralSpec};
use flatzeta_core::flatcore::{BoxDomain, FlatParams, RealParam};
use flatzeta_core::verify::{
    classify, fit_limit, predict, predict_moment, predict_quadrant, predict_with_clause, run_samples, run_zeta_samples, verify_theorem, Case,
    Clause, Engine, GridSpec, LimitModel, ModelKind, ScalingVariable, Target, VerificationReport, VerifyParams,
};
use flatzeta_core::zeta::{FamilySpec, TestFunction};
use flatzeta_core::Error;
use proptest::prelude::*;

fn fp(n: i64, d: i64, q: u32) -> FlatParams {
    FlatParams::rational(n, d, q).unwrap()
}

fn f1(a: u32, b: u32, pn: i64, pd: i64) -> FamilySpec {
    FamilySpec::f1(a, b, fp(pn, pd, 2)).unwrap()
}

fn f3(pn: i64, pd: i64) -> FamilySpec {
    FamilySpec::f3(2, 4, fp(pn, pd, 2), fp(1, 1, 2)).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn synthetic_power_fit() {
    let data: Vec<(f64, f64)> = (0..16).map(|k| 0.1 * 0.5f64.powi(k)).map(|x| (x, 3.0 * x.powf(-0.5) * (1.0 + x))).collect();
    let fit = fit_limit(&data, &LimitModel::power(0.5, ScalingVariable::Direct).with_correction(1.0)).unwrap();
    assert!((fit.limit.unwrap() - 3.0).abs() < 1e-6);
    // Reported as the divergence rate: value ~ X^(-0.5) gives 0.5.
    assert!((fit.exponent.unwrap() - 0.5).abs() < 1e-3);
    assert!(!fit.diagnostics.ill_conditioned);
}

#[test]
fn synthetic_log_fit() {
    let data: Vec<(f64, f64)> = (0..12).map(|k| 0.1 * 0.5f64.powi(k)).map(|x| (x, 2.0 * x.ln().abs() + 5.0)).collect();
    let fit = fit_limit(&data, &LimitModel::log_only(ScalingVariable::Direct)).unwrap();
    assert!((fit.limit.unwrap() - 2.0).abs() < 1e-6);
}

#[test]
fn fits_need_six_points_and_flag_noise() {
    let short: Vec<(f64, f64)> = (0..5).map(|k| (0.5f64.powi(k), 1.0)).collect();
    assert!(matches!(fit_limit(&short, &LimitModel::constant(ScalingVariable::Direct)), Err(Error::InvalidParameter(_))));
    let noisy: Vec<(f64, f64)> = (0..10).map(|k| 0.1 * 0.5f64.powi(k)).enumerate().map(|(k, x)| (x, x.powf(-0.5) * if k % 2 == 0 { 1.0 } else { 3.0 })).collect();
    let fit = fit_limit(&noisy, &LimitModel::power(0.5, ScalingVariable::Direct)).unwrap();
    assert!(fit.diagnostics.ill_conditioned);
}

#[test]
fn monotone_trend_of_decreasing_integrals() {
    let spec = OneDimIntegralSpec::new(RealParam::integer(0), 1.0, 0.5, fp(1, 1, 2), IntegralKind::K).unwrap();
    let xs = GridSpec::new(0.1, 0.5, 10).unwrap().points();
    let samples: Vec<(f64, f64)> = run_samples(&xs, |x| eval_k_direct(&spec, x)).into_iter().map(|(x, r)| (x, r.unwrap().value)).collect();
    let fit = fit_limit(&samples, &LimitModel::constant(ScalingVariable::Direct)).unwrap();
    assert!(fit.diagnostics.monotone_trend);
    let zigzag: Vec<(f64, f64)> = samples.iter().enumerate().map(|(k, &(x, v))| (x, v + if k % 2 == 0 { 0.01 } else { -0.01 })).collect();
    assert!(!fit_limit(&zigzag, &LimitModel::constant(ScalingVariable::Direct)).unwrap().diagnostics.monotone_trend);
}

#[test]
fn samples_keep_grid_order() {
    let fam = f3(1, 1);
    let sigmas = [-0.1, -0.2, -0.05, -0.15];
    let out = run_zeta_samples(&fam, &TestFunction::constant(1.0), &sigmas, Engine::Direct, BoxDomain::new(0.5, 0.5).unwrap(), None);
    let got: Vec<f64> = out.iter().map(|s| s.0).collect();
    assert_eq!(got, sigmas);
    assert!(out.iter().all(|s| s.1.is_ok()));
}

#[test]
fn direct_engine_refuses_the_continuation_strip() {
    let out = run_zeta_samples(&f1(2, 4, 1, 1), &TestFunction::constant(1.0), &[-0.35], Engine::Direct, BoxDomain::new(0.5, 0.5).unwrap(), None);
    assert!(out[0].1.is_err());
    let out = run_zeta_samples(&f1(2, 4, 1, 1), &TestFunction::constant(1.0), &[-0.35], Engine::Continued, BoxDomain::new(0.5, 0.1).unwrap(), None);
    assert!(matches!(out[0].1, Err(Error::InvalidParameter(_))));
}

#[test]
fn classification_examples() {
    let c = classify(&f1(2, 4, 1, 1));
    assert_eq!(c.case, Case::C);
    assert_eq!(c.h0, RealParam::rational(1, 4));
    assert_eq!(c.m0_bound, RealParam::rational(1, 2));
    assert!(!c.nonpolar && c.m0_exact.is_none());
    let c = classify(&f1(2, 4, 2, 5));
    assert!(c.nonpolar);
    assert_eq!(c.m0_exact, Some(RealParam::rational(1, 2)));
    let c = classify(&f3(1, 1));
    assert_eq!((c.case, c.h0, c.m0_exact, c.nonpolar), (Case::D, RealParam::rational(1, 4), Some(RealParam::rational(1, 4)), true));
    let c = classify(&FamilySpec::f2(1, 3, fp(1, 1, 2)).unwrap());
    assert_eq!((c.case, c.m0_exact, c.nonpolar), (Case::B, Some(RealParam::rational(1, 3)), false));
}

#[test]
fn prediction_examples() {
    let one = TestFunction::constant(1.0);
    let p = predict(&f1(2, 4, 1, 1), &one).unwrap();
    assert_eq!((p.clause, p.model.kind, p.model.exponent), (Clause::I, ModelKind::Power, 2.0));
    assert!(rel(p.limit.unwrap(), -8.0) < 1e-10);

    let p = predict(&f1(2, 6, 2, 1), &"1 + y^2".parse().unwrap()).unwrap();
    assert_eq!((p.clause, p.model.exponent), (Clause::II, 2.0));
    assert!(rel(p.limit.unwrap(), -8.0 / 3.0) < 1e-10);

    let p = predict(&f3(1, 1), &one).unwrap();
    assert_eq!((p.clause, p.model.exponent), (Clause::I, 0.5));
    assert!(rel(p.limit.unwrap(), 4.0 * (2.0 * std::f64::consts::PI).sqrt()) < 1e-10);

    let p = predict(&f1(2, 6, 4, 1), &"y^2".parse().unwrap()).unwrap();
    assert_eq!(p.clause, Clause::III);
    assert!(rel(p.limit.unwrap(), 4.0 / 3.0) < 1e-10);

    let p = predict(&f3(1, 2), &one).unwrap();
    assert_eq!((p.clause, p.model.kind, p.limit), (Clause::II, ModelKind::LogOnly, Some(4.0)));
    let p = predict(&f3(1, 4), &one).unwrap();
    assert_eq!((p.clause, p.model.kind, p.limit), (Clause::III, ModelKind::Constant, None));
    let p = predict_quadrant(&f3(1, 1)).unwrap();
    assert!(rel(p.limit.unwrap(), (2.0 * std::f64::consts::PI).sqrt()) < 1e-10);

    let p = predict_moment(&f1(2, 4, 2, 1), 2).unwrap();
    assert_eq!((p.clause, p.model.exponent), (Clause::I, 0.5));
    assert!(rel(p.limit.unwrap(), (std::f64::consts::PI / 2.0).sqrt()) < 1e-10);
    assert_eq!(predict_moment(&f1(2, 4, 1, 1), 1).unwrap().clause, Clause::II);
    assert_eq!(predict_moment(&f1(2, 4, 1, 1), 2).unwrap().clause, Clause::III);
    assert_eq!(predict_moment(&f1(2, 4, 1, 1), 3).unwrap().clause, Clause::IV);

    let forced = predict_with_clause(&f3(1, 1), &one, Some(Clause::II)).unwrap();
    assert_eq!(forced.model.kind, ModelKind::LogOnly);
}

/// Hand-enumerated clauses: `b/a` not odd or `p < b/a - 1` gives (i) with
/// exponent `1 + (b/a-1)/p`; otherwise `p = b/a - 1` gives (ii) and
/// `p > b/a - 1` gives (iii), both with exponent 2.
#[test]
fn dispatch_sweep() {
    let cases: [(u32, u32, i64, i64, Clause, f64); 20] = [
        (2, 4, 1, 1, Clause::I, 2.0),
        (2, 4, 1, 2, Clause::I, 3.0),
        (2, 4, 2, 1, Clause::I, 1.5),
        (2, 6, 1, 1, Clause::I, 3.0),
        (2, 6, 2, 1, Clause::II, 2.0),
        (2, 6, 4, 1, Clause::III, 2.0),
        (2, 6, 3, 1, Clause::III, 2.0),
        (2, 6, 1, 2, Clause::I, 5.0),
        (2, 2, 1, 1, Clause::III, 2.0),
        (3, 9, 2, 1, Clause::II, 2.0),
        (3, 9, 5, 2, Clause::III, 2.0),
        (3, 9, 3, 2, Clause::I, 7.0 / 3.0),
        (2, 10, 4, 1, Clause::II, 2.0),
        (2, 10, 3, 1, Clause::I, 7.0 / 3.0),
        (2, 10, 5, 1, Clause::III, 2.0),
        (2, 3, 1, 1, Clause::I, 1.5),
        (2, 5, 1, 2, Clause::I, 4.0),
        (4, 12, 2, 1, Clause::II, 2.0),
        (2, 8, 3, 1, Clause::I, 2.0),
        (4, 6, 1, 1, Clause::I, 1.5),
    ];
    let phi: TestFunction = "1 + y + y^2 + y^3 + y^4".parse().unwrap();
    for (a, b, pn, pd, clause, exponent) in cases {
        let p = predict(&f1(a, b, pn, pd), &phi).unwrap();
        assert_eq!(p.clause, clause, "a = {a}, b = {b}, p = {pn}/{pd}");
        assert!((p.model.exponent - exponent).abs() < 1e-12, "a = {a}, b = {b}, p = {pn}/{pd}: {}", p.model.exponent);
        assert_eq!(p.model.variable, ScalingVariable::ASigmaPlusOne);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn predictions_scale_with_the_weight(c in -4.0f64..4.0, k in 0usize..5) {
        let fams = [f1(2, 4, 1, 1), f1(2, 6, 2, 1), f1(2, 6, 4, 1), f3(1, 1), f3(1, 2)];
        let phi: TestFunction = "1 + 0.5*y^2 - y^4".parse().unwrap();
        let base = predict(&fams[k], &phi).unwrap().limit.unwrap();
        let scaled = predict(&fams[k], &phi.scaled(c)).unwrap().limit.unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-12 * base.abs().max(1.0));
    }
}

#[test]
fn report_round_trips_through_json() {
    let spec = OneDimIntegralSpec::new(RealParam::integer(0), 1.0, 0.5, fp(1, 1, 2), IntegralKind::K).unwrap();
    let report = verify_theorem(Target::Lemma41, &VerifyParams::for_integral(spec)).unwrap();
    let text = serde_json::to_string(&report).unwrap();
    let back: VerificationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["target", "params", "prediction", "samples", "fitted", "passed"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    for key in ["model", "exponent", "limit"] {
        assert!(v["prediction"].get(key).is_some());
    }
    for key in ["limit", "exponent", "rel_error"] {
        assert!(v["fitted"].get(key).is_some());
    }
}

#[test]
fn failed_fit_is_a_report_not_an_error() {
    let spec = OneDimIntegralSpec::new(RealParam::integer(0), 1.0, 0.5, fp(1, 1, 2), IntegralKind::K).unwrap();
    let mut params = VerifyParams::for_integral(spec);
    params.grid = Some(GridSpec::new(0.1, 0.5, 6).unwrap());
    let report = verify_theorem(Target::Lemma41, &params).unwrap();
    assert!(!report.passed);
    assert!(report.fitted.rel_error.unwrap() > 1e-6);
}

#[test]
fn tolerance_override_applies() {
    let spec = OneDimIntegralSpec::new(RealParam::integer(0), 1.0, 0.5, fp(1, 1, 2), IntegralKind::K).unwrap();
    let mut params = VerifyParams::for_integral(spec);
    params.grid = Some(GridSpec::new(0.1, 0.5, 6).unwrap());
    params.tol = Some(0.5);
    let report = verify_theorem(Target::Lemma41, &params).unwrap();
    assert_eq!(report.tolerance.limit_rel, Some(0.5));
    assert!(report.passed);
}

/// With `lambda = 0.2` the scaled values near the critical point lie in
/// `[(1 + lambda^q)^(-1/a) L, L]` up to the fit error.
#[test]
fn scaled_values_sit_in_the_sandwich() {
    let lambda: f64 = 0.2;
    for (target, params) in [
        (Target::Thm31, VerifyParams::for_family(f1(2, 4, 1, 1))),
        (Target::Thm61, VerifyParams { beta: 2, ..VerifyParams::for_family(f1(2, 4, 2, 1)) }),
    ] {
        let report = verify_theorem(target, &params).unwrap();
        let limit = report.prediction.limit.unwrap().abs();
        let lower = (1.0 + lambda.powi(2)).powf(-0.5) * limit;
        for s in report.samples.iter().filter(|s| s.x <= 2e-4) {
            let v = s.scaled.abs();
            assert!(v >= lower * (1.0 - 1e-3) && v <= limit * (1.0 + 1e-3), "{target} at X = {}: {v} outside [{lower}, {limit}]", s.x);
        }
    }
}

#[test]
fn targets_parse() {
    assert_eq!("pole-order".parse::<Target>().unwrap(), Target::PoleOrder);
    assert_eq!("THM31".parse::<Target>().unwrap(), Target::Thm31);
    assert!("thm99".parse::<Target>().is_err());
    assert_eq!("iii".parse::<Clause>().unwrap(), Clause::III);
}
