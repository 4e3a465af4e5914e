use flatzeta_core::flatcore::{admissible_params, BoxDomain, FlatParams, RealParam};
use proptest::prelude::*;

fn fp(p: f64, q: u32) -> FlatParams {
    FlatParams::new(RealParam::real(p), q).unwrap()
}

#[test]
fn flat_function_values() {
    let f = fp(1.0, 2);
    assert_eq!(f.e(0.0), 0.0);
    assert!((f.e(1.0) - (-0.5f64).exp()).abs() < 1e-16);
    assert!((f.e(0.5) - (-1.0f64).exp()).abs() < 1e-16);
    assert_eq!(f.e(1e-4), 0.0);
    let g = fp(0.5, 4);
    assert!((g.e(0.25) - (-0.5f64).exp()).abs() < 1e-16);
}

#[test]
fn flatness_against_every_power() {
    let f = fp(1.0, 2);
    for n in [1, 5, 20] {
        let ratio = |u: f64| f.e(u) / u.powi(n);
        assert!(ratio(1e-3) < ratio(1e-2).max(1e-300));
        assert!(ratio(1e-3) < 1e-100);
    }
}

#[test]
fn rejects_bad_parameters() {
    assert!(FlatParams::new(RealParam::integer(0), 2).is_err());
    assert!(FlatParams::new(RealParam::integer(1), 3).is_err());
    assert!(FlatParams::new(RealParam::integer(1), 0).is_err());
    assert!(BoxDomain::new(1.0, 0.5).is_err());
    assert!(BoxDomain::new(0.5, 0.0).is_err());
}

#[test]
fn parse_exact_and_inexact() {
    let half: RealParam = "3/6".parse().unwrap();
    assert_eq!(half.exact, Some((1, 2)));
    let quarter: RealParam = "0.25".parse().unwrap();
    assert_eq!(quarter.exact, Some((1, 4)));
    assert!(quarter.is_exactly(&RealParam::rational(1, 4)));
    let sci: RealParam = "1e-3".parse().unwrap();
    assert_eq!(sci.exact, None);
    assert!((sci.value - 1e-3).abs() < 1e-18);
    assert!("1/0".parse::<RealParam>().is_err());
    assert!("abc".parse::<RealParam>().is_err());
    assert_eq!(RealParam::rational(-6, 4).to_string(), "-3/2");
}

#[test]
fn rational_arithmetic_stays_exact() {
    let gap = RealParam::rational(4, 2) - RealParam::integer(1);
    assert_eq!(gap.as_integer(), Some(1));
    let ratio = gap / RealParam::rational(2, 5);
    assert_eq!(ratio.exact, Some((5, 2)));
    assert!(ratio.as_integer().is_none());
}

#[test]
fn admissible_bounds_example() {
    let b = admissible_params(2, 4, 0, &fp(1.0, 2));
    assert!((b.delta_min - 1.0).abs() < 1e-15);
    assert!((b.r2_max - 0.5).abs() < 1e-15);
    assert!((b.delta_min_split - 1.5).abs() < 1e-15);
    assert!((b.r2_max_split - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn big_e_derivative_matches_difference_quotient() {
    let f = fp(1.0, 2);
    let (d, y, h) = (2.5, 0.1, 1e-6);
    let fd = (f.big_e(d, y + h) - f.big_e(d, y - h)) / (2.0 * h);
    assert!((f.big_e_derivative(d, y) - fd).abs() < 1e-6 * fd.abs());
    let top = f.big_e_monotone_limit(d);
    assert!(f.big_e_derivative(d, 0.9 * top) > 0.0);
    assert!(f.big_e_derivative(d, 1.1 * top) < 0.0);
}

proptest! {
    #[test]
    fn inverse_flat_round_trip(u in 0.05f64..0.99, p in 0.25f64..3.0, q in prop::sample::select(vec![2u32, 4, 6])) {
        let f = fp(p, q);
        let x = f.e(u);
        prop_assume!(x > 1e-300 && x < 1.0);
        let back = f.inv_e(x).unwrap();
        prop_assert!((back - u).abs() <= 1e-10 * u);
    }

    #[test]
    fn inverse_big_e_round_trip(frac in 0.02f64..0.98, p in 0.5f64..2.0) {
        let f = fp(p, 2);
        let delta = 3.0;
        let r2 = 0.9 * f.big_e_monotone_limit(delta);
        let y = frac * r2;
        let x = f.big_e(delta, y);
        prop_assume!(x > 1e-300);
        let back = f.inv_big_e(delta, r2, x).unwrap();
        prop_assert!((back - y).abs() <= 1e-9 * y);
    }

    #[test]
    fn clamped_maps_are_ordered(lx in -40.0f64..0.0, p in 0.5f64..2.0) {
        let f = fp(p, 2);
        let delta = 3.0;
        let r2 = 0.5 * f.big_e_monotone_limit(delta);
        let (rho, tau) = f.clamped_maps(delta, r2, lx.exp()).unwrap();
        prop_assert!(tau <= rho && rho <= r2);
        prop_assert!(tau >= 0.0);
    }
}
