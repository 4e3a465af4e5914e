//! Adaptive Gauss-Kronrod (10/21) quadrature with endpoint hints,
//! semi-infinite ranges, breakpoint lists and a nested 2-D driver.

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// Bisection depth beyond which an interval is no longer split.
pub const MAX_DEPTH: u32 = 60;
/// Cap on the number of live subintervals of one adaptive run.
pub const MAX_INTERVALS: usize = 5000;

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208640710751,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Absolute and relative targets; a run converges when the error estimate
/// is at most `max(abs, rel * |value|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn rel(rel: f64) -> Self {
        Tolerance { abs: 0.0, rel }
    }

    pub const fn abs(abs: f64) -> Self {
        Tolerance { abs, rel: 0.0 }
    }

    pub fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Tolerance { abs: self.abs * factor, rel: self.rel * factor }
    }
}

/// Default for one-dimensional constants.
pub const TOL_1D: Tolerance = Tolerance::rel(1e-11);
/// Default for nested two-dimensional integrals.
pub const TOL_2D: Tolerance = Tolerance::rel(1e-8);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err_estimate: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub intervals: usize,
    pub max_depth: u32,
}

impl Default for QuadResult {
    /// The empty integral: zero, exact, converged.
    fn default() -> Self {
        QuadResult { value: 0.0, abs_err_estimate: 0.0, evaluations: 0, converged: true, intervals: 0, max_depth: 0 }
    }
}

impl QuadResult {
    fn zero() -> Self {
        Self::default()
    }

    /// Sum of two independent results; errors add, convergence is joint.
    pub fn combine(self, other: QuadResult) -> QuadResult {
        QuadResult {
            value: self.value + other.value,
            abs_err_estimate: self.abs_err_estimate + other.abs_err_estimate,
            evaluations: self.evaluations + other.evaluations,
            converged: self.converged && other.converged,
            intervals: self.intervals + other.intervals,
            max_depth: self.max_depth.max(other.max_depth),
        }
    }

    pub fn scale(self, c: f64) -> QuadResult {
        QuadResult { value: c * self.value, abs_err_estimate: c.abs() * self.abs_err_estimate, ..self }
    }
}

/// Behaviour of the integrand at one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EndBehavior {
    Regular,
    /// Integrand behaves like `|u - end|^gamma` with `gamma > -1`.
    Algebraic(f64),
    /// Integrand vanishes to infinite order; the region where it underflows
    /// to exactly zero is dropped.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularityHint {
    pub left: EndBehavior,
    pub right: EndBehavior,
}

impl SingularityHint {
    pub const REGULAR: SingularityHint = SingularityHint { left: EndBehavior::Regular, right: EndBehavior::Regular };

    pub const fn left(b: EndBehavior) -> Self {
        SingularityHint { left: b, right: EndBehavior::Regular }
    }

    pub const fn right(b: EndBehavior) -> Self {
        SingularityHint { left: EndBehavior::Regular, right: b }
    }
}

impl Default for SingularityHint {
    fn default() -> Self {
        Self::REGULAR
    }
}

struct Rule {
    value: f64,
    err: f64,
    finite: bool,
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut e = err.abs();
    if res_asc != 0.0 && e != 0.0 {
        let scale = (200.0 * e / res_asc).powf(1.5);
        e = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        e = e.max(50.0 * f64::EPSILON * res_abs);
    }
    e
}

fn gk21<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> Rule {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let h = half.abs();
    let value = res_k * half;
    let err = rescale_error((res_k - res_g) * half, res_abs * h, res_asc * h);
    Rule { value, err, finite: value.is_finite() && err.is_finite() }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    depth: u32,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Global adaptive bisection over the segments defined by `points`
/// (sorted, at least two entries).
fn adaptive<F: Fn(f64) -> f64 + ?Sized>(f: &F, points: &[f64], tol: Tolerance) -> QuadResult {
    let mut heap = BinaryHeap::new();
    let mut frozen_value = 0.0;
    let mut frozen_err = 0.0;
    let mut evaluations = 0;
    let mut finite = true;
    let mut max_depth = 0;
    for w in points.windows(2) {
        if !(w[1] > w[0]) {
            continue;
        }
        let r = gk21(f, w[0], w[1]);
        evaluations += 21;
        finite &= r.finite;
        heap.push(Piece { a: w[0], b: w[1], value: r.value, err: r.err, depth: 0 });
    }
    if heap.is_empty() {
        return QuadResult::zero();
    }
    let sum = |heap: &BinaryHeap<Piece>, v0: f64, e0: f64| heap.iter().fold((v0, e0), |(v, e), p| (v + p.value, e + p.err));
    let (mut value, mut err) = sum(&heap, 0.0, 0.0);
    let mut steps = 0usize;
    loop {
        steps += 1;
        if steps % 64 == 0 {
            (value, err) = sum(&heap, frozen_value, frozen_err);
        }
        if !finite {
            return QuadResult { value, abs_err_estimate: f64::INFINITY, evaluations, converged: false, intervals: heap.len(), max_depth };
        }
        if err <= tol.target(value) {
            (value, err) = sum(&heap, frozen_value, frozen_err);
            if err <= tol.target(value) {
                return QuadResult { value, abs_err_estimate: err, evaluations, converged: true, intervals: heap.len(), max_depth };
            }
        }
        let Some(worst) = heap.pop() else {
            break;
        };
        let mid = 0.5 * (worst.a + worst.b);
        let too_small = !(mid > worst.a && mid < worst.b)
            || (worst.b - worst.a) <= 1e3 * f64::EPSILON * worst.a.abs().max(worst.b.abs()).max(f64::MIN_POSITIVE);
        if worst.depth >= MAX_DEPTH || too_small {
            frozen_value += worst.value;
            frozen_err += worst.err;
            continue;
        }
        if heap.len() + 2 > MAX_INTERVALS {
            heap.push(worst);
            let (value, err) = sum(&heap, frozen_value, frozen_err);
            return QuadResult { value, abs_err_estimate: err, evaluations, converged: err <= tol.target(value), intervals: heap.len(), max_depth };
        }
        let left = gk21(f, worst.a, mid);
        let right = gk21(f, mid, worst.b);
        evaluations += 42;
        finite &= left.finite && right.finite;
        value += left.value + right.value - worst.value;
        err += left.err + right.err - worst.err;
        let depth = worst.depth + 1;
        max_depth = max_depth.max(depth);
        heap.push(Piece { a: worst.a, b: mid, value: left.value, err: left.err, depth });
        heap.push(Piece { a: mid, b: worst.b, value: right.value, err: right.err, depth });
    }
    let (value, err) = sum(&heap, frozen_value, frozen_err);
    QuadResult { value, abs_err_estimate: err, evaluations, converged: err <= tol.target(value), intervals: heap.len(), max_depth }
}

/// Smallest power `k` making `t^(k(gamma+1)-1)` at least linear.
fn substitution_power(gamma: f64) -> f64 {
    if gamma >= 0.0 {
        1.0
    } else {
        (2.0 / (gamma + 1.0)).ceil().min(40.0)
    }
}

/// Finds the end of the zero set of `f` adjacent to `from`, moving towards `to`.
fn underflow_edge<F: Fn(f64) -> f64 + ?Sized>(f: &F, from: f64, to: f64) -> f64 {
    let (mut zero, mut nonzero) = (from, to);
    if f(to) == 0.0 {
        // Entire range may be zero; fall back to a sampled check.
        let all_zero = (1..64).all(|i| f(from + (to - from) * i as f64 / 64.0) == 0.0);
        if all_zero {
            return to;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (zero + nonzero);
        if mid == zero || mid == nonzero {
            break;
        }
        if f(mid) == 0.0 {
            zero = mid;
        } else {
            nonzero = mid;
        }
    }
    zero
}

/// Adaptive integral of `f` over `[lo, hi]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, hint: SingularityHint, tol: Tolerance) -> QuadResult {
    if !(hi > lo) {
        return QuadResult::zero();
    }
    let (mut lo, mut hi) = (lo, hi);
    if hint.left == EndBehavior::Flat {
        lo = underflow_edge(&f, lo, hi);
    }
    if hint.right == EndBehavior::Flat {
        hi = underflow_edge(&f, hi, lo);
    }
    if !(hi > lo) {
        return QuadResult::zero();
    }
    let kl = match hint.left {
        EndBehavior::Algebraic(g) => substitution_power(g),
        _ => 1.0,
    };
    let kr = match hint.right {
        EndBehavior::Algebraic(g) => substitution_power(g),
        _ => 1.0,
    };
    if kl == 1.0 && kr == 1.0 {
        return adaptive(&f, &[lo, hi], tol);
    }
    let mid = if kr == 1.0 { hi } else if kl == 1.0 { lo } else { 0.5 * (lo + hi) };
    let mut total = QuadResult::zero();
    if mid > lo {
        let len = mid - lo;
        let g = |t: f64| {
            if t <= 0.0 {
                return 0.0;
            }
            let u = lo + len * t.powf(kl);
            if u <= lo {
                return 0.0;
            }
            f(u) * len * kl * t.powf(kl - 1.0)
        };
        total = total.combine(adaptive(&g, &[0.0, 1.0], tol));
    }
    if hi > mid {
        let len = hi - mid;
        let g = |t: f64| {
            if t <= 0.0 {
                return 0.0;
            }
            let u = hi - len * t.powf(kr);
            if u >= hi {
                return 0.0;
            }
            f(u) * len * kr * t.powf(kr - 1.0)
        };
        total = total.combine(adaptive(&g, &[0.0, 1.0], tol));
    }
    total.converged = total.abs_err_estimate <= tol.target(total.value);
    total
}

/// Adaptive integral over consecutive segments of `points`, refined as one
/// global problem. Points need not be sorted; duplicates are ignored.
pub fn integrate_segments<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: Tolerance) -> QuadResult {
    let mut pts: Vec<f64> = points.iter().copied().filter(|v| v.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.len() < 2 {
        return QuadResult::zero();
    }
    adaptive(&f, &pts, tol)
}

/// Integral over `[lo, inf)` through `u = lo + t/(1-t)`.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(f: F, lo: f64, tol: Tolerance) -> QuadResult {
    integrate_tail(f, &[lo], tol)
}

/// Integral over `[points[0], inf)` with finite breakpoints `points`; the
/// last segment `[max(points), inf)` is mapped onto a unit interval. All
/// segments are refined together.
pub fn integrate_tail<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: Tolerance) -> QuadResult {
    let mut pts: Vec<f64> = points.iter().copied().filter(|v| v.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let Some(&last) = pts.last() else {
        return QuadResult::zero();
    };
    let g = |s: f64| {
        if s <= last {
            return f(s);
        }
        let t = s - last;
        if t >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - t;
        let v = f(last + t / d) / (d * d);
        if v.is_finite() { v } else { 0.0 }
    };
    pts.push(last + 1.0);
    adaptive(&g, &pts, tol)
}

/// Iterated integral `int_{y_lo}^{y_hi} int_{x_lo(y)}^{x_hi(y)} inner(x, y) dx dy`.
/// Inner integrals run at a tenth of the outer tolerance; the reported
/// error adds the outer estimate and the worst inner estimate times the
/// outer length.
pub fn integrate_nested<F, R>(
    inner: F,
    x_range_of_y: R,
    y_lo: f64,
    y_hi: f64,
    hints: (SingularityHint, SingularityHint),
    tol: Tolerance,
) -> QuadResult
where
    F: Fn(f64, f64) -> f64,
    R: Fn(f64) -> (f64, f64),
{
    let inner_tol = tol.scaled(0.1);
    let worst_err = Cell::new(0.0_f64);
    let all_converged = Cell::new(true);
    let evals = Cell::new(0usize);
    let depth = Cell::new(0u32);
    let outer = integrate(
        |y| {
            let (lo, hi) = x_range_of_y(y);
            let r = integrate(|x| inner(x, y), lo, hi, hints.1, inner_tol);
            worst_err.set(worst_err.get().max(r.abs_err_estimate));
            all_converged.set(all_converged.get() && r.converged);
            evals.set(evals.get() + r.evaluations);
            depth.set(depth.get().max(r.max_depth));
            r.value
        },
        y_lo,
        y_hi,
        hints.0,
        tol,
    );
    let err = outer.abs_err_estimate + worst_err.get() * (y_hi - y_lo).abs();
    QuadResult {
        value: outer.value,
        abs_err_estimate: err,
        evaluations: outer.evaluations + evals.get(),
        converged: outer.converged && all_converged.get(),
        intervals: outer.intervals,
        max_depth: outer.max_depth.max(depth.get()),
    }
}
