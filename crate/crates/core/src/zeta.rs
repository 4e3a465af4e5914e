//! Zeta integrals `int |f|^sigma phi dx dy` of the three flat-perturbed
//! monomial families: direct nested quadrature for all of them, and for
//! the first family the continuation of the quadrant moments past the
//! pole at `-(beta+1)/b`.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asym1d::flat_profile_points;
use crate::constants::factorial;
use crate::error::{Error, Result};
use crate::flatcore::{admissible_params, BoxDomain, FlatParams};
use crate::quad::{integrate_segments, QuadResult, Tolerance};

/// Decay, in units of the log-integrand, beyond which a tail is dropped.
const TAIL: f64 = 60.0;

/// Tolerance of the direct engine (outer integral; inner runs ten times tighter).
pub const DIRECT_TOL: Tolerance = Tolerance::rel(1e-9);
/// Tolerance of each piece of the continued engine.
pub const CONTINUED_TOL: Tolerance = Tolerance::rel(1e-10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// `x^a y^b + x^(a-q) y^b e^(-1/|y|^p)`.
    F1,
    /// `x^a y^b + x^a y^(b-q) e^(-1/|x|^p)`.
    F2,
    /// `x^a y^b + x^a y^(b-q) e^(-1/|x|^p) + x^(a-q~) y^b e^(-1/|y|^p~)`.
    F3,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::F1 => "F1",
            Family::F2 => "F2",
            Family::F3 => "F3",
        };
        f.write_str(s)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "F1" => Ok(Family::F1),
            "F2" => Ok(Family::F2),
            "F3" => Ok(Family::F3),
            other => Err(Error::InvalidParameter(format!("unknown family {other:?}, expected F1, F2 or F3"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub a: u32,
    pub b: u32,
    pub fp: FlatParams,
    /// Second flat factor, F3 only.
    pub fp2: Option<FlatParams>,
}

impl FamilySpec {
    pub fn new(family: Family, a: u32, b: u32, fp: FlatParams, fp2: Option<FlatParams>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let q = fp.q;
        match family {
            Family::F1 | Family::F2 if fp2.is_some() => return bad(format!("{family} takes a single flat factor")),
            Family::F1 => {
                if !(2 <= a && a <= b) {
                    return bad(format!("F1 needs 2 <= a <= b, got a = {a}, b = {b}"));
                }
                if q > a {
                    return bad(format!("F1 needs q <= a, got q = {q}, a = {a}"));
                }
            }
            Family::F2 => {
                if !(1 <= a && a < b && b >= 2) {
                    return bad(format!("F2 needs 1 <= a < b and b >= 2, got a = {a}, b = {b}"));
                }
                if q > b {
                    return bad(format!("F2 needs q <= b, got q = {q}, b = {b}"));
                }
            }
            Family::F3 => {
                let Some(fp2) = fp2 else {
                    return bad("F3 needs the second flat factor (p~, q~)".into());
                };
                if !(2 <= a && a < b) {
                    return bad(format!("F3 needs 2 <= a < b, got a = {a}, b = {b}"));
                }
                if q > b || fp2.q > a {
                    return bad(format!("F3 needs q <= b and q~ <= a, got q = {q}, q~ = {}", fp2.q));
                }
            }
        }
        Ok(FamilySpec { family, a, b, fp, fp2 })
    }

    pub fn f1(a: u32, b: u32, fp: FlatParams) -> Result<Self> {
        Self::new(Family::F1, a, b, fp, None)
    }

    pub fn f2(a: u32, b: u32, fp: FlatParams) -> Result<Self> {
        Self::new(Family::F2, a, b, fp, None)
    }

    pub fn f3(a: u32, b: u32, fp: FlatParams, fp2: FlatParams) -> Result<Self> {
        Self::new(Family::F3, a, b, fp, Some(fp2))
    }

    /// Pointwise value on the whole plane.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let flat = |fp: &FlatParams, u: f64| if u == 0.0 { 0.0 } else { (-u.abs().powf(-fp.pf())).exp() };
        let (a, b) = (self.a as i32, self.b as i32);
        let q = self.fp.q as i32;
        let base = x.powi(a) * y.powi(b);
        match self.family {
            Family::F1 => base + x.powi(a - q) * y.powi(b) * flat(&self.fp, y),
            Family::F2 => base + x.powi(a) * y.powi(b - q) * flat(&self.fp, x),
            Family::F3 => {
                let fp2 = self.fp2.expect("validated F3");
                base + x.powi(a) * y.powi(b - q) * flat(&self.fp, x) + x.powi(a - fp2.q as i32) * y.powi(b) * flat(&fp2, y)
            }
        }
    }

    /// `log |f(x, y)|` for `x, y > 0`, from `log x` and `log y`.
    pub fn ln_abs_quadrant(&self, lx: f64, ly: f64) -> f64 {
        let base = self.a as f64 * lx + self.b as f64 * ly;
        let q = self.fp.qf();
        match self.family {
            Family::F1 => base + softplus(q * (self.fp.ln_e_of_log(ly) - lx)),
            Family::F2 => base + softplus(q * (self.fp.ln_e_of_log(lx) - ly)),
            Family::F3 => {
                let fp2 = self.fp2.expect("validated F3");
                let z1 = q * (self.fp.ln_e_of_log(lx) - ly);
                let z2 = fp2.qf() * (fp2.ln_e_of_log(ly) - lx);
                base + log_sum_exp3(0.0, z1, z2)
            }
        }
    }

    /// The family with the `y`-flat term of F3 dropped; it bounds F3 from below.
    pub fn f2_part(&self) -> Result<FamilySpec> {
        FamilySpec::f2(self.a, self.b, self.fp)
    }
}

pub fn eval_f(fam: &FamilySpec, x: f64, y: f64) -> f64 {
    fam.eval(x, y)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_sum_exp3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

pub const MAX_WEIGHT_DEGREE: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// The polynomial times the indicator of the integration box.
    BoxPolynomial,
    /// The polynomial times `beta(x/rx) beta(y/ry)` with
    /// `beta(t) = exp(-t^2/(1-t^2))` on `|t| < 1`.
    PolynomialBump { rx: f64, ry: f64 },
}

/// Coefficient of `x^i y^j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub i: u32,
    pub j: u32,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub kind: WeightKind,
    /// Sorted by `(i, j)`, no repeats, no zero coefficients.
    pub terms: Vec<Monomial>,
}

impl TestFunction {
    pub fn box_polynomial(terms: &[(u32, u32, f64)]) -> Result<Self> {
        Self::build(WeightKind::BoxPolynomial, terms)
    }

    pub fn constant(c: f64) -> Self {
        Self::build(WeightKind::BoxPolynomial, &[(0, 0, c)]).expect("degree 0")
    }

    pub fn polynomial_bump(terms: &[(u32, u32, f64)], rx: f64, ry: f64) -> Result<Self> {
        for r in [rx, ry] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::InvalidParameter(format!("bump radius must lie in (0,1), got {r}")));
            }
        }
        Self::build(WeightKind::PolynomialBump { rx, ry }, terms)
    }

    fn build(kind: WeightKind, terms: &[(u32, u32, f64)]) -> Result<Self> {
        let mut merged: Vec<Monomial> = Vec::new();
        for &(i, j, coeff) in terms {
            if i + j > MAX_WEIGHT_DEGREE {
                return Err(Error::InvalidParameter(format!("x^{i} y^{j} exceeds degree {MAX_WEIGHT_DEGREE}")));
            }
            if !coeff.is_finite() {
                return Err(Error::InvalidParameter(format!("coefficient of x^{i} y^{j} is not finite")));
            }
            match merged.iter_mut().find(|m| m.i == i && m.j == j) {
                Some(m) => m.coeff += coeff,
                None => merged.push(Monomial { i, j, coeff }),
            }
        }
        merged.retain(|m| m.coeff != 0.0);
        merged.sort_by_key(|m| (m.i, m.j));
        Ok(TestFunction { kind, terms: merged })
    }

    pub fn coeff(&self, i: u32, j: u32) -> f64 {
        self.terms.iter().find(|m| m.i == i && m.j == j).map_or(0.0, |m| m.coeff)
    }

    pub fn polynomial(&self, x: f64, y: f64) -> f64 {
        self.terms.iter().map(|m| m.coeff * x.powi(m.i as i32) * y.powi(m.j as i32)).sum()
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            WeightKind::BoxPolynomial => self.polynomial(x, y),
            WeightKind::PolynomialBump { rx, ry } => {
                let cut = bump(x / rx) * bump(y / ry);
                if cut == 0.0 {
                    0.0
                } else {
                    cut * self.polynomial(x, y)
                }
            }
        }
    }

    /// `d^(i+j) phi / dx^i dy^j` at the origin.
    pub fn taylor(&self, i: u32, j: u32) -> f64 {
        let scale = factorial(i) * factorial(j);
        match self.kind {
            WeightKind::BoxPolynomial => scale * self.coeff(i, j),
            WeightKind::PolynomialBump { rx, ry } => {
                let series = bump_series(i.max(j) as usize);
                let mut c = 0.0;
                for m in &self.terms {
                    if m.i <= i && m.j <= j {
                        let (di, dj) = (i - m.i, j - m.j);
                        c += m.coeff * series[di as usize] / rx.powi(di as i32) * series[dj as usize] / ry.powi(dj as i32);
                    }
                }
                scale * c
            }
        }
    }

    pub fn value_at_origin(&self) -> f64 {
        self.taylor(0, 0)
    }

    pub fn scaled(&self, c: f64) -> TestFunction {
        let terms: Vec<_> = self.terms.iter().map(|m| (m.i, m.j, c * m.coeff)).collect();
        Self::build(self.kind, &terms).expect("same degrees")
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (k, m) in self.terms.iter().enumerate() {
            if k > 0 {
                f.write_str(if m.coeff < 0.0 { " - " } else { " + " })?;
            } else if m.coeff < 0.0 {
                f.write_str("-")?;
            }
            write!(f, "{}", m.coeff.abs())?;
            for (v, e) in [("x", m.i), ("y", m.j)] {
                match e {
                    0 => {}
                    1 => write!(f, "*{v}")?,
                    _ => write!(f, "*{v}^{e}")?,
                }
            }
        }
        if let WeightKind::PolynomialBump { rx, ry } = self.kind {
            write!(f, " (bump {rx} x {ry})")?;
        }
        Ok(())
    }
}

/// Parses a box polynomial such as `1 + y^2` or `2*x^2*y - 0.5`.
impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidParameter(format!("cannot parse weight {s:?}: {m}"));
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(bad("empty"));
        }
        // Split at top-level signs, keeping exponent signs like 1e-3.
        let chars: Vec<char> = compact.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        for k in 1..chars.len() {
            let is_sign = chars[k] == '+' || chars[k] == '-';
            let after_exp = matches!(chars[k - 1], 'e' | 'E') && k >= 2 && chars[k - 2].is_ascii_digit();
            if is_sign && !after_exp && chars[k - 1] != '^' && chars[k - 1] != '*' {
                pieces.push(chars[start..k].iter().collect::<String>());
                start = k;
            }
        }
        pieces.push(chars[start..].iter().collect::<String>());
        let mut terms = Vec::new();
        for piece in pieces {
            let (sign, body) = match piece.strip_prefix('-') {
                Some(rest) => (-1.0, rest.to_string()),
                None => (1.0, piece.trim_start_matches('+').to_string()),
            };
            let (mut coeff, mut i, mut j) = (sign, 0u32, 0u32);
            for factor in body.split('*') {
                if factor.is_empty() {
                    return Err(bad("empty factor"));
                }
                let (var, exp) = match factor.split_once('^') {
                    Some((v, e)) => (v, e.parse::<u32>().map_err(|_| bad("bad exponent"))?),
                    None => (factor, 1),
                };
                match var {
                    "x" => i += exp,
                    "y" => j += exp,
                    number => {
                        let v: f64 = number.parse().map_err(|_| bad("bad coefficient"))?;
                        coeff *= v.powi(exp as i32);
                    }
                }
            }
            terms.push((i, j, coeff));
        }
        TestFunction::box_polynomial(&terms)
    }
}

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let t2 = t * t;
        (-t2 / (1.0 - t2)).exp()
    }
}

/// Taylor coefficients of `exp(-t^2/(1-t^2))` up to `t^n`, from
/// `h' = g' h` with `g = -sum_{k>=1} t^(2k)`.
fn bump_series(n: usize) -> Vec<f64> {
    let g = |k: usize| if k >= 2 && k % 2 == 0 { -1.0 } else { 0.0 };
    let mut h = vec![0.0; n + 1];
    h[0] = 1.0;
    for m in 1..=n {
        h[m] = (1..=m).map(|k| k as f64 * g(k) * h[m - k]).sum::<f64>() / m as f64;
    }
    h
}

/// Sum of `phi(+-x, +-y)` as a function on the positive quadrant: the
/// even-even monomials times 4. The bump factor is even and kept.
pub fn symmetrize(phi: &TestFunction) -> TestFunction {
    let terms: Vec<_> = phi.terms.iter().filter(|m| m.i % 2 == 0 && m.j % 2 == 0).map(|m| (m.i, m.j, 4.0 * m.coeff)).collect();
    TestFunction::build(phi.kind, &terms).expect("subset of a valid weight")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub alpha: u32,
    pub beta: u32,
}

impl MomentSpec {
    pub fn new(alpha: u32, beta: u32) -> Self {
        MomentSpec { alpha, beta }
    }
}

/// Parameters of the continuation: the curve `x = E(y)/lambda` splits the
/// box, and `delta` enters `E(y) = y^(-delta) e(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationConfig {
    pub delta: f64,
    pub lambda: f64,
    #[serde(rename = "box")]
    pub bx: BoxDomain,
}

impl ContinuationConfig {
    /// `delta` one above its lower bound, `r2` half its upper bound,
    /// `r1 = 1/2`, `lambda = 1/2`; valid for moments with `alpha <= alpha_max`.
    pub fn admissible_default(fam: &FamilySpec, alpha_max: u32) -> Result<Self> {
        require_f1(fam)?;
        let bounds = admissible_params(fam.a, fam.b, alpha_max, &fam.fp);
        let delta = bounds.delta_min.max(bounds.delta_min_split) + 1.0;
        let r2 = bounds.r2_max.min(bounds.r2_max_split).min(fam.fp.big_e_monotone_limit(delta)) / 2.0;
        let cfg = ContinuationConfig { delta, lambda: 0.5, bx: BoxDomain::new(0.5, r2.min(0.5))? };
        cfg.validate(fam, alpha_max)?;
        Ok(cfg)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Checks the bounds on `delta`, `r2` and `lambda` for moments up to `alpha`.
    pub fn validate(&self, fam: &FamilySpec, alpha: u32) -> Result<()> {
        require_f1(fam)?;
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidParameter(format!("lambda must lie in (0,1), got {}", self.lambda)));
        }
        let bounds = admissible_params(fam.a, fam.b, alpha, &fam.fp);
        let dmin = bounds.delta_min.max(bounds.delta_min_split);
        if !(self.delta > dmin) {
            return Err(Error::InvalidParameter(format!("delta must exceed {dmin}, got {}", self.delta)));
        }
        let rmax = bounds.r2_max.min(bounds.r2_max_split).min(fam.fp.big_e_monotone_limit(self.delta));
        if !(self.bx.r2 < rmax) {
            return Err(Error::InvalidParameter(format!("r2 must be below {rmax}, got {}", self.bx.r2)));
        }
        BoxDomain::new(self.bx.r1, self.bx.r2)?;
        Ok(())
    }
}

fn require_f1(fam: &FamilySpec) -> Result<()> {
    if fam.family != Family::F1 {
        return Err(Error::InvalidParameter(format!("continuation is implemented for F1, got {}", fam.family)));
    }
    Ok(())
}

/// Worst inner error and convergence of a nested quadrature.
#[derive(Default)]
struct Inner {
    worst_rel: Cell<f64>,
    ok: Cell<bool>,
    evals: Cell<usize>,
}

impl Inner {
    fn new() -> Self {
        Inner { worst_rel: Cell::new(0.0), ok: Cell::new(true), evals: Cell::new(0) }
    }

    fn take(&self, r: QuadResult) -> f64 {
        if r.value != 0.0 {
            self.worst_rel.set(self.worst_rel.get().max(r.abs_err_estimate / r.value.abs()));
        }
        self.ok.set(self.ok.get() && r.converged);
        self.evals.set(self.evals.get() + r.evaluations);
        r.value
    }

    fn finish(&self, outer: QuadResult) -> QuadResult {
        QuadResult {
            abs_err_estimate: outer.abs_err_estimate + self.worst_rel.get() * outer.value.abs(),
            evaluations: outer.evaluations + self.evals.get(),
            converged: outer.converged && self.ok.get(),
            ..outer
        }
    }
}

fn segments<F: Fn(f64) -> f64>(f: F, mut pts: Vec<f64>, lo: f64, hi: f64, tol: Tolerance) -> QuadResult {
    pts.retain(|t| t.is_finite() && *t > lo && *t < hi);
    pts.push(lo);
    pts.push(hi);
    integrate_segments(f, &pts, tol)
}

/// `int_{t0}^inf exp(log_f(t)) dt` for integrands shaped like
/// `exp(-kappa t - c e^(p t))`, with extra breakpoints.
fn profile<F: Fn(f64) -> f64>(f: F, kappa: f64, c: f64, p: f64, t0: f64, extra: &[f64], tol: Tolerance) -> QuadResult {
    let (mut pts, end) = flat_profile_points(kappa, c, p, t0);
    pts.extend_from_slice(extra);
    segments(f, pts, t0, end, tol)
}

#[derive(Clone, Copy)]
enum Surface<'a> {
    Family(&'a FamilySpec),
    /// `x^a y^b`: the flat terms switched off.
    Monomial { a: u32, b: u32 },
}

/// `int_0^r1 int_0^r2 |f|^sigma x^alpha y^beta w(x, y) dy dx` in the
/// variables `s = log(R_out/u)`, `t = log(R_in/v)` where `u` is `y` for F1
/// and `x` otherwise.
struct Quadrant<'a> {
    surface: Surface<'a>,
    sigma: f64,
    alpha: f64,
    beta: f64,
    bx: BoxDomain,
    weight: Option<&'a dyn Fn(f64, f64) -> f64>,
}

struct Rates {
    inner: f64,
    /// Inner decay once the flat term dominates.
    inner_flat: f64,
    outer: f64,
}

impl Quadrant<'_> {
    fn outer_is_y(&self) -> bool {
        matches!(self.surface, Surface::Family(f) if f.family == Family::F1)
    }

    fn ab(&self) -> (f64, f64) {
        match self.surface {
            Surface::Family(f) => (f.a as f64, f.b as f64),
            Surface::Monomial { a, b } => (a as f64, b as f64),
        }
    }

    fn rates(&self) -> Result<Rates> {
        let (a, b) = self.ab();
        let s = self.sigma;
        let kx = a * s + self.alpha + 1.0;
        let ky = b * s + self.beta + 1.0;
        let rates = match self.surface {
            Surface::Family(f) if f.family == Family::F1 => {
                Rates { inner: kx, inner_flat: (a - f.fp.qf()) * s + self.alpha + 1.0, outer: ky }
            }
            Surface::Family(f) => Rates { inner: ky, inner_flat: (b - f.fp.qf()) * s + self.beta + 1.0, outer: kx },
            Surface::Monomial { .. } => Rates { inner: ky, inner_flat: ky, outer: kx },
        };
        if !(rates.inner > 0.0 && rates.outer > 0.0 && rates.inner_flat > 0.0) {
            return Err(Error::Domain(format!(
                "integral diverges at sigma = {s} for x^{} y^{}: needs a sigma + alpha + 1 > 0 and b sigma + beta + 1 > 0",
                self.alpha, self.beta
            )));
        }
        Ok(rates)
    }

    fn integrand(&self, lx: f64, ly: f64) -> f64 {
        let ln_f = match self.surface {
            Surface::Family(f) => f.ln_abs_quadrant(lx, ly),
            Surface::Monomial { a, b } => a as f64 * lx + b as f64 * ly,
        };
        let v = (self.sigma * ln_f + (self.alpha + 1.0) * lx + (self.beta + 1.0) * ly).exp();
        match self.weight {
            Some(w) if v != 0.0 => v * w(lx.exp(), ly.exp()),
            _ => v,
        }
    }

    /// Inner position where the flat term takes over, as a function of the
    /// outer log-coordinate.
    fn flat_transition(&self, lu: f64) -> f64 {
        match self.surface {
            Surface::Family(f) if f.family == Family::F1 => self.bx.r1.ln() - f.fp.ln_e_of_log(lu),
            Surface::Family(f) => self.bx.r2.ln() - f.fp.ln_e_of_log(lu),
            Surface::Monomial { .. } => f64::INFINITY,
        }
    }

    /// F3 only: inner position below which the `y`-flat term dominates.
    fn second_transition(&self, lx: f64) -> f64 {
        match self.surface {
            Surface::Family(f) if f.family == Family::F3 => {
                let fp2 = f.fp2.expect("validated F3");
                self.bx.r2.ln() + (-fp2.qf() * lx).ln() / fp2.pf()
            }
            _ => f64::NEG_INFINITY,
        }
    }

    fn inner_plan(&self, lu: f64, rates: &Rates) -> (Vec<f64>, f64) {
        let t_a = self.flat_transition(lu);
        let t_b = self.second_transition(lu);
        let mut pts = Vec::new();
        let start = if t_b > 0.0 {
            pts.extend([0.5 * t_b, t_b, t_b + 1.0]);
            t_b
        } else {
            0.0
        };
        let plain_end = start + TAIL / rates.inner;
        let end = if t_a > plain_end {
            plain_end
        } else {
            pts.extend([t_a - 2.0, t_a - 0.5, t_a, t_a + 0.5, t_a + 2.0]);
            t_a.max(start) + TAIL / rates.inner_flat
        };
        pts.push(1.0 / rates.inner);
        (pts, end)
    }

    fn outer_points(&self, rates: &Rates) -> Vec<f64> {
        let mut pts = Vec::new();
        if let Surface::Family(f) = self.surface {
            let (p, q) = (f.fp.pf(), f.fp.qf());
            let (r_in, r_out) = if self.outer_is_y() { (self.bx.r1, self.bx.r2) } else { (self.bx.r2, self.bx.r1) };
            // Outer positions where the flat transition sits at inner position t.
            let mut ts = vec![0.5 * r_in.ln(), 0.0];
            ts.extend([0.1, 0.3, 1.0, 3.0, 10.0, 30.0, TAIL].iter().map(|k| k / rates.inner));
            for t in ts {
                pts.push(r_out.ln() + (q * (t - r_in.ln())).ln() / p);
            }
            if let Some(fp2) = f.fp2 {
                for t in [0.0, 1.0, 2.0, 4.0] {
                    let lx = -(fp2.pf() * (t - self.bx.r2.ln())).exp() / fp2.qf();
                    pts.push(self.bx.r1.ln() - lx);
                }
            }
        }
        pts.retain(|s| s.is_finite() && *s > 0.0);
        let last = pts.iter().copied().fold(0.0, f64::max);
        pts.extend([1.0, 3.0, 10.0].iter().map(|k| last + k / rates.outer));
        pts.push(last + TAIL / rates.outer);
        pts
    }

    fn integrate(&self, tol: Tolerance) -> Result<QuadResult> {
        let rates = self.rates()?;
        let outer_y = self.outer_is_y();
        let (ln_r1, ln_r2) = (self.bx.r1.ln(), self.bx.r2.ln());
        let inner = Inner::new();
        let inner_tol = tol.scaled(0.1);
        let h = |s: f64| {
            let lu = if outer_y { ln_r2 - s } else { ln_r1 - s };
            let (pts, end) = self.inner_plan(lu, &rates);
            let g = |t: f64| if outer_y { self.integrand(ln_r1 - t, lu) } else { self.integrand(lu, ln_r2 - t) };
            inner.take(segments(g, pts, 0.0, end, inner_tol))
        };
        let pts = self.outer_points(&rates);
        let end = pts.iter().copied().fold(0.0, f64::max);
        let outer = segments(h, pts, 0.0, end, tol);
        Ok(inner.finish(outer))
    }
}

/// Quadrant moment `int_V |f|^sigma x^alpha y^beta` by direct quadrature.
pub fn eval_zab_direct(fam: &FamilySpec, ms: MomentSpec, sigma: f64, bx: BoxDomain) -> Result<QuadResult> {
    eval_zab_direct_tol(fam, ms, sigma, bx, DIRECT_TOL)
}

pub fn eval_zab_direct_tol(fam: &FamilySpec, ms: MomentSpec, sigma: f64, bx: BoxDomain, tol: Tolerance) -> Result<QuadResult> {
    Quadrant { surface: Surface::Family(fam), sigma, alpha: ms.alpha as f64, beta: ms.beta as f64, bx, weight: None }.integrate(tol)
}

/// The same quadrature with `|f|` replaced by `x^a y^b`; a reference with
/// the closed form `r1^(a s+alpha+1) r2^(b s+beta+1) / ((a s+alpha+1)(b s+beta+1))`.
pub fn eval_monomial_direct(a: u32, b: u32, ms: MomentSpec, sigma: f64, bx: BoxDomain) -> Result<QuadResult> {
    Quadrant { surface: Surface::Monomial { a, b }, sigma, alpha: ms.alpha as f64, beta: ms.beta as f64, bx, weight: None }
        .integrate(DIRECT_TOL)
}

/// `int_{R^2} |f|^sigma phi` by direct quadrature on the positive quadrant
/// of `|f|^sigma` times the symmetrized weight. For bump weights the box is
/// intersected with the support of the bump.
pub fn eval_zeta_direct(fam: &FamilySpec, phi: &TestFunction, sigma: f64, bx: BoxDomain) -> Result<QuadResult> {
    eval_zeta_direct_tol(fam, phi, sigma, bx, DIRECT_TOL)
}

pub fn eval_zeta_direct_tol(fam: &FamilySpec, phi: &TestFunction, sigma: f64, bx: BoxDomain, tol: Tolerance) -> Result<QuadResult> {
    let bar = symmetrize(phi);
    match bar.kind {
        WeightKind::BoxPolynomial => {
            let mut total = QuadResult { value: 0.0, abs_err_estimate: 0.0, evaluations: 0, converged: true, intervals: 0, max_depth: 0 };
            for m in &bar.terms {
                let r = eval_zab_direct_tol(fam, MomentSpec::new(m.i, m.j), sigma, bx, tol)?;
                total = total.combine(r.scale(m.coeff));
            }
            Ok(total)
        }
        WeightKind::PolynomialBump { rx, ry } => {
            let inner_box = BoxDomain::new(bx.r1.min(rx), bx.r2.min(ry))?;
            let w = |x: f64, y: f64| bar.eval(x, y);
            Quadrant { surface: Surface::Family(fam), sigma, alpha: 0.0, beta: 0.0, bx: inner_box, weight: Some(&w) }.integrate(tol)
        }
    }
}

/// `int_V |f|^sigma` over the quadrant box for F2 or F3.
pub fn eval_f3_quadrant(fam: &FamilySpec, sigma: f64, bx: BoxDomain) -> Result<QuadResult> {
    if fam.family == Family::F1 {
        return Err(Error::InvalidParameter("quadrant integral of the sandwich is for F2 or F3".into()));
    }
    eval_zab_direct(fam, MomentSpec::new(0, 0), sigma, bx)
}

/// The continued quadrant moment split so that the pole factor
/// `P = b sigma + beta + 1` stays symbolic: the value is
/// `region1_numerator / P + region2 + region3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuedParts {
    pub pole_factor: f64,
    /// `P` times the region-1 integral, regular at the pole.
    pub region1_numerator: f64,
    pub region2: f64,
    pub region3: f64,
    pub abs_err_estimate: f64,
    pub converged: bool,
    /// Within `1e-4` of the pole.
    pub near_pole: bool,
}

impl ContinuedParts {
    pub fn value(&self) -> f64 {
        self.region1_numerator / self.pole_factor + self.region2 + self.region3
    }

    /// `P` times the value, finite across the pole.
    pub fn residue_form(&self) -> f64 {
        self.region1_numerator + self.pole_factor * (self.region2 + self.region3)
    }

    fn quad(&self) -> QuadResult {
        QuadResult {
            value: self.value(),
            abs_err_estimate: self.abs_err_estimate,
            evaluations: 0,
            converged: self.converged,
            intervals: 0,
            max_depth: 0,
        }
    }
}

/// Continued quadrant moment `int_V |f|^sigma x^alpha y^beta` of F1 for
/// `-(alpha+1)/a < sigma < 0`.
pub fn eval_zab_continued(fam: &FamilySpec, ms: MomentSpec, sigma: f64, cfg: &ContinuationConfig) -> Result<QuadResult> {
    let parts = eval_zab_continued_parts(fam, ms, sigma, cfg)?;
    if parts.pole_factor.abs() < 1e-12 {
        return Err(Error::Pole(format!("sigma = {sigma} is the pole -({}+1)/{}", ms.beta, fam.b)));
    }
    Ok(parts.quad())
}

/// The pieces of [`eval_zab_continued`]; also defined at the pole itself.
pub fn eval_zab_continued_parts(fam: &FamilySpec, ms: MomentSpec, sigma: f64, cfg: &ContinuationConfig) -> Result<ContinuedParts> {
    cfg.validate(fam, ms.alpha)?;
    let (a, b) = (fam.a as f64, fam.b as f64);
    let (alpha, beta) = (ms.alpha as f64, ms.beta as f64);
    if !(sigma < 0.0 && a * sigma + alpha + 1.0 > 0.0) {
        return Err(Error::Domain(format!("continuation needs -(alpha+1)/a < sigma < 0, got sigma = {sigma}")));
    }
    let tol = CONTINUED_TOL;
    let tol_in = tol.scaled(0.1);
    let fp = fam.fp;
    let (p, q) = (fp.pf(), fp.qf());
    let ContinuationConfig { delta, lambda: lam, bx } = *cfg;
    let (r1, r2) = (bx.r1, bx.r2);
    let xa = a * sigma + alpha + 1.0;
    let pol = b * sigma + beta + 1.0;
    let ln_e = |t: f64| fp.ln_e_of_log(-t);

    // u1 = tau(lambda r1); x1 = min(r1, E(r2)/lambda); rho1 = rho(lambda r1).
    let u1 = fp.inv_big_e(delta, r2, lam * r1)?;
    let ln_x1 = (fp.ln_big_e(delta, r2) - lam.ln()).min(r1.ln());
    let x1_inside = ln_x1 < r1.ln();
    let rho1 = if lam * r1 >= fp.e(r2) { r2 } else { fp.inv_e(lam * r1)? };
    let (t_u1, t_rho) = (-u1.ln(), -rho1.ln());
    let inner = Inner::new();

    // Boundary term along the curve x = E(y)/lambda.
    let w1 = profile(
        |t| {
            let bracket = (p / q) * (p * t).exp() - delta;
            ((xa * delta - pol) * t + xa * ln_e(t) + sigma * (q * lam.ln() - q * delta * t).exp().ln_1p()).exp() * bracket
        },
        pol - xa * delta - p,
        xa / q,
        p,
        t_u1,
        &[],
        tol,
    )
    .scale(lam.powf(-xa));

    // Derivative term below the curve, in w = lambda x / E(y).
    let grow = xa - q;
    let w2 = profile(
        |t| {
            let ln_r = ((lam.ln() + ln_x1) - (delta * -t + ln_e(t))).max(0.0);
            let ln_xi = q * lam.ln() - q * delta * t;
            let corr = |s: f64| (sigma - 1.0) * (ln_xi - q * s).exp().ln_1p();
            let (offset, g) = if grow < 0.0 {
                let end = ln_r.min(TAIL / -grow);
                (0.0, inner.take(segments(|s| (grow * s + corr(s)).exp(), vec![1.0 / q], 0.0, end, tol_in)))
            } else {
                let end = if grow > 0.0 { ln_r.min(TAIL / grow) } else { ln_r };
                let g = segments(|s| (-grow * s + corr(ln_r - s)).exp(), vec![], 0.0, end, tol_in);
                (grow * ln_r, inner.take(g))
            };
            (-(pol - p + (q - xa) * delta) * t + xa * ln_e(t) + offset).exp() * g
        },
        pol - p + (q - xa) * delta,
        if grow < 0.0 { xa / q } else { 1.0 },
        p,
        t_u1,
        &[],
        tol,
    )
    .scale(lam.powf(q - xa));

    let (w3, w4) = if x1_inside {
        let ln_er2 = fp.ln_e(r2);
        let w3 = segments(|l| (xa * l + sigma * softplus(q * (ln_er2 - l))).exp(), vec![ln_er2], ln_x1, r1.ln(), tol);
        let w4 = segments(
            |l| {
                let g = profile(
                    |t| (-(pol - p) * t - (p * t).exp() + (sigma - 1.0) * softplus(q * (ln_e(t) - l))).exp(),
                    pol - p,
                    1.0,
                    p,
                    -r2.ln(),
                    &[],
                    tol_in,
                );
                ((xa - q) * l).exp() * inner.take(g)
            },
            vec![],
            ln_x1,
            r1.ln(),
            tol,
        );
        (w3, w4)
    } else {
        (QuadResult::default(), QuadResult::default())
    };

    // Between the curves e(y) <= lambda x <= E(y), in w = lambda x / e(y).
    let lc = if xa < q { TAIL / (q - xa) } else { f64::INFINITY };
    let corr_to = |lim: f64| {
        segments(|s| (xa * s).exp() * (sigma * (q * (lam.ln() - s)).exp().ln_1p()).exp_m1(), vec![1.0 / q], 0.0, lim, tol_in)
    };
    let corr_full = if lc.is_finite() { corr_to(lc).value } else { 0.0 };
    let z2 = profile(
        |t| {
            let lim = (delta * t).min(lam.ln() + r1.ln() - ln_e(t)).max(0.0);
            let corr = if lim >= lc { corr_full } else { inner.take(corr_to(lim)) };
            let i = (xa * lim).exp_m1() / xa + corr;
            (-pol * t + xa * ln_e(t)).exp() * i
        },
        pol - xa * delta,
        xa / q,
        p,
        t_rho,
        &[t_u1],
        tol,
    )
    .scale(lam.powf(-xa));

    // Below the curve lambda x = e(y), in w = lambda x / e(y).
    let m = (a - q) * sigma + alpha + 1.0;
    let h = |ln_w: f64| {
        let s0 = -ln_w;
        let s_l = -lam.ln();
        let end = s0.max(s_l) + TAIL / m;
        segments(|s| (-m * s + sigma * softplus(-q * lam.ln() - q * s)).exp(), vec![s_l], s0, end, tol_in)
    };
    let h1 = h(0.0).value;
    let k3 = profile(|t| (-pol * t + xa * ln_e(t)).exp(), pol, xa / q, p, t_rho, &[], tol);
    let z3_top = if rho1 < r2 {
        segments(
            |t| (-pol * t + xa * ln_e(t)).exp() * inner.take(h(lam.ln() + r1.ln() - ln_e(t))),
            vec![],
            -r2.ln(),
            t_rho,
            tol,
        )
    } else {
        QuadResult::default()
    };
    let z3_scale = lam.powf(-m);

    let pieces = [w1, w2, w3, w4, z2, k3, z3_top];
    let converged = pieces.iter().all(|r| r.converged) && inner.ok.get();
    let numerator = w1.value - p * sigma * (w2.value + w4.value) + r2.powf(pol) * w3.value;
    let region3 = z3_scale * (h1 * k3.value + z3_top.value);
    let abs_err = (w1.abs_err_estimate + p * sigma.abs() * (w2.abs_err_estimate + w4.abs_err_estimate) + w3.abs_err_estimate)
        / pol.abs().max(1e-300)
        + z2.abs_err_estimate
        + z3_scale * (h1 * k3.abs_err_estimate + z3_top.abs_err_estimate)
        + inner.worst_rel.get() * (numerator.abs() / pol.abs().max(1e-300) + z2.value.abs() + region3.abs());
    Ok(ContinuedParts {
        pole_factor: pol,
        region1_numerator: numerator,
        region2: z2.value,
        region3,
        abs_err_estimate: abs_err,
        converged,
        near_pole: pol.abs() < 1e-4 * b,
    })
}

/// Continued `int_{R^2} |f|^sigma phi` of F1 for a box-polynomial weight,
/// summed over the monomials of the symmetrized weight.
pub fn eval_zeta_continued(fam: &FamilySpec, phi: &TestFunction, sigma: f64, cfg: &ContinuationConfig) -> Result<QuadResult> {
    if phi.kind != WeightKind::BoxPolynomial {
        return Err(Error::InvalidParameter("continuation needs a box-polynomial weight".into()));
    }
    require_f1(fam)?;
    if !(sigma < 0.0 && fam.a as f64 * sigma + 1.0 > 0.0) {
        return Err(Error::Domain(format!("continuation needs -1/a < sigma < 0, got sigma = {sigma}")));
    }
    let bar = symmetrize(phi);
    let mut total = QuadResult::default();
    for m in &bar.terms {
        let r = eval_zab_continued(fam, MomentSpec::new(m.i, m.j), sigma, cfg)?;
        total = total.combine(r.scale(m.coeff));
    }
    Ok(total)
}

/// Two-sided bound on the F3 quadrant integral `Z`:
/// `lower = (1 + lambda^q + mu^q~)^sigma W <= Z <= upper`, where `W` is the
/// integral of `x^(a sigma) y^(b sigma)` over
/// `U = {0 < x < r, e(x)/lambda < y < e~^(-1)(mu x)}` and `upper` is the
/// quadrant integral of the F2 part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichBracket {
    pub lower: f64,
    pub upper: f64,
    pub w: f64,
    /// The part of `W` from `y < 1/lambda`.
    pub w_below: f64,
    /// The part of `W` from `y > 1/lambda` (negative when `e~^(-1)(mu x) < 1/lambda`).
    pub w_above: f64,
    /// Right end of the `x`-range of `U`.
    pub r: f64,
}

/// Largest `r <= min(r1, e~(r2)/mu)` with `e(x)/lambda < e~^(-1)(mu x)` on `(0, r)`.
fn sandwich_radius(fam: &FamilySpec, lambda: f64, mu: f64, bx: BoxDomain) -> Result<f64> {
    let fp2 = fam.fp2.expect("F3 checked");
    let cap = bx.r1.min(fp2.e(bx.r2) / mu);
    if !(cap > 0.0) {
        return Err(Error::EmptyRegion(format!("e~(r2)/mu underflows for mu = {mu}")));
    }
    let gap = |lx: f64| {
        let hi = -(-fp2.qf() * (mu.ln() + lx)).ln() / fp2.pf();
        hi - (fam.fp.ln_e_of_log(lx) - lambda.ln())
    };
    let top = cap.ln();
    let mut lx = -700.0_f64;
    if !(gap(lx) > 0.0) {
        return Err(Error::EmptyRegion(format!("no admissible x for lambda = {lambda}, mu = {mu}")));
    }
    while lx < top {
        let next = (lx + 0.05).min(top);
        if !(gap(next) > 0.0) {
            let (mut lo, mut hi) = (lx, next);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if gap(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(lo.exp());
        }
        lx = next;
    }
    Ok(cap)
}

pub fn sandwich_w(fam: &FamilySpec, sigma: f64, lambda: f64, mu: f64, bx: BoxDomain) -> Result<SandwichBracket> {
    if fam.family != Family::F3 {
        return Err(Error::InvalidParameter(format!("sandwich bound is for F3, got {}", fam.family)));
    }
    let (a, b) = (fam.a as f64, fam.b as f64);
    if !(sigma <= 0.0 && b * sigma + 1.0 > 0.0) {
        return Err(Error::Domain(format!("sandwich bound needs -1/b < sigma <= 0, got {sigma}")));
    }
    if !(lambda > 0.0 && lambda < 1.0 && mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidParameter(format!("lambda and mu must lie in (0,1), got {lambda}, {mu}")));
    }
    let fp2 = fam.fp2.expect("validated F3");
    let fp = fam.fp;
    let r = sandwich_radius(fam, lambda, mu, bx)?;
    let xx = b * sigma + 1.0;
    let kx = a * sigma + 1.0;
    let ln_r = r.ln();
    let ln_hi = |lx: f64| -(-fp2.qf() * (mu.ln() + lx)).ln() / fp2.pf();
    let ln_lo = |lx: f64| fp.ln_e_of_log(lx) - lambda.ln();
    // In s = log(r/x); the y-integral is done in closed form.
    let l_star = (xx / fp.qf()).ln() / fp.pf();
    let mut pts: Vec<f64> = [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0].iter().map(|k| ln_r - (l_star + k / fp.pf())).collect();
    let last = pts.iter().copied().fold(0.0, f64::max);
    pts.extend([1.0, 3.0, 10.0].iter().map(|k| last + k / kx));
    let end = last + TAIL / kx;
    let outer = |f: &dyn Fn(f64) -> f64| segments(|s| f(ln_r - s), pts.clone(), 0.0, end, DIRECT_TOL);
    let w = outer(&|lx| {
        let (hi, lo) = (ln_hi(lx), ln_lo(lx));
        (kx * lx + xx * hi).exp() * -(-xx * (hi - lo)).exp_m1() / xx
    });
    let w_below = outer(&|lx| (kx * lx - xx * lambda.ln()).exp() * -(xx * fp.ln_e_of_log(lx)).exp_m1() / xx);
    let w_above = outer(&|lx| (kx * lx - xx * lambda.ln()).exp() * (xx * (ln_hi(lx) + lambda.ln())).exp_m1() / xx);
    let upper = eval_zab_direct(&fam.f2_part()?, MomentSpec::new(0, 0), sigma, bx)?;
    let factor = (1.0 + lambda.powi(fp.q as i32) + mu.powi(fp2.q as i32)).powf(sigma);
    Ok(SandwichBracket { lower: factor * w.value, upper: upper.value, w: w.value, w_below: w_below.value, w_above: w_above.value, r })
}
