use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use flatzeta_core::asym1d::{expand_k, IntegralKind, OneDimIntegralSpec};
use flatzeta_core::constants::{
    chat_oracle, complement_moment_quadrature, const_ctilde, flat_moment_oracle, flat_moment_quadrature,
};
use flatzeta_core::flatcore::{BoxDomain, FlatParams, RealParam};
use flatzeta_core::verify::{classify, verify_theorem, Clause, GridSpec, Target, VerificationReport, VerifyParams};
use flatzeta_core::zeta::{
    eval_zeta_continued, eval_zeta_direct, symmetrize, ContinuationConfig, Family, FamilySpec, TestFunction,
};
use flatzeta_core::Error;

const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "flatzeta", version, about = "Local zeta functions of flat-perturbed monomials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the limit constants with their closed-form deltas.
    Constants {
        #[command(flatten)]
        fam: FamilyArgs,
        /// Moment index for C_beta and A_beta.
        #[arg(long, default_value_t = 0)]
        beta: u32,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Print the power-log expansion of K(X) = int_0^r u^(A+BX) e(u)^X du.
    Expand {
        #[command(flatten)]
        integral: IntegralArgs,
        #[arg(long)]
        depth: Option<usize>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Evaluate the zeta integral at a list of sigma values.
    Zeta {
        #[command(flatten)]
        fam: FamilyArgs,
        /// Comma-separated sigma values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        sigma: Vec<f64>,
        #[arg(long, value_enum, default_value_t = EngineArg::Direct)]
        engine: EngineArg,
        /// Polynomial weight such as "1 + y^2".
        #[arg(long, default_value = "1")]
        weight: String,
        #[command(flatten)]
        region: RegionArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run a limit verification and write its report.
    Verify {
        /// thm31, thm33, thm61, thm81, lemma41, lemma44 or pole_order.
        target: String,
        #[command(flatten)]
        fam: FamilyArgs,
        #[arg(long, default_value = "1")]
        weight: String,
        #[arg(long, default_value_t = 0)]
        beta: u32,
        /// Force a clause (i, ii, iii, iv) instead of the exact dispatch.
        #[arg(long)]
        clause: Option<String>,
        /// Exponent A of the one-dimensional integral (lemma targets).
        #[arg(short = 'A', long = "a-exp", allow_hyphen_values = true)]
        a_exp: Option<String>,
        /// Coefficient B of the one-dimensional integral.
        #[arg(short = 'B', long = "b-coef", default_value_t = 1.0, allow_hyphen_values = true)]
        b_coef: f64,
        /// Upper limit r of the one-dimensional integral.
        #[arg(short = 'r', default_value_t = 0.5)]
        r: f64,
        /// Relative tolerance on the limit, replacing the built-in one.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long = "grid-x0")]
        grid_x0: Option<f64>,
        #[arg(long = "grid-ratio")]
        grid_ratio: Option<f64>,
        #[arg(long = "grid-count")]
        grid_count: Option<usize>,
        #[command(flatten)]
        region: RegionArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Print the case, h0 and m0 of a family.
    Classify {
        #[command(flatten)]
        fam: FamilyArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Args, Clone)]
struct FamilyArgs {
    /// F1, F2 or F3; verify picks F3 for thm33/thm81 and F1 otherwise.
    #[arg(long)]
    family: Option<Family>,
    #[arg(short = 'a', default_value_t = 2)]
    a: u32,
    #[arg(short = 'b', default_value_t = 4)]
    b: u32,
    /// Flatness exponent, as "num/den" or a decimal.
    #[arg(short = 'p', default_value = "1")]
    p: String,
    #[arg(short = 'q', default_value_t = 2)]
    q: u32,
    #[arg(long)]
    ptilde: Option<String>,
    #[arg(long)]
    qtilde: Option<u32>,
}

#[derive(Args, Clone)]
struct IntegralArgs {
    #[arg(short = 'A', long = "a-exp", allow_hyphen_values = true)]
    a_exp: String,
    #[arg(short = 'B', long = "b-coef", default_value_t = 1.0, allow_hyphen_values = true)]
    b_coef: f64,
    #[arg(short = 'r', default_value_t = 0.5)]
    r: f64,
    #[arg(short = 'p', default_value = "1")]
    p: String,
    #[arg(short = 'q', default_value_t = 2)]
    q: u32,
}

#[derive(Args, Clone)]
struct RegionArgs {
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    r2: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Clone)]
struct OutputArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    Direct,
    Continued,
}

enum Failure {
    Core(Error),
    Io(std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Core(Error::InvalidParameter(msg.into()))
}

fn flat(p: &str, q: u32) -> Result<FlatParams, Failure> {
    Ok(FlatParams::new(p.parse::<RealParam>()?, q)?)
}

impl FamilyArgs {
    fn build(&self, fallback: Family) -> Result<FamilySpec, Failure> {
        let family = self.family.unwrap_or(fallback);
        let fp = flat(&self.p, self.q)?;
        let fp2 = match (family, &self.ptilde, self.qtilde) {
            (Family::F3, Some(p), Some(q)) => Some(flat(p, q)?),
            (Family::F3, _, _) => return Err(invalid("F3 needs --ptilde and --qtilde")),
            _ => None,
        };
        Ok(FamilySpec::new(family, self.a, self.b, fp, fp2)?)
    }
}

impl IntegralArgs {
    fn build(&self, kind: IntegralKind) -> Result<OneDimIntegralSpec, Failure> {
        Ok(OneDimIntegralSpec::new(self.a_exp.parse()?, self.b_coef, self.r, flat(&self.p, self.q)?, kind)?)
    }
}

impl RegionArgs {
    fn bx(&self) -> Result<Option<BoxDomain>, Failure> {
        match (self.r1, self.r2) {
            (None, None) => Ok(None),
            (r1, r2) => Ok(Some(BoxDomain::new(r1.unwrap_or(0.5), r2.unwrap_or(0.5))?)),
        }
    }

    /// The admissible default with any explicit overrides, re-validated.
    fn continuation(&self, fam: &FamilySpec, alpha_max: u32) -> Result<Option<ContinuationConfig>, Failure> {
        if fam.family != Family::F1 {
            return Ok(None);
        }
        let mut cfg = ContinuationConfig::admissible_default(fam, alpha_max)?;
        if self.lambda.is_none() && self.delta.is_none() && self.r1.is_none() && self.r2.is_none() {
            return Ok(Some(cfg));
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if self.r1.is_some() || self.r2.is_some() {
            cfg.bx = BoxDomain::new(self.r1.unwrap_or(cfg.bx.r1), self.r2.unwrap_or(cfg.bx.r2))?;
        }
        cfg.validate(fam, alpha_max)?;
        Ok(Some(cfg))
    }
}

fn emit(out: &OutputArgs, text: String) -> Result<(), Failure> {
    match &out.out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn to_json(v: serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(&v).expect("json values serialize");
    s.push('\n');
    s
}

fn csv(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn report_csv(report: &VerificationReport) -> String {
    csv("sigma,X,raw,scaled", report.samples.iter().map(|s| format!("{:e},{:e},{:e},{:e}", s.sigma, s.x, s.raw, s.scaled)))
}

fn alpha_max(phi: &TestFunction) -> u32 {
    symmetrize(phi).terms.iter().map(|m| m.i).max().unwrap_or(0)
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Classify { fam, out } => {
            let spec = fam.build(Family::F1)?;
            let c = classify(&spec);
            let text = match out.format {
                Format::Json => to_json(json!({
                    "family": c.family.to_string(),
                    "case": c.case.to_string(),
                    "h0": c.h0.to_string(),
                    "m0_bound": c.m0_bound.to_string(),
                    "m0_exact": c.m0_exact.map(|m| m.to_string()),
                    "nonpolar": c.nonpolar,
                })),
                Format::Csv => csv(
                    "family,case,h0,m0_bound,m0_exact,nonpolar",
                    std::iter::once(format!(
                        "{},{},{},{},{},{}",
                        c.family,
                        c.case,
                        c.h0,
                        c.m0_bound,
                        c.m0_exact.map(|m| m.to_string()).unwrap_or_default(),
                        c.nonpolar
                    )),
                ),
            };
            emit(&out, text)?;
            Ok(0)
        }
        Command::Constants { fam, beta, out } => {
            let spec = fam.build(Family::F1)?;
            let (a, b, fp) = (spec.a as f64, spec.b as f64, spec.fp);
            let p = fp.pf();
            let mut rows = Vec::new();
            let mut flat_row = |name: &str, exponent: f64| -> Result<(), Failure> {
                if exponent < -1.0 {
                    let value = flat_moment_quadrature(exponent, 0, &fp)?;
                    let oracle = flat_moment_oracle(exponent, &fp);
                    rows.push((name.to_string(), value, oracle));
                }
                Ok(())
            };
            flat_row("C", -b / a - p)?;
            flat_row("C~", -p - 1.0)?;
            flat_row("C_beta", -b / a - p + beta as f64)?;
            flat_row("A_beta", -b / a + beta as f64)?;
            if spec.a < spec.b && p > 1.0 - a / b {
                let value = complement_moment_quadrature(-a / b, &fp)?;
                rows.push(("C^".into(), value, chat_oracle(spec.a, spec.b, &fp)));
            }
            // Also confirms C~ = q/p to the oracle tolerance.
            const_ctilde(&fp)?;
            let delta = |v: f64, o: f64| (v - o).abs() / o.abs();
            let text = match out.format {
                Format::Json => to_json(json!(
                    rows
                        .iter()
                        .map(|(n, v, o)| json!({"name": n, "value": v, "oracle": o, "rel_delta": delta(*v, *o)}))
                        .collect::<Vec<_>>()
                )),
                Format::Csv => csv("name,value,oracle,rel_delta", rows.iter().map(|(n, v, o)| format!("{n},{v:e},{o:e},{:e}", delta(*v, *o)))),
            };
            emit(&out, text)?;
            Ok(0)
        }
        Command::Expand { integral, depth, out } => {
            let spec = integral.build(IntegralKind::K)?;
            let e = expand_k(&spec, depth)?;
            let text = match out.format {
                Format::Json => to_json(serde_json::to_value(&e).expect("expansions serialize")),
                Format::Csv => csv("coeff,x_power,log_power", e.terms.iter().map(|t| format!("{:e},{},{}", t.coeff, t.x_power, t.log_power))),
            };
            emit(&out, text)?;
            Ok(0)
        }
        Command::Zeta { fam, sigma, engine, weight, region, out } => {
            let spec = fam.build(Family::F1)?;
            let phi: TestFunction = weight.parse()?;
            let values: Vec<(f64, flatzeta_core::quad::QuadResult)> = match engine {
                EngineArg::Direct => {
                    let bx = region.bx()?.unwrap_or(BoxDomain::new(0.5, 0.5)?);
                    sigma.iter().map(|&s| eval_zeta_direct(&spec, &phi, s, bx).map(|r| (s, r))).collect::<Result<_, _>>()?
                }
                EngineArg::Continued => {
                    let cfg = region.continuation(&spec, alpha_max(&phi))?.ok_or_else(|| invalid("the continued engine is for F1"))?;
                    sigma.iter().map(|&s| eval_zeta_continued(&spec, &phi, s, &cfg).map(|r| (s, r))).collect::<Result<_, _>>()?
                }
            };
            let text = match out.format {
                Format::Json => to_json(json!(
                    values
                        .iter()
                        .map(|(s, r)| json!({"sigma": s, "value": r.value, "abs_err": r.abs_err_estimate, "converged": r.converged}))
                        .collect::<Vec<_>>()
                )),
                Format::Csv => csv("sigma,value,abs_err,converged", values.iter().map(|(s, r)| format!("{s:e},{:e},{:e},{}", r.value, r.abs_err_estimate, r.converged))),
            };
            emit(&out, text)?;
            Ok(if values.iter().all(|(_, r)| r.converged) { 0 } else { EXIT_NONCONVERGENCE })
        }
        Command::Verify { target, fam, weight, beta, clause, a_exp, b_coef, r, tol, grid_x0, grid_ratio, grid_count, region, out } => {
            let target: Target = target.parse()?;
            let mut params = match target {
                Target::Lemma41 | Target::Lemma44 => {
                    let kind = if target == Target::Lemma41 { IntegralKind::K } else { IntegralKind::Ktilde };
                    let a_exp = a_exp.ok_or_else(|| invalid("lemma targets need -A"))?;
                    let args = IntegralArgs { a_exp, b_coef, r, p: fam.p.clone(), q: fam.q };
                    VerifyParams::for_integral(args.build(kind)?)
                }
                _ => {
                    let fallback = if matches!(target, Target::Thm33 | Target::Thm81) { Family::F3 } else { Family::F1 };
                    let spec = fam.build(fallback)?;
                    let phi: TestFunction = weight.parse()?;
                    let mut params = VerifyParams::for_family(spec.clone());
                    params.continuation = region.continuation(&spec, alpha_max(&phi))?;
                    params.bx = region.bx()?;
                    params.weight = Some(phi);
                    params.beta = beta;
                    params
                }
            };
            params.clause = clause.map(|c| c.parse::<Clause>()).transpose()?;
            params.tol = tol;
            if grid_x0.is_some() || grid_ratio.is_some() || grid_count.is_some() {
                let d = GridSpec::default_for(target);
                params.grid = Some(GridSpec::new(grid_x0.unwrap_or(d.x0), grid_ratio.unwrap_or(d.ratio), grid_count.unwrap_or(d.count))?);
            }
            let report = verify_theorem(target, &params)?;
            let text = match out.format {
                Format::Json => to_json(serde_json::to_value(&report).expect("reports serialize")),
                Format::Csv => report_csv(&report),
            };
            emit(&out, text)?;
            eprintln!("{target}: {}", if report.passed { "PASS" } else { "FAIL" });
            Ok(if report.unconverged_samples() > 0 {
                EXIT_NONCONVERGENCE
            } else if report.passed {
                0
            } else {
                EXIT_FAILED
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::NonConvergence(_) | Error::OracleMismatch { .. } => EXIT_NONCONVERGENCE,
                _ => EXIT_INVALID,
            })
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
