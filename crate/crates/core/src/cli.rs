//! Command-line front end. [`dispatch`] parses an argument vector, runs one
//! subcommand and returns the exit code with the text to print.
//!
//! Exit codes: 0 success, 2 invalid input or parameters outside an
//! operator's case, 3 a series that did not converge, 64 unknown or missing
//! subcommand.

use std::fmt::Write as _;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use num_rational::BigRational;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bessel::{bessel_k, ln_bessel_k, BesselOrder};
use crate::charfn::{cf_mean, cf_mean_derivative, cf_ode_residual, moments_from_cf};
use crate::density::{
    cdf_product, default_fd_step, finite_difference_derivatives, ode_residual_density, pdf_mean_zero_means,
    pdf_product, zero_means_pdf_derivatives, DensityValue, SeriesControl,
};
use crate::error::{Error, Result};
use crate::mc::{estimate_stein_expectation, sample_mean_of_products, SamplerConfig, DEFAULT_BATCH};
use crate::moments::{
    central_from_raw, central_moments, central_moments_equal_ratio, closed_form_four, raw_moments,
    raw_moments_equal_ratio, raw_moments_exact, MomentTable,
};
use crate::opsearch::{
    determinant_exact, exact_params, moment_system, operator_exists, unknown_label, ExactParams,
};
use crate::params::{classify, MeanParams, ProductNormalParams, DEFAULT_RATIO_TOL};
use crate::stein::{apply, operator, OperatorKind, TestFunction};

pub const SCHEMA_VERSION: &str = "1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "prodnorm", version, about = "Products of correlated normal random variables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(untagged)]
enum Command {
    /// Density of Z = XY, or of the mean of n copies when both means are zero
    Pdf(PdfArgs),
    /// Distribution function of Z = XY
    Cdf(PdfArgs),
    /// Raw or central moments of the mean of n copies
    Moments(MomentsArgs),
    /// Coefficient table of a Stein operator
    Operator(OperatorArgs),
    /// Apply a Stein operator to a test function
    SteinApply(SteinApplyArgs),
    /// Monte Carlo estimate of E[A f(Zbar_n)]
    SteinCheck(SteinCheckArgs),
    /// Characteristic function of the mean of n copies
    Cf(CfArgs),
    /// Residual of the fourth-order density ODE
    OdeCheck(OdeCheckArgs),
    /// Exact search for a Stein operator of a given order
    Opsearch(OpsearchArgs),
    /// Draw samples of the mean of n copies
    Sample(SampleArgs),
    /// Modified Bessel function of the second kind
    Besselk(BesselArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pdf(_) => "pdf",
            Command::Cdf(_) => "cdf",
            Command::Moments(_) => "moments",
            Command::Operator(_) => "operator",
            Command::SteinApply(_) => "stein-apply",
            Command::SteinCheck(_) => "stein-check",
            Command::Cf(_) => "cf",
            Command::OdeCheck(_) => "ode-check",
            Command::Opsearch(_) => "opsearch",
            Command::Sample(_) => "sample",
            Command::Besselk(_) => "besselk",
        }
    }
}

/// Distribution parameters. Kept as text so exact commands can read them as
/// rationals.
#[derive(Args, Debug, Clone, Serialize)]
struct ParamArgs {
    #[arg(long, default_value = "0", allow_negative_numbers = true)]
    mu_x: String,
    #[arg(long, default_value = "0", allow_negative_numbers = true)]
    mu_y: String,
    #[arg(long, default_value = "1")]
    sigma_x: String,
    #[arg(long, default_value = "1")]
    sigma_y: String,
    #[arg(long, default_value = "0", allow_negative_numbers = true)]
    rho: String,
    /// Number of copies averaged
    #[arg(long, default_value_t = 1)]
    n: u64,
}

impl ParamArgs {
    fn float(name: &str, s: &str) -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("{name}: cannot parse {s:?} as a number")))
    }

    fn product(&self) -> Result<ProductNormalParams> {
        ProductNormalParams::new(
            Self::float("mu-x", &self.mu_x)?,
            Self::float("mu-y", &self.mu_y)?,
            Self::float("sigma-x", &self.sigma_x)?,
            Self::float("sigma-y", &self.sigma_y)?,
            Self::float("rho", &self.rho)?,
        )
    }

    fn mean(&self) -> Result<MeanParams> {
        self.product()?.with_copies(self.n)
    }

    fn exact(&self) -> Result<ExactParams> {
        exact_params(&self.mu_x, &self.mu_y, &self.sigma_x, &self.sigma_y, &self.rho, self.n)
    }
}

#[derive(Args, Debug, Clone, Copy, Serialize)]
struct OutputArgs {
    /// Emit the JSON envelope
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    /// Emit CSV with a header row
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct PointArgs {
    /// Evaluation points, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Vec<f64>,
    /// Evenly spaced points `lo:hi:count`
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("grid must be lo:hi:count, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if count == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect())
}

impl PointArgs {
    fn points(&self, what: &str) -> Result<Vec<f64>> {
        let mut pts = self.x.clone();
        if let Some(g) = &self.grid {
            pts.extend(parse_grid(g)?);
        }
        if pts.is_empty() {
            return Err(Error::InvalidArgument(format!("no {what} values given; use --x or --grid")));
        }
        Ok(pts)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct PdfArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    points: PointArgs,
    /// Relative truncation tolerance of the series
    #[arg(long, default_value_t = 1e-14)]
    rel_tol: f64,
    /// Maximum number of outer series blocks
    #[arg(long, default_value_t = 300)]
    max_outer: usize,
    /// Never fall back to quadrature
    #[arg(long)]
    series_only: bool,
    #[command(flatten)]
    out: OutputArgs,
}

impl PdfArgs {
    fn control(&self) -> Result<SeriesControl> {
        let c = SeriesControl::new(self.rel_tol, self.max_outer)?;
        Ok(if self.series_only { c.series_only() } else { c })
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct MomentsArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 4)]
    kmax: usize,
    /// Central instead of raw moments
    #[arg(long)]
    central: bool,
    /// Closed forms for the first four moments, skewness and kurtosis
    #[arg(long)]
    closed_form: bool,
    /// Exact rational arithmetic; parameters must be decimals or fractions
    #[arg(long)]
    exact: bool,
    /// Use the third-order recursion for equal mean-to-sd ratios
    #[arg(long)]
    equal_ratio: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct OperatorArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Operator: a1 .. a7
    #[arg(long, default_value = "a1")]
    which: String,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SteinApplyArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value = "a1")]
    which: String,
    /// Test function: poly:K, exp:A, sin:T, cos:T, gauss:C, gausspoly:C:K
    #[arg(long)]
    f: String,
    #[command(flatten)]
    points: PointArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SteinCheckArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value = "a1")]
    which: String,
    #[arg(long)]
    f: String,
    #[arg(long, default_value_t = 1_000_000)]
    count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    batch: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct CfArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Arguments t, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    t: Vec<f64>,
    /// Evenly spaced t values `lo:hi:count`
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Also report the ODE residual (unit variances only)
    #[arg(long)]
    check_ode: bool,
    /// Also report raw moments up to this order from derivatives at 0
    #[arg(long)]
    moments: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct OdeCheckArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    points: PointArgs,
    /// Finite-difference step (general case only)
    #[arg(long)]
    step: Option<f64>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct OpsearchArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Number of monomial equations; defaults to the number of unknowns plus
    /// four, or to a square system with --det
    #[arg(long)]
    rows: Option<usize>,
    /// Print the linear system
    #[arg(long)]
    print_system: bool,
    /// Exact determinant of the (square) system
    #[arg(long)]
    det: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SampleArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    batch: Option<usize>,
    /// Write the draws to this CSV file
    #[arg(long, visible_alias = "out")]
    out_file: Option<std::path::PathBuf>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct BesselArgs {
    /// Order; integer or half-integer
    #[arg(long, allow_negative_numbers = true)]
    nu: f64,
    #[command(flatten)]
    points: PointArgs,
    /// Return e^x K_nu(x)
    #[arg(long)]
    scaled: bool,
    #[command(flatten)]
    out: OutputArgs,
}

/// One table cell.
#[derive(Clone, Debug)]
enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => fmt_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }

    fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            // Shortest round-trip form, switching to exponent notation
            // outside [1e-4, 1e15).
            Cell::Num(v) if v.is_finite() && *v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e15) => format!("{v:e}"),
            Cell::Num(v) if v.is_finite() => format!("{v}"),
            other => other.csv(),
        }
    }
}

/// 17 significant digits.
fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(columns: Vec<&'static str>) -> Self {
        Table { columns, rows: Vec::new() }
    }

    fn csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push_str("\r\n");
        for r in &self.rows {
            s.push_str(&r.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            s.push_str("\r\n");
        }
        s
    }

    fn aligned(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::text).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| cells.iter().map(|r| r[j].len()).chain([self.columns[j].len()]).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        let line = |vals: Vec<&str>, s: &mut String| {
            let parts: Vec<String> = vals.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
            s.push_str(parts.join("  ").trim_end());
            s.push('\n');
        };
        line(self.columns.clone(), &mut s);
        for r in &cells {
            line(r.iter().map(String::as_str).collect(), &mut s);
        }
        s
    }
}

/// What a subcommand produced.
struct Outcome {
    results: Value,
    table: Table,
}

fn rational_json(r: &BigRational) -> Value {
    json!({ "num": r.numer().to_string(), "den": r.denom().to_string() })
}

fn rational_text(r: &BigRational) -> String {
    if r.denom() == &1.into() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn density_row(x: f64, v: &DensityValue) -> (Value, Vec<Cell>) {
    let log_pdf = if v.log_abs == f64::NEG_INFINITY { None } else { Some(v.log_abs) };
    let j = json!({
        "x": x,
        "log_pdf": log_pdf,
        "pdf": v.value(),
        "terms_used": v.terms_used,
        "converged": v.converged,
        "method": v.method.as_str(),
        "rel_err": v.rel_err(),
    });
    let cells = vec![
        Cell::Num(x),
        Cell::Num(v.log_abs),
        Cell::Num(v.value()),
        Cell::Int(v.terms_used as i64),
        Cell::Bool(v.converged),
        Cell::Text(v.method.as_str().into()),
    ];
    (j, cells)
}

fn run_pdf(a: &PdfArgs) -> Result<Outcome> {
    let mp = a.params.mean()?;
    let ctl = a.control()?;
    let pts = a.points.points("x")?;
    let zero_means = mp.base().mu_x() == 0.0 && mp.base().mu_y() == 0.0;
    if mp.n() > 1 && !zero_means {
        return Err(Error::CaseMismatch(
            "for n > 1 the density is available in closed form only when mu_x = mu_y = 0".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut table = Table::new(vec!["x", "log_pdf", "pdf", "terms_used", "converged", "method"]);
    for &x in &pts {
        let v = if mp.n() > 1 { pdf_mean_zero_means(&mp, x)? } else { pdf_product(mp.base(), x, &ctl)? };
        let (j, cells) = density_row(x, &v);
        rows.push(j);
        table.rows.push(cells);
    }
    Ok(Outcome { results: json!({ "rows": rows }), table })
}

fn run_cdf(a: &PdfArgs) -> Result<Outcome> {
    let mp = a.params.mean()?;
    if mp.n() != 1 {
        return Err(Error::CaseMismatch("cdf is available for n = 1".into()));
    }
    let ctl = a.control()?;
    let mut rows = Vec::new();
    let mut table = Table::new(vec!["x", "cdf"]);
    for x in a.points.points("x")? {
        let c = cdf_product(mp.base(), x, &ctl)?;
        rows.push(json!({ "x": x, "cdf": c }));
        table.rows.push(vec![Cell::Num(x), Cell::Num(c)]);
    }
    Ok(Outcome { results: json!({ "rows": rows }), table })
}

fn moment_table_out(t: &MomentTable) -> Outcome {
    let mut table = Table::new(vec!["k", "value"]);
    for (k, v) in t.values.iter().enumerate() {
        table.rows.push(vec![Cell::Int(k as i64), Cell::Num(*v)]);
    }
    Outcome { results: serde_json::to_value(t).expect("serializable"), table }
}

fn run_moments(a: &MomentsArgs) -> Result<Outcome> {
    if a.closed_form {
        let mp = a.params.mean()?;
        let cf = closed_form_four(&mp)?;
        let mut table = Table::new(vec!["quantity", "value"]);
        for k in 0..4 {
            table.rows.push(vec![Cell::Text(format!("raw_{}", k + 1)), Cell::Num(cf.raw[k])]);
        }
        for k in 0..4 {
            table.rows.push(vec![Cell::Text(format!("central_{}", k + 1)), Cell::Num(cf.central[k])]);
        }
        for (name, v) in [("variance", cf.variance), ("skewness", cf.skewness), ("kurtosis", cf.kurtosis)] {
            table.rows.push(vec![Cell::Text(name.into()), Cell::Num(v)]);
        }
        return Ok(Outcome { results: serde_json::to_value(cf).expect("serializable"), table });
    }
    if a.exact {
        let gp = a.params.exact()?;
        if a.equal_ratio {
            return Err(Error::InvalidArgument("--exact and --equal-ratio cannot be combined".into()));
        }
        let raw = raw_moments_exact(&gp, a.kmax);
        let vals = if a.central { central_from_raw(&raw) } else { raw };
        let mut table = Table::new(vec!["k", "value"]);
        for (k, v) in vals.iter().enumerate() {
            table.rows.push(vec![Cell::Int(k as i64), Cell::Text(rational_text(v))]);
        }
        let results = json!({
            "kind": if a.central { "central" } else { "raw" },
            "provenance": "recursion",
            "exact": true,
            "values": vals.iter().map(rational_json).collect::<Vec<_>>(),
        });
        return Ok(Outcome { results, table });
    }
    let mp = a.params.mean()?;
    let t = match (a.central, a.equal_ratio) {
        (false, false) => raw_moments(&mp, a.kmax),
        (true, false) => central_moments(&mp, a.kmax),
        (false, true) => raw_moments_equal_ratio(&mp, a.kmax)?,
        (true, true) => central_moments_equal_ratio(&mp, a.kmax)?,
    };
    Ok(moment_table_out(&t))
}

fn run_operator(a: &OperatorArgs) -> Result<Outcome> {
    let mp = a.params.mean()?;
    let kind = OperatorKind::parse(&a.which)?;
    let spec = operator(kind, &mp)?;
    let mut table = Table::new(vec!["j", "a0", "a1"]);
    let mut coeffs = Vec::new();
    for (j, &(a0, a1)) in spec.coeffs.iter().enumerate() {
        table.rows.push(vec![Cell::Int(j as i64), Cell::Num(a0), Cell::Num(a1)]);
        coeffs.push(json!({ "j": j, "a0": a0, "a1": a1 }));
    }
    let results = json!({
        "operator": kind.to_string(),
        "order": spec.order(),
        "case": classify(mp.base(), DEFAULT_RATIO_TOL),
        "coefficients": coeffs,
    });
    Ok(Outcome { results, table })
}

fn run_stein_apply(a: &SteinApplyArgs) -> Result<Outcome> {
    let mp = a.params.mean()?;
    let spec = operator(OperatorKind::parse(&a.which)?, &mp)?;
    let f = TestFunction::parse(&a.f)?;
    let mut table = Table::new(vec!["x", "value"]);
    let mut rows = Vec::new();
    for x in a.points.points("x")? {
        let v = apply(&spec, &f, x);
        rows.push(json!({ "x": x, "value": v }));
        table.rows.push(vec![Cell::Num(x), Cell::Num(v)]);
    }
    Ok(Outcome { results: json!({ "operator": spec.kind.to_string(), "f": f.label(), "rows": rows }), table })
}

fn sampler(seed: u64, count: usize, batch: Option<usize>) -> Result<SamplerConfig> {
    SamplerConfig::new(seed, count, batch.unwrap_or(DEFAULT_BATCH.min(count.max(1))))
}

fn run_stein_check(a: &SteinCheckArgs) -> Result<Outcome> {
    let mp = a.params.mean()?;
    let spec = operator(OperatorKind::parse(&a.which)?, &mp)?;
    let f = TestFunction::parse(&a.f)?;
    let cfg = sampler(a.seed, a.count, a.batch)?;
    let e = estimate_stein_expectation(&mp, &spec, &f, &cfg);
    let z = e.z_score(0.0);
    let mut table = Table::new(vec!["estimate", "stderr", "z_score", "count"]);
    table.rows.push(vec![Cell::Num(e.mean), Cell::Num(e.stderr), Cell::Num(z), Cell::Int(e.count as i64)]);
    let results = json!({
        "operator": spec.kind.to_string(),
        "f": f.label(),
        "integrability": f.integrability_note(),
        "estimate": e.mean,
        "stderr": e.stderr,
        "z_score": z,
        "count": e.count,
    });
    Ok(Outcome { results, table })
}

fn run_cf(a: &CfArgs) -> Result<Outcome> {
    let mp = a.params.mean()?;
    let mut ts = a.t.clone();
    if let Some(g) = &a.grid {
        ts.extend(parse_grid(g)?);
    }
    if ts.is_empty() && a.moments.is_none() {
        return Err(Error::InvalidArgument("no t values given; use --t or --grid".into()));
    }
    let mut cols = vec!["t", "re", "im", "abs"];
    if a.check_ode {
        cols.push("ode_residual");
    }
    let mut table = Table::new(cols);
    let mut rows = Vec::new();
    for &t in &ts {
        let phi = cf_mean(&mp, t);
        let mut j = json!({ "t": t, "re": phi.re, "im": phi.im, "abs": phi.norm() });
        let mut cells = vec![Cell::Num(t), Cell::Num(phi.re), Cell::Num(phi.im), Cell::Num(phi.norm())];
        if a.check_ode {
            let r = cf_ode_residual(&mp, t, cf_mean_derivative(&mp, t))?;
            j["ode_residual"] = json!(r);
            cells.push(Cell::Num(r));
        }
        rows.push(j);
        table.rows.push(cells);
    }
    let mut results = json!({ "rows": rows });
    if let Some(k) = a.moments {
        let m = moments_from_cf(&mp, k);
        if ts.is_empty() {
            table = Table::new(vec!["k", "moment"]);
            for (i, v) in m.iter().enumerate() {
                table.rows.push(vec![Cell::Int(i as i64), Cell::Num(*v)]);
            }
        }
        results["moments"] = json!(m);
    }
    Ok(Outcome { results, table })
}

fn run_ode_check(a: &OdeCheckArgs) -> Result<Outcome> {
    let mp = a.params.mean()?;
    let p = *mp.base();
    let zero_means = p.mu_x() == 0.0 && p.mu_y() == 0.0;
    if !zero_means && mp.n() != 1 {
        return Err(Error::CaseMismatch(
            "general-case density is available for n = 1; zero means allow any n".into(),
        ));
    }
    let mut table = Table::new(vec!["x", "residual", "derivatives"]);
    let mut rows = Vec::new();
    for x in a.points.points("x")? {
        let (derivs, how) = if zero_means {
            (zero_means_pdf_derivatives(&mp, x)?, "analytic")
        } else {
            let h = a.step.unwrap_or_else(|| default_fd_step(x));
            let ctl = SeriesControl::default();
            let d = finite_difference_derivatives(|y| Ok(pdf_product(&p, y, &ctl)?.value()), x, h)?;
            (d, "finite_difference")
        };
        let r = ode_residual_density(&mp, x, &derivs)?;
        rows.push(json!({ "x": x, "residual": r, "derivatives": how }));
        table.rows.push(vec![Cell::Num(x), Cell::Num(r), Cell::Text(how.into())]);
    }
    Ok(Outcome { results: json!({ "rows": rows }), table })
}

fn run_opsearch(a: &OpsearchArgs) -> Result<Outcome> {
    let gp = a.params.exact()?;
    let unknowns = 2 * (a.order + 1);
    let rows = a.rows.unwrap_or(if a.det { unknowns } else { crate::opsearch::default_rows(a.order) });
    let res = operator_exists(&gp, a.order, rows)?;
    let mut results = json!({
        "order": a.order,
        "rows": rows,
        "unknowns": (0..unknowns).map(unknown_label).collect::<Vec<_>>(),
        "rank": res.rank,
        "exists": res.exists,
        "nullspace_basis": res.nullspace_basis.iter()
            .map(|v| v.iter().map(rational_json).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    });
    let mut table = Table::new(vec!["quantity", "value"]);
    table.rows.push(vec![Cell::Text("exists".into()), Cell::Bool(res.exists)]);
    table.rows.push(vec![Cell::Text("rank".into()), Cell::Int(res.rank as i64)]);
    let sys = if a.det || a.print_system { Some(moment_system(&gp, a.order, rows)?) } else { None };
    if a.det {
        let d = determinant_exact(sys.as_ref().expect("built above"))?;
        results["determinant"] = rational_json(&d);
        table.rows.push(vec![Cell::Text("determinant".into()), Cell::Text(rational_text(&d))]);
    }
    if a.print_system {
        let s = sys.as_ref().expect("built above");
        results["system"] = json!(s.iter().map(|r| r.iter().map(rational_json).collect::<Vec<_>>()).collect::<Vec<_>>());
        for (k, r) in s.iter().enumerate() {
            let eq = r
                .iter()
                .enumerate()
                .filter(|(_, v)| !num_traits::Zero::is_zero(*v))
                .map(|(c, v)| format!("{} {}", rational_text(v), unknown_label(c)))
                .collect::<Vec<_>>()
                .join(" + ");
            table.rows.push(vec![Cell::Text(format!("E[A x^{k}]")), Cell::Text(format!("{eq} = 0"))]);
        }
    }
    for (i, v) in res.nullspace_basis.iter().enumerate() {
        let txt = v.iter().map(rational_text).collect::<Vec<_>>().join(" ");
        table.rows.push(vec![Cell::Text(format!("basis_{i}")), Cell::Text(txt)]);
    }
    Ok(Outcome { results, table })
}

fn run_sample(a: &SampleArgs) -> Result<Outcome> {
    let mp = a.params.mean()?;
    let cfg = sampler(a.seed, a.count, a.batch)?;
    let xs = sample_mean_of_products(&mp, &cfg);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let mut table = Table::new(vec!["i", "value"]);
    let mut results = json!({ "count": xs.len(), "mean": mean, "variance": var, "stderr": (var / n).sqrt() });
    for (i, x) in xs.iter().enumerate() {
        table.rows.push(vec![Cell::Int(i as i64), Cell::Num(*x)]);
    }
    if let Some(path) = &a.out_file {
        std::fs::write(path, table.csv()).map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", path.display())))?;
        results["out_file"] = json!(path.display().to_string());
        table = Table::new(vec!["count", "mean", "variance"]);
        table.rows.push(vec![Cell::Int(xs.len() as i64), Cell::Num(mean), Cell::Num(var)]);
    } else {
        results["samples"] = json!(xs);
    }
    Ok(Outcome { results, table })
}

fn run_besselk(a: &BesselArgs) -> Result<Outcome> {
    let order = BesselOrder::from_f64(a.nu)?;
    let mut table = Table::new(vec!["x", "value", "log_value"]);
    let mut rows = Vec::new();
    for x in a.points.points("x")? {
        let lnk = ln_bessel_k(order, x)? + if a.scaled { x } else { 0.0 };
        // Report the log even where the value itself overflows.
        let v = match bessel_k(order, x, a.scaled) {
            Ok(v) => v,
            Err(Error::Overflow { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        rows.push(json!({ "x": x, "value": if v.is_finite() { json!(v) } else { json!("inf") }, "log_value": lnk }));
        table.rows.push(vec![Cell::Num(x), Cell::Num(v), Cell::Num(lnk)]);
    }
    Ok(Outcome { results: json!({ "nu": order.nu(), "scaled": a.scaled, "rows": rows }), table })
}

fn output_args(c: &Command) -> OutputArgs {
    match c {
        Command::Pdf(a) | Command::Cdf(a) => a.out,
        Command::Moments(a) => a.out,
        Command::Operator(a) => a.out,
        Command::SteinApply(a) => a.out,
        Command::SteinCheck(a) => a.out,
        Command::Cf(a) => a.out,
        Command::OdeCheck(a) => a.out,
        Command::Opsearch(a) => a.out,
        Command::Sample(a) => a.out,
        Command::Besselk(a) => a.out,
    }
}

fn run(c: &Command) -> Result<Outcome> {
    match c {
        Command::Pdf(a) => run_pdf(a),
        Command::Cdf(a) => run_cdf(a),
        Command::Moments(a) => run_moments(a),
        Command::Operator(a) => run_operator(a),
        Command::SteinApply(a) => run_stein_apply(a),
        Command::SteinCheck(a) => run_stein_check(a),
        Command::Cf(a) => run_cf(a),
        Command::OdeCheck(a) => run_ode_check(a),
        Command::Opsearch(a) => run_opsearch(a),
        Command::Sample(a) => run_sample(a),
        Command::Besselk(a) => run_besselk(a),
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
        _ => EXIT_INVALID,
    }
}

/// Parameters echoed in the envelope: everything except output flags.
fn params_echo(c: &Command) -> Value {
    let mut v = serde_json::to_value(c).expect("serializable");
    if let Value::Object(m) = &mut v {
        m.remove("out");
    }
    v
}

/// Parse `argv` (program name first), run the subcommand and return the
/// exit code and the text to print. On failure the text is the error
/// message.
pub fn dispatch<I, T>(argv: I) -> (i32, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::InvalidSubcommand
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
                | ErrorKind::MissingSubcommand => EXIT_USAGE,
                _ => EXIT_INVALID,
            };
            return (code, e.render().to_string());
        }
    };
    let start = Instant::now();
    let outcome = match run(&cli.command) {
        Ok(o) => o,
        Err(e) => return (exit_code(&e), format!("error: {e}\n")),
    };
    let out = output_args(&cli.command);
    let text = if out.json {
        let env = json!({
            "schema_version": SCHEMA_VERSION,
            "command": cli.command.name(),
            "params_echo": params_echo(&cli.command),
            "results": outcome.results,
            "timing_ms": start.elapsed().as_millis() as u64,
        });
        let mut s = serde_json::to_string_pretty(&env).expect("serializable");
        s.push('\n');
        s
    } else if out.csv {
        outcome.table.csv()
    } else {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", cli.command.name());
        s.push_str(&outcome.table.aligned());
        s
    };
    (EXIT_OK, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &str) -> (i32, String) {
        dispatch(std::iter::once("prodnorm").chain(args.split_whitespace()))
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("-2:2:1").unwrap(), vec![-2.0]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(f64::NEG_INFINITY), "-inf");
        assert_eq!(Cell::Text("a,b".into()).csv(), "\"a,b\"");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_args("frobnicate").0, EXIT_USAGE);
        assert_eq!(run_args("").0, EXIT_USAGE);
        assert_eq!(run_args("--help").0, EXIT_OK);
        assert_eq!(run_args("moments --kmax x").0, EXIT_INVALID);
        assert_eq!(run_args("pdf --x 0 --mu-x 1").0, EXIT_INVALID);
        assert_eq!(run_args("operator --which a5 --mu-x 1").0, EXIT_INVALID);
        assert_eq!(run_args("pdf --x 1 --mu-x 3 --mu-y -3 --sigma-x 0.5 --sigma-y 0.5 --rho 0.9 --max-outer 5 --series-only").0, EXIT_NOT_CONVERGED);
    }

    #[test]
    fn negative_values_parse() {
        let (code, out) = run_args("moments --mu-x -1 --mu-y 2 --rho -0.5 --kmax 1 --csv");
        assert_eq!(code, 0, "{out}");
        // mu_x mu_y + rho sigma_x sigma_y = -2.5
        assert!(out.contains("-2.5"), "{out}");
    }
}
