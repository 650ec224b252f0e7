//! Stein operators with linear coefficients for the mean of `n` copies of
//! `Z = XY`, stored as coefficient tables, together with test functions
//! and the substitution identities that relate the operators.
//!
//! An operator of order `m` is `A f(x) = sum_{j=0}^{m} (a_{0,j} + a_{1,j} x) f^{(j)}(x)`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::density::finite_difference_derivatives;
use crate::error::{Error, Result};
use crate::params::{MeanParams, DEFAULT_RATIO_TOL};
use crate::scalar::Field;

/// The seven operators: `A1` (general, order 4), `A2` (equal ratios,
/// order 3), `A3` (zero means, order 4), `A4` (zero means, order 2), and
/// the classical special cases `A5`, `A6`, `A7`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum OperatorKind {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    A7,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 7] = [
        OperatorKind::A1,
        OperatorKind::A2,
        OperatorKind::A3,
        OperatorKind::A4,
        OperatorKind::A5,
        OperatorKind::A6,
        OperatorKind::A7,
    ];

    pub fn order(self) -> usize {
        match self {
            OperatorKind::A1 | OperatorKind::A3 | OperatorKind::A6 => 4,
            OperatorKind::A2 | OperatorKind::A7 => 3,
            OperatorKind::A4 | OperatorKind::A5 => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(OperatorKind::A1),
            "a2" => Ok(OperatorKind::A2),
            "a3" => Ok(OperatorKind::A3),
            "a4" => Ok(OperatorKind::A4),
            "a5" => Ok(OperatorKind::A5),
            "a6" => Ok(OperatorKind::A6),
            "a7" => Ok(OperatorKind::A7),
            _ => Err(Error::InvalidArgument(format!("unknown operator {s:?}"))),
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Parameters in an arbitrary number system.
#[derive(Clone, Debug, PartialEq)]
pub struct GenericParams<T> {
    pub mu_x: T,
    pub mu_y: T,
    pub sigma_x: T,
    pub sigma_y: T,
    pub rho: T,
    pub n: u64,
}

impl<T> GenericParams<T> {
    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> GenericParams<U> {
        GenericParams {
            mu_x: f(&self.mu_x),
            mu_y: f(&self.mu_y),
            sigma_x: f(&self.sigma_x),
            sigma_y: f(&self.sigma_y),
            rho: f(&self.rho),
            n: self.n,
        }
    }
}

impl GenericParams<f64> {
    pub fn from_mean(mp: &MeanParams) -> Self {
        let p = mp.base();
        GenericParams {
            mu_x: p.mu_x(),
            mu_y: p.mu_y(),
            sigma_x: p.sigma_x(),
            sigma_y: p.sigma_y(),
            rho: p.rho(),
            n: mp.n(),
        }
    }
}

/// Coefficient table `coeffs[j] = (a_{0,j}, a_{1,j})`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SteinOperatorSpec<T = f64> {
    pub kind: OperatorKind,
    pub coeffs: Vec<(T, T)>,
}

impl<T> SteinOperatorSpec<T> {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }
}

impl SteinOperatorSpec<f64> {
    /// Flattened `(a_{0,0}, a_{1,0}, a_{0,1}, a_{1,1}, ...)`.
    pub fn flat(&self) -> Vec<f64> {
        self.coeffs.iter().flat_map(|&(a, b)| [a, b]).collect()
    }
}

/// Build the coefficient table without checking that the parameters are in
/// the operator's case. Works in any [`Field`], which lets the exact search
/// reuse the same formulas over rationals.
pub fn coefficients<T: Field>(kind: OperatorKind, gp: &GenericParams<T>) -> Vec<(T, T)> {
    let c = |v: i64| T::from_i64(v);
    let nn = c(gp.n as i64);
    let rho = gp.rho.clone();
    let sn = gp.sigma_x.clone() * gp.sigma_y.clone() / nn.clone();
    let omr = c(1) - rho.clone() * rho.clone();
    let rx = gp.mu_x.clone() / gp.sigma_x.clone();
    let ry = gp.mu_y.clone() / gp.sigma_y.clone();
    let mxy = gp.mu_x.clone() * gp.mu_y.clone();
    let sn2 = sn.clone() * sn.clone();
    let sn3 = sn2.clone() * sn.clone();
    let sn4 = sn2.clone() * sn2.clone();
    let rho2 = rho.clone() * rho.clone();
    match kind {
        OperatorKind::A1 | OperatorKind::A3 => {
            let (rx, ry, mxy) = if kind == OperatorKind::A3 {
                (c(0), c(0), c(0))
            } else {
                (rx, ry, mxy)
            };
            let rr = rx.clone() * ry.clone();
            let sq = rx.clone() * rx + ry.clone() * ry;
            vec![
                (-mxy - nn.clone() * sn.clone() * rho.clone(), c(1)),
                (
                    sn2.clone()
                        * nn.clone()
                        * (c(2) * rho.clone() * rr.clone() - sq.clone() + c(3) * rho2.clone() - c(1)),
                    -c(4) * rho.clone() * sn.clone(),
                ),
                (
                    sn3.clone()
                        * nn.clone()
                        * (rho.clone() * sq - (c(1) + rho2.clone()) * rr
                            + c(3) * rho.clone() * omr.clone()),
                    sn2 * (c(6) * rho2 - c(2)),
                ),
                (
                    sn4.clone() * nn * omr.clone() * omr.clone(),
                    c(4) * rho * sn3 * omr.clone(),
                ),
                (c(0), sn4 * omr.clone() * omr),
            ]
        }
        OperatorKind::A2 => {
            let rr = rx * ry;
            let one_p = c(1) + rho.clone();
            vec![
                (-nn.clone() * sn.clone() * rho.clone() - mxy, c(1)),
                (
                    sn2.clone()
                        * nn.clone()
                        * (c(2) * rho2 + rho.clone() - c(1) - (c(1) - rho.clone()) * rr),
                    -sn.clone() * (c(3) * rho.clone() + c(1)),
                ),
                (
                    sn3.clone() * one_p.clone() * nn * omr.clone(),
                    sn2 * one_p.clone() * (c(3) * rho - c(1)),
                ),
                (c(0), sn3 * omr * one_p),
            ]
        }
        OperatorKind::A4 => vec![
            (nn.clone() * sn.clone() * rho.clone(), -c(1)),
            (nn * sn2.clone() * omr.clone(), c(2) * rho * sn),
            (c(0), sn2 * omr),
        ],
        OperatorKind::A5 => {
            let s2 = gp.sigma_x.clone() * gp.sigma_x.clone() * gp.sigma_y.clone() * gp.sigma_y.clone();
            vec![(c(0), -c(1)), (s2.clone(), c(0)), (c(0), s2)]
        }
        OperatorKind::A6 => {
            let mx2 = gp.mu_x.clone() * gp.mu_x.clone();
            let my2 = gp.mu_y.clone() * gp.mu_y.clone();
            vec![
                (-mxy.clone(), c(1)),
                (-(mx2 + my2 + c(1)), c(0)),
                (-mxy, -c(2)),
                (c(1), c(0)),
                (c(0), c(1)),
            ]
        }
        OperatorKind::A7 => {
            let mu2 = gp.mu_x.clone() * gp.mu_x.clone();
            vec![(-mu2.clone(), c(1)), (-(c(1) + mu2), -c(1)), (c(1), -c(1)), (c(0), c(1))]
        }
    }
}

fn equal_ratio(mp: &MeanParams) -> bool {
    let p = mp.base();
    let (rx, ry) = (p.r_x(), p.r_y());
    (rx - ry).abs() <= DEFAULT_RATIO_TOL * rx.abs().max(ry.abs())
}

/// Check that the parameters satisfy the assumptions of `kind`.
pub fn check_case(kind: OperatorKind, mp: &MeanParams) -> Result<()> {
    let p = mp.base();
    let zero_means = p.mu_x() == 0.0 && p.mu_y() == 0.0;
    let unit = p.sigma_x() == 1.0 && p.sigma_y() == 1.0;
    let n1_rho0 = mp.n() == 1 && p.rho() == 0.0;
    let (ok, need) = match kind {
        OperatorKind::A1 => (true, ""),
        OperatorKind::A2 => (equal_ratio(mp), "mu_x/sigma_x = mu_y/sigma_y"),
        OperatorKind::A3 | OperatorKind::A4 => (zero_means, "mu_x = mu_y = 0"),
        OperatorKind::A5 => (zero_means && n1_rho0, "mu_x = mu_y = 0, n = 1, rho = 0"),
        OperatorKind::A6 => (unit && n1_rho0, "sigma_x = sigma_y = 1, n = 1, rho = 0"),
        OperatorKind::A7 => (
            unit && n1_rho0 && p.mu_x() == p.mu_y(),
            "sigma_x = sigma_y = 1, n = 1, rho = 0, mu_x = mu_y",
        ),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::CaseMismatch(format!("operator {kind} requires {need}")))
    }
}

/// Any of the seven operators, after checking its case.
pub fn operator(kind: OperatorKind, mp: &MeanParams) -> Result<SteinOperatorSpec> {
    check_case(kind, mp)?;
    Ok(SteinOperatorSpec { kind, coeffs: coefficients(kind, &GenericParams::from_mean(mp)) })
}

/// The general fourth-order operator.
pub fn operator_a1(mp: &MeanParams) -> SteinOperatorSpec {
    SteinOperatorSpec {
        kind: OperatorKind::A1,
        coeffs: coefficients(OperatorKind::A1, &GenericParams::from_mean(mp)),
    }
}

/// The third-order operator for equal mean-to-sd ratios.
pub fn operator_a2(mp: &MeanParams) -> Result<SteinOperatorSpec> {
    operator(OperatorKind::A2, mp)
}

/// One of the special-case operators `A3..A7`.
pub fn operator_special(kind: OperatorKind, mp: &MeanParams) -> Result<SteinOperatorSpec> {
    if matches!(kind, OperatorKind::A1 | OperatorKind::A2) {
        return Err(Error::InvalidArgument(format!("{kind} is not a special-case operator")));
    }
    operator(kind, mp)
}

/// `sum_j (a_{0,j} + a_{1,j} x) f^{(j)}(x)` given the derivatives.
pub fn apply_derivs(spec: &SteinOperatorSpec, derivs: &[f64; 5], x: f64) -> f64 {
    spec.coeffs.iter().zip(derivs).map(|(&(a0, a1), &d)| (a0 + a1 * x) * d).sum()
}

/// Apply an operator to a test function at `x`.
pub fn apply(spec: &SteinOperatorSpec, f: &TestFunction, x: f64) -> f64 {
    apply_derivs(spec, &f.derivs(x), x)
}

/// Result of comparing the two sides of a substitution identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityResidual {
    /// Higher-order operator applied to `f`.
    pub lhs: f64,
    /// Lower-order operator applied to the substituted `g`.
    pub rhs: f64,
    pub abs: f64,
    /// `abs` divided by the largest single term on either side.
    pub rel: f64,
}

fn residual(big: &SteinOperatorSpec, fd: &[f64; 5], small: &SteinOperatorSpec, gd: &[f64; 5], x: f64) -> IdentityResidual {
    let lhs = apply_derivs(big, fd, x);
    let rhs = apply_derivs(small, gd, x);
    let scale = big
        .coeffs
        .iter()
        .zip(fd)
        .chain(small.coeffs.iter().zip(gd))
        .map(|(&(a0, a1), &d)| ((a0 + a1 * x) * d).abs())
        .fold(0.0f64, f64::max);
    let abs = (lhs - rhs).abs();
    IdentityResidual { lhs, rhs, abs, rel: if scale == 0.0 { 0.0 } else { abs / scale } }
}

/// `A1 f` against `A2 g` with `g = (1 - rho) s_n f' + f`, for equal ratios.
pub fn substitution_identity_a1_a2(mp: &MeanParams, f: &TestFunction, x: f64) -> Result<IdentityResidual> {
    let a2 = operator_a2(mp)?;
    let a1 = operator_a1(mp);
    let d = f.derivs(x);
    let k = (1.0 - mp.base().rho()) * mp.s_n();
    let mut g = [0.0; 5];
    for j in 0..4 {
        g[j] = k * d[j + 1] + d[j];
    }
    Ok(residual(&a1, &d, &a2, &g, x))
}

/// `A3 f` against `A4 g` with `g = (1 - rho^2) s_n^2 f'' + 2 rho s_n f' - f`,
/// for zero means.
pub fn substitution_identity_a3_a4(mp: &MeanParams, f: &TestFunction, x: f64) -> Result<IdentityResidual> {
    let a3 = operator(OperatorKind::A3, mp)?;
    let a4 = operator(OperatorKind::A4, mp)?;
    let d = f.derivs(x);
    let p = mp.base();
    let sn = mp.s_n();
    let (k2, k1) = (p.one_minus_rho_sq() * sn * sn, 2.0 * p.rho() * sn);
    let mut g = [0.0; 5];
    for j in 0..3 {
        g[j] = k2 * d[j + 2] + k1 * d[j + 1] - d[j];
    }
    Ok(residual(&a3, &d, &a4, &g, x))
}

/// A function together with its first four derivatives.
#[derive(Clone)]
pub enum TestFunction {
    /// `sum_i c_i x^i`.
    Poly(Vec<f64>),
    /// `exp(a x)`.
    Exp(f64),
    /// `sin(t x)`.
    Sin(f64),
    /// `cos(t x)`.
    Cos(f64),
    /// `exp(-c x^2) P(x)` with `P` given by its coefficients.
    GaussPoly { c: f64, poly: Vec<f64> },
    /// Arbitrary function, differentiated numerically with step `h`.
    Numeric { f: Arc<dyn Fn(f64) -> f64 + Send + Sync>, h: f64, label: String },
    /// Linear combination.
    Sum(Vec<(f64, TestFunction)>),
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &ci)| i as f64 * ci).collect()
}

impl TestFunction {
    pub fn monomial(k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        TestFunction::Poly(c)
    }

    /// Wrap a plain function; derivatives come from finite differences.
    pub fn numeric<F>(f: F, h: f64, label: &str) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TestFunction::Numeric { f: Arc::new(f), h, label: label.to_string() }
    }

    /// Parse `poly:K` (x^K), `exp:A`, `sin:T`, `cos:T`, `gauss:C`
    /// (exp(-C x^2)) or `gausspoly:C:K` (exp(-C x^2) x^K).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse test function {s:?}"));
        let mut parts = s.split(':');
        let head = parts.next().ok_or_else(bad)?;
        let num = |p: Option<&str>| -> Result<f64> { p.ok_or_else(bad)?.parse::<f64>().map_err(|_| bad()) };
        let int = |p: Option<&str>| -> Result<usize> { p.ok_or_else(bad)?.parse::<usize>().map_err(|_| bad()) };
        let out = match head {
            "poly" => TestFunction::monomial(int(parts.next())?),
            "exp" => TestFunction::Exp(num(parts.next())?),
            "sin" => TestFunction::Sin(num(parts.next())?),
            "cos" => TestFunction::Cos(num(parts.next())?),
            "gauss" => TestFunction::GaussPoly { c: num(parts.next())?, poly: vec![1.0] },
            "gausspoly" => {
                let c = num(parts.next())?;
                let k = int(parts.next())?;
                let mut poly = vec![0.0; k + 1];
                poly[k] = 1.0;
                TestFunction::GaussPoly { c, poly }
            }
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(out)
    }

    /// `[f, f', f'', f''', f'''']` at `x`.
    pub fn derivs(&self, x: f64) -> [f64; 5] {
        let mut out = [0.0; 5];
        match self {
            TestFunction::Poly(c) => {
                let mut c = c.clone();
                for o in out.iter_mut() {
                    *o = poly_eval(&c, x);
                    c = poly_deriv(&c);
                }
            }
            TestFunction::Exp(a) => {
                let e = (a * x).exp();
                let mut ak = 1.0;
                for o in out.iter_mut() {
                    *o = ak * e;
                    ak *= a;
                }
            }
            TestFunction::Sin(t) | TestFunction::Cos(t) => {
                let (s, c) = (t * x).sin_cos();
                // sin -> t cos -> -t^2 sin -> -t^3 cos -> t^4 sin
                let cycle = if matches!(self, TestFunction::Sin(_)) { [s, c, -s, -c] } else { [c, -s, -c, s] };
                let mut tk = 1.0;
                for (k, o) in out.iter_mut().enumerate() {
                    *o = tk * cycle[k % 4];
                    tk *= t;
                }
            }
            TestFunction::GaussPoly { c, poly } => {
                let e = (-c * x * x).exp();
                let mut p = poly.clone();
                for o in out.iter_mut() {
                    *o = e * poly_eval(&p, x);
                    // d/dx [e^{-c x^2} P] = e^{-c x^2} (P' - 2 c x P)
                    let mut next = poly_deriv(&p);
                    next.resize(p.len() + 1, 0.0);
                    for (i, &pi) in p.iter().enumerate() {
                        next[i + 1] -= 2.0 * c * pi;
                    }
                    p = next;
                }
            }
            TestFunction::Numeric { f, h, .. } => {
                let g = |y: f64| Ok(f(y));
                out = finite_difference_derivatives(g, x, *h).expect("infallible closure");
            }
            TestFunction::Sum(parts) => {
                for (w, tf) in parts {
                    let d = tf.derivs(x);
                    for k in 0..5 {
                        out[k] += w * d[k];
                    }
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Poly(c) => {
                let nz: Vec<usize> = (0..c.len()).filter(|&i| c[i] != 0.0).collect();
                if nz.len() == 1 && c[nz[0]] == 1.0 {
                    format!("x^{}", nz[0])
                } else {
                    format!("poly{c:?}")
                }
            }
            TestFunction::Exp(a) => format!("exp({a} x)"),
            TestFunction::Sin(t) => format!("sin({t} x)"),
            TestFunction::Cos(t) => format!("cos({t} x)"),
            TestFunction::GaussPoly { c, poly } => format!("exp(-{c} x^2) * poly{poly:?}"),
            TestFunction::Numeric { label, .. } => label.clone(),
            TestFunction::Sum(parts) => parts
                .iter()
                .map(|(w, f)| format!("{w} * {}", f.label()))
                .collect::<Vec<_>>()
                .join(" + "),
        }
    }

    /// What the caller must make sure of for `E[A f(Zbar_n)]` to exist.
    pub fn integrability_note(&self) -> &'static str {
        match self {
            TestFunction::Poly(_) | TestFunction::Sin(_) | TestFunction::Cos(_) | TestFunction::GaussPoly { .. } => {
                "all derivatives grow at most polynomially; every moment of Zbar_n is finite"
            }
            TestFunction::Exp(_) => {
                "finite only while |a| stays inside the moment generating function's domain"
            }
            TestFunction::Numeric { .. } | TestFunction::Sum(_) => {
                "caller must ensure f is C^4 with E|x^i f^(j)(Zbar_n)| finite for i <= 1, j <= 4"
            }
        }
    }

    /// Compare the supplied `f'` with a central difference of `f` at the
    /// probe points. Returns the worst discrepancy, relative once the
    /// values exceed one.
    pub fn consistency_error(&self, probes: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for &x in probes {
            let h = 1e-5 * (1.0 + x.abs());
            let fd = (self.derivs(x + h)[0] - self.derivs(x - h)[0]) / (2.0 * h);
            let an = self.derivs(x)[1];
            let scale = an.abs().max(self.derivs(x)[0].abs()).max(1.0);
            worst = worst.max((fd - an).abs() / scale);
        }
        worst
    }
}
