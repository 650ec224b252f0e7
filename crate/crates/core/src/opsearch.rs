//! Exact search for linear-coefficient Stein operators of a given order.
//!
//! An ansatz `A f = sum_j (a_{0,j} + a_{1,j} x) f^{(j)}` must satisfy
//! `E[A x^k] = 0` for every monomial. Each `k` gives one linear equation in
//! the unknowns whose coefficients are raw moments, computed exactly from the
//! raw-moment recursion over the rationals. Unknowns are ordered
//! `a_{0,0}, a_{1,0}, a_{0,1}, a_{1,1}, ...`.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::moments::raw_moments_exact;
use crate::params::MeanParams;
use crate::stein::{coefficients, GenericParams, OperatorKind};

pub type Matrix = Vec<Vec<BigRational>>;

/// Rational parameters for exact work.
pub type ExactParams = GenericParams<BigRational>;

/// Parse `"3"`, `"-0.125"`, `"1.5e-3"` or `"2/7"` exactly.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let bad = || Error::ParameterNotRational(s.to_string());
    let t = s.trim();
    if let Some((a, b)) = t.split_once('/') {
        let num: BigInt = a.trim().parse().map_err(|_| bad())?;
        let den: BigInt = b.trim().parse().map_err(|_| bad())?;
        if den.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(num, den));
    }
    let (mant, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut v = BigRational::from_integer(digits);
    if scale >= 0 {
        v *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        v /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if neg { -v } else { v })
}

/// Exact parameters from strings, validated like their floating counterparts.
pub fn exact_params(mu_x: &str, mu_y: &str, sigma_x: &str, sigma_y: &str, rho: &str, n: u64) -> Result<ExactParams> {
    let gp = GenericParams {
        mu_x: parse_rational(mu_x)?,
        mu_y: parse_rational(mu_y)?,
        sigma_x: parse_rational(sigma_x)?,
        sigma_y: parse_rational(sigma_y)?,
        rho: parse_rational(rho)?,
        n,
    };
    validate(&gp)?;
    Ok(gp)
}

fn validate(gp: &ExactParams) -> Result<()> {
    let f = |v: &BigRational| crate::scalar::rational_to_f64(v);
    if !gp.sigma_x.is_positive() {
        return Err(Error::NonPositiveSigma { which: "sigma_x", value: f(&gp.sigma_x) });
    }
    if !gp.sigma_y.is_positive() {
        return Err(Error::NonPositiveSigma { which: "sigma_y", value: f(&gp.sigma_y) });
    }
    if gp.rho.abs() >= BigRational::one() {
        return Err(Error::CorrelationOutOfRange(f(&gp.rho)));
    }
    if gp.n == 0 {
        return Err(Error::InvalidCopyCount(0));
    }
    Ok(())
}

/// Exact parameters from floating ones, reading each value as the shortest
/// decimal that round-trips (so `0.1` becomes `1/10`).
pub fn exact_from_mean(mp: &MeanParams) -> Result<ExactParams> {
    let p = mp.base();
    let conv = |v: f64| {
        if v.is_finite() {
            parse_rational(&format!("{v:e}"))
        } else {
            Err(Error::ParameterNotRational(v.to_string()))
        }
    };
    Ok(GenericParams {
        mu_x: conv(p.mu_x())?,
        mu_y: conv(p.mu_y())?,
        sigma_x: conv(p.sigma_x())?,
        sigma_y: conv(p.sigma_y())?,
        rho: conv(p.rho())?,
        n: mp.n(),
    })
}

/// Default number of monomial equations: the number of unknowns plus four.
pub fn default_rows(order: usize) -> usize {
    2 * (order + 1) + 4
}

/// Rows `k = 0..rows` of the linear system `E[A x^k] = 0`.
pub fn moment_system(gp: &ExactParams, order: usize, rows: usize) -> Result<Matrix> {
    validate(gp)?;
    let mu = raw_moments_exact(gp, rows);
    let mut out = Vec::with_capacity(rows);
    for k in 0..rows {
        let mut row = vec![BigRational::zero(); 2 * (order + 1)];
        // k! / (k - j)!
        let mut falling = BigRational::one();
        for j in 0..=order.min(k) {
            row[2 * j] = falling.clone() * mu[k - j].clone();
            row[2 * j + 1] = falling.clone() * mu[k - j + 1].clone();
            falling *= BigRational::from_integer(BigInt::from(k - j));
        }
        out.push(row);
    }
    Ok(out)
}

/// Exact determinant by fraction-free (Bareiss) elimination.
pub fn determinant_exact(m: &Matrix) -> Result<BigRational> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return Err(Error::NotSquare { rows: n, cols: m.first().map_or(0, |r| r.len()) });
    }
    if n == 0 {
        return Ok(BigRational::one());
    }
    // Clear denominators row by row.
    let mut scale = BigInt::one();
    let mut a: Vec<Vec<BigInt>> = m
        .iter()
        .map(|row| {
            let l = row.iter().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()));
            scale *= &l;
            row.iter().map(|v| v.numer() * (&l / v.denom())).collect()
        })
        .collect();
    let mut sign = 1;
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if a[k][k].is_zero() {
            match (k + 1..n).find(|&i| !a[i][k].is_zero()) {
                Some(i) => {
                    a.swap(k, i);
                    sign = -sign;
                }
                None => return Ok(BigRational::zero()),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = &a[i][j] * &a[k][k] - &a[i][k] * &a[k][j];
                a[i][j] = v / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    let det = BigRational::new(a[n - 1][n - 1].clone() * sign, scale);
    Ok(det)
}

/// Reduced row echelon form; returns the pivot columns.
fn rref(m: &mut Matrix) -> Vec<usize> {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else { continue };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for v in m[r].iter_mut() {
            *v *= &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in 0..cols {
                    let d = &f * &m[r][j];
                    m[i][j] -= d;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// Basis of the right nullspace, one vector per free column.
pub fn nullspace(m: &Matrix) -> Vec<Vec<BigRational>> {
    let cols = m.first().map_or(0, |r| r.len());
    let mut a = m.clone();
    let pivots = rref(&mut a);
    let mut basis = Vec::new();
    for free in (0..cols).filter(|c| !pivots.contains(c)) {
        let mut v = vec![BigRational::zero(); cols];
        v[free] = BigRational::one();
        for (r, &pc) in pivots.iter().enumerate() {
            v[pc] = -a[r][free].clone();
        }
        basis.push(v);
    }
    basis
}

pub fn rank(m: &Matrix) -> usize {
    let mut a = m.clone();
    rref(&mut a).len()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchResult {
    pub order: usize,
    pub rows: usize,
    pub rank: usize,
    pub exists: bool,
    /// Each vector lists `a_{0,0}, a_{1,0}, a_{0,1}, ...`.
    #[serde(skip)]
    pub nullspace_basis: Vec<Vec<BigRational>>,
}

/// Whether any nonzero operator of this order survives the first `rows`
/// monomial equations. A surviving operator is a candidate only.
pub fn operator_exists(gp: &ExactParams, order: usize, rows: usize) -> Result<SearchResult> {
    if rows < 2 * (order + 1) {
        return Err(Error::InvalidArgument(format!(
            "need at least {} equations for order {order}, got {rows}",
            2 * (order + 1)
        )));
    }
    let sys = moment_system(gp, order, rows)?;
    let basis = nullspace(&sys);
    Ok(SearchResult { order, rows, rank: 2 * (order + 1) - basis.len(), exists: !basis.is_empty(), nullspace_basis: basis })
}

/// Coefficient vector of one of the known operators, in unknown order.
pub fn operator_vector(kind: OperatorKind, gp: &ExactParams) -> Vec<BigRational> {
    coefficients(kind, gp).into_iter().flat_map(|(a, b)| [a, b]).collect()
}

/// Whether `v` lies in the span of `basis`.
pub fn in_span(basis: &[Vec<BigRational>], v: &[BigRational]) -> bool {
    let mut m: Matrix = basis.to_vec();
    let r0 = rank(&m);
    m.push(v.to_vec());
    rank(&m) == r0
}

/// `a_{i,j}` label for column `c`.
pub fn unknown_label(c: usize) -> String {
    format!("a_{{{},{}}}", c % 2, c / 2)
}
