//! Raw and central moments of `Zbar_n` from the recursions obtained by
//! feeding `x^k` and `(x - E Zbar_n)^k` to the Stein operators, plus the
//! closed forms for the first four moments, skewness and kurtosis.

use num_rational::BigRational;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{classify, DistributionCase, MeanParams, DEFAULT_RATIO_TOL};
use crate::scalar::{DoubleDouble, Field};
use crate::stein::GenericParams;

/// Beyond this order the recursions run in double-double arithmetic.
pub const EXTENDED_PRECISION_FROM: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    Raw,
    Central,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Recursion,
    ClosedForm,
    MonteCarlo,
}

/// `values[k]` is the `k`-th moment, `k = 0..=kmax`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentTable {
    pub kind: MomentKind,
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// Standard errors, Monte Carlo tables only.
    pub stderr: Option<Vec<f64>>,
}

impl MomentTable {
    fn recursion(kind: MomentKind, values: Vec<f64>) -> Self {
        MomentTable { kind, values, provenance: Provenance::Recursion, stderr: None }
    }
}

/// Quantities shared by all recursions.
struct Common<T> {
    m: T,
    sn: T,
    rho: T,
    omr: T,
    n: T,
    rr: T,
    sq: T,
    /// `E Zbar_n = mu_x mu_y + n s_n rho`.
    mean: T,
}

fn common<T: Field>(gp: &GenericParams<T>) -> Common<T> {
    let n = T::from_i64(gp.n as i64);
    let sn = gp.sigma_x.clone() * gp.sigma_y.clone() / n.clone();
    let rx = gp.mu_x.clone() / gp.sigma_x.clone();
    let ry = gp.mu_y.clone() / gp.sigma_y.clone();
    let m = gp.mu_x.clone() * gp.mu_y.clone();
    let rho = gp.rho.clone();
    Common {
        mean: m.clone() + n.clone() * sn.clone() * rho.clone(),
        omr: T::one() - rho.clone() * rho.clone(),
        rr: rx.clone() * ry.clone(),
        sq: rx.clone() * rx + ry.clone() * ry,
        m,
        sn,
        rho,
        n,
    }
}

/// Term `c * v[k - back]`, dropped when the index is negative.
fn lag<T: Field>(v: &[T], k: usize, back: usize, c: impl FnOnce() -> T) -> T {
    if k >= back {
        c() * v[k - back].clone()
    } else {
        T::zero()
    }
}

/// Raw moments `E[Zbar_n^k]`, `k = 0..=kmax`, from the general fourth-order
/// recursion.
pub fn raw_recursion<T: Field>(gp: &GenericParams<T>, kmax: usize) -> Vec<T> {
    let Common { m, sn, rho, omr, n, rr, sq, .. } = common(gp);
    let c = T::from_i64;
    let sn2 = sn.clone() * sn.clone();
    let sn3 = sn2.clone() * sn.clone();
    let sn4 = sn2.clone() * sn2.clone();
    let rho2 = rho.clone() * rho.clone();
    let b1 = n.clone() * (c(2) * rho.clone() * rr.clone() - sq.clone() + c(3) * rho2.clone() - c(1));
    let b2 = n.clone() * (rho.clone() * sq - rho2.clone() * rr.clone() - rr + c(3) * rho.clone() * omr.clone());
    let mut v = vec![T::one()];
    for k in 0..kmax {
        let kk = c(k as i64);
        let (k1, k2) = (c(k as i64 - 1), c(k as i64 - 2));
        let k3 = c(k as i64 - 3);
        let next = (m.clone() + sn.clone() * rho.clone() * (c(4) * kk.clone() + n.clone())) * v[k].clone()
            - lag(&v, k, 1, || {
                sn2.clone() * kk.clone() * (b1.clone() + k1.clone() * (c(6) * rho2.clone() - c(2)))
            })
            - lag(&v, k, 2, || {
                sn3.clone()
                    * kk.clone()
                    * k1.clone()
                    * (b2.clone() + c(4) * k2.clone() * rho.clone() * omr.clone())
            })
            - lag(&v, k, 3, || {
                sn4.clone() * kk.clone() * k1.clone() * k2.clone() * omr.clone() * omr.clone() * (n.clone() + k3)
            });
        v.push(next);
    }
    v
}

/// Central moments `E[(Zbar_n - E Zbar_n)^k]` from the general recursion.
pub fn central_recursion<T: Field>(gp: &GenericParams<T>, kmax: usize) -> Vec<T> {
    let Common { sn, rho, omr, n, rr, sq, mean, .. } = common(gp);
    let c = T::from_i64;
    let sn2 = sn.clone() * sn.clone();
    let sn3 = sn2.clone() * sn.clone();
    let sn4 = sn2.clone() * sn2.clone();
    let rho2 = rho.clone() * rho.clone();
    let b1 = n.clone() * sn.clone() * (c(2) * rho.clone() * rr.clone() - sq.clone() + c(3) * rho2.clone() - c(1));
    let b2 = n.clone()
        * sn.clone()
        * (rho.clone() * sq - rho2.clone() * rr.clone() - rr + c(3) * rho.clone() * omr.clone());
    let mut v = vec![T::one()];
    for k in 0..kmax {
        let kk = c(k as i64);
        let (k1, k2, k3) = (c(k as i64 - 1), c(k as i64 - 2), c(k as i64 - 3));
        let next = lag(&v, k, 0, || c(4) * rho.clone() * sn.clone() * kk.clone())
            - lag(&v, k, 1, || {
                sn.clone()
                    * kk.clone()
                    * (sn.clone() * (c(6) * rho2.clone() - c(2)) * k1.clone() + b1.clone()
                        - c(4) * rho.clone() * mean.clone())
            })
            - lag(&v, k, 2, || {
                sn2.clone()
                    * kk.clone()
                    * k1.clone()
                    * ((c(6) * rho2.clone() - c(2)) * mean.clone()
                        + b2.clone()
                        + c(4) * sn.clone() * rho.clone() * omr.clone() * k2.clone())
            })
            - lag(&v, k, 3, || {
                sn3.clone()
                    * omr.clone()
                    * kk.clone()
                    * k1.clone()
                    * k2.clone()
                    * (c(4) * rho.clone() * mean.clone() + sn.clone() * omr.clone() * (n.clone() + k3.clone()))
            })
            - lag(&v, k, 4, || {
                sn4.clone() * omr.clone() * omr.clone() * kk.clone() * k1.clone() * k2.clone() * k3.clone() * mean.clone()
            });
        v.push(next);
    }
    v
}

/// Raw moments from the third-order recursion valid when
/// `mu_x / sigma_x = mu_y / sigma_y`.
pub fn raw_recursion_equal_ratio<T: Field>(gp: &GenericParams<T>, kmax: usize) -> Vec<T> {
    let Common { m, sn, rho, omr, n, .. } = common(gp);
    let c = T::from_i64;
    let rho2 = rho.clone() * rho.clone();
    let one_p = c(1) + rho.clone();
    let mut v = vec![T::one()];
    for k in 0..kmax {
        let kk = c(k as i64);
        let k1 = c(k as i64 - 1);
        let next = (m.clone() + sn.clone() * (rho.clone() * n.clone() + (c(3) * rho.clone() + c(1)) * kk.clone()))
            * v[k].clone()
            - lag(&v, k, 1, || {
                sn.clone()
                    * kk.clone()
                    * (m.clone() * (rho.clone() - c(1))
                        + sn.clone()
                            * (n.clone() * (c(2) * rho2.clone() + rho.clone() - c(1))
                                + one_p.clone() * (c(3) * rho.clone() - c(1)) * k1.clone()))
            })
            - lag(&v, k, 2, || {
                sn.clone() * sn.clone() * sn.clone() * one_p.clone() * omr.clone() * kk.clone() * k1.clone()
                    * (c(k as i64 - 2) + n.clone())
            });
        v.push(next);
    }
    v
}

/// Central moments from the third-order equal-ratio recursion.
pub fn central_recursion_equal_ratio<T: Field>(gp: &GenericParams<T>, kmax: usize) -> Vec<T> {
    let Common { m, sn, rho, omr, n, mean, .. } = common(gp);
    let c = T::from_i64;
    let rho2 = rho.clone() * rho.clone();
    let one_p = c(1) + rho.clone();
    let mut v = vec![T::one()];
    for k in 0..kmax {
        let kk = c(k as i64);
        let (k1, k2) = (c(k as i64 - 1), c(k as i64 - 2));
        let next = lag(&v, k, 0, || kk.clone() * sn.clone() * (c(3) * rho.clone() + c(1)))
            - lag(&v, k, 1, || {
                kk.clone()
                    * sn.clone()
                    * (one_p.clone() * (c(3) * rho.clone() - c(1)) * k1.clone() * sn.clone()
                        + m.clone() * (rho.clone() - c(1))
                        + n.clone() * sn.clone() * (c(2) * rho2.clone() + rho.clone() - c(1))
                        - (c(3) * rho.clone() + c(1)) * mean.clone())
            })
            - lag(&v, k, 2, || {
                sn.clone()
                    * sn.clone()
                    * one_p.clone()
                    * kk.clone()
                    * k1.clone()
                    * (mean.clone() * (c(3) * rho.clone() - c(1))
                        + n.clone() * omr.clone() * sn.clone()
                        + omr.clone() * sn.clone() * k2.clone())
            })
            - lag(&v, k, 3, || {
                sn.clone() * sn.clone() * sn.clone() * kk.clone() * k1.clone() * k2.clone() * omr.clone() * one_p.clone()
                    * mean.clone()
            });
        v.push(next);
    }
    v
}

fn run(mp: &MeanParams, kmax: usize, f64_route: fn(&GenericParams<f64>, usize) -> Vec<f64>, dd_route: fn(&GenericParams<DoubleDouble>, usize) -> Vec<DoubleDouble>) -> Vec<f64> {
    let gp = GenericParams::from_mean(mp);
    if kmax > EXTENDED_PRECISION_FROM {
        dd_route(&gp.map(|&v| DoubleDouble::new(v)), kmax).into_iter().map(DoubleDouble::to_f64).collect()
    } else {
        f64_route(&gp, kmax)
    }
}

pub fn raw_moments(mp: &MeanParams, kmax: usize) -> MomentTable {
    MomentTable::recursion(MomentKind::Raw, run(mp, kmax, raw_recursion, raw_recursion))
}

pub fn central_moments(mp: &MeanParams, kmax: usize) -> MomentTable {
    MomentTable::recursion(MomentKind::Central, run(mp, kmax, central_recursion, central_recursion))
}

fn check_equal_ratio(mp: &MeanParams) -> Result<()> {
    match classify(mp.base(), DEFAULT_RATIO_TOL) {
        DistributionCase::EqualRatio | DistributionCase::ZeroMeans => Ok(()),
        other => Err(Error::CaseMismatch(format!(
            "equal-ratio recursion needs mu_x/sigma_x = mu_y/sigma_y, parameters are {other:?}"
        ))),
    }
}

pub fn raw_moments_equal_ratio(mp: &MeanParams, kmax: usize) -> Result<MomentTable> {
    check_equal_ratio(mp)?;
    Ok(MomentTable::recursion(
        MomentKind::Raw,
        run(mp, kmax, raw_recursion_equal_ratio, raw_recursion_equal_ratio),
    ))
}

pub fn central_moments_equal_ratio(mp: &MeanParams, kmax: usize) -> Result<MomentTable> {
    check_equal_ratio(mp)?;
    Ok(MomentTable::recursion(
        MomentKind::Central,
        run(mp, kmax, central_recursion_equal_ratio, central_recursion_equal_ratio),
    ))
}

/// Exact raw moments for rational parameters.
pub fn raw_moments_exact(gp: &GenericParams<BigRational>, kmax: usize) -> Vec<BigRational> {
    raw_recursion(gp, kmax)
}

/// Exact central moments for rational parameters.
pub fn central_moments_exact(gp: &GenericParams<BigRational>, kmax: usize) -> Vec<BigRational> {
    central_recursion(gp, kmax)
}

/// The closed-form first four moments and derived shape measures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClosedFormFour {
    /// `mu'_1..mu'_4`.
    pub raw: [f64; 4],
    /// `mu_1..mu_4`.
    pub central: [f64; 4],
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// `(mu'_1..mu'_4, mu_1..mu_4)` from the displayed closed forms.
pub fn closed_form_moments<T: Field>(gp: &GenericParams<T>) -> ([T; 4], [T; 4]) {
    let c = T::from_i64;
    let n = c(gp.n as i64);
    let rho = gp.rho.clone();
    let rx = gp.mu_x.clone() / gp.sigma_x.clone();
    let ry = gp.mu_y.clone() / gp.sigma_y.clone();
    let s = gp.sigma_x.clone() * gp.sigma_y.clone();
    let p = |v: &T, e: u32| v.powi(e);
    let rr = rx.clone() * ry.clone();
    let sq = p(&rx, 2) + p(&ry, 2);
    let q4 = p(&rx, 4) + p(&ry, 4);
    let rho2 = p(&rho, 2);
    let (n1, n2, n3) = (n.clone() + c(1), n.clone() + c(2), n.clone() + c(3));

    let raw1 = gp.mu_x.clone() * gp.mu_y.clone() + rho.clone() * s.clone();
    let raw2 = p(&s, 2) / n.clone()
        * (n.clone() * p(&rr, 2) + sq.clone() + c(2) * rho.clone() * n1.clone() * rr.clone()
            + rho2.clone() * n1.clone()
            + c(1));
    let raw3 = p(&s, 3) / p(&n, 2)
        * (p(&n, 2) * p(&rr, 3)
            + c(3) * n.clone() * rr.clone() * sq.clone()
            + c(3) * rho.clone() * n.clone() * n2.clone() * p(&rr, 2)
            + c(3) * rho.clone() * n2.clone() * sq.clone()
            + c(3) * n2.clone() * (rho2.clone() * n1.clone() + c(1)) * rr.clone()
            + rho.clone() * n2.clone() * (rho2.clone() * n1.clone() + c(3)));
    let raw4 = p(&s, 4) / p(&n, 3)
        * (p(&n, 3) * p(&rr, 4)
            + c(4) * rho.clone() * p(&n, 2) * n3.clone() * p(&rr, 3)
            + c(6) * p(&n, 2) * p(&rr, 2) * sq.clone()
            + c(3) * n.clone() * q4.clone()
            + c(12) * rho.clone() * n.clone() * n3.clone() * rr.clone() * sq.clone()
            + c(6) * n.clone() * (rho2.clone() * n2.clone() * n3.clone() + (n.clone() + c(5))) * p(&rr, 2)
            + c(6) * n2.clone() * (rho2.clone() * n3.clone() + c(1)) * sq.clone()
            + c(4) * rho.clone() * n2.clone() * n3.clone() * (rho2.clone() * n1.clone() + c(3)) * rr.clone()
            + p(&rho, 4) * n1 * n2.clone() * n3.clone()
            + c(6) * rho2.clone() * n2.clone() * n3
            + c(3) * n2.clone());

    let cen2 = p(&s, 2) / n.clone() * (sq.clone() + c(2) * rho.clone() * rr.clone() + rho2.clone() + c(1));
    let cen3 = c(2) * p(&s, 3) / p(&n, 2)
        * (c(3) * rho.clone() * sq.clone()
            + c(3) * (rho2.clone() + c(1)) * rr.clone()
            + rho.clone() * (rho2.clone() + c(3)));
    let n6 = n.clone() + c(6);
    let cen4 = c(3) * p(&s, 4) / p(&n, 3)
        * (n.clone() * q4
            + c(4) * rho.clone() * n.clone() * rr.clone() * sq.clone()
            + c(2) * n.clone() * (c(2) * rho2.clone() + c(1)) * p(&rr, 2)
            + c(2) * (rho2.clone() * n6.clone() + n2.clone()) * sq
            + c(4) * rho.clone() * (rho2.clone() * n2.clone() + n6.clone()) * rr
            + p(&rho, 4) * n2.clone()
            + c(2) * rho2 * n6
            + n2);
    ([raw1, raw2, raw3, raw4], [T::zero(), cen2, cen3, cen4])
}

/// The displayed kurtosis of the single product `Z` (the `n = 1` case),
/// written in terms of `r_x`, `r_y` and `rho` only.
pub fn kurtosis_single_product<T: Field>(rx: T, ry: T, rho: T) -> T {
    let c = T::from_i64;
    let rr = rx.clone() * ry.clone();
    let sq = rx.powi(2) + ry.powi(2);
    let rho2 = rho.powi(2);
    let den = (sq.clone() + c(2) * rho.clone() * rr.clone() + rho2.clone() + c(1)).powi(2);
    let first = c(3)
        * (rx.powi(4) + ry.powi(4)
            + c(4) * rho.clone() * rr.clone() * sq.clone()
            + c(2) * (c(2) * rho2.clone() + c(1)) * rr.powi(2));
    let second = c(3)
        * (c(2) * (c(7) * rho2.clone() + c(3)) * sq
            + c(4) * rho.clone() * (c(3) * rho2.clone() + c(7)) * rr
            + c(3) * rho.powi(4)
            + c(14) * rho2
            + c(3));
    first / den.clone() + second / den
}

pub fn closed_form_four(mp: &MeanParams) -> Result<ClosedFormFour> {
    let (raw, central) = closed_form_moments(&GenericParams::from_mean(mp));
    let variance = central[1];
    if variance.is_nan() || variance <= 0.0 || variance.is_infinite() {
        return Err(Error::DegenerateVariance);
    }
    Ok(ClosedFormFour {
        raw,
        central,
        variance,
        skewness: central[2] / variance.powf(1.5),
        kurtosis: central[3] / (variance * variance),
    })
}

/// Central moments from raw moments by binomial expansion.
pub fn central_from_raw<T: Field>(raw: &[T]) -> Vec<T> {
    if raw.len() < 2 {
        return raw.to_vec();
    }
    let mean = raw[1].clone();
    (0..raw.len())
        .map(|k| {
            let mut acc = T::zero();
            let mut binom = T::one();
            for i in 0..=k {
                let term = binom.clone() * raw[i].clone() * (-mean.clone()).powi((k - i) as u32);
                acc = acc + term;
                binom = binom * T::from_i64((k - i) as i64) / T::from_i64(i as i64 + 1);
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ProductNormalParams;
    use crate::scalar::{rational_from_f64, rational_to_f64};
    use num_bigint::BigInt;
    use proptest::prelude::*;

    fn mp(mx: f64, my: f64, sx: f64, sy: f64, rho: f64, n: u64) -> MeanParams {
        ProductNormalParams::new(mx, my, sx, sy, rho).unwrap().with_copies(n).unwrap()
    }

    fn q(num: i64, den: i64) -> BigRational {
        BigRational::new(num.into(), den.into())
    }

    fn exact(mp: &MeanParams) -> GenericParams<BigRational> {
        GenericParams::from_mean(mp).map(|&v| rational_from_f64(v).unwrap())
    }

    /// Exact `E[Zbar_n^k]` without any Stein machinery: bivariate normal
    /// moments `E[X^a Y^b]` by Gaussian integration by parts, then the
    /// moments of a sum of `n` independent copies by binomial convolution.
    fn oracle_raw(gp: &GenericParams<BigRational>, kmax: usize) -> Vec<BigRational> {
        let cov = gp.rho.clone() * gp.sigma_x.clone() * gp.sigma_y.clone();
        let vx = gp.sigma_x.clone() * gp.sigma_x.clone();
        let vy = gp.sigma_y.clone() * gp.sigma_y.clone();
        let z = BigRational::from_integer(0.into());
        let mut e = vec![vec![z.clone(); kmax + 1]; kmax + 1];
        for a in 0..=kmax {
            for b in 0..=kmax {
                e[a][b] = if a == 0 && b == 0 {
                    q(1, 1)
                } else if a == 0 {
                    let mut v = gp.mu_y.clone() * e[0][b - 1].clone();
                    if b >= 2 {
                        v += q(b as i64 - 1, 1) * vy.clone() * e[0][b - 2].clone();
                    }
                    v
                } else {
                    let mut v = gp.mu_x.clone() * e[a - 1][b].clone();
                    if a >= 2 {
                        v += q(a as i64 - 1, 1) * vx.clone() * e[a - 2][b].clone();
                    }
                    if b >= 1 {
                        v += q(b as i64, 1) * cov.clone() * e[a - 1][b - 1].clone();
                    }
                    v
                };
            }
        }
        let single: Vec<BigRational> = (0..=kmax).map(|k| e[k][k].clone()).collect();
        let binom = |k: usize, i: usize| -> BigRational {
            let mut b = BigInt::from(1);
            for j in 0..i {
                b = b * BigInt::from(k - j) / BigInt::from(j + 1);
            }
            BigRational::from_integer(b)
        };
        let mut sum = single.clone();
        for _ in 1..gp.n {
            sum = (0..=kmax)
                .map(|k| (0..=k).map(|i| binom(k, i) * sum[i].clone() * single[k - i].clone()).fold(z.clone(), |a, b| a + b))
                .collect();
        }
        let nn = q(gp.n as i64, 1);
        sum.into_iter().enumerate().map(|(k, v)| v / nn.clone().powi(k as u32)).collect()
    }

    /// Zero means: the second-order operator A4 with `f = x^k` gives
    /// `mu'_{k+1} = s_n rho (2k + n) mu'_k + s_n^2 (1 - rho^2) k (k - 1 + n) mu'_{k-1}`.
    fn oracle_zero_mean(mp: &MeanParams, kmax: usize) -> Vec<f64> {
        let sn = mp.s_n();
        let rho = mp.base().rho();
        let n = mp.n() as f64;
        let mut v = vec![1.0];
        for k in 0..kmax {
            let kf = k as f64;
            let mut next = sn * rho * (2.0 * kf + n) * v[k];
            if k >= 1 {
                next += sn * sn * (1.0 - rho * rho) * kf * (kf - 1.0 + n) * v[k - 1];
            }
            v.push(next);
        }
        v
    }

    fn rel(a: f64, b: f64) -> f64 {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    }

    #[test]
    fn one_zero_mean_uncorrelated_sequence() {
        let m = mp(1.0, 0.0, 1.0, 1.0, 0.0, 1);
        let expect = [1.0, 0.0, 2.0, 0.0, 30.0, 0.0, 1140.0, 0.0, 80220.0];
        assert_eq!(raw_moments(&m, 8).values, expect.to_vec());
        let ex = raw_moments_exact(&exact(&m), 8);
        let ints: Vec<i64> = vec![1, 0, 2, 0, 30, 0, 1140, 0, 80220];
        assert_eq!(ex, ints.iter().map(|&v| q(v, 1)).collect::<Vec<_>>());
    }

    #[test]
    fn recursion_matches_exact_oracle() {
        let sets = [
            (q(1, 1), q(2, 1), q(1, 1), q(2, 1), q(1, 2), 3u64),
            (q(-3, 2), q(1, 3), q(2, 1), q(1, 2), q(-7, 10), 1),
            (q(0, 1), q(0, 1), q(3, 2), q(2, 3), q(9, 10), 5),
            (q(5, 2), q(-1, 1), q(1, 4), q(3, 1), q(0, 1), 2),
        ];
        for (mx, my, sx, sy, rho, n) in sets {
            let gp = GenericParams { mu_x: mx, mu_y: my, sigma_x: sx, sigma_y: sy, rho, n };
            let raw = raw_moments_exact(&gp, 10);
            assert_eq!(raw, oracle_raw(&gp, 10));
            assert_eq!(central_moments_exact(&gp, 10), central_from_raw(&raw));
        }
    }

    #[test]
    fn reference_params_table() {
        let m = mp(1.0, 2.0, 1.0, 2.0, 0.5, 3);
        let t = raw_moments(&m, 6);
        let oracle = oracle_raw(&exact(&m), 6);
        for k in 0..=6 {
            assert!(rel(t.values[k], rational_to_f64(&oracle[k])) < 1e-13, "k = {k}");
        }
        assert_eq!(t.values[1], 1.0 * 2.0 + 0.5 * 2.0);
    }

    #[test]
    fn central_first_values() {
        let m = mp(0.7, -1.3, 1.5, 0.4, 0.35, 4);
        let t = central_moments(&m, 6);
        assert_eq!(t.values[0], 1.0);
        assert_eq!(t.values[1], 0.0);
        let p = m.base();
        let (rx, ry, rho) = (p.r_x(), p.r_y(), p.rho());
        let var = p.s() * p.s() / 4.0 * (rx * rx + ry * ry + 2.0 * rho * rx * ry + rho * rho + 1.0);
        assert!(rel(t.values[2], var) < 1e-14);
    }

    #[test]
    fn symmetric_case_has_zero_odd_central_moments() {
        let t = central_moments(&mp(0.0, 0.0, 1.3, 0.8, 0.0, 1), 9);
        for k in (1..=9).step_by(2) {
            assert_eq!(t.values[k], 0.0);
        }
    }

    #[test]
    fn zero_means_against_second_order_recursion() {
        for (sx, sy, rho, n) in [(1.0, 1.0, 0.0, 1), (0.5, 2.0, 0.6, 3), (1.7, 0.9, -0.8, 7)] {
            let m = mp(0.0, 0.0, sx, sy, rho, n);
            let a = raw_moments(&m, 12).values;
            let b = oracle_zero_mean(&m, 12);
            let c = raw_moments_equal_ratio(&m, 12).unwrap().values;
            for k in 0..=12 {
                assert!(rel(a[k], b[k]) < 1e-12, "k = {k}: {} vs {}", a[k], b[k]);
                assert!(rel(c[k], b[k]) < 1e-12, "k = {k}");
            }
        }
    }

    #[test]
    fn independent_zero_means_even_moments() {
        // E[Z^{2k}] = E[X^{2k}] E[Y^{2k}] = ((2k)! / (2^k k!))^2 sigma^{2k}
        let (sx, sy) = (1.3, 0.7);
        let t = raw_moments(&mp(0.0, 0.0, sx, sy, 0.0, 1), 6);
        for (k, dfact) in [(1, 1.0), (2, 3.0), (3, 15.0)] {
            let expect = dfact * dfact * (sx * sy).powi(2 * k as i32);
            assert!(rel(t.values[2 * k], expect) < 1e-14);
        }
    }

    #[test]
    fn equal_ratio_recursions_agree_with_general() {
        let m = mp(1.0, 1.0, 1.0, 1.0, 0.2, 2);
        let (a, b) = (raw_moments(&m, 8).values, raw_moments_equal_ratio(&m, 8).unwrap().values);
        let (c, d) = (central_moments(&m, 8).values, central_moments_equal_ratio(&m, 8).unwrap().values);
        for k in 0..=8 {
            assert!(rel(a[k], b[k]) <= 1e-12, "raw k = {k}");
            assert!((c[k] - d[k]).abs() <= 1e-12 * c[k].abs().max(1e-300), "central k = {k}");
        }
        let gp = GenericParams { mu_x: q(2, 1), mu_y: q(3, 5), sigma_x: q(4, 1), sigma_y: q(6, 5), rho: q(-2, 7), n: 3 };
        assert_eq!(raw_recursion_equal_ratio(&gp, 9), raw_moments_exact(&gp, 9));
        assert_eq!(central_recursion_equal_ratio(&gp, 9), central_moments_exact(&gp, 9));
    }

    #[test]
    fn equal_ratio_requires_case() {
        assert!(matches!(raw_moments_equal_ratio(&mp(1.0, 2.0, 1.0, 1.0, 0.0, 1), 4), Err(Error::CaseMismatch(_))));
        assert!(central_moments_equal_ratio(&mp(1.0, 0.0, 1.0, 1.0, 0.0, 1), 4).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let cf = closed_form_four(&mp(1.0, 0.0, 1.0, 1.0, 0.0, 1)).unwrap();
        assert_eq!(cf.raw, [0.0, 2.0, 0.0, 30.0]);
        assert_eq!(cf.kurtosis, 7.5);
        let cf = closed_form_four(&mp(0.0, 0.0, 1.0, 1.0, 0.0, 1)).unwrap();
        assert_eq!((cf.central[1], cf.central[3], cf.kurtosis), (1.0, 9.0, 9.0));
    }

    #[test]
    fn closed_forms_exact_against_recursion() {
        let gp = GenericParams { mu_x: q(-3, 2), mu_y: q(5, 4), sigma_x: q(2, 3), sigma_y: q(7, 5), rho: q(3, 8), n: 6 };
        let (raw, central) = closed_form_moments(&gp);
        assert_eq!(raw.to_vec(), raw_moments_exact(&gp, 4)[1..].to_vec());
        assert_eq!(central.to_vec(), central_moments_exact(&gp, 4)[1..].to_vec());
        let one = GenericParams { n: 1, ..gp };
        let (_, c1) = closed_form_moments(&one);
        let kurt = c1[3].clone() / (c1[1].clone() * c1[1].clone());
        let rx = one.mu_x.clone() / one.sigma_x.clone();
        let ry = one.mu_y.clone() / one.sigma_y.clone();
        assert_eq!(kurt, kurtosis_single_product(rx, ry, one.rho.clone()));
    }

    #[test]
    fn high_order_uses_extended_precision() {
        let m = mp(0.9, -1.1, 1.2, 0.8, 0.45, 4);
        let t = raw_moments(&m, 30);
        let oracle = oracle_raw(&exact(&m), 30);
        for k in 0..=30 {
            let o = rational_to_f64(&oracle[k]);
            assert!(rel(t.values[k], o) < 1e-13, "k = {k}: {} vs {o}", t.values[k]);
        }
    }

    fn arb_params() -> impl Strategy<Value = MeanParams> {
        (-3.0f64..3.0, -3.0f64..3.0, 0.3f64..3.0, 0.3f64..3.0, -0.95f64..0.95, 1u64..=20)
            .prop_map(|(a, b, c, d, e, n)| mp(a, b, c, d, e, n))
    }

    proptest! {
        #[test]
        fn raw_to_central_conversion(m in arb_params()) {
            let raw = raw_moments(&m, 8).values;
            let central = central_moments(&m, 8).values;
            // Reference in double-double to keep the conversion itself accurate.
            let dd: Vec<DoubleDouble> =
                raw_recursion(&GenericParams::from_mean(&m).map(|&v| DoubleDouble::new(v)), 8);
            let conv = central_from_raw(&dd);
            let sd = central[2].sqrt();
            for k in 0..=8 {
                let scale = sd.powi(k as i32) * (1.0 + (raw[1] / sd).abs()).powi(k as i32);
                prop_assert!((conv[k].to_f64() - central[k]).abs() <= 1e-10 * scale, "k = {}", k);
            }
        }

        #[test]
        fn moment_inequalities(m in arb_params()) {
            let raw = raw_moments(&m, 8).values;
            let c = central_moments(&m, 4).values;
            for k in 1..=4 {
                prop_assert!(raw[2 * k] > 0.0);
            }
            prop_assert!(raw[2] > raw[1] * raw[1]);
            prop_assert!(c[2] * c[4] >= c[3] * c[3]);
        }

        #[test]
        fn n_scaling(m in arb_params()) {
            let one = MeanParams::new(*m.base(), 1).unwrap();
            let n = m.n() as f64;
            let (a, b) = (central_moments(&m, 3).values, central_moments(&one, 3).values);
            prop_assert!(rel(a[2], b[2] / n) < 1e-13);
            prop_assert!((a[3] - b[3] / (n * n)).abs() < 1e-12 * (b[2] / n).powf(1.5));
        }
    }
}
