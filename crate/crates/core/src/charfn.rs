//! Characteristic function of the mean of `n` copies of `Z = XY` and the
//! first-order ODE it satisfies.
//!
//! With unit variances,
//! `phi(t) = exp(N / (2D)) / D^{n/2}`, where
//! `D = (1 - (1+rho) i t/n)(1 + (1-rho) i t/n)` and
//! `N = -(mu_x^2 + mu_y^2 - 2 rho mu_x mu_y) t^2 / n + 2 mu_x mu_y i t`.
//! General variances follow from `t -> sigma_x sigma_y t` with the ratios
//! `r_x, r_y` in place of the means.
//!
//! Both factors of `D` have real part at least 1 for real `t`, so taking
//! the principal logarithm of each factor separately gives the branch of
//! `D^{n/2}` that is continuous in `t` with `phi(0) = 1`. No branch
//! tracking along paths is needed.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::MeanParams;

pub type ComplexValue = Complex64;

struct Unit {
    a: f64,
    b: f64,
    rho: f64,
    n: f64,
}

impl Unit {
    fn new(mp: &MeanParams) -> Self {
        let p = mp.base();
        let (rx, ry, rho) = (p.r_x(), p.r_y(), p.rho());
        Unit { a: rx * rx + ry * ry - 2.0 * rho * rx * ry, b: rx * ry, rho, n: mp.n() as f64 }
    }

    fn ln_phi(&self, t: Complex64) -> Complex64 {
        let i = Complex64::i();
        let tau = t / self.n;
        let f1 = 1.0 - (1.0 + self.rho) * i * tau;
        let f2 = 1.0 + (1.0 - self.rho) * i * tau;
        let d = f1 * f2;
        let num = -self.a * t * t / self.n + 2.0 * self.b * i * t;
        num / (2.0 * d) - 0.5 * self.n * (f1.ln() + f2.ln())
    }

    fn dln_phi(&self, t: Complex64) -> Complex64 {
        let i = Complex64::i();
        let n = self.n;
        let tau = t / n;
        let d = 1.0 - 2.0 * self.rho * i * tau + (1.0 - self.rho * self.rho) * tau * tau;
        let dd = (-2.0 * self.rho * i + 2.0 * (1.0 - self.rho * self.rho) * tau) / n;
        let num = -self.a * t * t / n + 2.0 * self.b * i * t;
        let dnum = -2.0 * self.a * t / n + 2.0 * self.b * i;
        (dnum * d - num * dd) / (2.0 * d * d) - 0.5 * n * dd / d
    }
}

/// `phi(t) = E[exp(i t Zbar_n)]`.
pub fn cf_mean(mp: &MeanParams, t: f64) -> ComplexValue {
    let s = mp.base().s();
    Unit::new(mp).ln_phi(Complex64::new(s * t, 0.0)).exp()
}

/// `phi'(t)` from the closed form.
pub fn cf_mean_derivative(mp: &MeanParams, t: f64) -> ComplexValue {
    let s = mp.base().s();
    let u = Unit::new(mp);
    let z = Complex64::new(s * t, 0.0);
    s * u.ln_phi(z).exp() * u.dln_phi(z)
}

/// `phi` evaluated at complex `t`, valid inside the disc where both factors
/// of `D` keep a positive real part.
fn cf_complex(mp: &MeanParams, t: Complex64) -> Complex64 {
    Unit::new(mp).ln_phi(mp.base().s() * t).exp()
}

/// Radius of the largest disc around 0 on which `phi` is analytic.
pub fn analytic_radius(mp: &MeanParams) -> f64 {
    mp.n() as f64 / ((1.0 + mp.base().rho().abs()) * mp.base().s())
}

/// `phi^{(k)}(0)` for `k = 0..=kmax` by the Cauchy integral formula on a
/// circle well inside the disc of analyticity (trapezoidal rule, which
/// converges geometrically for periodic analytic integrands).
pub fn cf_derivatives_at_zero(mp: &MeanParams, kmax: usize) -> Vec<ComplexValue> {
    let r = 0.25 * analytic_radius(mp);
    let m = 128;
    let samples: Vec<Complex64> = (0..m)
        .map(|j| {
            let th = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            cf_complex(mp, Complex64::from_polar(r, th))
        })
        .collect();
    let mut out = Vec::with_capacity(kmax + 1);
    let mut fact = 1.0;
    for k in 0..=kmax {
        if k > 0 {
            fact *= k as f64;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, v) in samples.iter().enumerate() {
            let th = 2.0 * std::f64::consts::PI * (j * k % m) as f64 / m as f64;
            acc += v * Complex64::from_polar(1.0, -th);
        }
        out.push(acc * fact / (m as f64 * r.powi(k as i32)));
    }
    out
}

/// Raw moments `E[Zbar_n^k] = (-i)^k phi^{(k)}(0)` for `k = 0..=kmax`.
pub fn moments_from_cf(mp: &MeanParams, kmax: usize) -> Vec<f64> {
    let mut rot = Complex64::new(1.0, 0.0);
    cf_derivatives_at_zero(mp, kmax)
        .into_iter()
        .map(|d| {
            let v = (rot * d).re;
            rot *= -Complex64::i();
            v
        })
        .collect()
}

/// `ln E[exp(theta Z)]` for a single product with unit variances and means
/// `(r_x, r_y)`; `+inf` outside `-1/(1-rho) < theta < 1/(1+rho)`.
pub fn ln_mgf_unit(r_x: f64, r_y: f64, rho: f64, theta: f64) -> f64 {
    let d = 1.0 - 2.0 * rho * theta - (1.0 - rho * rho) * theta * theta;
    if d <= 0.0 {
        return f64::INFINITY;
    }
    let a = r_x * r_x + r_y * r_y - 2.0 * rho * r_x * r_y;
    (a * theta * theta + 2.0 * r_x * r_y * theta) / (2.0 * d) - 0.5 * d.ln()
}

/// Magnitude of the left-hand side of the characteristic-function ODE
/// (unit variances), divided by the larger of its two terms.
pub fn cf_ode_residual(mp: &MeanParams, t: f64, dphi: ComplexValue) -> Result<f64> {
    let p = mp.base();
    if p.sigma_x() != 1.0 || p.sigma_y() != 1.0 {
        return Err(Error::CaseMismatch("the ODE is stated for sigma_x = sigma_y = 1".into()));
    }
    let phi = cf_mean(mp, t);
    let (c1, c0) = cf_ode_coefficients(mp, t);
    let t1 = c1 * dphi;
    let t0 = c0 * phi;
    let scale = t1.norm().max(t0.norm());
    Ok(if scale == 0.0 { 0.0 } else { (t1 + t0).norm() / scale })
}

/// Coefficients `(c1, c0)` of `c1 phi' + c0 phi = 0`.
fn cf_ode_coefficients(mp: &MeanParams, t: f64) -> (Complex64, Complex64) {
    let p = mp.base();
    let i = Complex64::i();
    let n = mp.n() as f64;
    let (r, mx, my) = (p.rho(), p.mu_x(), p.mu_y());
    let omr = p.one_minus_rho_sq();
    let c1 = -i * omr * omr * t.powi(4) - 4.0 * n * omr * r * t.powi(3)
        + i * n * n * (6.0 * r * r - 2.0) * t * t
        - 4.0 * r * t * n.powi(3)
        - i * n.powi(4);
    let c0 = -i * n * omr * omr * t.powi(3)
        - n * n * (r * (mx * mx + my * my) - (1.0 + r * r) * mx * my + 3.0 * r * omr) * t * t
        + i * n.powi(3) * (2.0 * r * mx * my - mx * mx - my * my + 3.0 * r * r - 1.0) * t
        - n.powi(4) * (mx * my + r);
    (c1, c0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ProductNormalParams;
    use proptest::prelude::*;

    fn mean_params(mx: f64, my: f64, sx: f64, sy: f64, rho: f64, n: u64) -> MeanParams {
        ProductNormalParams::new(mx, my, sx, sy, rho).unwrap().with_copies(n).unwrap()
    }

    #[test]
    fn phi_at_zero_is_exactly_one() {
        let mp = mean_params(1.0, 2.0, 1.0, 2.0, 0.5, 3);
        assert_eq!(cf_mean(&mp, 0.0), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn classical_product_normal_cf() {
        let mp = mean_params(0.0, 0.0, 1.0, 1.0, 0.0, 1);
        for t in [-5.0, -0.3, 0.7, 2.0, 40.0] {
            let phi = cf_mean(&mp, t);
            let expected = 1.0 / (1.0 + t * t).sqrt();
            assert!((phi.re - expected).abs() < 1e-15 && phi.im.abs() < 1e-15, "t = {t}");
        }
    }

    #[test]
    fn rescaling_matches_unit_variances() {
        // Z with sigma's (2, 0.5) and means (2, 1) equals Z with unit sigma's
        // and means (1, 2) in law, since s = 1 and the ratios agree.
        let a = mean_params(2.0, 1.0, 2.0, 0.5, 0.3, 2);
        let b = mean_params(1.0, 2.0, 1.0, 1.0, 0.3, 2);
        for t in [0.1, 1.0, 3.0] {
            assert!((cf_mean(&a, t) - cf_mean(&b, t)).norm() < 1e-15);
        }
    }

    #[test]
    fn ode_residual_at_zero_needs_first_moment() {
        let mp = mean_params(1.0, 2.0, 1.0, 1.0, 0.5, 2);
        let m1 = 1.0 * 2.0 + 0.5;
        let good = cf_ode_residual(&mp, 0.0, Complex64::new(0.0, m1)).unwrap();
        assert!(good < 1e-15);
        let bad = cf_ode_residual(&mp, 0.0, Complex64::new(0.0, m1 + 0.1)).unwrap();
        assert!(bad > 1e-2);
    }

    #[test]
    fn ode_residual_for_classical_cf_on_grid() {
        let mp = mean_params(0.0, 0.0, 1.0, 1.0, 0.0, 1);
        for i in 0..=100 {
            let t = -5.0 + 0.1 * i as f64;
            // d/dt (1 + t^2)^{-1/2} = -t (1 + t^2)^{-3/2}
            let dphi = Complex64::new(-t / (1.0 + t * t).powf(1.5), 0.0);
            assert!(cf_ode_residual(&mp, t, dphi).unwrap() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn analytic_derivative_matches_central_difference() {
        let mp = mean_params(1.0, -0.5, 1.3, 0.7, 0.4, 3);
        for t in [-2.0, -0.1, 0.5, 4.0] {
            let h = 1e-5;
            let fd = (cf_mean(&mp, t + h) - cf_mean(&mp, t - h)) / (2.0 * h);
            let an = cf_mean_derivative(&mp, t);
            assert!((fd - an).norm() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn ode_requires_unit_variances() {
        let mp = mean_params(0.0, 0.0, 2.0, 1.0, 0.0, 1);
        assert!(matches!(
            cf_ode_residual(&mp, 1.0, Complex64::new(0.0, 0.0)),
            Err(Error::CaseMismatch(_))
        ));
    }

    #[test]
    fn contour_moments_of_classical_case() {
        // E[Z^2] = 1, E[Z^4] = 9 for independent standard normals.
        let mp = mean_params(0.0, 0.0, 1.0, 1.0, 0.0, 1);
        let m = moments_from_cf(&mp, 4);
        let expected = [1.0, 0.0, 1.0, 0.0, 9.0];
        for k in 0..=4 {
            assert!((m[k] - expected[k]).abs() < 1e-10, "k = {k}: {}", m[k]);
        }
    }

    #[test]
    fn mgf_matches_cf_on_imaginary_axis() {
        let mp = mean_params(0.7, -1.2, 1.0, 1.0, 0.3, 1);
        let th = 0.2;
        let via_cf = cf_complex(&mp, Complex64::new(0.0, -th));
        let direct = ln_mgf_unit(0.7, -1.2, 0.3, th).exp();
        assert!((via_cf.re - direct).abs() < 1e-14 && via_cf.im.abs() < 1e-14);
        assert_eq!(ln_mgf_unit(0.0, 0.0, 0.0, 1.5), f64::INFINITY);
    }

    #[test]
    fn modulus_and_phase_are_continuous_on_grid() {
        let mp = mean_params(1.0, 2.0, 1.0, 1.0, 0.5, 3);
        let mut prev = cf_mean(&mp, 0.0);
        for i in 1..=4000 {
            let t = i as f64 * 0.005;
            let cur = cf_mean(&mp, t);
            assert!((cur - prev).norm() < 0.05, "jump at t = {t}");
            prev = cur;
        }
    }

    proptest! {
        #[test]
        fn bounded_and_hermitian(
            mx in -3.0f64..3.0, my in -3.0f64..3.0, sx in 0.3f64..3.0, sy in 0.3f64..3.0,
            rho in -0.95f64..0.95, n in 1u64..20, t in -50.0f64..50.0,
        ) {
            let mp = mean_params(mx, my, sx, sy, rho, n);
            let a = cf_mean(&mp, t);
            let b = cf_mean(&mp, -t);
            prop_assert!(a.norm() <= 1.0 + 1e-15);
            prop_assert!((a - b.conj()).norm() <= 1e-14);
        }

        #[test]
        fn ode_residual_with_analytic_derivative(
            mx in -3.0f64..3.0, my in -3.0f64..3.0,
            rho in -0.95f64..0.95, n in 1u64..20, t in -10.0f64..10.0,
        ) {
            let mp = mean_params(mx, my, 1.0, 1.0, rho, n);
            let r = cf_ode_residual(&mp, t, cf_mean_derivative(&mp, t)).unwrap();
            prop_assert!(r <= 1e-8, "residual {}", r);
        }
    }
}
