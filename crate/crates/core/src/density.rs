//! Densities of the product `Z = XY` and of the mean of `n` copies, the
//! distribution function of `Z`, and the residual of the fourth-order ODE
//! satisfied by the density of the mean.
//!
//! The double series for `p_Z` is summed in log space. Every term is
//! `sign * exp(L)`; positive and negative terms are accumulated separately
//! and combined once at the end, so the result carries an estimate of the
//! rounding error left over from cancellation.

use crate::bessel::{ln_bessel_k_scaled_sequence, BesselOrder};
use crate::charfn::ln_mgf_unit;
use crate::error::{Error, Result};
use crate::params::{MeanParams, ProductNormalParams};
use crate::quad::{integrate_singular_start, QuadConfig};

use std::f64::consts::PI;

/// Truncation policy for the density series.
///
/// With `fallback` set, points where the series would lose too much to
/// cancellation or would need more than `max_outer` blocks are evaluated by
/// direct quadrature of the joint normal density instead.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesControl {
    pub rel_tol: f64,
    pub max_outer: usize,
    pub fallback: bool,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl { rel_tol: 1e-14, max_outer: 300, fallback: true }
    }
}

impl SeriesControl {
    pub fn new(rel_tol: f64, max_outer: usize) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(Error::InvalidArgument(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
        }
        if max_outer == 0 {
            return Err(Error::InvalidArgument("max_outer must be at least 1".into()));
        }
        Ok(SeriesControl { rel_tol, max_outer, fallback: true })
    }

    /// Same truncation policy, never falling back to quadrature.
    pub fn series_only(self) -> Self {
        SeriesControl { fallback: false, ..self }
    }
}

/// How a density value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Series,
    ClosedForm,
    Quadrature,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Series => "series",
            Method::ClosedForm => "closed_form",
            Method::Quadrature => "quadrature",
        }
    }
}

/// A density value stored as `sign * exp(log_abs)`.
///
/// `log_abs_err` is the log of an estimate of the absolute error. When a
/// series cancels so badly that the error estimate exceeds the net sum, the
/// value is reported as exactly zero (`log_abs = -inf`) and `log_abs_err`
/// tells how large it could be. `terms_used` counts outer series blocks, or
/// integrand evaluations for [`Method::Quadrature`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityValue {
    pub log_abs: f64,
    pub sign: i8,
    pub converged: bool,
    pub terms_used: usize,
    pub log_abs_err: f64,
    pub method: Method,
}

impl DensityValue {
    pub fn value(&self) -> f64 {
        f64::from(self.sign) * self.log_abs.exp()
    }

    /// Estimated relative error, `+inf` when the value is zero.
    pub fn rel_err(&self) -> f64 {
        (self.log_abs_err - self.log_abs).exp()
    }

    fn closed_form(log_abs: f64) -> Self {
        DensityValue {
            log_abs,
            sign: 1,
            converged: true,
            terms_used: 1,
            log_abs_err: log_abs + (4.0 * f64::EPSILON * (1.0 + log_abs.abs())).ln(),
            method: Method::ClosedForm,
        }
    }
}

/// Streaming `ln(sum exp(l_i))`.
#[derive(Clone, Copy, Debug)]
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    const EMPTY: LogSum = LogSum { max: f64::NEG_INFINITY, scaled: 0.0 };

    fn add(&mut self, l: f64) {
        if l == f64::NEG_INFINITY {
            return;
        }
        if l > self.max {
            self.scaled = self.scaled * (self.max - l).exp() + 1.0;
            self.max = l;
        } else {
            self.scaled += (l - self.max).exp();
        }
    }

    fn merge(&mut self, other: LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.scaled = self.scaled * (self.max - other.max).exp() + other.scaled;
            self.max = other.max;
        } else {
            self.scaled += other.scaled * (other.max - self.max).exp();
        }
    }

    fn ln(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

fn ln_factorials(upto: usize) -> Vec<f64> {
    (0..=upto).map(|k| libm::lgamma(k as f64 + 1.0)).collect()
}

/// Combine separately accumulated positive and negative parts.
fn combine(
    pos: LogSum,
    neg: LogSum,
    max_abs_log: f64,
    terms_used: usize,
    converged: bool,
) -> DensityValue {
    let lp = pos.ln();
    let ln_neg = neg.ln();
    let l_abs_sum = if ln_neg == f64::NEG_INFINITY {
        lp
    } else {
        let mut s = pos;
        s.merge(neg);
        s.ln()
    };
    // Each term carries a relative error of roughly eps * (|L| + a few).
    let log_abs_err = l_abs_sum + (f64::EPSILON * (16.0 + max_abs_log)).ln();
    if ln_neg == f64::NEG_INFINITY {
        return DensityValue {
            log_abs: lp,
            sign: 1,
            converged,
            terms_used,
            log_abs_err,
            method: Method::Series,
        };
    }
    let (big, small, sign) = if lp >= ln_neg { (lp, ln_neg, 1) } else { (ln_neg, lp, -1) };
    let diff = -(small - big).exp_m1();
    let log_net = big + diff.ln();
    if log_net <= log_abs_err {
        return DensityValue {
            log_abs: f64::NEG_INFINITY,
            sign: 1,
            converged,
            terms_used,
            log_abs_err,
            method: Method::Series,
        };
    }
    DensityValue { log_abs: log_net, sign, converged, terms_used, log_abs_err, method: Method::Series }
}

fn check_x(x: f64) -> Result<()> {
    if x.is_nan() {
        return Err(Error::InvalidArgument("x is NaN".into()));
    }
    if x == 0.0 {
        return Err(Error::SingularPoint);
    }
    Ok(())
}

/// Density of `Z = XY` from the double series alone, without turning a
/// missed truncation into an error. `converged` is false when `max_outer`
/// was hit.
pub fn pdf_product_series(p: &ProductNormalParams, x: f64, ctl: &SeriesControl) -> Result<DensityValue> {
    check_x(x)?;
    let (sx, sy, rho) = (p.sigma_x(), p.sigma_y(), p.rho());
    let s = p.s();
    let omr = p.one_minus_rho_sq();
    let (rx, ry) = (p.r_x(), p.r_y());
    let a = p.mu_x() / (sx * sx) - rho * p.mu_y() / s;
    let b = p.mu_y() / (sy * sy) - rho * p.mu_x() / s;
    let w = x.abs() / (omr * s);
    let ln_a = a.abs().ln();
    let ln_b = b.abs().ln();
    let ln_x = x.abs().ln();
    let (ln_sx, ln_sy, ln_omr) = (sx.ln(), sy.ln(), omr.ln());
    // Exponential prefactor merged with the e^{-w} taken out of K.
    let base = -(rx * rx + ry * ry - 2.0 * rho * rx * ry) / (2.0 * omr)
        + (rho * x - x.abs()) / (s * omr)
        - PI.ln();
    let sign_step = |v: f64| if v < 0.0 { -1i8 } else { 1 };
    let (sgn_x, sgn_a, sgn_b) = (sign_step(x), sign_step(a), sign_step(b));

    let max_outer = ctl.max_outer;
    let ln_k = ln_bessel_k_scaled_sequence(BesselOrder::integer(max_outer as i64), w)?;
    let ln_fact = ln_factorials(2 * max_outer);

    let mut pos = LogSum::EMPTY;
    let mut neg = LogSum::EMPTY;
    let mut max_abs_log: f64 = 0.0;
    let mut top = f64::NEG_INFINITY;
    let mut small_blocks = 0;
    let ln_tol = ctl.rel_tol.ln();
    for n in 0..=max_outer {
        let nf = n as f64;
        let block_const = base + nf * ln_x - (2.0 * nf + 0.5) * ln_omr;
        let mut block_pos = LogSum::EMPTY;
        let mut block_neg = LogSum::EMPTY;
        // With a = 0 only m = 0 survives, with b = 0 only m = 2n.
        let m_lo = if b == 0.0 { 2 * n } else { 0 };
        let m_hi = if a == 0.0 { 0 } else { 2 * n };
        for m in m_lo..=m_hi.max(m_lo) {
            if m > 2 * n || (a == 0.0 && m > 0) {
                continue;
            }
            let mf = m as f64;
            let rest = (2 * n - m) as f64;
            let mut l = block_const + (mf - nf - 1.0) * ln_sx - (mf - nf + 1.0) * ln_sy
                - ln_fact[m]
                - ln_fact[2 * n - m]
                + ln_k[m.abs_diff(n)];
            if m > 0 {
                l += mf * ln_a;
            }
            if 2 * n > m {
                l += rest * ln_b;
            }
            let mut sign = 1i8;
            if m % 2 == 1 {
                sign *= sgn_x * sgn_a;
            }
            if (2 * n - m) % 2 == 1 {
                sign *= sgn_b;
            }
            if l > top - 40.0 {
                max_abs_log = max_abs_log.max(l.abs());
            }
            top = top.max(l);
            if sign > 0 {
                block_pos.add(l);
            } else {
                block_neg.add(l);
            }
        }
        let mut block_abs = block_pos;
        block_abs.merge(block_neg);
        pos.merge(block_pos);
        neg.merge(block_neg);
        if n > 0 && block_abs.ln() - pos.ln() < ln_tol {
            small_blocks += 1;
            if small_blocks == 2 {
                return Ok(combine(pos, neg, max_abs_log, n + 1, true));
            }
        } else {
            small_blocks = 0;
        }
    }
    Ok(combine(pos, neg, max_abs_log, max_outer + 1, false))
}

/// Largest relative error accepted from the series before falling back.
const SERIES_REL_ERR: f64 = 1e-11;

/// Density of `Z = XY` at `x != 0`.
pub fn pdf_product(p: &ProductNormalParams, x: f64, ctl: &SeriesControl) -> Result<DensityValue> {
    check_x(x)?;
    if ctl.fallback {
        let outlook = series_outlook(p, x);
        if outlook.log_cancellation > (SERIES_REL_ERR / f64::EPSILON).ln()
            || outlook.blocks > ctl.max_outer as f64
        {
            return pdf_product_quadrature(p, x);
        }
    }
    let v = pdf_product_series(p, x, ctl)?;
    if !ctl.fallback {
        if !v.converged {
            return Err(Error::NotConverged { terms: v.terms_used });
        }
        return Ok(v);
    }
    if v.converged && v.sign == 1 && v.rel_err() <= SERIES_REL_ERR {
        Ok(v)
    } else {
        pdf_product_quadrature(p, x)
    }
}

/// Exponent of the joint density along `y = x/u`, without constants, split
/// into the Gaussian part and the linear part `(a u + b x/u) / (1 - rho^2)`
/// that the series expands.
struct Integrand {
    inv_sx2: f64,
    inv_sy2: f64,
    omr: f64,
    a: f64,
    b: f64,
    x: f64,
}

impl Integrand {
    fn new(p: &ProductNormalParams, x: f64) -> Self {
        let (sx, sy, rho, s) = (p.sigma_x(), p.sigma_y(), p.rho(), p.s());
        Integrand {
            inv_sx2: 1.0 / (sx * sx),
            inv_sy2: 1.0 / (sy * sy),
            omr: p.one_minus_rho_sq(),
            a: p.mu_x() / (sx * sx) - rho * p.mu_y() / s,
            b: p.mu_y() / (sy * sy) - rho * p.mu_x() / s,
            x,
        }
    }

    fn gauss(&self, u: f64) -> f64 {
        -(u * u * self.inv_sx2 + self.x * self.x / (u * u) * self.inv_sy2) / (2.0 * self.omr)
            - u.abs().ln()
    }

    fn linear(&self, u: f64) -> f64 {
        (self.a * u + self.b * self.x / u) / self.omr
    }

    fn linear_abs(&self, u: f64) -> f64 {
        ((self.a * u).abs() + (self.b * self.x / u).abs()) / self.omr
    }
}

/// Rough forecast of how the double series will behave at `x`.
struct Outlook {
    /// ln of (sum of |terms|) / (net sum), by Laplace's method.
    log_cancellation: f64,
    /// Outer blocks needed to reach the tail of the series.
    blocks: f64,
}

fn series_outlook(p: &ProductNormalParams, x: f64) -> Outlook {
    let f = Integrand::new(p, x);
    let scale = x.abs().sqrt() * (p.sigma_x() / p.sigma_y()).sqrt();
    let mut best_abs = (f64::NEG_INFINITY, 1.0);
    let mut best = f64::NEG_INFINITY;
    for i in 0..=400 {
        let u = scale * (-25.0 + 50.0 * i as f64 / 400.0).exp();
        for u in [u, -u] {
            let g = f.gauss(u);
            let l_abs = g + f.linear_abs(u);
            if l_abs > best_abs.0 {
                best_abs = (l_abs, u);
            }
            best = best.max(g + f.linear(u));
        }
    }
    let u = best_abs.1.abs();
    // Poisson-like index of the dominant terms in e^{a u} and e^{b x / u}.
    let j = (f.a * u).abs() / f.omr;
    let k = (f.b * x / u).abs() / f.omr;
    let peak = 0.5 * (j + k);
    Outlook { log_cancellation: best_abs.0 - best, blocks: peak + 10.0 * peak.sqrt() + 20.0 }
}

/// Density of `Z = XY` by integrating the joint normal density along the
/// hyperbola `x_1 x_2 = x`, parametrised by `x_1 = +-e^t` so that the
/// `1/|x_1|` Jacobian cancels and the mass near either axis is resolved on
/// a logarithmic scale.
pub fn pdf_product_quadrature(p: &ProductNormalParams, x: f64) -> Result<DensityValue> {
    check_x(x)?;
    let (mx, my, sx, sy, rho) = (p.mu_x(), p.mu_y(), p.sigma_x(), p.sigma_y(), p.rho());
    let omr = p.one_minus_rho_sq();
    let ln_norm = -(2.0 * PI * sx * sy * omr.sqrt()).ln();
    let g = |sgn: f64, t: f64| -> f64 {
        let u = sgn * t.exp();
        let zx = (u - mx) / sx;
        let zy = (x / u - my) / sy;
        -(zx * zx - 2.0 * rho * zx * zy + zy * zy) / (2.0 * omr)
    };
    // Beyond these limits one of the two coordinates is over 40 sd away.
    let t_lo = x.abs().ln() - (my.abs() + 40.0 * sy).ln();
    let t_hi = (mx.abs() + 40.0 * sx).ln();
    const GRID: usize = 600;
    let step = (t_hi - t_lo) / GRID as f64;
    let mut peak = f64::NEG_INFINITY;
    let mut pieces = Vec::new();
    for sgn in [-1.0, 1.0] {
        let mut best = (f64::NEG_INFINITY, t_lo);
        for i in 0..=GRID {
            let t = t_lo + step * i as f64;
            let v = g(sgn, t);
            if v > best.0 {
                best = (v, t);
            }
        }
        peak = peak.max(best.0);
        let mut cuts = vec![t_lo, t_hi];
        for d in [-1.0, 0.0, 1.0] {
            let c = best.1 + d * step;
            if c > t_lo && c < t_hi {
                cuts.push(c);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for w in cuts.windows(2) {
            pieces.push((sgn, w[0], w[1]));
        }
    }
    let cfg = QuadConfig { abs_tol: 0.0, rel_tol: 1e-13, max_intervals: 4000 };
    let mut total = 0.0;
    let mut err = 0.0;
    let mut evals = 0;
    for (sgn, lo, hi) in pieces {
        let r = crate::quad::integrate(
            |t| Ok((g(sgn, t) - peak).exp()),
            lo,
            hi,
            &QuadConfig { abs_tol: 1e-16 * (hi - lo), ..cfg },
        )?;
        total += r.value;
        err += r.abs_error;
        evals += r.evaluations;
    }
    let log_abs = total.ln() + peak + ln_norm;
    Ok(DensityValue {
        log_abs,
        sign: 1,
        converged: true,
        terms_used: evals,
        log_abs_err: (err + 4.0 * f64::EPSILON * total).ln() + peak + ln_norm,
        method: Method::Quadrature,
    })
}

/// Density of `Z` when `mu_y = 0` and `rho = 0`, from the single series.
pub fn pdf_single_zero_mean(
    p: &ProductNormalParams,
    x: f64,
    ctl: &SeriesControl,
) -> Result<DensityValue> {
    if p.mu_y() != 0.0 || p.rho() != 0.0 {
        return Err(Error::CaseMismatch("single series needs mu_y = 0 and rho = 0".into()));
    }
    check_x(x)?;
    let (sx, sy) = (p.sigma_x(), p.sigma_y());
    let s = p.s();
    let w = x.abs() / s;
    let base = -PI.ln() - s.ln() - p.mu_x() * p.mu_x() / (2.0 * sx * sx) - w;
    if p.mu_x() == 0.0 {
        let ln_k0 = ln_bessel_k_scaled_sequence(BesselOrder::integer(0), w)?[0];
        return Ok(DensityValue { method: Method::Series, ..DensityValue::closed_form(base + ln_k0) });
    }
    // ln of mu_x^2 |x| / (sigma_x^3 sigma_y)
    let step = 2.0 * p.mu_x().abs().ln() + x.abs().ln() - 3.0 * sx.ln() - sy.ln();
    let ln_k = ln_bessel_k_scaled_sequence(BesselOrder::integer(ctl.max_outer as i64), w)?;
    let ln_fact = ln_factorials(2 * ctl.max_outer);
    let mut sum = LogSum::EMPTY;
    let mut max_abs_log: f64 = 0.0;
    let mut small = 0;
    let ln_tol = ctl.rel_tol.ln();
    for n in 0..=ctl.max_outer {
        let l = base + n as f64 * step - ln_fact[2 * n] + ln_k[n];
        max_abs_log = max_abs_log.max(l.abs());
        sum.add(l);
        if n > 0 && l - sum.ln() < ln_tol {
            small += 1;
            if small == 2 {
                return Ok(combine(sum, LogSum::EMPTY, max_abs_log, n + 1, true));
            }
        } else {
            small = 0;
        }
    }
    Err(Error::NotConverged { terms: ctl.max_outer + 1 })
}

/// Closed-form density of the mean of `n` copies when both means are zero.
///
/// For `n >= 2` the density is finite at the origin and `x = 0` is allowed.
pub fn pdf_mean_zero_means(mp: &MeanParams, x: f64) -> Result<DensityValue> {
    let p = mp.base();
    if p.mu_x() != 0.0 || p.mu_y() != 0.0 {
        return Err(Error::CaseMismatch("closed form needs mu_x = mu_y = 0".into()));
    }
    if x.is_nan() {
        return Err(Error::InvalidArgument("x is NaN".into()));
    }
    let n = mp.n() as f64;
    let sn = mp.s_n();
    let omr = p.one_minus_rho_sq();
    let nu2 = mp.n() as i64 - 1;
    let half_nu = 0.5 * (n - 1.0);
    let ln_norm = 0.5 * (1.0 - n) * std::f64::consts::LN_2
        - 0.5 * (n + 1.0) * sn.ln()
        - 0.5 * (PI * omr).ln()
        - libm::lgamma(0.5 * n);
    if x == 0.0 {
        if mp.n() == 1 {
            return Err(Error::SingularPoint);
        }
        // |x|^nu K_nu(c|x|) -> Gamma(nu)/2 (2/c)^nu as x -> 0.
        let lim = libm::lgamma(half_nu) - std::f64::consts::LN_2
            + half_nu * (2.0 * sn * omr).ln();
        return Ok(DensityValue::closed_form(ln_norm + lim));
    }
    let w = x.abs() / (sn * omr);
    let ln_k = *ln_bessel_k_scaled_sequence(BesselOrder::from_twice(nu2), w)?
        .last()
        .expect("sequence is non-empty");
    let l = ln_norm + half_nu * x.abs().ln() + (p.rho() * x - x.abs()) / (sn * omr) + ln_k;
    Ok(DensityValue::closed_form(l))
}

/// Value of `p` and its first four derivatives at `x` for the zero-mean
/// closed form, obtained by differentiating `|x|^nu e^{beta x} K_nu(c|x|)`
/// term by term with `d/du [u^p K_q(cu)] = (p - q) u^{p-1} K_q - c u^p K_{q-1}`.
pub fn zero_means_pdf_derivatives(mp: &MeanParams, x: f64) -> Result<[f64; 5]> {
    let p = mp.base();
    if p.mu_x() != 0.0 || p.mu_y() != 0.0 {
        return Err(Error::CaseMismatch("closed form needs mu_x = mu_y = 0".into()));
    }
    check_x(x)?;
    let n = mp.n() as f64;
    let sn = mp.s_n();
    let omr = p.one_minus_rho_sq();
    let c = 1.0 / (sn * omr);
    let beta = p.rho() * c;
    let u = x.abs();
    let ln_norm = 0.5 * (1.0 - n) * std::f64::consts::LN_2
        - 0.5 * (n + 1.0) * sn.ln()
        - 0.5 * (PI * omr).ln()
        - libm::lgamma(0.5 * n);
    // Terms (coefficient, power of u, twice the Bessel order).
    let nu2 = mp.n() as i64 - 1;
    let mut terms: Vec<(f64, f64, i64)> = vec![(1.0, 0.5 * (n - 1.0), nu2)];
    // Orders reached: nu - 4 ..= nu; K is even in the order.
    let half = nu2.rem_euclid(2) == 1;
    let max_twice = nu2.max((nu2 - 8).abs());
    let ln_k = ln_bessel_k_scaled_sequence(BesselOrder::from_twice(max_twice), c * u)?;
    let k_at = |twice_q: i64| -> f64 { ln_k[((twice_q.abs() - i64::from(half)) / 2) as usize] };
    // Common scale e^{beta x - c u} times the normalising constant.
    let scale = ln_norm + beta * x - c * u;
    let eval = |ts: &[(f64, f64, i64)]| -> f64 {
        ts.iter()
            .map(|&(coef, pw, q)| coef * (pw * u.ln() + k_at(q) + scale).exp())
            .sum()
    };
    // h^{(i)} in the variable u, then converted to x.
    let mut h = [0.0; 5];
    let sgn: f64 = if x < 0.0 { -1.0 } else { 1.0 };
    for (i, hi) in h.iter_mut().enumerate() {
        *hi = eval(&terms) * sgn.powi(i as i32);
        let mut next = Vec::with_capacity(terms.len() * 2);
        for &(coef, pw, q) in &terms {
            let qf = q as f64 / 2.0;
            if pw != qf {
                next.push((coef * (pw - qf), pw - 1.0, q));
            }
            next.push((-coef * c, pw, q - 2));
        }
        terms = next;
    }
    // Leibniz rule for e^{beta x} h(x).
    let binom = [[1.0, 0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0, 0.0], [
        1.0, 3.0, 3.0, 1.0, 0.0,
    ], [1.0, 4.0, 6.0, 4.0, 1.0]];
    let mut out = [0.0; 5];
    for k in 0..5 {
        out[k] = (0..=k).map(|i| binom[k][i] * beta.powi((k - i) as i32) * h[i]).sum();
    }
    Ok(out)
}

/// Derivatives 0..=4 of `f` at `x` by seven-point central differences with
/// one Richardson step.
pub fn finite_difference_derivatives<F>(mut f: F, x: f64, h: f64) -> Result<[f64; 5]>
where
    F: FnMut(f64) -> Result<f64>,
{
    const D1: [f64; 7] = [-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0];
    const D2: [f64; 7] = [2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0];
    const D3: [f64; 7] = [1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0];
    const D4: [f64; 7] = [-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0];
    let mut stencil = |h: f64| -> Result<[f64; 4]> {
        let mut fv = [0.0; 7];
        for (i, v) in fv.iter_mut().enumerate() {
            *v = f(x + (i as f64 - 3.0) * h)?;
        }
        let dot = |c: &[f64; 7]| c.iter().zip(&fv).map(|(a, b)| a * b).sum::<f64>();
        Ok([
            dot(&D1) / (60.0 * h),
            dot(&D2) / (180.0 * h * h),
            dot(&D3) / (8.0 * h * h * h),
            dot(&D4) / (6.0 * h * h * h * h),
        ])
    };
    let coarse = stencil(h)?;
    let fine = stencil(0.5 * h)?;
    // Leading error orders h^6, h^6, h^4, h^4.
    let orders = [6, 6, 4, 4];
    let mut out = [f(x)?, 0.0, 0.0, 0.0, 0.0];
    for k in 0..4 {
        let r = 2f64.powi(orders[k]);
        out[k + 1] = (r * fine[k] - coarse[k]) / (r - 1.0);
    }
    Ok(out)
}

/// Step used for finite-difference derivatives of the density series.
pub fn default_fd_step(x: f64) -> f64 {
    1e-2f64.max(1e-2 * x.abs())
}

/// Left-hand side of the fourth-order density ODE (unit variances),
/// divided by the largest of its five terms.
pub fn ode_residual_density(mp: &MeanParams, x: f64, derivs: &[f64; 5]) -> Result<f64> {
    let p = mp.base();
    if p.sigma_x() != 1.0 || p.sigma_y() != 1.0 {
        return Err(Error::CaseMismatch("density ODE is stated for sigma_x = sigma_y = 1".into()));
    }
    let terms = ode_terms(mp, x, derivs);
    let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let total: f64 = terms.iter().sum();
    Ok(if scale == 0.0 { 0.0 } else { total.abs() / scale })
}

fn ode_terms(mp: &MeanParams, x: f64, d: &[f64; 5]) -> [f64; 5] {
    let p = mp.base();
    let n = mp.n() as f64;
    let (r, mx, my) = (p.rho(), p.mu_x(), p.mu_y());
    let omr = p.one_minus_rho_sq();
    let c4 = omr * omr * x;
    let c3 = omr * (omr * (4.0 - n) - 4.0 * r * n * x);
    let c2 = n
        * ((6.0 * r * r - 2.0) * n * x - 12.0 * r * omr
            + n * (3.0 * r * omr + r * my * my - r * r * mx * my - mx * my + r * mx * mx));
    let c1 = n
        * n
        * (2.0 * (6.0 * r * r - 2.0) - n * (2.0 * r * mx * my - mx * mx - my * my + 3.0 * r * r - 1.0)
            + 4.0 * r * n * x);
    let c0 = n * n * n * (4.0 * r + n * (x - mx * my - r));
    [c0 * d[0], c1 * d[1], c2 * d[2], c3 * d[3], c4 * d[4]]
}

/// Points beyond which each tail of `Z` has probability below `1e-17`,
/// from the Chernoff bound with the closed-form moment generating function.
pub fn tail_cutoffs(p: &ProductNormalParams) -> (f64, f64) {
    let (rx, ry, rho) = (p.r_x(), p.r_y(), p.rho());
    let target = (1e-17f64).ln();
    // Upper tail uses theta in (0, 1/(1+rho)); lower tail uses -theta in (-1/(1-rho), 0).
    let cutoff = |dir: f64, theta_max: f64| -> f64 {
        let bound = |r: f64| -> f64 {
            (1..400)
                .map(|i| {
                    let th = theta_max * i as f64 / 400.0;
                    ln_mgf_unit(rx, ry, rho, dir * th) - th * r
                })
                .fold(f64::INFINITY, f64::min)
        };
        let mut r = 1.0 + (rx * ry + rho).abs();
        while bound(r) > target {
            r *= 1.5;
        }
        r
    };
    let hi = cutoff(1.0, 1.0 / (1.0 + rho));
    let lo = cutoff(-1.0, 1.0 / (1.0 - rho));
    (-lo * p.s(), hi * p.s())
}

/// Distribution function of `Z = XY`.
///
/// Integrates the density away from the logarithmic singularity at the
/// origin on both sides. Values are clamped into `[0, 1]` but not
/// renormalised.
pub fn cdf_product(p: &ProductNormalParams, x: f64, ctl: &SeriesControl) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::InvalidArgument("x is NaN".into()));
    }
    let cfg = QuadConfig { abs_tol: 1e-13, rel_tol: 1e-11, max_intervals: 4000 };
    let (lo, hi) = tail_cutoffs(p);
    let density = |y: f64| -> Result<f64> { Ok(pdf_product(p, y, ctl)?.value().max(0.0)) };
    let below_zero = integrate_singular_start(|u| density(-u), 0.0, -lo, &cfg)?.value;
    let v = if x < 0.0 {
        if x <= lo {
            return Ok(0.0);
        }
        below_zero - integrate_singular_start(|u| density(-u), 0.0, -x, &cfg)?.value
    } else {
        below_zero + integrate_singular_start(density, 0.0, x.min(hi), &cfg)?.value
    };
    Ok(v.clamp(0.0, 1.0))
}
