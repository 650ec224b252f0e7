//! Modified Bessel function of the second kind `K_nu(x)` for integer and
//! half-integer orders.
//!
//! Base values come from the power series (`x <= 2`), Steed's continued
//! fraction (`x > 2`) or the closed forms for `nu = 1/2, 3/2`. Higher orders
//! use the forward recurrence `K_{nu+1} = K_{nu-1} + (2 nu / x) K_nu`, which
//! is stable because `K` grows with the order.

use std::f64::consts::{FRAC_PI_2, LN_2};

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_606_512_090_082_402_431;

/// Below this argument the leading small-`x` asymptotics are used for the
/// base orders.
pub const TINY_X: f64 = 1e-8;

/// Order `nu` stored as `2 nu`, canonicalised to `nu >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BesselOrder {
    twice_nu: u64,
}

impl BesselOrder {
    /// Order from `2 nu`; negative orders map to `-nu` since `K_{-nu} = K_nu`.
    pub fn from_twice(twice_nu: i64) -> Self {
        BesselOrder { twice_nu: twice_nu.unsigned_abs() }
    }

    pub fn integer(nu: i64) -> Self {
        Self::from_twice(2 * nu)
    }

    /// Parse a real order; only integers and half-integers are accepted.
    pub fn from_f64(nu: f64) -> Result<Self> {
        let twice = 2.0 * nu;
        if !twice.is_finite() || twice.fract() != 0.0 || twice.abs() > 1e15 {
            return Err(Error::InvalidArgument(format!(
                "order {nu} is not an integer or half-integer"
            )));
        }
        Ok(Self::from_twice(twice as i64))
    }

    pub fn twice_nu(&self) -> u64 {
        self.twice_nu
    }

    pub fn nu(&self) -> f64 {
        self.twice_nu as f64 / 2.0
    }

    pub fn is_half_integer(&self) -> bool {
        self.twice_nu % 2 == 1
    }

    /// Number of unit steps above the base order (0 or 1/2).
    fn steps(&self) -> usize {
        (self.twice_nu / 2) as usize
    }
}

fn check_arg(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveArgument(x))
    }
}

/// `(e^x K_0(x), e^x K_1(x))`.
fn k01_scaled(x: f64) -> (f64, f64) {
    if x < TINY_X {
        let ex = x.exp();
        return ((-(0.5 * x).ln() - EULER_GAMMA) * ex, ex / x);
    }
    if x <= 2.0 {
        let (k0, k1) = k01_series(x);
        let ex = x.exp();
        return (k0 * ex, k1 * ex);
    }
    steed_cf2(0.0, x)
}

/// Power series for `K_0` and `K_1` (Abramowitz & Stegun 9.6.13 and 9.6.11).
fn k01_series(x: f64) -> (f64, f64) {
    let q = 0.25 * x * x;
    let ln_half = (0.5 * x).ln();
    // psi(k+1) = -gamma + H_k
    let mut psi_k1 = -EULER_GAMMA;
    let mut u = 1.0; // q^k / (k!)^2
    let mut t = 1.0; // q^k / (k! (k+1)!)
    let mut sum0 = 0.0;
    let mut sum1 = 0.0;
    for k in 0..200 {
        let kf = k as f64;
        let psi_k2 = psi_k1 + 1.0 / (kf + 1.0);
        let d0 = u * (psi_k1 - ln_half);
        let d1 = t * (ln_half - 0.5 * (psi_k1 + psi_k2));
        sum0 += d0;
        sum1 += d1;
        if d0.abs() <= f64::EPSILON * 0.25 * sum0.abs() && d1.abs() <= f64::EPSILON * 0.25 * sum1.abs()
        {
            break;
        }
        psi_k1 = psi_k2;
        u *= q / ((kf + 1.0) * (kf + 1.0));
        t *= q / ((kf + 1.0) * (kf + 2.0));
    }
    (sum0, 1.0 / x + 0.5 * x * sum1)
}

/// Steed's continued fraction (Temme's CF2) giving `(e^x K_nu, e^x K_{nu+1})`
/// for `|nu| <= 1/2` and `x >= 2`.
fn steed_cf2(nu: f64, x: f64) -> (f64, f64) {
    let mut bi = 2.0 * (1.0 + x);
    let mut di = 1.0 / bi;
    let mut delhi = di;
    let mut hi = di;
    let mut qi = 0.0;
    let mut qip1 = 1.0;
    let mut ai = -(0.25 - nu * nu);
    let a1 = ai;
    let mut ci = -ai;
    let mut bqi = -ai;
    let mut s = 1.0 + bqi * delhi;
    for i in 2..10_000 {
        ai -= 2.0 * (i - 1) as f64;
        ci = -ai * ci / i as f64;
        let tmp = (qi - bi * qip1) / ai;
        qi = qip1;
        qip1 = tmp;
        bqi += ci * qip1;
        bi += 2.0;
        di = 1.0 / (bi + ai * di);
        delhi *= bi * di - 1.0;
        hi += delhi;
        let dels = bqi * delhi;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    hi *= -a1;
    let k_nu = (FRAC_PI_2 / x).sqrt() / s;
    let k_nup1 = k_nu * (nu + x + 0.5 - hi) / x;
    (k_nu, k_nup1)
}

/// `(e^x K_{1/2}(x), e^x K_{3/2}(x))`.
fn khalf_scaled(x: f64) -> (f64, f64) {
    let k = (FRAC_PI_2 / x).sqrt();
    (k, k * (1.0 + 1.0 / x))
}

fn base_pair_scaled(half: bool, x: f64) -> (f64, f64) {
    if half {
        khalf_scaled(x)
    } else {
        k01_scaled(x)
    }
}

/// `K_nu(x)`, or `e^x K_nu(x)` when `scaled` is set.
pub fn bessel_k(order: BesselOrder, x: f64, scaled: bool) -> Result<f64> {
    check_arg(x)?;
    let (mut prev, mut cur) = base_pair_scaled(order.is_half_integer(), x);
    let steps = order.steps();
    let mut value = prev;
    if steps >= 1 {
        let mut nu = order.nu() - steps as f64 + 1.0;
        for _ in 1..steps {
            let next = prev + 2.0 * nu / x * cur;
            prev = cur;
            cur = next;
            nu += 1.0;
            if !cur.is_finite() {
                break;
            }
        }
        value = cur;
    }
    finish(value, order.nu(), x, scaled)
}

fn finish(scaled_value: f64, nu: f64, x: f64, scaled: bool) -> Result<f64> {
    let v = if scaled {
        scaled_value
    } else if scaled_value.is_finite() {
        let direct = scaled_value * (-x).exp();
        if direct.is_finite() {
            direct
        } else {
            (scaled_value.ln() - x).exp()
        }
    } else {
        scaled_value
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow { nu, x })
    }
}

/// `[K_{nu0}(x), K_{nu0+1}(x), ..., K_{max}(x)]` where `nu0` is 0 for
/// integer `max_order` and 1/2 for half-integer `max_order`.
pub fn bessel_k_sequence(max_order: BesselOrder, x: f64, scaled: bool) -> Result<Vec<f64>> {
    check_arg(x)?;
    let nu0 = if max_order.is_half_integer() { 0.5 } else { 0.0 };
    let (k0, k1) = base_pair_scaled(max_order.is_half_integer(), x);
    let steps = max_order.steps();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(k0);
    if steps >= 1 {
        out.push(k1);
    }
    for i in 2..=steps {
        let nu = nu0 + (i - 1) as f64;
        let next = out[i - 2] + 2.0 * nu / x * out[i - 1];
        out.push(next);
    }
    out.iter()
        .enumerate()
        .map(|(i, &v)| finish(v, nu0 + i as f64, x, scaled))
        .collect()
}

/// `[ln K_{nu0}(x), ..., ln K_{max}(x)]`, immune to overflow and underflow.
pub fn ln_bessel_k_sequence(max_order: BesselOrder, x: f64) -> Result<Vec<f64>> {
    let mut out = ln_bessel_k_scaled_sequence(max_order, x)?;
    for v in &mut out {
        *v -= x;
    }
    Ok(out)
}

/// `[ln(e^x K_{nu0}(x)), ..., ln(e^x K_{max}(x))]`.
///
/// The recurrence is run on mantissas that are rescaled by powers of two
/// whenever they grow large, so the result is exact up to rounding of the
/// recurrence itself.
pub fn ln_bessel_k_scaled_sequence(max_order: BesselOrder, x: f64) -> Result<Vec<f64>> {
    check_arg(x)?;
    const RESCALE_AT: f64 = 1e280;
    const RESCALE_BITS: i32 = 900;
    let nu0 = if max_order.is_half_integer() { 0.5 } else { 0.0 };
    let (mut prev, mut cur) = base_pair_scaled(max_order.is_half_integer(), x);
    let steps = max_order.steps();
    // ln of the common factor applied to (prev, cur).
    let mut shift = 0.0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(prev.ln());
    if steps >= 1 {
        out.push(cur.ln());
    }
    for i in 2..=steps {
        let nu = nu0 + (i - 1) as f64;
        let next = prev + 2.0 * nu / x * cur;
        prev = cur;
        cur = next;
        if cur > RESCALE_AT {
            let f = 2f64.powi(-RESCALE_BITS);
            prev *= f;
            cur *= f;
            shift += RESCALE_BITS as f64 * LN_2;
        }
        out.push(cur.ln() + shift);
    }
    Ok(out)
}

/// `ln K_nu(x)`.
pub fn ln_bessel_k(order: BesselOrder, x: f64) -> Result<f64> {
    Ok(*ln_bessel_k_sequence(order, x)?.last().expect("sequence is non-empty"))
}
