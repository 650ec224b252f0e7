//! Monte Carlo sampling of `Zbar_n` and batched estimators with standard
//! errors.
//!
//! Batch `b` draws from ChaCha8 seeded with the user seed on stream `b`, so
//! results do not depend on how rayon schedules the batches. Batch summaries
//! are merged in batch order.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::MeanParams;
use crate::stein::{apply, SteinOperatorSpec, TestFunction};

pub const DEFAULT_BATCH: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub count: usize,
    pub batch: usize,
}

impl SamplerConfig {
    pub fn new(seed: u64, count: usize, batch: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("count must be at least 1".into()));
        }
        if batch == 0 || batch > count {
            return Err(Error::InvalidArgument(format!("batch must be in 1..={count}, got {batch}")));
        }
        Ok(SamplerConfig { seed, count, batch })
    }

    /// `count` samples with the default batch size (capped at `count`).
    pub fn with_count(seed: u64, count: usize) -> Result<Self> {
        Self::new(seed, count, DEFAULT_BATCH.min(count.max(1)))
    }

    fn batches(&self) -> impl IndexedParallelIterator<Item = (u64, usize)> + '_ {
        let nb = self.count.div_ceil(self.batch);
        (0..nb).into_par_iter().map(move |b| {
            let len = if b + 1 == nb { self.count - b * self.batch } else { self.batch };
            (b as u64, len)
        })
    }

    fn rng(&self, batch: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(batch);
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateWithError {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`.
    pub stderr: f64,
    pub count: usize,
}

impl EstimateWithError {
    /// `(mean - target) / stderr`; infinite when the stderr is zero and the
    /// mean misses the target.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = self.mean - target;
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }

    pub fn within(&self, target: f64, bands: f64) -> bool {
        self.z_score(target).abs() <= bands
    }
}

/// Running count, mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Pooled statistics of two disjoint samples.
    fn merge(self, o: Welford) -> Welford {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        let w = o.n as f64 / n as f64;
        Welford { n, mean: self.mean + d * w, m2: self.m2 + o.m2 + d * d * self.n as f64 * w }
    }

    fn estimate(&self) -> EstimateWithError {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        EstimateWithError { mean: self.mean, stderr: (var / self.n as f64).sqrt(), count: self.n }
    }
}

/// A distribution we can draw from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Source {
    MeanOfProducts(MeanParams),
    Normal { mean: f64, sd: f64 },
}

impl Source {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Source::MeanOfProducts(mp) => draw_mean_of_products(mp, rng),
            Source::Normal { mean, sd } => {
                let u: f64 = rng.sample(StandardNormal);
                mean + sd * u
            }
        }
    }
}

fn draw_mean_of_products(mp: &MeanParams, rng: &mut ChaCha8Rng) -> f64 {
    let p = mp.base();
    let (mx, my, sx, sy, rho) = (p.mu_x(), p.mu_y(), p.sigma_x(), p.sigma_y(), p.rho());
    let c = p.one_minus_rho_sq().sqrt();
    let mut acc = 0.0;
    for _ in 0..mp.n() {
        let u: f64 = rng.sample(StandardNormal);
        let v: f64 = rng.sample(StandardNormal);
        acc += (mx + sx * u) * (my + sy * (rho * u + c * v));
    }
    acc / mp.n() as f64
}

/// Pooled statistics of `g` applied to the draws, one per output column.
fn accumulate<const K: usize>(src: &Source, cfg: &SamplerConfig, g: impl Fn(f64) -> [f64; K] + Sync) -> [Welford; K] {
    let parts: Vec<[Welford; K]> = cfg
        .batches()
        .map(|(b, len)| {
            let mut rng = cfg.rng(b);
            let mut acc = [Welford::default(); K];
            for _ in 0..len {
                let v = g(src.draw(&mut rng));
                for (a, x) in acc.iter_mut().zip(v) {
                    a.push(x);
                }
            }
            acc
        })
        .collect();
    parts.into_iter().fold([Welford::default(); K], |mut tot, p| {
        for (t, x) in tot.iter_mut().zip(p) {
            *t = t.merge(x);
        }
        tot
    })
}

/// Draws of `Zbar_n`, in batch order.
pub fn sample_mean_of_products(mp: &MeanParams, cfg: &SamplerConfig) -> Vec<f64> {
    sample(&Source::MeanOfProducts(*mp), cfg)
}

pub fn sample(src: &Source, cfg: &SamplerConfig) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = cfg
        .batches()
        .map(|(b, len)| {
            let mut rng = cfg.rng(b);
            (0..len).map(|_| src.draw(&mut rng)).collect()
        })
        .collect();
    parts.concat()
}

/// Mean of `g(draw)` with its standard error.
pub fn estimate_expectation(src: &Source, cfg: &SamplerConfig, g: impl Fn(f64) -> f64 + Sync) -> EstimateWithError {
    let [w] = accumulate(src, cfg, |x| [g(x)]);
    w.estimate()
}

/// `E[A f(Zbar_n)]`, which vanishes for a Stein operator of `Zbar_n`.
pub fn estimate_stein_expectation(
    mp: &MeanParams,
    spec: &SteinOperatorSpec,
    f: &TestFunction,
    cfg: &SamplerConfig,
) -> EstimateWithError {
    estimate_stein_expectation_under(&Source::MeanOfProducts(*mp), spec, f, cfg)
}

/// Same expectation with draws from an arbitrary source.
pub fn estimate_stein_expectation_under(
    src: &Source,
    spec: &SteinOperatorSpec,
    f: &TestFunction,
    cfg: &SamplerConfig,
) -> EstimateWithError {
    estimate_expectation(src, cfg, |x| apply(spec, f, x))
}

/// Empirical characteristic function `E[exp(i t Zbar_n)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfEstimate {
    pub value: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
    pub count: usize,
}

pub fn estimate_cf(mp: &MeanParams, t: f64, cfg: &SamplerConfig) -> CfEstimate {
    let [re, im] = accumulate(&Source::MeanOfProducts(*mp), cfg, |x| {
        let (s, c) = (t * x).sin_cos();
        [c, s]
    });
    let (re, im) = (re.estimate(), im.estimate());
    CfEstimate { value: Complex64::new(re.mean, im.mean), stderr_re: re.stderr, stderr_im: im.stderr, count: re.count }
}

/// Raw moment `E[Zbar_n^k]`, or the central moment by the two-pass method:
/// the first pass estimates the mean, the second averages `(x - mean)^k`
/// over the same draws. The central standard error treats the estimated
/// mean as fixed.
pub fn estimate_moment(mp: &MeanParams, k: u32, central: bool, cfg: &SamplerConfig) -> EstimateWithError {
    let src = Source::MeanOfProducts(*mp);
    let shift = if central { estimate_expectation(&src, cfg, |x| x).mean } else { 0.0 };
    estimate_expectation(&src, cfg, |x| (x - shift).powi(k as i32))
}

/// `E[sigma^2 f'(N) - (N - mu) f(N)]` for `N ~ N(mu, sigma^2)`, which is
/// zero by the classical Stein identity for the normal law.
pub fn normal_stein_baseline(mean: f64, sd: f64, f: &TestFunction, cfg: &SamplerConfig) -> EstimateWithError {
    estimate_expectation(&Source::Normal { mean, sd }, cfg, |x| {
        let d = f.derivs(x);
        sd * sd * d[1] - (x - mean) * d[0]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{central_moments, raw_moments};
    use crate::params::ProductNormalParams;
    use crate::stein::{operator, operator_a1, OperatorKind};

    // Each test below makes a handful of 4-stderr comparisons; with about 60
    // comparisons in this module the expected false-failure rate is < 0.4%.

    fn mp(mx: f64, my: f64, sx: f64, sy: f64, rho: f64, n: u64) -> MeanParams {
        ProductNormalParams::new(mx, my, sx, sy, rho).unwrap().with_copies(n).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::new(1, 0, 1).is_err());
        assert!(SamplerConfig::new(1, 10, 11).is_err());
        assert!(SamplerConfig::new(1, 10, 0).is_err());
        assert_eq!(SamplerConfig::with_count(1, 10).unwrap().batch, 10);
    }

    #[test]
    fn deterministic_and_batch_ordered() {
        let m = mp(0.3, -1.0, 1.2, 0.7, 0.4, 3);
        let cfg = SamplerConfig::new(42, 1000, 64).unwrap();
        let a = sample_mean_of_products(&m, &cfg);
        let b = sample_mean_of_products(&m, &cfg);
        assert_eq!(a[..100], b[..100]);
        assert_eq!(a.len(), 1000);
        let e1 = estimate_moment(&m, 2, false, &cfg);
        let e2 = estimate_moment(&m, 2, false, &cfg);
        assert_eq!(e1, e2);
        let other = sample_mean_of_products(&m, &SamplerConfig::new(43, 1000, 64).unwrap());
        assert_ne!(a[0], other[0]);
    }

    #[test]
    fn pooled_statistics_match_direct() {
        let m = mp(1.0, 2.0, 1.0, 2.0, 0.5, 3);
        let cfg = SamplerConfig::new(7, 10_000, 333).unwrap();
        let xs = sample_mean_of_products(&m, &cfg);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let e = estimate_expectation(&Source::MeanOfProducts(m), &cfg, |x| x);
        assert!((e.mean - mean).abs() < 1e-12 * mean.abs());
        assert!((e.stderr - (var / n).sqrt()).abs() < 1e-10 * e.stderr);
    }

    #[test]
    fn sample_means() {
        let cfg = SamplerConfig::with_count(1, 1_000_000).unwrap();
        let z = mp(0.0, 0.0, 1.0, 1.0, 0.0, 1);
        assert!(estimate_moment(&z, 1, false, &cfg).within(0.0, 4.0));
        let g = mp(1.0, -0.5, 0.8, 1.5, -0.6, 2);
        assert!(estimate_moment(&g, 1, false, &cfg).within(1.0 * -0.5 + -0.6 * 0.8 * 1.5, 4.0));
    }

    #[test]
    fn cf_at_zero_is_exact() {
        let e = estimate_cf(&mp(1.0, 2.0, 1.0, 2.0, 0.5, 3), 0.0, &SamplerConfig::with_count(3, 5000).unwrap());
        assert_eq!(e.value, Complex64::new(1.0, 0.0));
        assert_eq!((e.stderr_re, e.stderr_im), (0.0, 0.0));
    }

    #[test]
    fn moments_against_recursion() {
        let cfg = SamplerConfig::with_count(11, 2_000_000).unwrap();
        let m = mp(1.0, 0.0, 1.0, 1.0, 0.0, 1);
        assert!(estimate_moment(&m, 6, false, &cfg).within(1140.0, 4.0));
        let g = mp(0.5, -1.0, 1.3, 0.9, 0.3, 2);
        let var = central_moments(&g, 2).values[2];
        assert!(estimate_moment(&g, 2, true, &cfg).within(var, 4.0));
        let raw = raw_moments(&g, 4).values;
        assert!(estimate_moment(&g, 4, false, &cfg).within(raw[4], 4.0));
    }

    #[test]
    fn all_operators_on_their_cases() {
        let cfg = SamplerConfig::with_count(5, 1_000_000).unwrap();
        let cases = [
            (OperatorKind::A1, mp(0.8, -1.2, 1.1, 0.7, 0.3, 2)),
            (OperatorKind::A2, mp(1.0, 0.5, 1.2, 0.6, -0.4, 3)),
            (OperatorKind::A3, mp(0.0, 0.0, 1.3, 0.8, 0.5, 2)),
            (OperatorKind::A4, mp(0.0, 0.0, 0.9, 1.1, -0.3, 4)),
            (OperatorKind::A5, mp(0.0, 0.0, 1.5, 0.7, 0.0, 1)),
            (OperatorKind::A6, mp(0.7, -0.4, 1.0, 1.0, 0.0, 1)),
            (OperatorKind::A7, mp(0.6, 0.6, 1.0, 1.0, 0.0, 1)),
        ];
        for (kind, m) in cases {
            let spec = operator(kind, &m).unwrap();
            for k in 0..=4 {
                let e = estimate_stein_expectation(&m, &spec, &TestFunction::monomial(k), &cfg);
                assert!(e.within(0.0, 4.0), "{kind} x^{k}: {e:?}");
            }
        }
    }

    #[test]
    fn a2_on_gaussian_damped_polynomial() {
        let m = mp(0.9, 1.8, 1.0, 2.0, 0.2, 2);
        let spec = operator(OperatorKind::A2, &m).unwrap();
        let f = TestFunction::GaussPoly { c: 0.5, poly: vec![1.0, -0.5, 0.25] };
        let e = estimate_stein_expectation(&m, &spec, &f, &SamplerConfig::with_count(8, 1_000_000).unwrap());
        assert!(e.within(0.0, 4.0), "{e:?}");
    }

    #[test]
    fn a1_detects_a_matched_normal() {
        // Under N(m, v) with the mean and variance of Zbar_n, E[A1 x^2]
        // differs from zero only through the third moment: the x^3 term has
        // coefficient a_{1,0} = 1, so the expectation equals
        // E[N^3] - E[Zbar^3] = -mu_3(Zbar).
        let m = mp(1.5, 0.5, 1.0, 1.0, 0.6, 1);
        let c = central_moments(&m, 3).values;
        let expected = -c[3];
        let mean = raw_moments(&m, 1).values[1];
        let spec = operator_a1(&m);
        let f = TestFunction::monomial(2);
        let cfg = SamplerConfig::with_count(9, 1_000_000).unwrap();
        let e = estimate_stein_expectation_under(&Source::Normal { mean, sd: c[2].sqrt() }, &spec, &f, &cfg);
        assert!(e.z_score(0.0).abs() > 6.0, "{e:?}");
        assert!(e.within(expected, 4.0), "{e:?} vs {expected}");
    }

    #[test]
    fn normal_baseline() {
        let e = normal_stein_baseline(0.7, 1.6, &TestFunction::monomial(3), &SamplerConfig::with_count(2, 1_000_000).unwrap());
        assert!(e.within(0.0, 4.0), "{e:?}");
    }
}
