//! Validated parameters of the product-normal law and of the mean of `n`
//! independent copies, plus the case split that decides which Stein
//! operator order is available.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing `mu_x/sigma_x` with `mu_y/sigma_y`.
pub const DEFAULT_RATIO_TOL: f64 = 1e-12;

/// Parameters `(mu_x, mu_y, sigma_x, sigma_y, rho)` of `Z = XY` where
/// `(X, Y)` is bivariate normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProductNormalParams {
    mu_x: f64,
    mu_y: f64,
    sigma_x: f64,
    sigma_y: f64,
    rho: f64,
}

impl ProductNormalParams {
    pub fn new(mu_x: f64, mu_y: f64, sigma_x: f64, sigma_y: f64, rho: f64) -> Result<Self> {
        for (which, v) in [
            ("mu_x", mu_x),
            ("mu_y", mu_y),
            ("sigma_x", sigma_x),
            ("sigma_y", sigma_y),
            ("rho", rho),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteParameter { which });
            }
        }
        if sigma_x <= 0.0 {
            return Err(Error::NonPositiveSigma { which: "sigma_x", value: sigma_x });
        }
        if sigma_y <= 0.0 {
            return Err(Error::NonPositiveSigma { which: "sigma_y", value: sigma_y });
        }
        if rho.abs() >= 1.0 {
            return Err(Error::CorrelationOutOfRange(rho));
        }
        Ok(ProductNormalParams { mu_x, mu_y, sigma_x, sigma_y, rho })
    }

    pub fn mu_x(&self) -> f64 {
        self.mu_x
    }
    pub fn mu_y(&self) -> f64 {
        self.mu_y
    }
    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }
    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `mu_x / sigma_x`.
    pub fn r_x(&self) -> f64 {
        self.mu_x / self.sigma_x
    }

    /// `mu_y / sigma_y`.
    pub fn r_y(&self) -> f64 {
        self.mu_y / self.sigma_y
    }

    /// `sigma_x * sigma_y`.
    pub fn s(&self) -> f64 {
        self.sigma_x * self.sigma_y
    }

    /// `1 - rho^2`, always in `(0, 1]`.
    pub fn one_minus_rho_sq(&self) -> f64 {
        (1.0 - self.rho) * (1.0 + self.rho)
    }

    pub fn with_copies(self, n: u64) -> Result<MeanParams> {
        MeanParams::new(self, n)
    }
}

/// Parameters of the mean of `n` independent copies of `Z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanParams {
    base: ProductNormalParams,
    n: u64,
}

impl MeanParams {
    pub fn new(base: ProductNormalParams, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidCopyCount(n));
        }
        Ok(MeanParams { base, n })
    }

    pub fn base(&self) -> &ProductNormalParams {
        &self.base
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `sigma_x * sigma_y / n`.
    pub fn s_n(&self) -> f64 {
        self.base.s() / self.n as f64
    }

    /// Mean of the averaged product, `mu_x mu_y + rho sigma_x sigma_y`.
    pub fn mean(&self) -> f64 {
        self.base.mu_x * self.base.mu_y + self.base.rho * self.base.s()
    }
}

/// Which of the nested special cases the parameters fall into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistributionCase {
    General,
    EqualRatio,
    ZeroMeans,
    OneZeroMeanUncorrelated,
}

impl DistributionCase {
    /// Lowest order of a linear-coefficient Stein operator known for this case.
    pub fn stein_order(self) -> usize {
        match self {
            DistributionCase::ZeroMeans => 2,
            DistributionCase::EqualRatio => 3,
            DistributionCase::General | DistributionCase::OneZeroMeanUncorrelated => 4,
        }
    }
}

/// Classify parameters. Zero means are tested exactly and take precedence
/// over the ratio test.
pub fn classify(p: &ProductNormalParams, ratio_tol: f64) -> DistributionCase {
    if p.mu_x == 0.0 && p.mu_y == 0.0 {
        return DistributionCase::ZeroMeans;
    }
    if (p.mu_x == 0.0) != (p.mu_y == 0.0) && p.rho == 0.0 {
        return DistributionCase::OneZeroMeanUncorrelated;
    }
    let (rx, ry) = (p.r_x(), p.r_y());
    if (rx - ry).abs() <= ratio_tol * rx.abs().max(ry.abs()) {
        return DistributionCase::EqualRatio;
    }
    DistributionCase::General
}

/// Serializable parameter bundle used by the CLI and JSON inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsInput {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
    #[serde(default = "default_n")]
    pub n: u64,
}

fn default_n() -> u64 {
    1
}

impl ParamsInput {
    pub fn product(&self) -> Result<ProductNormalParams> {
        ProductNormalParams::new(self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.rho)
    }

    pub fn mean(&self) -> Result<MeanParams> {
        self.product()?.with_copies(self.n)
    }
}

impl From<&MeanParams> for ParamsInput {
    fn from(mp: &MeanParams) -> Self {
        let b = mp.base();
        ParamsInput {
            mu_x: b.mu_x,
            mu_y: b.mu_y,
            sigma_x: b.sigma_x,
            sigma_y: b.sigma_y,
            rho: b.rho,
            n: mp.n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_case_is_valid() {
        assert!(ProductNormalParams::new(1.0, 0.0, 1.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn unit_correlation_is_rejected() {
        assert_eq!(
            ProductNormalParams::new(0.0, 0.0, 1.0, 1.0, 1.0),
            Err(Error::CorrelationOutOfRange(1.0))
        );
        assert!(matches!(
            ProductNormalParams::new(0.0, 0.0, 1.0, 1.0, -1.0),
            Err(Error::CorrelationOutOfRange(_))
        ));
    }

    #[test]
    fn zero_sigma_is_rejected() {
        assert!(matches!(
            ProductNormalParams::new(1.0, 2.0, 0.0, 1.0, 0.5),
            Err(Error::NonPositiveSigma { which: "sigma_x", .. })
        ));
        assert!(matches!(
            ProductNormalParams::new(1.0, 2.0, 1.0, -3.0, 0.5),
            Err(Error::NonPositiveSigma { which: "sigma_y", .. })
        ));
    }

    #[test]
    fn nan_is_rejected() {
        assert!(matches!(
            ProductNormalParams::new(f64::NAN, 0.0, 1.0, 1.0, 0.0),
            Err(Error::NonFiniteParameter { which: "mu_x" })
        ));
    }

    #[test]
    fn zero_copies_is_rejected() {
        let p = ProductNormalParams::new(1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(p.with_copies(0), Err(Error::InvalidCopyCount(0)));
    }

    #[test]
    fn classify_examples() {
        let zero = ProductNormalParams::new(0.0, 0.0, 2.0, 0.3, -0.7).unwrap();
        assert_eq!(classify(&zero, DEFAULT_RATIO_TOL), DistributionCase::ZeroMeans);

        let equal = ProductNormalParams::new(2.0, 1.0, 2.0, 1.0, 0.1).unwrap();
        assert_eq!(classify(&equal, DEFAULT_RATIO_TOL), DistributionCase::EqualRatio);

        let one_zero = ProductNormalParams::new(1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(
            classify(&one_zero, DEFAULT_RATIO_TOL),
            DistributionCase::OneZeroMeanUncorrelated
        );

        let one_zero_corr = ProductNormalParams::new(1.0, 0.0, 1.0, 1.0, 0.3).unwrap();
        assert_eq!(classify(&one_zero_corr, DEFAULT_RATIO_TOL), DistributionCase::General);

        let general = ProductNormalParams::new(1.0, 2.0, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(classify(&general, DEFAULT_RATIO_TOL), DistributionCase::General);
    }

    #[test]
    fn stein_orders() {
        assert_eq!(DistributionCase::ZeroMeans.stein_order(), 2);
        assert_eq!(DistributionCase::EqualRatio.stein_order(), 3);
        assert_eq!(DistributionCase::General.stein_order(), 4);
    }

    #[test]
    fn params_input_round_trips_through_json() {
        let json = r#"{"mu_x":1,"mu_y":2,"sigma_x":1,"sigma_y":2,"rho":0.5,"n":3}"#;
        let input: ParamsInput = serde_json::from_str(json).unwrap();
        let mp = input.mean().unwrap();
        assert_eq!(mp.n(), 3);
        assert_eq!(ParamsInput::from(&mp), input);
    }

    fn ulps_apart(a: f64, b: f64) -> u64 {
        if a == b {
            return 0;
        }
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    proptest! {
        #[test]
        fn classify_is_scale_equivariant(
            mx in -5.0f64..5.0, my in -5.0f64..5.0,
            sx in 0.1f64..5.0, sy in 0.1f64..5.0,
            rho in -0.99f64..0.99, c in 0.01f64..100.0,
            equal in any::<bool>(), zero_y in any::<bool>(),
        ) {
            // Bias the draw so every case is exercised.
            let my = if equal { mx / sx * sy } else if zero_y { 0.0 } else { my };
            let rho = if zero_y && !equal { 0.0 } else { rho };
            let p = ProductNormalParams::new(mx, my, sx, sy, rho).unwrap();
            let q = ProductNormalParams::new(c * mx, my, c * sx, sy, rho).unwrap();
            prop_assert_eq!(classify(&p, DEFAULT_RATIO_TOL), classify(&q, DEFAULT_RATIO_TOL));
        }

        #[test]
        fn accessors_are_consistent(
            mx in -10.0f64..10.0, sx in 1e-3f64..10.0, sy in 1e-3f64..10.0, n in 1u64..1000,
        ) {
            let p = ProductNormalParams::new(mx, 0.0, sx, sy, 0.0).unwrap();
            prop_assert!(ulps_apart(p.r_x() * p.sigma_x(), mx) <= 2);
            let mp = p.with_copies(n).unwrap();
            prop_assert!(ulps_apart(mp.s_n() * n as f64, p.s()) <= 2);
        }
    }
}
