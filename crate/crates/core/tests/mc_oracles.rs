//! Simulation checks of the analytic routes. Each comparison uses a
//! 4-standard-error band; the file runs 22 of them with fixed seeds.

use prodnorm::density::{cdf_product, pdf_mean_zero_means, SeriesControl};
use prodnorm::mc::{estimate_moment, sample_mean_of_products, SamplerConfig};
use prodnorm::moments::{central_moments, raw_moments};
use prodnorm::params::{MeanParams, ProductNormalParams};
use prodnorm::quad::{integrate, QuadConfig};

fn mp(mx: f64, my: f64, sx: f64, sy: f64, rho: f64, n: u64) -> MeanParams {
    ProductNormalParams::new(mx, my, sx, sy, rho).unwrap().with_copies(n).unwrap()
}

/// Binomial z-scores of bin counts against bin probabilities.
fn bin_z_scores(xs: &[f64], edges: &[f64], probs: &[f64]) -> Vec<f64> {
    let total = xs.len() as f64;
    (0..probs.len())
        .map(|i| {
            let c = xs.iter().filter(|&&x| x >= edges[i] && x < edges[i + 1]).count() as f64;
            let p = probs[i];
            (c - total * p) / (total * p * (1.0 - p)).sqrt()
        })
        .collect()
}

#[test]
fn histogram_matches_distribution_function() {
    let m = mp(1.0, 0.5, 1.0, 1.2, 0.3, 1);
    let xs = sample_mean_of_products(&m, &SamplerConfig::with_count(21, 1_000_000).unwrap());
    let edges = [-3.0, -1.5, -0.5, 0.0, 0.5, 1.5, 3.0, 6.0];
    let ctl = SeriesControl::default();
    let cdf: Vec<f64> = edges.iter().map(|&e| cdf_product(m.base(), e, &ctl).unwrap()).collect();
    let probs: Vec<f64> = cdf.windows(2).map(|w| w[1] - w[0]).collect();
    for (i, z) in bin_z_scores(&xs, &edges, &probs).into_iter().enumerate() {
        assert!(z.abs() <= 4.0, "bin {i}: z = {z}");
    }
}

#[test]
fn histogram_matches_zero_mean_closed_form() {
    let m = mp(0.0, 0.0, 1.4, 0.8, -0.5, 3);
    let xs = sample_mean_of_products(&m, &SamplerConfig::with_count(22, 1_000_000).unwrap());
    let edges = [-3.0, -1.0, -0.4, 0.0, 0.4, 1.0, 3.0];
    let cfg = QuadConfig::default();
    let probs: Vec<f64> = edges
        .windows(2)
        .map(|w| integrate(|x| Ok(pdf_mean_zero_means(&m, x)?.value()), w[0], w[1], &cfg).unwrap().value)
        .collect();
    for (i, z) in bin_z_scores(&xs, &edges, &probs).into_iter().enumerate() {
        assert!(z.abs() <= 4.0, "bin {i}: z = {z}");
    }
}

#[test]
fn raw_moments_up_to_six() {
    let m = mp(1.0, 2.0, 1.0, 2.0, 0.5, 3);
    let raw = raw_moments(&m, 6).values;
    let cfg = SamplerConfig::with_count(23, 2_000_000).unwrap();
    for k in 1..=6 {
        let est = estimate_moment(&m, k, false, &cfg);
        assert!(est.within(raw[k as usize], 4.0), "k={k}: {est:?} vs {}", raw[k as usize]);
    }
}

#[test]
fn central_moments_up_to_four() {
    let m = mp(-0.6, 1.1, 0.8, 1.5, -0.35, 2);
    let cen = central_moments(&m, 4).values;
    let cfg = SamplerConfig::with_count(24, 2_000_000).unwrap();
    for k in 2..=4 {
        let est = estimate_moment(&m, k, true, &cfg);
        assert!(est.within(cen[k as usize], 4.0), "k={k}: {est:?} vs {}", cen[k as usize]);
    }
}
