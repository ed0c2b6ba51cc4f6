//! Data generation, study summaries and their invariants.

use jnirm::inference::{cca, PValueMethod};
use jnirm::random::{normal_vector, stream_rng};
use jnirm::simulate::{density_table, kurtosis, simulate_joint, GenerativeParams, ParameterRecovery};
use jnirm::{run_chain, Mode};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mse_is_bias_squared_plus_variance(truth in -5.0f64..5.0, est in prop::collection::vec(-10.0f64..10.0, 1..50)) {
        let r = ParameterRecovery::from_estimates("x", truth, &est);
        prop_assert!((r.mse - (r.bias * r.bias + r.variance)).abs() < 1e-10 * (1.0 + r.mse));
    }
}

#[test]
fn vanishing_latent_variance_gives_half_density() {
    let mut params = GenerativeParams::network_only(200, 2, 0.0, 1e-6, 0.0);
    params.sigma_utheta = DMatrix::identity(4, 4) * 1e-6;
    let data = simulate_joint(&params, &mut stream_rng(51, 0)).unwrap();
    assert!((data.network.observed_mean() - 0.5).abs() < 0.01);
}

#[test]
fn strong_reciprocity_appears_in_latent_edges() {
    let params = GenerativeParams::network_only(200, 2, 0.0, 1.0, 0.99);
    let data = simulate_joint(&params, &mut stream_rng(52, 0)).unwrap();
    let e = &data.phi - &data.expected_network;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for a in 0..200 {
        for b in (a + 1)..200 {
            sxy += e[(a, b)] * e[(b, a)];
            sxx += e[(a, b)].powi(2);
            syy += e[(b, a)].powi(2);
        }
    }
    let r = sxy / (sxx * syy).sqrt();
    assert!((r - 0.99).abs() < 0.01, "{r}");
}

#[test]
fn school_like_shapes_at_n24() {
    let params = GenerativeParams::school_like().with_n(24);
    let data = simulate_joint(&params, &mut stream_rng(53, 0)).unwrap();
    assert_eq!(data.network.n_nodes(), 24);
    let items = data.items.unwrap();
    assert_eq!((items.n_persons(), items.n_items()), (24, 16));
}

#[test]
fn density_is_monotone_in_intercept_and_variance() {
    let intercepts = [0.0, -1.0, -2.0, -3.0, -4.0];
    let variances = [0.2, 1.0, 3.0];
    let t = density_table(&intercepts, &variances, 2, 400, 54).unwrap();
    for j in 0..variances.len() {
        for i in 1..intercepts.len() {
            assert!(t.densities[(i, j)] <= t.densities[(i - 1, j)], "{}", t.densities);
        }
    }
    for i in 1..intercepts.len() {
        for j in 1..variances.len() {
            assert!(t.densities[(i, j)] >= t.densities[(i, j - 1)], "{}", t.densities);
        }
    }
}

/// Generated densities agree with `P(δ + uᵀv + e > 0)` evaluated by
/// independent Monte Carlo over the latent distribution.
#[test]
fn density_matches_latent_probability() {
    let intercepts = [0.0, -1.0, -2.0];
    let variances = [0.2, 1.0];
    let t = density_table(&intercepts, &variances, 2, 1000, 55).unwrap();
    let mut rng = stream_rng(56, 0);
    for (i, &delta) in intercepts.iter().enumerate() {
        for (j, &var) in variances.iter().enumerate() {
            let draws = 400_000;
            let hits = (0..draws)
                .filter(|_| {
                    let z = normal_vector(&mut rng, 5);
                    delta + var * (z[0] * z[1] + z[2] * z[3]) + z[4] > 0.0
                })
                .count();
            let p = hits as f64 / draws as f64;
            assert!(
                (t.densities[(i, j)] - p).abs() < 0.02,
                "cell ({delta}, {var}): {} vs {p}",
                t.densities[(i, j)]
            );
        }
    }
}

#[test]
fn kurtosis_calibration() {
    let mut rng = stream_rng(57, 0);
    let normal = normal_vector(&mut rng, 10_000);
    assert!((kurtosis(normal.as_slice()).unwrap() - 3.0).abs() < 0.15);
    let uniform: Vec<f64> = (0..100_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    assert!((kurtosis(&uniform).unwrap() - 1.8).abs() < 0.05);
    assert!((kurtosis(&[1.0, -1.0, 1.0, -1.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!(kurtosis(&[2.0; 6]).is_err());
}

/// Without cross-covariance the network and item latents are independent,
/// so their sample canonical correlations shrink toward zero.
#[test]
fn independent_blocks_have_vanishing_canonical_correlations() {
    let mut params = GenerativeParams::school_like().with_n(2000);
    let (k2, d) = (2 * params.k, params.d);
    for i in 0..k2 {
        for j in k2..k2 + d {
            params.sigma_utheta[(i, j)] = 0.0;
            params.sigma_utheta[(j, i)] = 0.0;
        }
    }
    let data = simulate_joint(&params, &mut stream_rng(58, 0)).unwrap();
    let mut uv = DMatrix::zeros(2000, k2);
    uv.columns_mut(0, params.k).copy_from(&data.u);
    uv.columns_mut(params.k, params.k).copy_from(&data.v);
    let r = cca(&uv, &data.theta, PValueMethod::Bartlett).unwrap();
    // Largest squared correlation under the null is O((p + q) / N).
    assert!(
        r.canonical_correlations[0].powi(2) < 0.02,
        "{:?}",
        r.canonical_correlations
    );
    assert!(r.wilks_pvalue > 0.001, "{}", r.wilks_pvalue);
}

/// Nearly noiseless items pin the intercepts down to the sampling error of
/// the latent means.
#[test]
fn near_noiseless_items_recover_intercepts() {
    let mut params = GenerativeParams::school_like().with_n(2000);
    params.sigma2_eps = 0.01;
    let data = simulate_joint(&params, &mut stream_rng(59, 0)).unwrap();
    let cfg = params
        .fit_config()
        .with_mode(Mode::ItemOnly)
        .with_iterations(2000, 500, 5);
    let out = run_chain(None, data.items.as_ref(), &cfg, 59).unwrap();
    let beta = out.posterior_mean_beta();
    let mse = (&beta - &params.beta).norm_squared() / beta.len() as f64;
    assert!(mse < 1e-3, "{mse}");
}
