//! Likelihood-ratio test and canonical correlations against determinant
//! oracles and null/alternative simulations.

use jnirm::diagnostics::ks_uniform;
use jnirm::inference::{cca, independence_test, log_wilks_lambda, wilks_lambda, PValueMethod};
use jnirm::random::{normal_vector, stream_rng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn sample_cov(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    let mean = z.row_mean();
    let c = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] - mean[j]);
    c.transpose() * c / n
}

fn gaussian(rng: &mut impl Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, p, normal_vector(rng, n * p).as_slice())
}

prop_compose! {
    fn blocks()(p in 1usize..4, q in 1usize..4, seed in any::<u64>(), mix in -0.9f64..0.9)
        -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = stream_rng(seed, 0);
        let n = 40;
        let x = gaussian(&mut rng, n, p);
        let noise = gaussian(&mut rng, n, q);
        let y = DMatrix::from_fn(n, q, |i, j| mix * x[(i, j % p)] + noise[(i, j)]);
        (x, y)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Λ = |S| / (|S₁₁||S₂₂|) = Π (1 - R²).
    #[test]
    fn lambda_matches_determinant_oracle((x, y) in blocks()) {
        let p = x.ncols();
        let mut z = DMatrix::zeros(x.nrows(), p + y.ncols());
        z.columns_mut(0, p).copy_from(&x);
        z.columns_mut(p, y.ncols()).copy_from(&y);
        let s = sample_cov(&z);
        let oracle = s.determinant() / (sample_cov(&x).determinant() * sample_cov(&y).determinant());
        let lambda = wilks_lambda(&x, &y).unwrap();
        prop_assert!((lambda - oracle).abs() < 1e-10);
        let report = cca(&x, &y, PValueMethod::Bartlett).unwrap();
        let product: f64 = report.canonical_correlations.iter().map(|r| 1.0 - r * r).product();
        prop_assert!((product - oracle).abs() < 1e-10);
        prop_assert!((log_wilks_lambda(&x, &y).unwrap() - oracle.ln()).abs() < 1e-8);
        prop_assert!(report.canonical_correlations.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(report.canonical_correlations.iter().all(|&r| (0.0..=1.0).contains(&r)));
    }

    /// Nonsingular affine maps applied to either block leave Λ and the
    /// canonical correlations unchanged.
    #[test]
    fn invariant_to_per_block_transforms((x, y) in blocks(), entries in prop::collection::vec(-1.0f64..1.0, 9), shift in -5.0f64..5.0) {
        let p = x.ncols();
        let b = DMatrix::from_fn(p, p, |i, j| entries[i * 3 + j] + if i == j { 2.5 } else { 0.0 });
        let xt = (&x * &b).add_scalar(shift);
        let yt = y.map(|v| -3.0 * v + 1.0);
        let before = cca(&x, &y, PValueMethod::Bartlett).unwrap();
        let after = cca(&xt, &yt, PValueMethod::Bartlett).unwrap();
        prop_assert!((before.wilks_lambda - after.wilks_lambda).abs() < 1e-8);
        for (r0, r1) in before.canonical_correlations.iter().zip(&after.canonical_correlations) {
            prop_assert!((r0 - r1).abs() < 1e-8);
        }
    }

    /// Canonical variates have unit variance and are uncorrelated across
    /// functions; paired variates correlate at R_i.
    #[test]
    fn canonical_variates_are_whitened((x, y) in blocks()) {
        let r = cca(&x, &y, PValueMethod::Bartlett).unwrap();
        let n = x.nrows() as f64;
        let cx = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - x.column(j).mean());
        let cy = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - y.column(j).mean());
        let a = &cx * &r.raw_weights_network;
        let b = &cy * &r.raw_weights_items;
        let aa = a.transpose() * &a / n;
        let ab = a.transpose() * &b / n;
        for i in 0..aa.nrows() {
            for j in 0..aa.ncols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((aa[(i, j)] - expect).abs() < 1e-8);
                let cross = if i == j { r.canonical_correlations[i] } else { 0.0 };
                prop_assert!((ab[(i, j)] - cross).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn null_pvalues_are_uniform_at_large_n() {
    let mut rng = stream_rng(11, 0);
    for method in [PValueMethod::Bartlett, PValueMethod::RaoF] {
        let pvals: Vec<f64> = (0..2000)
            .map(|_| {
                let x = gaussian(&mut rng, 10_000, 2);
                let y = gaussian(&mut rng, 10_000, 3);
                independence_test(&x, &y, method).unwrap().pvalue
            })
            .collect();
        let (d, p) = ks_uniform(&pvals).unwrap();
        assert!(p > 0.01, "{method:?}: KS D = {d}, p = {p}");
    }
}

#[test]
fn test_has_power_against_modest_dependence() {
    let mut rng = stream_rng(12, 0);
    let reps = 200;
    let rejections = (0..reps)
        .filter(|_| {
            let x = gaussian(&mut rng, 500, 2);
            let noise = gaussian(&mut rng, 500, 2);
            let y = DMatrix::from_fn(500, 2, |i, j| 0.2 * x[(i, j)] + noise[(i, j)]);
            independence_test(&x, &y, PValueMethod::Bartlett).unwrap().pvalue < 0.05
        })
        .count();
    assert!(rejections as f64 / reps as f64 > 0.9, "{rejections}/{reps}");
}

#[test]
fn null_cca_correlations_shrink_and_sequential_pvalues_are_large() {
    let mut rng = stream_rng(13, 0);
    let x = gaussian(&mut rng, 2000, 4);
    let y = gaussian(&mut rng, 2000, 3);
    let r = cca(&x, &y, PValueMethod::Bartlett).unwrap();
    // Under independence the largest R is of order sqrt((p + q) / N).
    assert!(r.canonical_correlations[0] < 0.1, "{:?}", r.canonical_correlations);
    assert!(
        r.sequential_pvalues.iter().all(|&p| p > 0.001),
        "{:?}",
        r.sequential_pvalues
    );
    assert!(r.sequential_pvalues.windows(2).all(|w| w[1] >= w[0] - 1e-12));
}

#[test]
fn sequential_tests_find_the_true_dimension() {
    let mut rng = stream_rng(14, 0);
    let n = 1000;
    let x = gaussian(&mut rng, n, 3);
    let noise = gaussian(&mut rng, n, 3);
    let y = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => x[(i, 0)] + noise[(i, 0)],
        1 => 0.6 * x[(i, 1)] + noise[(i, 1)],
        _ => noise[(i, 2)],
    });
    let r = cca(&x, &y, PValueMethod::RaoF).unwrap();
    assert!(r.sequential_pvalues[0] < 1e-6);
    assert!(r.sequential_pvalues[1] < 1e-6);
    assert!(r.sequential_pvalues[2] > 0.001, "{:?}", r.sequential_pvalues);
}

/// Squared canonical correlations are the eigenvalues of `S₁₁⁻¹S₁₂S₂₂⁻¹S₂₁`.
#[test]
fn cca_matches_dense_eigen_oracle() {
    let mut rng = stream_rng(15, 0);
    for _ in 0..20 {
        let x = gaussian(&mut rng, 100, 4);
        let noise = gaussian(&mut rng, 100, 3);
        let y = DMatrix::from_fn(100, 3, |i, j| 0.5 * x[(i, j)] - 0.3 * x[(i, 3)] + noise[(i, j)]);
        let mut z = DMatrix::zeros(100, 7);
        z.columns_mut(0, 4).copy_from(&x);
        z.columns_mut(4, 3).copy_from(&y);
        let s = sample_cov(&z);
        let s11 = s.view((0, 0), (4, 4)).into_owned();
        let s12 = s.view((0, 4), (4, 3)).into_owned();
        let s22 = s.view((4, 4), (3, 3)).into_owned();
        // Symmetric form S₁₁^{-1/2} S₁₂ S₂₂⁻¹ S₂₁ S₁₁^{-1/2} shares the eigenvalues.
        let e11 = s11.clone().symmetric_eigen();
        let inv_sqrt = &e11.eigenvectors
            * DMatrix::from_diagonal(&e11.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * e11.eigenvectors.transpose();
        let m = &inv_sqrt * &s12 * s22.try_inverse().unwrap() * s12.transpose() * &inv_sqrt;
        let mut eig: Vec<f64> = m
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let r = cca(&x, &y, PValueMethod::Bartlett).unwrap();
        for (i, rc) in r.canonical_correlations.iter().enumerate() {
            assert!((rc - eig[i]).abs() < 1e-8, "{rc} vs {}", eig[i]);
        }
    }
}
