//! Conditional distributions of the sampler checked against dense oracles.

use approx::assert_relative_eq;
use jnirm::random::stream_rng;
use jnirm::sampler::{decorrelate, draw_latent_column, ConditionalBlock, DecorrelationCoeffs};
use jnirm::simulate::simulate_network;
use jnirm::DataKind;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd(p: usize, entries: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |i, j| entries[i * p + j]);
    &a * a.transpose() + DMatrix::identity(p, p) * 0.3
}

prop_compose! {
    fn spd_case()(p in 2usize..8)
        (entries in prop::collection::vec(-1.5f64..1.5, p * p),
         target in 0..p,
         mask in prop::collection::vec(any::<bool>(), p),
         p in Just(p))
        -> (DMatrix<f64>, usize, Vec<usize>) {
        let partners = (0..p).filter(|&j| j != target && mask[j]).collect();
        (spd(p, &entries), target, partners)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// The block precision is the active block of Σ⁻¹ and the shift map is
    /// minus its active-by-rest block.
    #[test]
    fn conditional_block_matches_dense_inverse((sigma, target, partners) in spd_case()) {
        let block = ConditionalBlock::new(&sigma, target, &partners).unwrap();
        let inv = sigma.clone().try_inverse().unwrap();
        let mut active = vec![target];
        active.extend(&partners);
        let scale = inv.amax().max(1.0);
        for (i, &ai) in active.iter().enumerate() {
            for (j, &aj) in active.iter().enumerate() {
                prop_assert!((block.precision[(i, j)] - inv[(ai, aj)]).abs() < 1e-10 * scale);
            }
            for (r, &rj) in block.rest.iter().enumerate() {
                prop_assert!((block.shift_map[(i, r)] + inv[(ai, rj)]).abs() < 1e-10 * scale);
            }
        }
        prop_assert_eq!(block.rest.len() + active.len(), sigma.nrows());
    }

    /// `MᵀM` and `Mᵀ r̃` of the explicit N² × N whitened design.
    #[test]
    fn kronecker_design_closed_form(
        n in 2usize..7,
        rho in -0.95f64..0.95,
        sigma_e in 0.3f64..3.0,
        w_raw in prop::collection::vec(-2.0f64..2.0, 7),
        r_raw in prop::collection::vec(-2.0f64..2.0, 49),
        q in 0.1f64..5.0,
        lin_raw in prop::collection::vec(-1.0f64..1.0, 7),
    ) {
        let coeffs = DecorrelationCoeffs::new(rho, sigma_e).unwrap();
        let (c, d) = (coeffs.c, coeffs.d);
        let w = DVector::from_column_slice(&w_raw[..n]);
        let r = DMatrix::from_fn(n, n, |a, b| r_raw[a * 7 + b]);
        let lin = DVector::from_column_slice(&lin_raw[..n]);
        // Row (a, b) of M: whitened cell c·x_a w_b + d·x_b w_a.
        let mut m = DMatrix::zeros(n * n, n);
        for a in 0..n {
            for b in 0..n {
                m[(a * n + b, a)] += c * w[b];
                m[(a * n + b, b)] += d * w[a];
            }
        }
        let mtm = m.transpose() * &m;
        let closed = DMatrix::identity(n, n) * (coeffs.diag_weight() * w.norm_squared())
            + &w * w.transpose() * coeffs.cross_weight();
        prop_assert!((&mtm - &closed).amax() < 1e-10 * (1.0 + mtm.amax()));

        let rt = decorrelate(&r, rho, sigma_e).unwrap();
        let vec_rt = DVector::from_fn(n * n, |i, _| rt[(i / n, i % n)]);
        let precision = &mtm + DMatrix::identity(n, n) * q;
        let dense_mean = precision.clone().lu().solve(&(m.transpose() * vec_rt + &lin)).unwrap();
        let mut rng = stream_rng(1, 0);
        let draw = draw_latent_column(&mut rng, &coeffs, &w, &(&r * &w), &(r.transpose() * &w), q, &lin).unwrap();
        prop_assert!((&draw.mean - &dense_mean).amax() < 1e-9 * (1.0 + dense_mean.amax()));
    }
}

#[test]
fn latent_column_draw_covariance_is_inverse_precision() {
    let n = 3;
    let coeffs = DecorrelationCoeffs::new(0.6, 1.3).unwrap();
    let w = DVector::from_vec(vec![0.8, -1.1, 0.4]);
    let q = 0.7;
    let zero = DVector::zeros(n);
    let precision = DMatrix::identity(n, n) * (coeffs.diag_weight() * w.norm_squared() + q)
        + &w * w.transpose() * coeffs.cross_weight();
    let cov = precision.try_inverse().unwrap();
    let mut rng = stream_rng(7, 0);
    let draws = 200_000;
    let mut acc = DMatrix::zeros(n, n);
    for _ in 0..draws {
        let x = draw_latent_column(&mut rng, &coeffs, &w, &zero, &zero, q, &zero)
            .unwrap()
            .draw;
        acc += &x * x.transpose();
    }
    acc /= draws as f64;
    for i in 0..n {
        for j in 0..n {
            // Monte Carlo sd of a second moment is about sqrt(2/draws)·scale.
            assert!(
                (acc[(i, j)] - cov[(i, j)]).abs() < 0.01 * cov.amax().max(0.1),
                "{acc} vs {cov}"
            );
        }
    }
}

/// Whitening `c R + d Rᵀ` turns dyadic errors with correlation ρ and
/// variance σ² into iid standard normals, diagonal included.
#[test]
fn decorrelation_whitens_dyadic_errors() {
    let (n, rho, s2) = (120, 0.7, 2.5);
    let zeros = DMatrix::zeros(n, 1);
    let mut rng = stream_rng(3, 0);
    let (mut sum_off, mut sq_off, mut cross, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    let (mut sq_diag, mut diag) = (0.0, 0.0);
    for _ in 0..20 {
        let (_, e) = simulate_network(&mut rng, 0.0, &zeros, &zeros, rho, s2, DataKind::Continuous).unwrap();
        let z = decorrelate(&e, rho, s2.sqrt()).unwrap();
        for a in 0..n {
            sq_diag += z[(a, a)] * z[(a, a)];
            diag += 1.0;
            for b in (a + 1)..n {
                sum_off += z[(a, b)] + z[(b, a)];
                sq_off += z[(a, b)].powi(2) + z[(b, a)].powi(2);
                cross += z[(a, b)] * z[(b, a)];
                pairs += 1.0;
            }
        }
    }
    let mean = sum_off / (2.0 * pairs);
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert_relative_eq!(sq_off / (2.0 * pairs), 1.0, epsilon = 0.01);
    assert!(
        (cross / pairs).abs() < 0.01,
        "within-dyad correlation {}",
        cross / pairs
    );
    assert_relative_eq!(sq_diag / diag, 1.0, epsilon = 0.05);
}
