//! Product-level invariances of the latent factorisations and the
//! covariance block layout.

use jnirm::{covariance_blocks, expected_network, expected_responses};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| entries[(i * cols + j) % entries.len()])
}

/// Well-conditioned nonsingular matrix: identity plus a small perturbation.
fn nonsingular(k: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::identity(k, k) * 1.5 + matrix(k, k, entries) * 0.4
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn network_product_invariant_to_reparametrisation(
        n in 2usize..8, k in 1usize..4, delta in -3.0f64..3.0,
        uv in prop::collection::vec(-2.0f64..2.0, 64),
        o in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let u = matrix(n, k, &uv[..32]);
        let v = matrix(n, k, &uv[32..]);
        let o = nonsingular(k, &o);
        let o_inv_t = o.clone().try_inverse().unwrap().transpose();
        let before = expected_network(delta, &u, &v).unwrap();
        let after = expected_network(delta, &(&u * &o), &(&v * o_inv_t)).unwrap();
        prop_assert!((before - after).amax() < 1e-10);
    }

    #[test]
    fn item_product_invariant_to_reparametrisation(
        n in 1usize..8, m in 1usize..6, d in 1usize..4,
        beta in prop::collection::vec(-3.0f64..3.0, 6),
        ta in prop::collection::vec(-2.0f64..2.0, 64),
        o in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let beta = DVector::from_column_slice(&beta[..m]);
        let theta = matrix(n, d, &ta[..32]);
        let a = matrix(m, d, &ta[32..]);
        let o = nonsingular(d, &o);
        let o_inv_t = o.clone().try_inverse().unwrap().transpose();
        let before = expected_responses(&beta, &a, &theta).unwrap();
        let after = expected_responses(&beta, &(&a * o_inv_t), &(&theta * &o)).unwrap();
        prop_assert!((before - after).amax() < 1e-10);
    }

    #[test]
    fn covariance_blocks_reassemble_exactly(k in 1usize..3, d in 1usize..3, entries in prop::collection::vec(-1.0f64..1.0, 49)) {
        let p = 2 * k + d;
        let a = matrix(p, p, &entries);
        let sigma = &a * a.transpose() + DMatrix::identity(p, p);
        let blocks = covariance_blocks(&sigma, k, d).unwrap();
        prop_assert_eq!(blocks.assemble(), sigma.clone());
        prop_assert_eq!(blocks.lambda_utheta.shape(), (d, 2 * k));
    }
}
