//! Factor identification against dense SVD and known loading patterns.

use jnirm::identify::{congruence, svd_identify, target_rotate, variance_explained, RotationOptions, TargetPattern};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

prop_compose! {
    fn product_case()(n in 3usize..10, m in 3usize..10)
        (entries in prop::collection::vec(-3.0f64..3.0, n * m), rank in 1..n.min(m), n in Just(n), m in Just(m))
        -> (DMatrix<f64>, usize) {
        (DMatrix::from_row_slice(n, m, &entries), rank)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn svd_identify_matches_truncated_svd((x, rank) in product_case()) {
        let est = svd_identify(&x, rank).unwrap();
        let svd = x.clone().svd(true, true);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut oracle = DMatrix::zeros(x.nrows(), x.ncols());
        for &i in &order[..rank] {
            oracle += u.column(i) * vt.row(i) * svd.singular_values[i];
        }
        let scale = 1.0 + x.amax();
        prop_assert!((&est.left * est.right.transpose() - &oracle).amax() < 1e-9 * scale);
        let s = DMatrix::from_diagonal(&est.singular_values);
        prop_assert!((est.left.transpose() * &est.left - &s).amax() < 1e-9 * scale);
        prop_assert!((est.right.transpose() * &est.right - &s).amax() < 1e-9 * scale);
        for j in 0..rank {
            let col = est.left.column(j);
            let pivot = col.iter().cloned().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            prop_assert!(pivot >= 0.0);
        }
    }

    #[test]
    fn variance_explained_sums_to_one_at_full_rank((x, _) in product_case()) {
        let r = x.nrows().min(x.ncols());
        let shares = variance_explained(&x, r).unwrap();
        prop_assert!((shares.sum() - 1.0).abs() < 1e-12);
        prop_assert!(shares.as_slice().windows(2).all(|w| w[0] >= w[1] - 1e-15));
    }
}

fn clean_pattern() -> (DMatrix<f64>, Vec<usize>) {
    let groups: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let p = DMatrix::from_fn(16, 3, |i, j| if groups[i] == j { 0.5 + 0.03 * i as f64 } else { 0.0 });
    (p, groups)
}

#[test]
fn oblique_rotation_unmixes_correlated_pattern() {
    let (pattern, groups) = clean_pattern();
    // T with unit columns and TᵀT = Φ; loadings A = P Tᵀ rotate back to P.
    let phi = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.2, 0.4, 1.0, 0.3, 0.2, 0.3, 1.0]);
    let l = phi.clone().cholesky().unwrap().l();
    let angle: f64 = 0.5;
    let q = DMatrix::from_row_slice(
        3,
        3,
        &[
            angle.cos(),
            -angle.sin(),
            0.0,
            angle.sin(),
            angle.cos(),
            0.0,
            0.0,
            0.0,
            1.0,
        ],
    );
    let t0 = q * l.transpose();
    let mixed = &pattern * t0.transpose();
    let target = TargetPattern::from_groups(&groups, 3).unwrap();
    let out = target_rotate(&mixed, &target, RotationOptions::default()).unwrap();
    assert!(out.converged);
    assert!(
        (&out.rotated_loadings - &pattern).amax() < 1e-6,
        "{}",
        out.rotated_loadings
    );
    assert!(
        (&out.factor_correlation - &phi).amax() < 1e-6,
        "{}",
        out.factor_correlation
    );
    assert!(out.criterion_history.windows(2).all(|w| w[1] <= w[0]));
    let c = congruence(&out.rotated_loadings, &pattern).unwrap();
    for j in 0..3 {
        assert!((c[(j, j)] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn orthogonal_rotation_unmixes_orthogonal_mixture() {
    let (pattern, groups) = clean_pattern();
    let (a, b) = (0.4f64, -0.3f64);
    let r1 = DMatrix::from_row_slice(3, 3, &[a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0]);
    let r2 = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, b.cos(), -b.sin(), 0.0, b.sin(), b.cos()]);
    let rot = r1 * r2;
    let mixed = &pattern * rot.transpose();
    let target = TargetPattern::from_groups(&groups, 3).unwrap();
    let opts = RotationOptions {
        oblique: false,
        ..RotationOptions::default()
    };
    let out = target_rotate(&mixed, &target, opts).unwrap();
    assert!(
        (&out.rotated_loadings - &pattern).amax() < 1e-6,
        "{}",
        out.rotated_loadings
    );
    assert!((&out.factor_correlation - DMatrix::identity(3, 3)).amax() < 1e-9);
    // Orthogonal rotation preserves communalities.
    let h_in = DVector::from_fn(16, |i, _| mixed.row(i).norm_squared());
    let h_out = DVector::from_fn(16, |i, _| out.rotated_loadings.row(i).norm_squared());
    assert!((h_in - h_out).amax() < 1e-9);
}

#[test]
fn self_congruence_has_unit_diagonal() {
    let (pattern, _) = clean_pattern();
    let x = &pattern + DMatrix::from_fn(16, 3, |i, j| 0.01 * ((i * 3 + j) as f64).sin());
    let c = congruence(&x, &x).unwrap();
    for j in 0..3 {
        assert!((c[(j, j)] - 1.0).abs() < 1e-12);
    }
}
