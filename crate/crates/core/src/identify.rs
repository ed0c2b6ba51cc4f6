//! Post-hoc identification of latent factors: SVD of posterior-mean
//! products, target rotation of loadings, congruence and scree proportions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{JnirmError, Result};
use crate::linalg::sorted_svd;

/// Rank-`r` factorisation `left · rightᵀ` of a product matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEstimate {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    /// Leading singular values, nonincreasing.
    pub singular_values: DVector<f64>,
    /// Set when `σ_r` and `σ_{r+1}` are equal to within 1e-10, so the
    /// retained subspace is not well determined.
    pub ill_determined: bool,
}

/// Truncated SVD of `product` split symmetrically: `left = U_r S_r^{1/2}`,
/// `right = V_r S_r^{1/2}`. Each left column is signed so its largest
/// absolute entry is positive, with the flip carried to `right`.
pub fn svd_identify(product: &DMatrix<f64>, rank: usize) -> Result<FactorEstimate> {
    let max_rank = product.nrows().min(product.ncols());
    if rank == 0 || rank > max_rank {
        return Err(JnirmError::dims(format!("rank {rank} outside 1..={max_rank}")));
    }
    if product.iter().any(|x| !x.is_finite()) {
        return Err(JnirmError::InvalidData("product matrix has non-finite entries".into()));
    }
    let svd = sorted_svd(product);
    let s = &svd.singular_values;
    let scale = s[0].max(f64::MIN_POSITIVE);
    if s[rank - 1] <= 1e-12 * scale || s[rank - 1] == 0.0 {
        return Err(JnirmError::Degenerate(format!(
            "singular value {rank} is zero; the product has rank below {rank}"
        )));
    }
    let ill_determined = rank < s.len() && (s[rank - 1] - s[rank]).abs() <= 1e-10 * scale.max(1.0);
    let mut left = svd.u.columns(0, rank).into_owned();
    let mut right = svd.v.columns(0, rank).into_owned();
    for j in 0..rank {
        let root = s[j].sqrt();
        let col = left.column(j);
        let pivot = col
            .iter()
            .fold(0.0f64, |best, &x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -root } else { root };
        left.column_mut(j).scale_mut(sign);
        right.column_mut(j).scale_mut(sign);
    }
    Ok(FactorEstimate {
        left,
        right,
        singular_values: s.rows(0, rank).into_owned(),
        ill_determined,
    })
}

/// Partially specified target: `specified` cells are pulled toward `values`;
/// the remaining cells are free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPattern {
    pub values: DMatrix<f64>,
    pub specified: DMatrix<bool>,
}

impl TargetPattern {
    /// Zero target for every cell outside each item's own factor.
    /// `groups[i]` is the factor of item `i`.
    pub fn from_groups(groups: &[usize], n_factors: usize) -> Result<Self> {
        if groups.iter().any(|&g| g >= n_factors) {
            return Err(JnirmError::dims("group index exceeds the number of factors"));
        }
        let m = groups.len();
        Ok(TargetPattern {
            values: DMatrix::zeros(m, n_factors),
            specified: DMatrix::from_fn(m, n_factors, |i, j| groups[i] != j),
        })
    }

    /// Least-squares misfit over the specified cells.
    pub fn criterion(&self, loadings: &DMatrix<f64>) -> f64 {
        loadings
            .iter()
            .zip(self.values.iter())
            .zip(self.specified.iter())
            .filter(|(_, &s)| s)
            .map(|((l, t), _)| (l - t).powi(2))
            .sum()
    }

    fn gradient(&self, loadings: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(loadings.nrows(), loadings.ncols(), |i, j| {
            if self.specified[(i, j)] {
                2.0 * (loadings[(i, j)] - self.values[(i, j)])
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationOptions {
    /// Oblique rotation (otherwise orthogonal).
    pub oblique: bool,
    pub max_iter: usize,
    /// Convergence tolerance on the projected gradient norm.
    pub tolerance: f64,
}

impl Default for RotationOptions {
    fn default() -> Self {
        RotationOptions {
            oblique: true,
            max_iter: 5000,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationResult {
    /// `loadings · rotation_matrix`.
    pub rotated_loadings: DMatrix<f64>,
    pub rotation_matrix: DMatrix<f64>,
    /// Factor correlation matrix `TᵀT` (identity for orthogonal rotation).
    pub factor_correlation: DMatrix<f64>,
    pub target: TargetPattern,
    pub criterion: f64,
    /// Criterion value after each accepted step, starting at the identity.
    pub criterion_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn col_normalize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    out
}

/// Gradient projection rotation toward a partially specified target.
///
/// Oblique: `L = A (Tᵀ)⁻¹` with unit-length columns of `T`; orthogonal:
/// `L = A T` with `T` orthonormal. Steps are accepted only when they lower
/// the criterion, so the criterion history is nonincreasing. Columns of the
/// result are signed to have nonnegative sums.
pub fn target_rotate(
    loadings: &DMatrix<f64>,
    target: &TargetPattern,
    options: RotationOptions,
) -> Result<RotationResult> {
    let (m, d) = loadings.shape();
    if d < 2 {
        return Err(JnirmError::dims("target rotation needs at least two factors"));
    }
    if target.values.shape() != (m, d) || target.specified.shape() != (m, d) {
        return Err(JnirmError::dims("target shape differs from loadings"));
    }
    let rotate = |t: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        if options.oblique {
            t.transpose().try_inverse()
        } else {
            Some(t.clone())
        }
    };
    let mut t = DMatrix::<f64>::identity(d, d);
    let mut rot = DMatrix::<f64>::identity(d, d);
    let mut l = loadings.clone();
    let mut f = target.criterion(&l);
    let mut history = vec![f];
    let full_gradient = |l: &DMatrix<f64>, rot: &DMatrix<f64>| -> DMatrix<f64> {
        let gq = target.gradient(l);
        if options.oblique {
            // d f / d T = -(Lᵀ Gq T⁻¹)ᵀ, with T⁻¹ = rotᵀ.
            -(l.transpose() * gq * rot.transpose()).transpose()
        } else {
            loadings.transpose() * gq
        }
    };
    let mut g = full_gradient(&l, &rot);
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..options.max_iter {
        iterations = it + 1;
        let gp = if options.oblique {
            let mut gp = g.clone();
            for j in 0..d {
                let c = t.column(j).dot(&g.column(j));
                let tj = t.column(j).into_owned();
                gp.column_mut(j).axpy(-c, &tj, 1.0);
            }
            gp
        } else {
            let mm = t.transpose() * &g;
            let s = (&mm + mm.transpose()) * 0.5;
            &g - &t * s
        };
        let s = gp.norm();
        if s < options.tolerance {
            converged = true;
            break;
        }
        step *= 2.0;
        let mut accepted = None;
        for _ in 0..30 {
            let x = &t - &gp * step;
            let candidate = if options.oblique {
                col_normalize(&x)
            } else {
                let svd = x.svd(true, true);
                svd.u.expect("u") * svd.v_t.expect("v_t")
            };
            if let Some(r) = rotate(&candidate) {
                let lt = loadings * &r;
                let ft = target.criterion(&lt);
                if f - ft > 0.5 * s * s * step {
                    accepted = Some((candidate, r, lt, ft));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((tn, rn, ln, fnew)) if fnew < f => {
                t = tn;
                rot = rn;
                l = ln;
                f = fnew;
                history.push(f);
                g = full_gradient(&l, &rot);
            }
            _ => {
                // No improving step along the projected gradient: stationary
                // to working precision.
                converged = s < options.tolerance.sqrt();
                break;
            }
        }
    }
    for j in 0..d {
        if l.column(j).sum() < 0.0 {
            l.column_mut(j).neg_mut();
            rot.column_mut(j).neg_mut();
            t.column_mut(j).neg_mut();
        }
    }
    let factor_correlation = if options.oblique {
        t.transpose() * &t
    } else {
        DMatrix::identity(d, d)
    };
    Ok(RotationResult {
        rotated_loadings: l,
        rotation_matrix: rot,
        factor_correlation,
        target: target.clone(),
        criterion: f,
        criterion_history: history,
        iterations,
        converged,
    })
}

/// Tucker congruence: cosines between the columns of `a` and `b`.
pub fn congruence(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(JnirmError::dims("congruence needs the same number of rows"));
    }
    let na: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let nb: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();
    if na.iter().chain(&nb).any(|&n| n == 0.0) {
        return Err(JnirmError::Degenerate("zero-norm column in congruence".into()));
    }
    Ok(DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        (a.column(i).dot(&b.column(j)) / (na[i] * nb[j])).clamp(-1.0, 1.0)
    }))
}

/// Share of the squared Frobenius norm carried by each of the first
/// `max_rank` singular values.
pub fn variance_explained(product: &DMatrix<f64>, max_rank: usize) -> Result<DVector<f64>> {
    let s = sorted_svd(product).singular_values;
    let total: f64 = s.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return Err(JnirmError::Degenerate("zero matrix has no variance to explain".into()));
    }
    let r = max_rank.min(s.len());
    Ok(DVector::from_fn(max_rank, |k, _| {
        if k < r {
            s[k] * s[k] / total
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_exact() {
        let u = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let v = DVector::from_row_slice(&[3.0, 1.0, -1.0, 2.0]);
        let p = &u * v.transpose();
        let f = svd_identify(&p, 1).unwrap();
        assert!((&f.left * f.right.transpose() - &p).abs().max() < 1e-12);
        assert!(svd_identify(&DMatrix::zeros(3, 3), 1).is_err());
        assert!(svd_identify(&p, 4).is_err());
    }

    #[test]
    fn sign_convention() {
        let p = DMatrix::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, 1.0]);
        let f = svd_identify(&p, 2).unwrap();
        for j in 0..2 {
            let col = f.left.column(j);
            let pivot = col
                .iter()
                .cloned()
                .fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn variance_explained_examples() {
        let p = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 1.0, 1.0, 0.0]));
        let v = variance_explained(&p, 4).unwrap();
        let expect = [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.0];
        for k in 0..4 {
            assert!((v[k] - expect[k]).abs() < 1e-12);
        }
        let r1 = DMatrix::from_element(3, 3, 1.0);
        let v = variance_explained(&r1, 3).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
        assert!(variance_explained(&DMatrix::zeros(2, 2), 2).is_err());
    }

    #[test]
    fn congruence_basics() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let c = congruence(&a, &a).unwrap();
        assert_eq!(c, DMatrix::identity(2, 2));
        assert!(congruence(&a, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn rotation_of_clean_pattern_is_identity() {
        let groups = [0, 0, 0, 1, 1, 1];
        let target = TargetPattern::from_groups(&groups, 2).unwrap();
        let l = DMatrix::from_fn(6, 2, |i, j| if groups[i] == j { 0.5 + 0.1 * i as f64 } else { 0.0 });
        let r = target_rotate(&l, &target, RotationOptions::default()).unwrap();
        assert!(r.criterion < 1e-20);
        assert!((r.rotation_matrix.abs() - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }
}
