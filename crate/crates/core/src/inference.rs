//! Dependence between the network latents `(U, V)` and the item latents `Θ`:
//! the likelihood-ratio test of a zero cross-covariance and canonical
//! correlation analysis with sequential dimensionality tests.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{JnirmError, Result};
use crate::linalg::{center_columns, cholesky_jittered, log_det_spd, sorted_svd};

/// Reference distribution for Wilks' Λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// `-(N - 1 - (p + q + 1)/2) ln Λ ~ χ²(pq)`.
    #[default]
    Bartlett,
    /// Rao's F approximation, more accurate for small `N`.
    RaoF,
}

impl std::str::FromStr for PValueMethod {
    type Err = JnirmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bartlett" | "chisq" => Ok(PValueMethod::Bartlett),
            "rao" | "rao-f" | "f" => Ok(PValueMethod::RaoF),
            other => Err(JnirmError::config(format!("unknown p-value method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndependenceTest {
    pub lambda: f64,
    pub statistic: f64,
    pub pvalue: f64,
}

fn check_blocks(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(usize, usize, usize)> {
    let (n, p, q) = (x.nrows(), x.ncols(), y.ncols());
    if y.nrows() != n {
        return Err(JnirmError::dims(format!("blocks have {n} and {} rows", y.nrows())));
    }
    if p == 0 || q == 0 {
        return Err(JnirmError::dims("both blocks need at least one column"));
    }
    if n <= p + q + 1 {
        return Err(JnirmError::dims(format!(
            "need N > p + q + 1 = {}, got N = {n}",
            p + q + 1
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(JnirmError::InvalidData("non-finite latent values".into()));
    }
    Ok((n, p, q))
}

fn covariance_parts(x: &DMatrix<f64>, y: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let xc = center_columns(x);
    let yc = center_columns(y);
    (xc.tr_mul(&xc) / n, yc.tr_mul(&yc) / n, xc.tr_mul(&yc) / n)
}

fn singular(what: &str) -> JnirmError {
    JnirmError::Degenerate(format!("{what} block covariance is singular"))
}

/// `Λ = |S| / (|S₁₁| |S₂₂|)` for the pooled covariance of `[x, y]`.
pub fn wilks_lambda(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_blocks(x, y)?;
    let (s11, s22, s12) = covariance_parts(x, y);
    let p = s11.nrows();
    let q = s22.nrows();
    let mut s = DMatrix::zeros(p + q, p + q);
    s.view_mut((0, 0), (p, p)).copy_from(&s11);
    s.view_mut((p, p), (q, q)).copy_from(&s22);
    s.view_mut((0, p), (p, q)).copy_from(&s12);
    s.view_mut((p, 0), (q, p)).copy_from(&s12.transpose());
    let l11 = strict_log_det(&s11).ok_or_else(|| singular("network"))?;
    let l22 = strict_log_det(&s22).ok_or_else(|| singular("item"))?;
    // A perfectly dependent pair makes the joint covariance singular: Λ = 0.
    Ok(match strict_log_det(&s) {
        Some(l) => (l - l11 - l22).exp().clamp(0.0, 1.0),
        None => 0.0,
    })
}

fn strict_log_det(m: &DMatrix<f64>) -> Option<f64> {
    let scale = m.diagonal().iter().cloned().fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    let ch = nalgebra::Cholesky::new(m.clone())?;
    let diag = ch.l().diagonal();
    if diag.iter().any(|&x| x * x <= 1e-13 * scale) {
        return None;
    }
    Some(2.0 * diag.iter().map(|x| x.ln()).sum::<f64>())
}

/// p-value for `Λ_k = Π_{i>k}(1 - R_i²)`, the test that all canonical
/// correlations beyond the first `k` vanish.
pub fn lambda_pvalue(lambda: f64, n: usize, p: usize, q: usize, k: usize, method: PValueMethod) -> (f64, f64) {
    let pk = (p - k) as f64;
    let qk = (q - k) as f64;
    let df = pk * qk;
    let m = n as f64 - 1.0 - (p + q + 1) as f64 / 2.0;
    if lambda >= 1.0 {
        return (0.0, 1.0);
    }
    if lambda <= 0.0 {
        return (f64::INFINITY, 0.0);
    }
    match method {
        PValueMethod::Bartlett => {
            let stat = -m * lambda.ln();
            let chi = ChiSquared::new(df).expect("positive degrees of freedom");
            (stat, chi.sf(stat.max(0.0)))
        }
        PValueMethod::RaoF => {
            let denom = pk * pk + qk * qk - 5.0;
            let t = if denom > 0.0 {
                ((pk * pk * qk * qk - 4.0) / denom).sqrt()
            } else {
                1.0
            };
            let df2 = m * t - df / 2.0 + 1.0;
            let root = lambda.powf(1.0 / t);
            let f = (1.0 - root) / root * df2 / df;
            if df2 <= 0.0 {
                return (f, f64::NAN);
            }
            let dist = FisherSnedecor::new(df, df2).expect("positive degrees of freedom");
            (f, dist.sf(f.max(0.0)))
        }
    }
}

/// Test of a zero cross-covariance between the two blocks.
pub fn independence_test(x: &DMatrix<f64>, y: &DMatrix<f64>, method: PValueMethod) -> Result<IndependenceTest> {
    let (n, p, q) = check_blocks(x, y)?;
    let lambda = wilks_lambda(x, y)?;
    let (statistic, pvalue) = lambda_pvalue(lambda, n, p, q, 0, method);
    Ok(IndependenceTest {
        lambda,
        statistic,
        pvalue,
    })
}

/// Sequential p-values: entry `k` tests that all correlations beyond the
/// first `k` are zero.
pub fn sequential_tests(correlations: &[f64], n: usize, p: usize, q: usize, method: PValueMethod) -> Vec<f64> {
    let i_max = correlations.len();
    (0..i_max)
        .map(|k| {
            let lambda: f64 = correlations[k..].iter().map(|r| 1.0 - r * r).product();
            lambda_pvalue(lambda, n, p, q, k, method).1
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub method: PValueMethod,
    pub wilks_lambda: f64,
    pub wilks_statistic: f64,
    pub wilks_pvalue: f64,
    /// Nonincreasing, in `[0, 1]`.
    pub canonical_correlations: Vec<f64>,
    /// Weights giving unit-variance canonical variates, `p × I` and `q × I`.
    pub raw_weights_network: DMatrix<f64>,
    pub raw_weights_items: DMatrix<f64>,
    /// Raw weights scaled by each variable's standard deviation.
    pub std_coefficients_network: DMatrix<f64>,
    pub std_coefficients_items: DMatrix<f64>,
    pub sequential_pvalues: Vec<f64>,
}

/// Canonical correlation analysis of `x` (`N × p`) against `y` (`N × q`).
///
/// Both blocks are whitened by Cholesky factors of their covariances and
/// the cross-covariance of the whitened blocks is decomposed by SVD. Each
/// function is signed so its largest network coefficient is positive.
pub fn cca(x: &DMatrix<f64>, y: &DMatrix<f64>, method: PValueMethod) -> Result<DependenceReport> {
    let (n, p, q) = check_blocks(x, y)?;
    let (s11, s22, s12) = covariance_parts(x, y);
    strict_log_det(&s11).ok_or_else(|| singular("network"))?;
    strict_log_det(&s22).ok_or_else(|| singular("item"))?;
    let l1 = cholesky_jittered(&s11)?.l();
    let l2 = cholesky_jittered(&s22)?.l();
    let l1_inv = l1
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| singular("network"))?;
    let l2_inv = l2
        .solve_lower_triangular(&DMatrix::identity(q, q))
        .ok_or_else(|| singular("item"))?;
    let k = &l1_inv * &s12 * l2_inv.transpose();
    let svd = sorted_svd(&k);
    let i_max = p.min(q);
    let correlations: Vec<f64> = (0..i_max).map(|i| svd.singular_values[i].clamp(0.0, 1.0)).collect();
    let mut a = l1_inv.transpose() * svd.u.columns(0, i_max);
    let mut b = l2_inv.transpose() * svd.v.columns(0, i_max);
    let sd1: Vec<f64> = (0..p).map(|j| s11[(j, j)].sqrt()).collect();
    let sd2: Vec<f64> = (0..q).map(|j| s22[(j, j)].sqrt()).collect();
    let mut std_a = DMatrix::from_fn(p, i_max, |r, c| a[(r, c)] * sd1[r]);
    let mut std_b = DMatrix::from_fn(q, i_max, |r, c| b[(r, c)] * sd2[r]);
    for c in 0..i_max {
        let pivot = std_a
            .column(c)
            .iter()
            .cloned()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            for m in [&mut a, &mut b, &mut std_a, &mut std_b] {
                m.column_mut(c).neg_mut();
            }
        }
    }
    let lambda: f64 = correlations.iter().map(|r| 1.0 - r * r).product();
    let (statistic, pvalue) = lambda_pvalue(lambda, n, p, q, 0, method);
    Ok(DependenceReport {
        n,
        p,
        q,
        method,
        wilks_lambda: lambda,
        wilks_statistic: statistic,
        wilks_pvalue: pvalue,
        sequential_pvalues: sequential_tests(&correlations, n, p, q, method),
        canonical_correlations: correlations,
        raw_weights_network: a,
        raw_weights_items: b,
        std_coefficients_network: std_a,
        std_coefficients_items: std_b,
    })
}

/// Log-determinant ratio used by callers who need `ln Λ` directly.
pub fn log_wilks_lambda(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_blocks(x, y)?;
    let (s11, s22, s12) = covariance_parts(x, y);
    // ln Λ = ln |I - S₁₁⁻¹ S₁₂ S₂₂⁻¹ S₂₁| computed through the Schur complement.
    let s22_inv = crate::linalg::spd_inverse(&s22)?;
    let schur = &s11 - &s12 * s22_inv * s12.transpose();
    Ok(log_det_spd(&schur)? - log_det_spd(&s11)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{std_normal, stream_rng};

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 0);
        DMatrix::from_fn(n, p, |_, _| std_normal(&mut rng))
    }

    #[test]
    fn perfect_dependence_gives_zero_lambda() {
        let x = random(50, 4, 1);
        let y = x.columns(0, 2).into_owned();
        let t = independence_test(&x, &y, PValueMethod::Bartlett).unwrap();
        assert!(t.lambda < 1e-8);
        assert!(t.pvalue < 1e-12);
    }

    #[test]
    fn one_dimensional_cca_is_abs_pearson() {
        let x = random(40, 1, 2);
        let noise = random(40, 1, 3);
        let y = &x * -0.7 + noise;
        let r = cca(&x, &y, PValueMethod::Bartlett).unwrap();
        let xc = center_columns(&x);
        let yc = center_columns(&y);
        let pearson = xc.dot(&yc) / (xc.norm() * yc.norm());
        assert!((r.canonical_correlations[0] - pearson.abs()).abs() < 1e-12);
    }

    #[test]
    fn zero_correlations_give_unit_pvalues() {
        let p = sequential_tests(&[0.0, 0.0, 0.0], 30, 4, 3, PValueMethod::Bartlett);
        assert!(p.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn hierarchical_pattern() {
        let p = sequential_tests(&[0.95, 0.55, 0.40], 26, 8, 3, PValueMethod::Bartlett);
        assert!(p[0] < 0.05 && p[1] > 0.05 && p[2] > 0.05, "{p:?}");
        assert!(p[0] < p[1] && p[1] < p[2]);
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(independence_test(&random(5, 3, 4), &random(5, 2, 5), PValueMethod::Bartlett).is_err());
        assert!(cca(&random(20, 3, 4), &random(19, 2, 5), PValueMethod::Bartlett).is_err());
    }

    #[test]
    fn log_lambda_matches() {
        let x = random(60, 3, 6);
        let y = random(60, 2, 7) + x.columns(0, 2) * 0.5;
        let l = wilks_lambda(&x, &y).unwrap();
        assert!((log_wilks_lambda(&x, &y).unwrap() - l.ln()).abs() < 1e-10);
    }
}
