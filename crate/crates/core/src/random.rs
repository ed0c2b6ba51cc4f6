//! Random variate generation used by the sampler and the simulators.
//!
//! Every randomized routine takes an explicit `Rng`; independent chains and
//! replications derive their generator from `(seed, stream)` so results never
//! depend on scheduling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{JnirmError, Result};
use crate::linalg::cholesky_jittered;

/// Generator used throughout the crate.
pub type ChainRng = ChaCha8Rng;

/// Independent generator for stream `stream` of a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| std_normal(rng))
}

/// Standard normal truncated to `[lower, inf)`.
fn std_normal_above<R: Rng + ?Sized>(rng: &mut R, lower: f64) -> f64 {
    if lower < 0.5 {
        loop {
            let z = std_normal(rng);
            if z >= lower {
                return z;
            }
        }
    }
    // Exponential proposal with the optimal rate for the tail.
    let lambda = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    loop {
        let u: f64 = rng.random::<f64>();
        let z = lower - (1.0 - u).ln() / lambda;
        let accept = (-(z - lambda).powi(2) / 2.0).exp();
        if rng.random::<f64>() <= accept {
            return z;
        }
    }
}

/// Standard normal distribution function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Which side of zero a truncated draw must fall on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// `(0, inf)`: an observed one.
    Positive,
    /// `(-inf, 0]`: an observed zero.
    NonPositive,
    None,
}

/// Draw from N(mean, sd²) restricted by `truncation`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, truncation: Truncation) -> f64 {
    match truncation {
        Truncation::None => mean + sd * std_normal(rng),
        Truncation::Positive => {
            let z = std_normal_above(rng, -mean / sd);
            let x = mean + sd * z;
            if x > 0.0 {
                x
            } else {
                f64::MIN_POSITIVE
            }
        }
        Truncation::NonPositive => {
            let z = std_normal_above(rng, mean / sd);
            (mean - sd * z).min(0.0)
        }
    }
}

/// Gamma draw parameterised by shape and rate.
pub fn gamma_rate<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| JnirmError::Numerical(format!("gamma(shape={shape}, rate={rate}): {e}")))?;
    Ok(g.sample(rng))
}

/// Draw from MVN with precision `Q` (given by its Cholesky factor) and
/// canonical linear term `b`, i.e. mean `Q⁻¹ b`. Returns `(mean, draw)`.
pub fn mvn_from_precision<R: Rng + ?Sized>(
    rng: &mut R,
    precision: &Cholesky<f64, Dyn>,
    linear: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let mean = precision.solve(linear);
    let z = normal_vector(rng, linear.len());
    // Q = L Lᵀ  =>  L⁻ᵀ z has covariance Q⁻¹.
    let offset = precision
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("cholesky factor has positive diagonal");
    let draw = &mean + offset;
    (mean, draw)
}

/// Draw from MVN(mean, cov) with cov given by its Cholesky factor.
pub fn mvn_from_covariance<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    cov: &Cholesky<f64, Dyn>,
) -> DVector<f64> {
    let z = normal_vector(rng, mean.len());
    mean + cov.l() * z
}

/// Inverse-Wishart draw with scale `Ψ` and `df` degrees of freedom
/// (so that `Σ⁻¹ ~ Wishart(Ψ⁻¹, df)` and `E[Σ] = Ψ / (df - p - 1)`).
pub fn inverse_wishart<R: Rng + ?Sized>(rng: &mut R, scale: &DMatrix<f64>, df: f64) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= p as f64 - 1.0 {
        return Err(JnirmError::config(format!(
            "inverse-Wishart df {df} must exceed dimension - 1 = {}",
            p as f64 - 1.0
        )));
    }
    let scale_inv = crate::linalg::spd_inverse(scale)?;
    let l = cholesky_jittered(&scale_inv)?.l();
    // Bartlett factor.
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi =
            ChiSquared::new(df - i as f64).map_err(|e| JnirmError::Numerical(format!("chi-squared draw: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    // W = B Bᵀ with B = L A lower triangular; Σ = W⁻¹ = B⁻ᵀ B⁻¹.
    let b = l * a;
    let b_inv = b
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| JnirmError::Numerical("singular Bartlett factor".into()))?;
    let sigma = b_inv.transpose() * b_inv;
    Ok(crate::linalg::symmetrize(&sigma))
}
