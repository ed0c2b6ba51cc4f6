//! Full conditional distributions of the Gibbs sampler.
//!
//! Each update is a free function over explicit inputs so it can be checked
//! in isolation against closed forms and dense oracles; `Sampler` composes
//! them and maintains the residual matrices incrementally.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{JnirmError, Result};
use crate::linalg::{cholesky_jittered, require_spd, select, spd_inverse};
use crate::model::{DataKind, ItemResponses, NetworkData};
use crate::random::{gamma_rate, mvn_from_precision, normal_vector, std_normal, truncated_normal, Truncation};

/// Coefficients that whiten the within-dyad error correlation:
/// `c R + d Rᵀ` has iid unit-variance entries when `R` has dyadic errors
/// with variance `σ_e²` and correlation `ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecorrelationCoeffs {
    pub c: f64,
    pub d: f64,
}

impl DecorrelationCoeffs {
    pub fn new(rho: f64, sigma_e: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(JnirmError::config(format!("rho {rho} must lie in (-1, 1)")));
        }
        if !(sigma_e > 0.0) {
            return Err(JnirmError::config(format!("sigma_e {sigma_e} must be positive")));
        }
        let plus = (1.0 + rho).powf(-0.5);
        let minus = (1.0 - rho).powf(-0.5);
        Ok(DecorrelationCoeffs {
            c: (plus + minus) / (2.0 * sigma_e),
            d: (plus - minus) / (2.0 * sigma_e),
        })
    }

    /// Coefficient on `‖partner‖²` in the diagonal of `MᵀM`.
    #[inline]
    pub fn diag_weight(&self) -> f64 {
        self.c * self.c + self.d * self.d
    }

    /// Coefficient on the rank-one `partner · partnerᵀ` term of `MᵀM`.
    #[inline]
    pub fn cross_weight(&self) -> f64 {
        2.0 * self.c * self.d
    }
}

/// `c R + d Rᵀ`.
pub fn decorrelate(r: &DMatrix<f64>, rho: f64, sigma_e: f64) -> Result<DMatrix<f64>> {
    if r.nrows() != r.ncols() {
        return Err(JnirmError::dims("residual matrix must be square"));
    }
    let coeffs = DecorrelationCoeffs::new(rho, sigma_e)?;
    Ok(r * coeffs.c + r.transpose() * coeffs.d)
}

/// Conditional distribution of `(target, partners)` given the remaining
/// coordinates of a person's stacked latent vector, in canonical form:
/// density ∝ exp(-½ xᵀ Q x + xᵀ S) with `S = shift_map · x_rest`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalBlock {
    pub target: usize,
    pub partners: Vec<usize>,
    /// Indices of the conditioned coordinates.
    pub rest: Vec<usize>,
    /// `(1 + partners) × (1 + partners)` precision, target first.
    pub precision: DMatrix<f64>,
    /// Maps the conditioned coordinates to `S`.
    pub shift_map: DMatrix<f64>,
}

impl ConditionalBlock {
    /// Block for `target` jointly with `partners`, conditioning on every other
    /// coordinate of `sigma`.
    pub fn new(sigma: &DMatrix<f64>, target: usize, partners: &[usize]) -> Result<Self> {
        let p = sigma.nrows();
        if sigma.ncols() != p || target >= p || partners.iter().any(|&j| j >= p || j == target) {
            return Err(JnirmError::dims("conditional block indices out of range"));
        }
        require_spd(sigma, "Sigma_utheta")?;
        let mut active = vec![target];
        active.extend_from_slice(partners);
        let rest: Vec<usize> = (0..p).filter(|j| !active.contains(j)).collect();
        let s_aa = select(sigma, &active, &active);
        let (cond_cov, regression) = if rest.is_empty() {
            (s_aa, DMatrix::zeros(active.len(), 0))
        } else {
            let s_ar = select(sigma, &active, &rest);
            let s_rr_inv = spd_inverse(&select(sigma, &rest, &rest))?;
            let regression = &s_ar * s_rr_inv;
            (&s_aa - &regression * s_ar.transpose(), regression)
        };
        let precision = spd_inverse(&cond_cov)?;
        let shift_map = &precision * regression;
        Ok(ConditionalBlock {
            target,
            partners: partners.to_vec(),
            rest,
            precision,
            shift_map,
        })
    }

    pub fn q_u(&self) -> f64 {
        self.precision[(0, 0)]
    }

    /// Row `Q_θu` coupling the target to the partners.
    pub fn q_theta_u(&self) -> DMatrix<f64> {
        self.precision.view((0, 1), (1, self.partners.len())).into_owned()
    }

    /// Column `Q_uθ`.
    pub fn q_u_theta(&self) -> DMatrix<f64> {
        self.precision.view((1, 0), (self.partners.len(), 1)).into_owned()
    }

    pub fn q_theta(&self) -> DMatrix<f64> {
        let m = self.partners.len();
        self.precision.view((1, 1), (m, m)).into_owned()
    }

    /// `S = Q μ_cond` for the given values of the conditioned coordinates.
    pub fn shift(&self, rest_values: &[f64]) -> DVector<f64> {
        &self.shift_map * DVector::from_column_slice(rest_values)
    }

    pub fn s_u(&self, rest_values: &[f64]) -> f64 {
        self.shift_map.row(0).iter().zip(rest_values).map(|(a, b)| a * b).sum()
    }

    /// Prior precision and canonical linear term of the target given the
    /// partners' current values.
    pub fn target_prior(&self, rest_values: &[f64], partner_values: &[f64]) -> (f64, f64) {
        let coupling: f64 = (0..self.partners.len())
            .map(|m| self.precision[(0, m + 1)] * partner_values[m])
            .sum();
        (self.q_u(), self.s_u(rest_values) - coupling)
    }

    /// Per-person prior precision and linear terms, reading coordinates from
    /// the stacked `N × dim` latent matrix.
    pub fn target_prior_all(&self, stacked: &DMatrix<f64>) -> (f64, DVector<f64>) {
        let n = stacked.nrows();
        let mut lin = DVector::zeros(n);
        let mut rest = vec![0.0; self.rest.len()];
        let mut part = vec![0.0; self.partners.len()];
        for p in 0..n {
            for (slot, &j) in self.rest.iter().enumerate() {
                rest[slot] = stacked[(p, j)];
            }
            for (slot, &j) in self.partners.iter().enumerate() {
                part[slot] = stacked[(p, j)];
            }
            lin[p] = self.target_prior(&rest, &part).1;
        }
        (self.q_u(), lin)
    }
}

/// Block for a network coordinate `target` (an index into `U` or `V` in the
/// stacked layout) jointly with `θ_1..θ_D`, given the other `2K - 1` network
/// coordinates.
pub fn conditional_block(sigma: &DMatrix<f64>, target: usize, k: usize, d: usize) -> Result<ConditionalBlock> {
    if target >= 2 * k {
        return Err(JnirmError::dims(format!(
            "target {target} is not a network coordinate (2K = {})",
            2 * k
        )));
    }
    if sigma.nrows() != 2 * k + d {
        return Err(JnirmError::dims("Sigma_utheta does not match K and D"));
    }
    let partners: Vec<usize> = (2 * k..2 * k + d).collect();
    ConditionalBlock::new(sigma, target, &partners)
}

/// Sender or receiver role of a network latent column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Sender,
    Receiver,
}

/// Mean and draw of one updated latent column.
#[derive(Debug, Clone)]
pub struct ColumnDraw {
    pub mean: DVector<f64>,
    pub draw: DVector<f64>,
}

/// Draws a latent column `x` from the Gaussian with precision
/// `MᵀM + q I` and linear term `Mᵀ r̃ + prior_linear`, where
/// `MᵀM = (c² + d²)‖w‖² I + 2cd w wᵀ` for partner column `w`.
///
/// `r_w` and `rt_w` are `R w` and `Rᵀ w` for the (un-whitened) residual `R`
/// oriented so that `R ≈ x wᵀ`; `Mᵀ r̃ = (c² + d²) R w + 2cd Rᵀ w`.
/// The Kronecker design is never formed: the precision is diagonal plus
/// rank one, so the solve and the square root are closed form.
pub fn draw_latent_column<R: Rng + ?Sized>(
    rng: &mut R,
    coeffs: &DecorrelationCoeffs,
    partner: &DVector<f64>,
    r_w: &DVector<f64>,
    rt_w: &DVector<f64>,
    prior_precision: f64,
    prior_linear: &DVector<f64>,
) -> Result<ColumnDraw> {
    let n = partner.len();
    let norm2 = partner.norm_squared();
    let alpha = coeffs.diag_weight() * norm2 + prior_precision;
    let beta = coeffs.cross_weight();
    let along = alpha + beta * norm2;
    if !(alpha > 0.0 && along > 0.0) || !alpha.is_finite() {
        return Err(JnirmError::Numerical(format!(
            "latent column precision not positive definite (alpha={alpha}, along={along})"
        )));
    }
    let linear = r_w * coeffs.diag_weight() + rt_w * beta + prior_linear;
    // (αI + β w wᵀ)⁻¹ b = (b - β w (wᵀb) / along) / α
    let mean = if norm2 > 0.0 {
        let proj = partner.dot(&linear);
        (&linear - partner * (beta * proj / along)) / alpha
    } else {
        &linear / alpha
    };
    let z = normal_vector(rng, n);
    // Inverse square root: α^{-1/2} (I + (γ - 1) w wᵀ / ‖w‖²), γ = sqrt(α / along).
    let mut offset = z.clone();
    if norm2 > 0.0 {
        let gamma = (alpha / along).sqrt();
        let proj = partner.dot(&z) / norm2;
        offset += partner * ((gamma - 1.0) * proj);
    }
    offset /= alpha.sqrt();
    Ok(ColumnDraw {
        draw: &mean + offset,
        mean,
    })
}

/// Update of latent network dimension `dim` on `side` for all persons.
///
/// `residual` must exclude the intercept and the products of every other
/// dimension: `R = Z - δ11ᵀ - Σ_{k≠dim} u_k v_kᵀ`. `stacked` is the
/// `N × dim(Σ)` latent matrix and `theta_partners` the stacked indices of
/// the item coordinates coupled through `sigma` (empty without items).
#[allow(clippy::too_many_arguments)]
pub fn update_latent_dimension<R: Rng + ?Sized>(
    rng: &mut R,
    residual: &DMatrix<f64>,
    partner: &DVector<f64>,
    stacked: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    target: usize,
    theta_partners: &[usize],
    side: Side,
    rho: f64,
    sigma2_e: f64,
) -> Result<ColumnDraw> {
    let n = residual.nrows();
    if residual.ncols() != n || partner.len() != n || stacked.nrows() != n {
        return Err(JnirmError::dims("latent update inputs disagree on N"));
    }
    let coeffs = DecorrelationCoeffs::new(rho, sigma2_e.sqrt())?;
    let block = ConditionalBlock::new(sigma, target, theta_partners)?;
    let (q, prior_lin) = block.target_prior_all(stacked);
    let (r_w, rt_w) = match side {
        Side::Sender => (residual * partner, residual.tr_mul(partner)),
        Side::Receiver => (residual.tr_mul(partner), residual * partner),
    };
    draw_latent_column(rng, &coeffs, partner, &r_w, &rt_w, q, &prior_lin)
}

/// Per-person conditional of one item latent dimension, given the residual
/// `Y - 1βᵀ - Σ_{d'≠d} θ_{d'} α_{d'}ᵀ`, the slopes `α_{·,d}`, the error
/// variance and the conditional prior in canonical form. Returns
/// `(means, variances)`.
pub fn theta_conditional(
    item_residual: &DMatrix<f64>,
    slopes: &DVector<f64>,
    sigma2_eps: f64,
    prior_precision: f64,
    prior_linear: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let projection = item_residual * slopes;
    theta_conditional_projected(
        &projection,
        slopes.norm_squared(),
        sigma2_eps,
        prior_precision,
        prior_linear,
    )
}

/// Same as [`theta_conditional`] given `residual · slopes` and `‖slopes‖²`.
pub fn theta_conditional_projected(
    projection: &DVector<f64>,
    slope_norm2: f64,
    sigma2_eps: f64,
    prior_precision: f64,
    prior_linear: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = projection.len();
    let precision = slope_norm2 / sigma2_eps + prior_precision;
    let lin = projection / sigma2_eps + prior_linear;
    (lin / precision, DVector::from_element(n, 1.0 / precision))
}

/// Update of item latent dimension `target` (stacked index) for all persons.
#[allow(clippy::too_many_arguments)]
pub fn update_theta_dimension<R: Rng + ?Sized>(
    rng: &mut R,
    item_residual: &DMatrix<f64>,
    slopes: &DVector<f64>,
    stacked: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    target: usize,
    network_partners: &[usize],
    sigma2_eps: f64,
) -> Result<ColumnDraw> {
    let block = ConditionalBlock::new(sigma, target, network_partners)?;
    let (q, prior_lin) = block.target_prior_all(stacked);
    let (mean, var) = theta_conditional(item_residual, slopes, sigma2_eps, q, &prior_lin);
    let draw = DVector::from_fn(mean.len(), |p, _| mean[p] + var[p].sqrt() * std_normal(rng));
    Ok(ColumnDraw { mean, draw })
}

/// Inverse-Wishart full conditional of the joint covariance given the stacked
/// latent matrix `F'` (rows `(u_p, v_p, θ_p)`).
pub fn update_sigma_utheta<R: Rng + ?Sized>(
    rng: &mut R,
    stacked: &DMatrix<f64>,
    prior_scale: &DMatrix<f64>,
    prior_df: f64,
) -> Result<DMatrix<f64>> {
    if stacked.ncols() != prior_scale.nrows() {
        return Err(JnirmError::dims("stacked latents do not match the prior scale"));
    }
    let scale = prior_scale + stacked.tr_mul(stacked);
    crate::random::inverse_wishart(rng, &scale, prior_df + stacked.nrows() as f64)
}

/// Sufficient statistics of a square residual matrix for the dyadic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyadStats {
    /// Number of nodes.
    pub n: usize,
    /// Σ_{a≠b} e_ab².
    pub off_diag_ss: f64,
    /// Σ_{a<b} e_ab e_ba.
    pub cross: f64,
    /// Σ_a e_aa².
    pub diag_ss: f64,
}

impl DyadStats {
    pub fn from_residual(e: &DMatrix<f64>) -> Self {
        let n = e.nrows();
        let mut off = 0.0;
        let mut cross = 0.0;
        let mut diag = 0.0;
        for b in 0..n {
            for a in 0..n {
                let x = e[(a, b)];
                if a == b {
                    diag += x * x;
                } else {
                    off += x * x;
                    if a < b {
                        cross += x * e[(b, a)];
                    }
                }
            }
        }
        DyadStats {
            n,
            off_diag_ss: off,
            cross,
            diag_ss: diag,
        }
    }

    /// Σ_{a<b} (e_ab, e_ba) [[1,ρ],[ρ,1]]⁻¹ (e_ab, e_ba)ᵀ + Σ_a e_aa² / (1+ρ).
    pub fn quadratic_form(&self, rho: f64) -> f64 {
        (self.off_diag_ss - 2.0 * rho * self.cross) / (1.0 - rho * rho) + self.diag_ss / (1.0 + rho)
    }

    /// Log-likelihood (up to a constant) of the residual under dyadic errors
    /// with variance `sigma2` and correlation `rho`; self-dyads have
    /// variance `σ²(1+ρ)`.
    pub fn log_likelihood(&self, rho: f64, sigma2: f64) -> f64 {
        let n = self.n as f64;
        let pairs = n * (n - 1.0) / 2.0;
        -0.5 * pairs * (1.0 - rho * rho).ln()
            - 0.5 * n * (1.0 + rho).ln()
            - 0.5 * n * n * sigma2.ln()
            - self.quadratic_form(rho) / (2.0 * sigma2)
    }
}

/// Draw of `σ_e²` from the gamma full conditional of its precision:
/// shape `a₀ + N²/2`, rate `b₀ + ½ Q(ρ)`.
pub fn update_sigma_e<R: Rng + ?Sized>(
    rng: &mut R,
    residual: &DMatrix<f64>,
    rho: f64,
    prior_shape: f64,
    prior_rate: f64,
) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(JnirmError::config("rho must lie in (-1, 1)"));
    }
    let n = residual.nrows() as f64;
    let q = DyadStats::from_residual(residual).quadratic_form(rho);
    let precision = gamma_rate(rng, prior_shape + n * n / 2.0, prior_rate + q / 2.0)?;
    Ok(1.0 / precision)
}

/// Random-walk Metropolis–Hastings step for ρ under a uniform prior on (-1, 1).
pub fn update_rho<R: Rng + ?Sized>(
    rng: &mut R,
    residual: &DMatrix<f64>,
    sigma2_e: f64,
    current: f64,
    proposal_sd: f64,
) -> Result<(f64, bool)> {
    if !(current.abs() < 1.0) {
        return Err(JnirmError::config("current rho must lie in (-1, 1)"));
    }
    let stats = DyadStats::from_residual(residual);
    Ok(rho_step(rng, &stats, sigma2_e, current, proposal_sd))
}

pub(crate) fn rho_step<R: Rng + ?Sized>(
    rng: &mut R,
    stats: &DyadStats,
    sigma2_e: f64,
    current: f64,
    proposal_sd: f64,
) -> (f64, bool) {
    let proposal = current + proposal_sd * std_normal(rng);
    if !(proposal.abs() < 1.0) {
        return (current, false);
    }
    let log_ratio = stats.log_likelihood(proposal, sigma2_e) - stats.log_likelihood(current, sigma2_e);
    let u: f64 = rng.random::<f64>();
    if u.ln() < log_ratio {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// Conjugate normal draw for δ with `R = Z - UVᵀ` regressed on `11ᵀ` in the
/// whitened metric. Returns `(posterior mean, draw)`.
pub fn delta_posterior(
    z_minus_uvt: &DMatrix<f64>,
    sigma2_e: f64,
    rho: f64,
    prior_precision: f64,
) -> Result<(f64, f64)> {
    let coeffs = DecorrelationCoeffs::new(rho, sigma2_e.sqrt())?;
    let w = (coeffs.c + coeffs.d).powi(2);
    let n2 = (z_minus_uvt.nrows() * z_minus_uvt.ncols()) as f64;
    let precision = n2 * w + prior_precision;
    Ok((w * z_minus_uvt.sum() / precision, 1.0 / precision))
}

pub fn update_delta<R: Rng + ?Sized>(
    rng: &mut R,
    z_minus_uvt: &DMatrix<f64>,
    sigma2_e: f64,
    rho: f64,
    prior_precision: f64,
) -> Result<f64> {
    let (mean, var) = delta_posterior(z_minus_uvt, sigma2_e, rho, prior_precision)?;
    Ok(mean + var.sqrt() * std_normal(rng))
}

/// Posterior `(μ*, Σ*)` of `ξ_i = (α_i, β_i)` for one item response column.
pub fn item_param_posterior(
    theta: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma2_eps: f64,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let design = item_design(theta);
    let prior_prec = spd_inverse(prior_cov)?;
    let precision = design.tr_mul(&design) / sigma2_eps + &prior_prec;
    let cov = spd_inverse(&precision)?;
    let mean = &cov * (design.tr_mul(y) / sigma2_eps + &prior_prec * prior_mean);
    Ok((mean, cov))
}

/// `G = (Θ, 1)`.
pub fn item_design(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = theta.nrows();
    let d = theta.ncols();
    let mut g = DMatrix::from_element(n, d + 1, 1.0);
    g.view_mut((0, 0), (n, d)).copy_from(theta);
    g
}

/// Draws `(β, A)` item by item from their multivariate normal conditionals.
pub fn update_item_params<R: Rng + ?Sized>(
    rng: &mut R,
    latent_y: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    sigma2_eps: f64,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = theta.ncols();
    let m = latent_y.ncols();
    if latent_y.nrows() != theta.nrows() || prior_mean.len() != d + 1 {
        return Err(JnirmError::dims("item parameter update inputs disagree"));
    }
    let design = item_design(theta);
    let prior_prec = spd_inverse(prior_cov)?;
    let precision = design.tr_mul(&design) / sigma2_eps + &prior_prec;
    let chol = cholesky_jittered(&precision)?;
    let prior_lin = &prior_prec * prior_mean;
    let gty = design.tr_mul(latent_y) / sigma2_eps;
    let mut beta = DVector::zeros(m);
    let mut a = DMatrix::zeros(m, d);
    for i in 0..m {
        let lin = gty.column(i) + &prior_lin;
        let (_, xi) = mvn_from_precision(rng, &chol, &lin);
        for j in 0..d {
            a[(i, j)] = xi[j];
        }
        beta[i] = xi[d];
    }
    Ok((beta, a))
}

/// Draw of `σ_ε²` from the gamma full conditional of its precision:
/// shape `a₀ + NM/2`, rate `b₀ + ½ ΣΣ ε²`.
pub fn update_sigma_eps<R: Rng + ?Sized>(
    rng: &mut R,
    residual: &DMatrix<f64>,
    prior_shape: f64,
    prior_rate: f64,
) -> Result<f64> {
    let cells = (residual.nrows() * residual.ncols()) as f64;
    let precision = gamma_rate(
        rng,
        prior_shape + cells / 2.0,
        prior_rate + residual.norm_squared() / 2.0,
    )?;
    Ok(1.0 / precision)
}

fn cell_truncation(kind: DataKind, observed: bool, value: f64) -> Option<Truncation> {
    // None: the latent value is fixed to the observation.
    match (observed, kind) {
        (false, _) => Some(Truncation::None),
        (true, DataKind::Continuous) => None,
        (true, DataKind::Binary) => Some(if value == 1.0 {
            Truncation::Positive
        } else {
            Truncation::NonPositive
        }),
    }
}

/// Refreshes the latent network matrix given its expected value.
///
/// Binary cells are drawn truncated to the side of zero their observation
/// implies; unobserved cells (including self-dyads) are drawn untruncated;
/// observed continuous cells are fixed at the data. Each dyad is updated by
/// alternating univariate conditionals through ρ; a self-dyad has variance
/// `σ²(1+ρ)`.
pub fn augment_network<R: Rng + ?Sized>(
    rng: &mut R,
    latent: &mut DMatrix<f64>,
    network: &NetworkData,
    expected: &DMatrix<f64>,
    rho: f64,
    sigma2_e: f64,
) {
    let n = network.n_nodes();
    let sd_cond = (sigma2_e * (1.0 - rho * rho)).sqrt();
    let sd_self = (sigma2_e * (1.0 + rho)).sqrt();
    let edges = network.edges();
    let kind = network.kind();
    for a in 0..n {
        latent[(a, a)] = expected[(a, a)] + sd_self * std_normal(rng);
        for b in (a + 1)..n {
            for (x, y) in [(a, b), (b, a)] {
                if let Some(tr) = cell_truncation(kind, network.is_observed(x, y), edges[(x, y)]) {
                    let mean = expected[(x, y)] + rho * (latent[(y, x)] - expected[(y, x)]);
                    latent[(x, y)] = truncated_normal(rng, mean, sd_cond, tr);
                } else {
                    latent[(x, y)] = edges[(x, y)];
                }
            }
        }
    }
}

/// Item-side counterpart of [`augment_network`]; cells are independent.
pub fn augment_items<R: Rng + ?Sized>(
    rng: &mut R,
    latent: &mut DMatrix<f64>,
    items: &ItemResponses,
    expected: &DMatrix<f64>,
    sigma2_eps: f64,
) {
    let sd = sigma2_eps.sqrt();
    let values = items.values();
    for i in 0..items.n_items() {
        for p in 0..items.n_persons() {
            latent[(p, i)] = match cell_truncation(items.kind(), items.mask()[(p, i)], values[(p, i)]) {
                Some(tr) => truncated_normal(rng, expected[(p, i)], sd, tr),
                None => values[(p, i)],
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::stream_rng;

    #[test]
    fn decorrelation_limits() {
        let c = DecorrelationCoeffs::new(0.0, 1.0).unwrap();
        assert_eq!((c.c, c.d), (1.0, 0.0));
        let c = DecorrelationCoeffs::new(0.0, 2.0).unwrap();
        assert_eq!((c.c, c.d), (0.5, 0.0));
        assert!(DecorrelationCoeffs::new(1.0, 1.0).is_err());
        assert!(decorrelate(&DMatrix::zeros(2, 2), -1.0, 1.0).is_err());
    }

    #[test]
    fn decorrelate_identity_and_symmetric() {
        let r = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, -1.0, 0.5, 3.0, 4.0, 0.0, 1.0]);
        assert_eq!(decorrelate(&r, 0.0, 1.0).unwrap(), r);
        let s = &r + r.transpose();
        let c = DecorrelationCoeffs::new(0.4, 1.3).unwrap();
        let out = decorrelate(&s, 0.4, 1.3).unwrap();
        assert!((out - &s * (c.c + c.d)).abs().max() < 1e-12);
    }

    #[test]
    fn identity_sigma_block() {
        let b = conditional_block(&DMatrix::identity(7, 7), 0, 2, 3).unwrap();
        assert_eq!(b.q_u(), 1.0);
        assert_eq!(b.q_theta(), DMatrix::identity(3, 3));
        assert_eq!(b.q_theta_u(), DMatrix::zeros(1, 3));
        assert_eq!(b.s_u(&[0.3, -1.0, 2.0]), 0.0);
    }

    #[test]
    fn two_by_two_closed_form() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.6, 0.0, 1.0, 0.0, 0.6, 0.0, 1.0]);
        let b = conditional_block(&s, 0, 1, 1).unwrap();
        assert!((b.q_u() - 1.5625).abs() < 1e-12);
    }

    #[test]
    fn non_network_target_rejected() {
        assert!(conditional_block(&DMatrix::identity(5, 5), 2, 1, 3).is_err());
    }

    #[test]
    fn conjugate_theta_example() {
        // One item, α = 1, σ² = 1, prior N(0,1), residual 2 → mean 1, var 0.5.
        let r = DMatrix::from_element(1, 1, 2.0);
        let (m, v) = theta_conditional(&r, &DVector::from_element(1, 1.0), 1.0, 1.0, &DVector::zeros(1));
        assert!((m[0] - 1.0).abs() < 1e-12 && (v[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_slopes_give_prior() {
        let r = DMatrix::from_element(3, 2, 5.0);
        let prior_lin = DVector::from_row_slice(&[0.2, -0.4, 1.0]);
        let (m, v) = theta_conditional(&r, &DVector::zeros(2), 0.7, 2.0, &prior_lin);
        assert!((m - prior_lin / 2.0).abs().max() < 1e-14);
        assert!(v.iter().all(|&x| (x - 0.5).abs() < 1e-14));
    }

    #[test]
    fn item_posterior_hand_example() {
        let theta = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let y = DVector::from_row_slice(&[2.0, 0.0]);
        let prior = DVector::from_row_slice(&[1.0, 0.0]);
        let (mean, cov) = item_param_posterior(&theta, &y, 1.0, &prior, &DMatrix::identity(2, 2)).unwrap();
        assert!((cov - DMatrix::identity(2, 2) / 3.0).abs().max() < 1e-12);
        assert!((mean[0] - 1.0).abs() < 1e-12 && (mean[1] - 2.0 / 3.0).abs() < 1e-12);
        let (mean0, _) = item_param_posterior(&theta, &y, 1.0, &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
        assert!((mean0[0] - 2.0 / 3.0).abs() < 1e-12 && (mean0[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_theta_slopes_keep_prior() {
        let theta = DMatrix::zeros(5, 2);
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let prior = DVector::from_row_slice(&[1.0, 1.0, 0.0]);
        let (mean, cov) = item_param_posterior(&theta, &y, 1.0, &prior, &DMatrix::identity(3, 3)).unwrap();
        assert!((mean[0] - 1.0).abs() < 1e-12 && (mean[1] - 1.0).abs() < 1e-12);
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-12);
        // β: precision 5 + 1, linear 15 → 15/6.
        assert!((mean[2] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn vanishing_item_precision_draws_prior() {
        let mut rng = stream_rng(8, 0);
        let theta = DMatrix::from_fn(20, 1, |p, _| p as f64 / 10.0);
        let y = DMatrix::from_element(20, 1, 9.0);
        let prior = DVector::from_row_slice(&[1.0, 0.0]);
        let n = 20_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            let (b, a) = update_item_params(&mut rng, &y, &theta, 1e12, &prior, &DMatrix::identity(2, 2)).unwrap();
            acc[0] += a[(0, 0)];
            acc[1] += b[0];
        }
        acc /= n as f64;
        assert!((acc[0] - 1.0).abs() < 0.03 && acc[1].abs() < 0.03);
    }

    #[test]
    fn sigma_eps_single_cell_parameters() {
        // shape ½ + ½ = 1, rate ½ + ½ = 1: the precision is Exp(1).
        let mut rng = stream_rng(9, 0);
        let r = DMatrix::from_element(1, 1, 1.0);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| 1.0 / update_sigma_eps(&mut rng, &r, 0.5, 0.5).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn sigma_e_zero_residual_mean() {
        // E = 0 → precision ~ gamma((N²+1)/2, 1/2) with mean N²+1.
        let mut rng = stream_rng(10, 0);
        let e = DMatrix::zeros(4, 4);
        let n = 50_000;
        let mean: f64 = (0..n)
            .map(|_| 1.0 / update_sigma_e(&mut rng, &e, 0.3, 0.5, 0.5).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 17.0).abs() < 0.2, "{mean}");
    }

    #[test]
    fn rho_proposals_outside_support_rejected() {
        let mut rng = stream_rng(11, 0);
        let e = DMatrix::from_fn(5, 5, |a, b| (a as f64 - b as f64) * 0.1);
        for _ in 0..200 {
            let (r, acc) = update_rho(&mut rng, &e, 1.0, 0.99, 5.0).unwrap();
            assert!(r.abs() < 1.0);
            if r != 0.99 {
                assert!(acc);
            }
        }
    }

    #[test]
    fn delta_prior_domination_and_constant_fit() {
        let r = DMatrix::from_element(30, 30, 3.0);
        let (mean, var) = delta_posterior(&r, 1.0, 0.0, 1e-8).unwrap();
        assert!((mean - 3.0).abs() < 1e-6 && var < 1e-2);
        let (mean, var) = delta_posterior(&r, 1.0, 0.0, 1e12).unwrap();
        assert!(mean.abs() < 1e-6 && var < 1e-11);
    }

    #[test]
    fn zero_partner_gives_prior_conditional() {
        let mut rng = stream_rng(12, 0);
        let coeffs = DecorrelationCoeffs::new(0.3, 1.0).unwrap();
        let w = DVector::zeros(4);
        let lin = DVector::from_row_slice(&[1.0, 2.0, -1.0, 0.0]);
        let zero = DVector::zeros(4);
        let d = draw_latent_column(&mut rng, &coeffs, &w, &zero, &zero, 2.0, &lin).unwrap();
        assert!((d.mean - lin / 2.0).abs().max() < 1e-14);
    }
}
