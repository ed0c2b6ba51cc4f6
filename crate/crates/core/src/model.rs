//! Domain types, model configuration and the deterministic expected-value maps.
//!
//! Person-level latent coordinates are stacked as `(u_p, v_p, θ_p)`: sender
//! dimension `k` of `U` sits in slot `k`, receiver dimension `k` of `V` in slot
//! `K + k` and item dimension `d` of `Θ` in slot `2K + d`. Every covariance in
//! the crate uses this layout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{JnirmError, Result};
use crate::linalg::{is_spd, require_spd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Binary,
    Continuous,
}

/// A directed network on `N` nodes. Unobserved cells (including the diagonal)
/// carry `false` in `mask`; their stored value is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkData {
    edges: DMatrix<f64>,
    kind: DataKind,
    mask: DMatrix<bool>,
}

impl NetworkData {
    /// Builds a network where every off-diagonal finite entry is observed and
    /// `NaN` marks a missing dyad.
    pub fn new(edges: DMatrix<f64>, kind: DataKind) -> Result<Self> {
        let mask = DMatrix::from_fn(edges.nrows(), edges.ncols(), |a, b| a != b && edges[(a, b)].is_finite());
        Self::with_mask(edges, kind, mask)
    }

    pub fn with_mask(mut edges: DMatrix<f64>, kind: DataKind, mut mask: DMatrix<bool>) -> Result<Self> {
        let n = edges.nrows();
        if n == 0 || edges.ncols() != n {
            return Err(JnirmError::InvalidData(format!(
                "adjacency must be square and non-empty, got {}x{}",
                edges.nrows(),
                edges.ncols()
            )));
        }
        if mask.nrows() != n || mask.ncols() != n {
            return Err(JnirmError::dims("mask shape differs from adjacency"));
        }
        for a in 0..n {
            mask[(a, a)] = false;
            edges[(a, a)] = 0.0;
        }
        for a in 0..n {
            for b in 0..n {
                if !mask[(a, b)] {
                    if a != b {
                        edges[(a, b)] = 0.0;
                    }
                    continue;
                }
                let x = edges[(a, b)];
                if !x.is_finite() {
                    return Err(JnirmError::InvalidData(format!(
                        "observed edge ({a},{b}) is not finite"
                    )));
                }
                if kind == DataKind::Binary && x != 0.0 && x != 1.0 {
                    return Err(JnirmError::InvalidData(format!(
                        "binary network has value {x} at ({a},{b})"
                    )));
                }
            }
        }
        Ok(NetworkData { edges, kind, mask })
    }

    pub fn n_nodes(&self) -> usize {
        self.edges.nrows()
    }

    pub fn edges(&self) -> &DMatrix<f64> {
        &self.edges
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn kind(&self) -> DataKind {
        self.kind
    }

    #[inline]
    pub fn is_observed(&self, a: usize, b: usize) -> bool {
        self.mask[(a, b)]
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean of the observed edge values (the density for binary networks).
    pub fn observed_mean(&self) -> f64 {
        let (sum, count) = self
            .edges
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, c), (x, _)| (s + x, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Copy of the network with the outgoing row of `node` masked out.
    pub fn hold_out_row(&self, node: usize) -> Result<Self> {
        if node >= self.n_nodes() {
            return Err(JnirmError::dims(format!(
                "row {node} out of range for {} nodes",
                self.n_nodes()
            )));
        }
        let mut mask = self.mask.clone();
        for b in 0..self.n_nodes() {
            mask[(node, b)] = false;
        }
        Ok(NetworkData {
            edges: self.edges.clone(),
            kind: self.kind,
            mask,
        })
    }
}

/// Item responses of `N` persons on `M` items; `NaN` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResponses {
    values: DMatrix<f64>,
    kind: DataKind,
    mask: DMatrix<bool>,
}

impl ItemResponses {
    pub fn new(values: DMatrix<f64>, kind: DataKind) -> Result<Self> {
        let mask = values.map(|x| x.is_finite());
        Self::with_mask(values, kind, mask)
    }

    pub fn with_mask(mut values: DMatrix<f64>, kind: DataKind, mask: DMatrix<bool>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(JnirmError::InvalidData("item responses are empty".into()));
        }
        if mask.shape() != values.shape() {
            return Err(JnirmError::dims("mask shape differs from item responses"));
        }
        for p in 0..values.nrows() {
            for i in 0..values.ncols() {
                if !mask[(p, i)] {
                    values[(p, i)] = 0.0;
                    continue;
                }
                let y = values[(p, i)];
                if !y.is_finite() {
                    return Err(JnirmError::InvalidData(format!(
                        "observed response ({p},{i}) is not finite"
                    )));
                }
                if kind == DataKind::Binary && y != 0.0 && y != 1.0 {
                    return Err(JnirmError::InvalidData(format!(
                        "binary response has value {y} at ({p},{i})"
                    )));
                }
            }
        }
        Ok(ItemResponses { values, kind, mask })
    }

    pub fn n_persons(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn kind(&self) -> DataKind {
        self.kind
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Per-item mean over observed cells (0 for an all-missing item).
    pub fn item_means(&self) -> DVector<f64> {
        DVector::from_fn(self.n_items(), |i, _| {
            let (s, c) = (0..self.n_persons())
                .filter(|&p| self.mask[(p, i)])
                .fold((0.0, 0usize), |(s, c), p| (s + self.values[(p, i)], c + 1));
            if c == 0 {
                0.0
            } else {
                s / c as f64
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Joint,
    NetworkOnly,
    ItemOnly,
}

impl Mode {
    pub fn has_network(self) -> bool {
        !matches!(self, Mode::ItemOnly)
    }

    pub fn has_items(self) -> bool {
        !matches!(self, Mode::NetworkOnly)
    }
}

impl std::str::FromStr for Mode {
    type Err = JnirmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "joint" => Ok(Mode::Joint),
            "network-only" | "network" => Ok(Mode::NetworkOnly),
            "item-only" | "items" | "items-only" => Ok(Mode::ItemOnly),
            other => Err(JnirmError::config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Positions of the active person-level coordinates inside `Σ_uθ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentLayout {
    pub k: usize,
    pub d: usize,
    pub network: bool,
    pub items: bool,
}

impl LatentLayout {
    pub fn new(k: usize, d: usize, mode: Mode) -> Self {
        LatentLayout {
            k,
            d,
            network: mode.has_network(),
            items: mode.has_items(),
        }
    }

    pub fn n_network(&self) -> usize {
        if self.network {
            2 * self.k
        } else {
            0
        }
    }

    pub fn n_items(&self) -> usize {
        if self.items {
            self.d
        } else {
            0
        }
    }

    /// Size of the joint covariance.
    pub fn dim(&self) -> usize {
        self.n_network() + self.n_items()
    }

    pub fn u(&self, j: usize) -> usize {
        debug_assert!(self.network && j < self.k);
        j
    }

    pub fn v(&self, j: usize) -> usize {
        debug_assert!(self.network && j < self.k);
        self.k + j
    }

    pub fn theta(&self, j: usize) -> usize {
        debug_assert!(self.items && j < self.d);
        self.n_network() + j
    }

    pub fn network_coords(&self) -> Vec<usize> {
        (0..self.n_network()).collect()
    }

    pub fn theta_coords(&self) -> Vec<usize> {
        (self.n_network()..self.dim()).collect()
    }
}

/// Sampler and prior configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Network latent rank.
    pub k: usize,
    /// Item latent rank.
    pub d: usize,
    pub mode: Mode,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Prior precision of the network intercept.
    pub prior_delta_precision: f64,
    /// Prior mean of `ξ_i = (α_i, β_i)`; defaults to `(1, …, 1, 0)`.
    pub prior_xi_mean: Option<DVector<f64>>,
    /// Prior covariance of `ξ_i`; defaults to the identity.
    pub prior_xi_cov: Option<DMatrix<f64>>,
    /// Inverse-Wishart degrees of freedom; defaults to `dim + 2`.
    pub wishart_df: Option<f64>,
    /// Inverse-Wishart scale; defaults to the identity.
    pub wishart_scale: Option<DMatrix<f64>>,
    /// Gamma prior (shape, rate) on both error precisions.
    pub precision_prior_shape: f64,
    pub precision_prior_rate: f64,
    pub rho_proposal_sd: f64,
    /// Tune the ρ proposal during burn-in.
    pub adapt_rho: bool,
    /// Re-centre Θ after each sweep, absorbing the shift into β.
    pub center_theta: bool,
    /// Retain full parameter draws at thinned iterations (needed for PPC).
    pub keep_draws: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(k: usize, d: usize) -> Self {
        ModelConfig {
            k,
            d,
            mode: Mode::Joint,
            iterations: 20_000,
            burn_in: 2_000,
            thin: 10,
            prior_delta_precision: 0.01,
            prior_xi_mean: None,
            prior_xi_cov: None,
            wishart_df: None,
            wishart_scale: None,
            precision_prior_shape: 0.5,
            precision_prior_rate: 0.5,
            rho_proposal_sd: 0.05,
            adapt_rho: true,
            center_theta: true,
            keep_draws: false,
            seed: 1,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_iterations(mut self, iterations: usize, burn_in: usize, thin: usize) -> Self {
        self.iterations = iterations;
        self.burn_in = burn_in;
        self.thin = thin;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn layout(&self) -> LatentLayout {
        LatentLayout::new(self.k, self.d, self.mode)
    }

    pub fn xi_prior_mean(&self) -> DVector<f64> {
        self.prior_xi_mean.clone().unwrap_or_else(|| {
            let mut m = DVector::from_element(self.d + 1, 1.0);
            m[self.d] = 0.0;
            m
        })
    }

    pub fn xi_prior_cov(&self) -> DMatrix<f64> {
        self.prior_xi_cov
            .clone()
            .unwrap_or_else(|| DMatrix::identity(self.d + 1, self.d + 1))
    }

    pub fn iw_df(&self) -> f64 {
        self.wishart_df.unwrap_or_else(|| self.layout().dim() as f64 + 2.0)
    }

    pub fn iw_scale(&self) -> DMatrix<f64> {
        let p = self.layout().dim();
        self.wishart_scale.clone().unwrap_or_else(|| DMatrix::identity(p, p))
    }

    /// Number of retained (thinned, post-burn-in) iterations.
    pub fn retained(&self) -> usize {
        if self.iterations <= self.burn_in || self.thin == 0 {
            0
        } else {
            (self.iterations - self.burn_in) / self.thin
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode.has_network() && self.k == 0 {
            return Err(JnirmError::config("network rank K must be >= 1"));
        }
        if self.mode.has_items() && self.d == 0 {
            return Err(JnirmError::config("item rank D must be >= 1"));
        }
        if self.iterations == 0 || self.thin == 0 {
            return Err(JnirmError::config("iterations and thin must be positive"));
        }
        if self.iterations <= self.burn_in {
            return Err(JnirmError::config(format!(
                "empty post-burn-in sample: iterations {} <= burn-in {}",
                self.iterations, self.burn_in
            )));
        }
        if self.retained() == 0 {
            return Err(JnirmError::config("thin exceeds the post-burn-in length"));
        }
        if !(self.prior_delta_precision > 0.0) {
            return Err(JnirmError::config("prior delta precision must be positive"));
        }
        if !(self.precision_prior_shape > 0.0 && self.precision_prior_rate > 0.0) {
            return Err(JnirmError::config("gamma prior parameters must be positive"));
        }
        if !(self.rho_proposal_sd > 0.0) {
            return Err(JnirmError::config("rho proposal sd must be positive"));
        }
        let p = self.layout().dim();
        if self.iw_df() <= p as f64 - 1.0 {
            return Err(JnirmError::config(format!(
                "wishart df {} must exceed {}",
                self.iw_df(),
                p as f64 - 1.0
            )));
        }
        let scale = self.iw_scale();
        if scale.nrows() != p {
            return Err(JnirmError::dims(format!(
                "wishart scale is {}x{}, expected {p}x{p}",
                scale.nrows(),
                scale.ncols()
            )));
        }
        require_spd(&scale, "wishart scale")?;
        if self.mode.has_items() {
            let mean = self.xi_prior_mean();
            let cov = self.xi_prior_cov();
            if mean.len() != self.d + 1 || cov.nrows() != self.d + 1 {
                return Err(JnirmError::dims("item parameter prior must have dimension D+1"));
            }
            require_spd(&cov, "item parameter prior covariance")?;
        }
        Ok(())
    }
}

/// All sampler unknowns at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub sigma_utheta: DMatrix<f64>,
    pub delta: f64,
    pub rho: f64,
    pub sigma2_e: f64,
    pub sigma2_eps: f64,
    pub beta: DVector<f64>,
    pub a: DMatrix<f64>,
    /// Latent network values (augmented probit edges, or imputed continuous
    /// edges at unobserved cells).
    pub phi: DMatrix<f64>,
    /// Latent item values, same convention as `phi`.
    pub eta: DMatrix<f64>,
}

impl LatentState {
    /// Value of coordinate `idx` (in the stacked layout) for person `p`.
    #[inline]
    pub fn coord(&self, layout: &LatentLayout, p: usize, idx: usize) -> f64 {
        let nn = layout.n_network();
        if idx < layout.k && layout.network {
            self.u[(p, idx)]
        } else if idx < nn {
            self.v[(p, idx - layout.k)]
        } else {
            self.theta[(p, idx - nn)]
        }
    }

    /// Stacked `N × dim` matrix with rows `(u_p, v_p, θ_p)`.
    pub fn stacked(&self, layout: &LatentLayout) -> DMatrix<f64> {
        let n = self.u.nrows().max(self.theta.nrows());
        DMatrix::from_fn(n, layout.dim(), |p, j| self.coord(layout, p, j))
    }

    pub fn check_invariants(&self, layout: &LatentLayout, network: Option<&NetworkData>) -> Result<()> {
        if !is_spd(&self.sigma_utheta) || self.sigma_utheta.nrows() != layout.dim() {
            return Err(JnirmError::NotPositiveDefinite("Sigma_utheta".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(JnirmError::Numerical(format!("rho {} outside (-1,1)", self.rho)));
        }
        if let Some(net) = network {
            if net.kind() == DataKind::Binary {
                let n = net.n_nodes();
                for a in 0..n {
                    for b in 0..n {
                        if net.is_observed(a, b) && (self.phi[(a, b)] > 0.0) != (net.edges()[(a, b)] == 1.0) {
                            return Err(JnirmError::Numerical(format!(
                                "latent edge ({a},{b}) inconsistent with observation"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Entry `(a,b)` is `δ + ⟨u_a, v_b⟩`; the diagonal is computed but carries no data.
pub fn expected_network(delta: f64, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.ncols() != v.ncols() || u.nrows() != v.nrows() {
        return Err(JnirmError::dims(format!(
            "U is {}x{} but V is {}x{}",
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let mut m = u * v.transpose();
    m.add_scalar_mut(delta);
    Ok(m)
}

/// Entry `(p,i)` is `β_i + ⟨α_i, θ_p⟩`.
pub fn expected_responses(beta: &DVector<f64>, a: &DMatrix<f64>, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != beta.len() || a.ncols() != theta.ncols() {
        return Err(JnirmError::dims(format!(
            "beta has {} items, A is {}x{}, Theta is {}x{}",
            beta.len(),
            a.nrows(),
            a.ncols(),
            theta.nrows(),
            theta.ncols()
        )));
    }
    let mut m = theta * a.transpose();
    for (i, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(beta[i]);
    }
    Ok(m)
}

/// The three blocks of `Σ_uθ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBlocks {
    /// `2K × 2K` covariance of `(u_p, v_p)`.
    pub lambda_u: DMatrix<f64>,
    /// `D × D` covariance of `θ_p`.
    pub lambda_theta: DMatrix<f64>,
    /// `D × 2K` cross-covariance.
    pub lambda_utheta: DMatrix<f64>,
}

impl CovarianceBlocks {
    pub fn assemble(&self) -> DMatrix<f64> {
        let nu = self.lambda_u.nrows();
        let d = self.lambda_theta.nrows();
        let mut s = DMatrix::zeros(nu + d, nu + d);
        s.view_mut((0, 0), (nu, nu)).copy_from(&self.lambda_u);
        s.view_mut((nu, nu), (d, d)).copy_from(&self.lambda_theta);
        s.view_mut((nu, 0), (d, nu)).copy_from(&self.lambda_utheta);
        s.view_mut((0, nu), (nu, d)).copy_from(&self.lambda_utheta.transpose());
        s
    }
}

pub fn covariance_blocks(sigma: &DMatrix<f64>, k: usize, d: usize) -> Result<CovarianceBlocks> {
    let p = 2 * k + d;
    if sigma.nrows() != p || sigma.ncols() != p {
        return Err(JnirmError::dims(format!(
            "Sigma_utheta is {}x{}, expected {p}x{p}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    require_spd(sigma, "Sigma_utheta")?;
    let nu = 2 * k;
    Ok(CovarianceBlocks {
        lambda_u: sigma.view((0, 0), (nu, nu)).into_owned(),
        lambda_theta: sigma.view((nu, nu), (d, d)).into_owned(),
        lambda_utheta: sigma.view((nu, 0), (d, nu)).into_owned(),
    })
}
