//! Accumulated results of a chain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{JnirmError, Result};
use crate::model::LatentState;

/// Thinned post-burn-in traces of the scalar parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalarTraces {
    pub delta: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma2_e: Vec<f64>,
    pub sigma2_eps: Vec<f64>,
    /// One trace per item.
    pub beta: Vec<Vec<f64>>,
    /// One trace per diagonal entry of `Σ_uθ`.
    pub sigma_diag: Vec<Vec<f64>>,
}

impl ScalarTraces {
    fn with_shape(n_items: usize, dim: usize) -> Self {
        ScalarTraces {
            beta: vec![Vec::new(); n_items],
            sigma_diag: vec![Vec::new(); dim],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    fn push(&mut self, state: &LatentState) {
        self.delta.push(state.delta);
        self.rho.push(state.rho);
        self.sigma2_e.push(state.sigma2_e);
        self.sigma2_eps.push(state.sigma2_eps);
        for (i, t) in self.beta.iter_mut().enumerate() {
            t.push(state.beta[i]);
        }
        for (j, t) in self.sigma_diag.iter_mut().enumerate() {
            t.push(state.sigma_utheta[(j, j)]);
        }
    }

    fn extend(&mut self, other: &ScalarTraces) {
        self.delta.extend_from_slice(&other.delta);
        self.rho.extend_from_slice(&other.rho);
        self.sigma2_e.extend_from_slice(&other.sigma2_e);
        self.sigma2_eps.extend_from_slice(&other.sigma2_eps);
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            a.extend_from_slice(b);
        }
        for (a, b) in self.sigma_diag.iter_mut().zip(&other.sigma_diag) {
            a.extend_from_slice(b);
        }
    }
}

/// Arithmetic mean of a trace (NaN when empty).
pub fn trace_mean(trace: &[f64]) -> f64 {
    if trace.is_empty() {
        f64::NAN
    } else {
        trace.iter().sum::<f64>() / trace.len() as f64
    }
}

/// Parameter values at one retained iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub delta: f64,
    pub rho: f64,
    pub sigma2_e: f64,
    pub sigma2_eps: f64,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub a: DMatrix<f64>,
    pub sigma_utheta: DMatrix<f64>,
}

impl Draw {
    pub fn from_state(s: &LatentState) -> Self {
        Draw {
            delta: s.delta,
            rho: s.rho,
            sigma2_e: s.sigma2_e,
            sigma2_eps: s.sigma2_eps,
            u: s.u.clone(),
            v: s.v.clone(),
            theta: s.theta.clone(),
            beta: s.beta.clone(),
            a: s.a.clone(),
            sigma_utheta: s.sigma_utheta.clone(),
        }
    }
}

/// Running posterior means, thinned traces and optional stored draws.
///
/// Means are accumulated at the retained (post-burn-in, thinned) iterations.
/// Two outputs of the same model can be combined with [`ChainOutput::merge`],
/// which weights means by their sample counts and concatenates traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub n_samples: usize,
    /// Mean of `UVᵀ` (network modes).
    pub mean_uvt: Option<DMatrix<f64>>,
    /// Mean of `Φ(δ + UVᵀ)`, the edge probability (binary networks).
    pub mean_edge_prob: Option<DMatrix<f64>>,
    /// Mean of `ΘAᵀ` (item modes).
    pub mean_theta_at: Option<DMatrix<f64>>,
    /// Mean of the model-implied item covariance `A Λ_θ Aᵀ + σ_ε² I`.
    pub mean_item_cov: Option<DMatrix<f64>>,
    pub mean_sigma_utheta: DMatrix<f64>,
    pub traces: ScalarTraces,
    pub draws: Vec<Draw>,
    pub rho_accepted: usize,
    pub rho_proposed: usize,
    /// Network cells whose values entered the likelihood.
    pub observed_network: Option<DMatrix<bool>>,
    pub final_state: LatentState,
}

fn add_scaled(acc: &mut Option<DMatrix<f64>>, x: Option<DMatrix<f64>>) {
    if let (Some(a), Some(x)) = (acc.as_mut(), x) {
        *a += x;
    }
}

fn weighted(a: &Option<DMatrix<f64>>, wa: f64, b: &Option<DMatrix<f64>>, wb: f64) -> Option<DMatrix<f64>> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a * wa + b * wb),
        _ => None,
    }
}

impl ChainOutput {
    pub(crate) fn empty(
        state: &LatentState,
        n_items: usize,
        network: bool,
        binary_network: bool,
        items: bool,
        observed_network: Option<DMatrix<bool>>,
    ) -> Self {
        let n = state.u.nrows().max(state.theta.nrows());
        let dim = state.sigma_utheta.nrows();
        ChainOutput {
            n_samples: 0,
            mean_uvt: network.then(|| DMatrix::zeros(n, n)),
            mean_edge_prob: (network && binary_network).then(|| DMatrix::zeros(n, n)),
            mean_theta_at: items.then(|| DMatrix::zeros(n, n_items)),
            mean_item_cov: items.then(|| DMatrix::zeros(n_items, n_items)),
            mean_sigma_utheta: DMatrix::zeros(dim, dim),
            traces: ScalarTraces::with_shape(n_items, dim),
            draws: Vec::new(),
            rho_accepted: 0,
            rho_proposed: 0,
            observed_network,
            final_state: state.clone(),
        }
    }

    /// Adds one retained iteration; `uvt` is `UVᵀ` if already available.
    pub(crate) fn record(
        &mut self,
        state: &LatentState,
        layout_theta_dim: usize,
        uvt: Option<DMatrix<f64>>,
        keep_draw: bool,
    ) {
        let uvt = if self.mean_uvt.is_some() {
            Some(uvt.unwrap_or_else(|| &state.u * state.v.transpose()))
        } else {
            None
        };
        if let Some(prob) = self.mean_edge_prob.as_mut() {
            let m = uvt.as_ref().expect("network mode");
            for (acc, x) in prob.iter_mut().zip(m.iter()) {
                *acc += crate::random::normal_cdf(state.delta + x);
            }
        }
        add_scaled(&mut self.mean_uvt, uvt);
        if self.mean_theta_at.is_some() {
            add_scaled(&mut self.mean_theta_at, Some(&state.theta * state.a.transpose()));
            let p = state.sigma_utheta.nrows();
            let off = p - layout_theta_dim;
            let lambda_theta = state
                .sigma_utheta
                .view((off, off), (layout_theta_dim, layout_theta_dim))
                .into_owned();
            let mut cov = &state.a * lambda_theta * state.a.transpose();
            for i in 0..cov.nrows() {
                cov[(i, i)] += state.sigma2_eps;
            }
            add_scaled(&mut self.mean_item_cov, Some(cov));
        }
        self.mean_sigma_utheta += &state.sigma_utheta;
        self.traces.push(state);
        if keep_draw {
            self.draws.push(Draw::from_state(state));
        }
        self.n_samples += 1;
    }

    /// Turns the accumulated sums into means.
    pub(crate) fn finish(mut self, final_state: LatentState) -> Self {
        let n = self.n_samples.max(1) as f64;
        for m in [
            &mut self.mean_uvt,
            &mut self.mean_edge_prob,
            &mut self.mean_theta_at,
            &mut self.mean_item_cov,
        ]
        .into_iter()
        .flatten()
        {
            *m /= n;
        }
        self.mean_sigma_utheta /= n;
        self.final_state = final_state;
        self
    }

    pub fn accept_rate_rho(&self) -> f64 {
        if self.rho_proposed == 0 {
            0.0
        } else {
            self.rho_accepted as f64 / self.rho_proposed as f64
        }
    }

    pub fn posterior_mean_delta(&self) -> f64 {
        trace_mean(&self.traces.delta)
    }

    pub fn posterior_mean_rho(&self) -> f64 {
        trace_mean(&self.traces.rho)
    }

    pub fn posterior_mean_sigma2_e(&self) -> f64 {
        trace_mean(&self.traces.sigma2_e)
    }

    pub fn posterior_mean_sigma2_eps(&self) -> f64 {
        trace_mean(&self.traces.sigma2_eps)
    }

    pub fn posterior_mean_beta(&self) -> DVector<f64> {
        DVector::from_iterator(self.traces.beta.len(), self.traces.beta.iter().map(|t| trace_mean(t)))
    }

    /// Combines two outputs of the same model; the result's final state is
    /// `other`'s.
    pub fn merge(&self, other: &ChainOutput) -> Result<ChainOutput> {
        let same_shape = self.mean_sigma_utheta.shape() == other.mean_sigma_utheta.shape()
            && self.mean_uvt.as_ref().map(|m| m.shape()) == other.mean_uvt.as_ref().map(|m| m.shape())
            && self.mean_theta_at.as_ref().map(|m| m.shape()) == other.mean_theta_at.as_ref().map(|m| m.shape());
        if !same_shape {
            return Err(JnirmError::dims("cannot merge outputs of different models"));
        }
        let total = self.n_samples + other.n_samples;
        let (wa, wb) = if total == 0 {
            (0.5, 0.5)
        } else {
            (
                self.n_samples as f64 / total as f64,
                other.n_samples as f64 / total as f64,
            )
        };
        let mut traces = self.traces.clone();
        traces.extend(&other.traces);
        let mut draws = self.draws.clone();
        draws.extend(other.draws.iter().cloned());
        let observed_network = match (&self.observed_network, &other.observed_network) {
            (Some(a), Some(b)) => Some(a.zip_map(b, |x, y| x || y)),
            (a, b) => a.clone().or_else(|| b.clone()),
        };
        Ok(ChainOutput {
            n_samples: total,
            mean_uvt: weighted(&self.mean_uvt, wa, &other.mean_uvt, wb),
            mean_edge_prob: weighted(&self.mean_edge_prob, wa, &other.mean_edge_prob, wb),
            mean_theta_at: weighted(&self.mean_theta_at, wa, &other.mean_theta_at, wb),
            mean_item_cov: weighted(&self.mean_item_cov, wa, &other.mean_item_cov, wb),
            mean_sigma_utheta: &self.mean_sigma_utheta * wa + &other.mean_sigma_utheta * wb,
            traces,
            draws,
            rho_accepted: self.rho_accepted + other.rho_accepted,
            rho_proposed: self.rho_proposed + other.rho_proposed,
            observed_network,
            final_state: other.final_state.clone(),
        })
    }
}
