//! The Gibbs sweep and the chain driver.

use nalgebra::{DMatrix, DVector};

use super::conditionals::{
    augment_items, augment_network, draw_latent_column, rho_step, theta_conditional_projected, update_delta,
    update_item_params, update_sigma_e, update_sigma_eps, update_sigma_utheta, ConditionalBlock, DecorrelationCoeffs,
    DyadStats,
};
use super::output::ChainOutput;
use crate::error::{JnirmError, Result};
use crate::linalg::column_means;
use crate::model::{expected_responses, DataKind, ItemResponses, LatentLayout, LatentState, ModelConfig, NetworkData};
use crate::random::{normal_quantile, std_normal, stream_rng, ChainRng};

/// Progress report emitted while a chain runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub iteration: usize,
    pub total: usize,
    /// Complete-data log-likelihood of the latent network and item values.
    pub log_likelihood: f64,
    /// Acceptance rate of ρ proposals so far.
    pub rho_accept_rate: f64,
}

pub trait ProgressSink {
    fn report(&mut self, progress: &Progress);
}

/// Discards progress reports.
pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn report(&mut self, _: &Progress) {}
}

impl<F: FnMut(&Progress)> ProgressSink for F {
    fn report(&mut self, progress: &Progress) {
        self(progress)
    }
}

/// Iterations between ρ proposal-scale adjustments during burn-in.
const ADAPT_WINDOW: usize = 50;

/// A single Gibbs chain owning its data, state and generator.
///
/// The residual matrices `Φ - δ11ᵀ - UVᵀ` and `H - 1βᵀ - ΘAᵀ` are kept in
/// step with the state so each latent column update costs `O(N²)`.
pub struct Sampler {
    config: ModelConfig,
    layout: LatentLayout,
    network: Option<NetworkData>,
    items: Option<ItemResponses>,
    state: LatentState,
    net_resid: DMatrix<f64>,
    item_resid: DMatrix<f64>,
    rng: ChainRng,
    rho_sd: f64,
    iteration: usize,
    window_accepted: usize,
    window_total: usize,
}

fn check_inputs(network: Option<&NetworkData>, items: Option<&ItemResponses>, config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let net_n = network.map(|n| n.n_nodes());
    let item_n = items.map(|i| i.n_persons());
    if config.mode.has_network() && net_n.is_none() {
        return Err(JnirmError::config("mode requires network data"));
    }
    if config.mode.has_items() && item_n.is_none() {
        return Err(JnirmError::config("mode requires item responses"));
    }
    if let (true, true, Some(a), Some(b)) = (config.mode.has_network(), config.mode.has_items(), net_n, item_n) {
        if a != b {
            return Err(JnirmError::dims(format!(
                "network has {a} nodes but item responses have {b} persons"
            )));
        }
    }
    Ok(if config.mode.has_network() {
        net_n.unwrap_or(0)
    } else {
        item_n.unwrap_or(0)
    })
}

fn initial_state<R: rand::Rng + ?Sized>(
    rng: &mut R,
    network: Option<&NetworkData>,
    items: Option<&ItemResponses>,
    layout: &LatentLayout,
    n: usize,
) -> LatentState {
    let small = |rng: &mut R, cols: usize| DMatrix::from_fn(n, cols, |_, _| 0.1 * std_normal(rng));
    let k = if layout.network { layout.k } else { 0 };
    let d = if layout.items { layout.d } else { 0 };
    let u = small(rng, k);
    let v = small(rng, k);
    let theta = small(rng, d);

    let (delta, phi) = match network {
        Some(net) => {
            let delta = match net.kind() {
                DataKind::Binary => normal_quantile(net.observed_mean().clamp(1e-3, 1.0 - 1e-3)),
                DataKind::Continuous => net.observed_mean(),
            };
            let phi = DMatrix::from_fn(n, n, |a, b| {
                if !net.is_observed(a, b) {
                    delta
                } else if net.kind() == DataKind::Binary {
                    if net.edges()[(a, b)] == 1.0 {
                        0.5
                    } else {
                        -0.5
                    }
                } else {
                    net.edges()[(a, b)]
                }
            });
            (delta, phi)
        }
        None => (0.0, DMatrix::zeros(0, 0)),
    };

    let (beta, a, eta) = match items {
        Some(it) => {
            let mut beta = it.item_means();
            if it.kind() == DataKind::Binary {
                beta = beta.map(|p| normal_quantile(p.clamp(1e-3, 1.0 - 1e-3)));
            }
            let eta = DMatrix::from_fn(n, it.n_items(), |p, i| {
                if !it.mask()[(p, i)] {
                    beta[i]
                } else if it.kind() == DataKind::Binary {
                    if it.values()[(p, i)] == 1.0 {
                        0.5
                    } else {
                        -0.5
                    }
                } else {
                    it.values()[(p, i)]
                }
            });
            (beta, DMatrix::from_element(it.n_items(), d, 0.1), eta)
        }
        None => (DVector::zeros(0), DMatrix::zeros(0, d), DMatrix::zeros(0, 0)),
    };

    LatentState {
        u,
        v,
        theta,
        sigma_utheta: DMatrix::identity(layout.dim(), layout.dim()),
        delta,
        rho: 0.0,
        sigma2_e: 1.0,
        sigma2_eps: 1.0,
        beta,
        a,
        phi,
        eta,
    }
}

impl Sampler {
    /// Sampler with the default initial state. Data irrelevant to the
    /// configured mode is ignored.
    pub fn new(
        network: Option<&NetworkData>,
        items: Option<&ItemResponses>,
        config: &ModelConfig,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let n = check_inputs(network, items, config)?;
        let layout = config.layout();
        let network = network.filter(|_| layout.network).cloned();
        let items = items.filter(|_| layout.items).cloned();
        let mut rng = stream_rng(seed, stream);
        let state = initial_state(&mut rng, network.as_ref(), items.as_ref(), &layout, n);
        Ok(Self::assemble(config, layout, network, items, state, rng))
    }

    /// Sampler started from a given state.
    pub fn from_state(
        network: Option<&NetworkData>,
        items: Option<&ItemResponses>,
        config: &ModelConfig,
        state: LatentState,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let n = check_inputs(network, items, config)?;
        let layout = config.layout();
        if state.sigma_utheta.nrows() != layout.dim()
            || (layout.network && (state.u.nrows() != n || state.phi.nrows() != n))
            || (layout.items && (state.theta.nrows() != n || state.eta.nrows() != n))
        {
            return Err(JnirmError::dims("initial state does not match data and configuration"));
        }
        let network = network.filter(|_| layout.network).cloned();
        let items = items.filter(|_| layout.items).cloned();
        let rng = stream_rng(seed, stream);
        Ok(Self::assemble(config, layout, network, items, state, rng))
    }

    fn assemble(
        config: &ModelConfig,
        layout: LatentLayout,
        network: Option<NetworkData>,
        items: Option<ItemResponses>,
        state: LatentState,
        rng: ChainRng,
    ) -> Self {
        let mut s = Sampler {
            config: config.clone(),
            layout,
            network,
            items,
            state,
            net_resid: DMatrix::zeros(0, 0),
            item_resid: DMatrix::zeros(0, 0),
            rng,
            rho_sd: config.rho_proposal_sd,
            iteration: 0,
            window_accepted: 0,
            window_total: 0,
        };
        s.refresh_residuals();
        s
    }

    fn refresh_residuals(&mut self) {
        if self.layout.network {
            let mut r = &self.state.phi - &self.state.u * self.state.v.transpose();
            r.add_scalar_mut(-self.state.delta);
            self.net_resid = r;
        }
        if self.layout.items {
            let expected = expected_responses(&self.state.beta, &self.state.a, &self.state.theta)
                .expect("state dimensions validated at construction");
            self.item_resid = &self.state.eta - expected;
        }
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn into_state(self) -> LatentState {
        self.state
    }

    pub fn layout(&self) -> LatentLayout {
        self.layout
    }

    pub fn rho_proposal_sd(&self) -> f64 {
        self.rho_sd
    }

    /// Replaces the data together with matching latent values; used when the
    /// data are re-simulated from the current parameters.
    pub fn replace_data(
        &mut self,
        network: Option<NetworkData>,
        phi: Option<DMatrix<f64>>,
        items: Option<ItemResponses>,
        eta: Option<DMatrix<f64>>,
    ) -> Result<()> {
        if self.layout.network {
            let (net, phi) = network
                .zip(phi)
                .ok_or_else(|| JnirmError::config("network mode needs network data and latent values"))?;
            if net.n_nodes() != self.state.phi.nrows() || phi.shape() != self.state.phi.shape() {
                return Err(JnirmError::dims("replacement network has the wrong size"));
            }
            self.network = Some(net);
            self.state.phi = phi;
        }
        if self.layout.items {
            let (it, eta) = items
                .zip(eta)
                .ok_or_else(|| JnirmError::config("item mode needs responses and latent values"))?;
            if eta.shape() != self.state.eta.shape() || it.n_items() != self.state.eta.ncols() {
                return Err(JnirmError::dims("replacement responses have the wrong size"));
            }
            self.items = Some(it);
            self.state.eta = eta;
        }
        self.refresh_residuals();
        Ok(())
    }

    /// One full Gibbs sweep. Returns whether the ρ proposal was accepted
    /// (`None` when ρ is not updated).
    pub fn sweep(&mut self) -> Result<Option<bool>> {
        let mut rho_accepted = None;
        if let Some(net) = &self.network {
            let expected = &self.state.phi - &self.net_resid;
            augment_network(
                &mut self.rng,
                &mut self.state.phi,
                net,
                &expected,
                self.state.rho,
                self.state.sigma2_e,
            );
            self.net_resid = &self.state.phi - expected;
            let coeffs = DecorrelationCoeffs::new(self.state.rho, self.state.sigma2_e.sqrt())?;
            let theta_coords = self.layout.theta_coords();
            for j in 0..self.layout.k {
                self.update_sender(j, &coeffs, &theta_coords)?;
            }
            for j in 0..self.layout.k {
                self.update_receiver(j, &coeffs, &theta_coords)?;
            }
        }
        if let Some(items) = &self.items {
            let expected = &self.state.eta - &self.item_resid;
            augment_items(
                &mut self.rng,
                &mut self.state.eta,
                items,
                &expected,
                self.state.sigma2_eps,
            );
            self.item_resid = &self.state.eta - expected;
            let network_coords = self.layout.network_coords();
            for j in 0..self.layout.d {
                self.update_theta(j, &network_coords)?;
            }
        }

        let stacked = self.state.stacked(&self.layout);
        self.state.sigma_utheta =
            update_sigma_utheta(&mut self.rng, &stacked, &self.config.iw_scale(), self.config.iw_df())?;

        if let Some(net) = &self.network {
            if net.kind() == DataKind::Continuous {
                self.state.sigma2_e = update_sigma_e(
                    &mut self.rng,
                    &self.net_resid,
                    self.state.rho,
                    self.config.precision_prior_shape,
                    self.config.precision_prior_rate,
                )?;
            }
            let stats = DyadStats::from_residual(&self.net_resid);
            let (rho, accepted) = rho_step(&mut self.rng, &stats, self.state.sigma2_e, self.state.rho, self.rho_sd);
            self.state.rho = rho;
            rho_accepted = Some(accepted);

            let old = self.state.delta;
            let mut z_minus_uvt = self.net_resid.clone();
            z_minus_uvt.add_scalar_mut(old);
            let new = update_delta(
                &mut self.rng,
                &z_minus_uvt,
                self.state.sigma2_e,
                self.state.rho,
                self.config.prior_delta_precision,
            )?;
            self.state.delta = new;
            self.net_resid.add_scalar_mut(old - new);
        }

        if let Some(items) = &self.items {
            if items.kind() == DataKind::Continuous {
                self.state.sigma2_eps = update_sigma_eps(
                    &mut self.rng,
                    &self.item_resid,
                    self.config.precision_prior_shape,
                    self.config.precision_prior_rate,
                )?;
            }
            let (beta, a) = update_item_params(
                &mut self.rng,
                &self.state.eta,
                &self.state.theta,
                self.state.sigma2_eps,
                &self.config.xi_prior_mean(),
                &self.config.xi_prior_cov(),
            )?;
            self.state.beta = beta;
            self.state.a = a;
            if self.config.center_theta {
                let shift = column_means(&self.state.theta);
                for (j, mut col) in self.state.theta.column_iter_mut().enumerate() {
                    col.add_scalar_mut(-shift[j]);
                }
                self.state.beta += &self.state.a * shift;
            }
            let expected = expected_responses(&self.state.beta, &self.state.a, &self.state.theta)?;
            self.item_resid = &self.state.eta - expected;
        }

        if self
            .state
            .u
            .iter()
            .chain(self.state.theta.iter())
            .any(|x| !x.is_finite())
        {
            return Err(JnirmError::Numerical(format!(
                "non-finite latent values at iteration {}",
                self.iteration
            )));
        }
        self.iteration += 1;
        Ok(rho_accepted)
    }

    fn update_sender(&mut self, j: usize, coeffs: &DecorrelationCoeffs, theta_coords: &[usize]) -> Result<()> {
        let block = ConditionalBlock::new(&self.state.sigma_utheta, self.layout.u(j), theta_coords)?;
        let (q, prior_lin) = block.target_prior_all(&self.state.stacked(&self.layout));
        let u_old = self.state.u.column(j).into_owned();
        let v = self.state.v.column(j).into_owned();
        // Products with the residual that still contains u_j v_jᵀ.
        let r_w = &self.net_resid * &v + &u_old * v.norm_squared();
        let rt_w = self.net_resid.tr_mul(&v) + &v * u_old.dot(&v);
        let draw = draw_latent_column(&mut self.rng, coeffs, &v, &r_w, &rt_w, q, &prior_lin)?;
        let change = &draw.draw - &u_old;
        self.net_resid.ger(-1.0, &change, &v, 1.0);
        self.state.u.set_column(j, &draw.draw);
        Ok(())
    }

    fn update_receiver(&mut self, j: usize, coeffs: &DecorrelationCoeffs, theta_coords: &[usize]) -> Result<()> {
        let block = ConditionalBlock::new(&self.state.sigma_utheta, self.layout.v(j), theta_coords)?;
        let (q, prior_lin) = block.target_prior_all(&self.state.stacked(&self.layout));
        let v_old = self.state.v.column(j).into_owned();
        let u = self.state.u.column(j).into_owned();
        let r_w = self.net_resid.tr_mul(&u) + &v_old * u.norm_squared();
        let rt_w = &self.net_resid * &u + &u * v_old.dot(&u);
        let draw = draw_latent_column(&mut self.rng, coeffs, &u, &r_w, &rt_w, q, &prior_lin)?;
        let change = &draw.draw - &v_old;
        self.net_resid.ger(-1.0, &u, &change, 1.0);
        self.state.v.set_column(j, &draw.draw);
        Ok(())
    }

    fn update_theta(&mut self, j: usize, network_coords: &[usize]) -> Result<()> {
        let block = ConditionalBlock::new(&self.state.sigma_utheta, self.layout.theta(j), network_coords)?;
        let (q, prior_lin) = block.target_prior_all(&self.state.stacked(&self.layout));
        let alpha = self.state.a.column(j).into_owned();
        let old = self.state.theta.column(j).into_owned();
        let norm2 = alpha.norm_squared();
        let projection = &self.item_resid * &alpha + &old * norm2;
        let (mean, var) = theta_conditional_projected(&projection, norm2, self.state.sigma2_eps, q, &prior_lin);
        let draw = DVector::from_fn(mean.len(), |p, _| mean[p] + var[p].sqrt() * std_normal(&mut self.rng));
        let change = &draw - &old;
        self.item_resid.ger(-1.0, &change, &alpha, 1.0);
        self.state.theta.set_column(j, &draw);
        Ok(())
    }

    /// Complete-data log-likelihood of the current latent values.
    pub fn log_likelihood(&self) -> f64 {
        let mut ll = 0.0;
        if self.layout.network {
            ll += DyadStats::from_residual(&self.net_resid).log_likelihood(self.state.rho, self.state.sigma2_e);
        }
        if self.layout.items {
            let cells = self.item_resid.len() as f64;
            ll -= 0.5 * (cells * self.state.sigma2_eps.ln() + self.item_resid.norm_squared() / self.state.sigma2_eps);
        }
        ll
    }

    fn adapt_rho(&mut self, accepted: bool) {
        self.window_total += 1;
        if accepted {
            self.window_accepted += 1;
        }
        if self.window_total == ADAPT_WINDOW {
            let rate = self.window_accepted as f64 / ADAPT_WINDOW as f64;
            if rate < 0.30 {
                self.rho_sd *= 0.8;
            } else if rate > 0.45 {
                self.rho_sd = (self.rho_sd * 1.25).min(1.0);
            }
            self.window_total = 0;
            self.window_accepted = 0;
        }
    }

    /// Runs the configured number of iterations, reporting progress every
    /// `report_every` iterations (0 disables reporting).
    pub fn run(mut self, sink: &mut dyn ProgressSink, report_every: usize) -> Result<ChainOutput> {
        let total = self.config.iterations;
        let binary_network = self.network.as_ref().is_some_and(|n| n.kind() == DataKind::Binary);
        let n_items = self.items.as_ref().map_or(0, |i| i.n_items());
        let mut out = ChainOutput::empty(
            &self.state,
            n_items,
            self.layout.network,
            binary_network,
            self.layout.items,
            self.network.as_ref().map(|n| n.mask().clone()),
        );
        let mut accepted_total = 0usize;
        let mut proposed_total = 0usize;
        for it in 0..total {
            let acc = self.sweep()?;
            let burning = it < self.config.burn_in;
            if let Some(a) = acc {
                proposed_total += 1;
                accepted_total += usize::from(a);
                if burning && self.config.adapt_rho {
                    self.adapt_rho(a);
                }
                if !burning {
                    out.rho_proposed += 1;
                    out.rho_accepted += usize::from(a);
                }
            }
            if !burning && (it + 1 - self.config.burn_in).is_multiple_of(self.config.thin) {
                let uvt = self.layout.network.then(|| {
                    let mut m = &self.state.phi - &self.net_resid;
                    m.add_scalar_mut(-self.state.delta);
                    m
                });
                out.record(&self.state, self.layout.n_items(), uvt, self.config.keep_draws);
            }
            if report_every > 0 && (it + 1) % report_every == 0 {
                sink.report(&Progress {
                    iteration: it + 1,
                    total,
                    log_likelihood: self.log_likelihood(),
                    rho_accept_rate: if proposed_total == 0 {
                        0.0
                    } else {
                        accepted_total as f64 / proposed_total as f64
                    },
                });
            }
        }
        Ok(out.finish(self.state))
    }
}

/// Runs one chain from the default initial state on stream 0 of `seed`.
pub fn run_chain(
    network: Option<&NetworkData>,
    items: Option<&ItemResponses>,
    config: &ModelConfig,
    seed: u64,
) -> Result<ChainOutput> {
    Sampler::new(network, items, config, seed, 0)?.run(&mut NoProgress, 0)
}

/// Runs `n_chains` independent chains on streams `0..n_chains` of `seed`,
/// in parallel, returning them in stream order.
pub fn run_chains(
    network: Option<&NetworkData>,
    items: Option<&ItemResponses>,
    config: &ModelConfig,
    seed: u64,
    n_chains: usize,
) -> Result<Vec<ChainOutput>> {
    use rayon::prelude::*;
    (0..n_chains as u64)
        .into_par_iter()
        .map(|stream| Sampler::new(network, items, config, seed, stream)?.run(&mut NoProgress, 0))
        .collect()
}
