//! Joint-distribution (Geweke) check of the Gibbs sampler on a 6-node,
//! 4-item instance with K = D = 1: moments of parameters drawn directly
//! from the prior must match those of a chain that alternates sampler
//! sweeps with re-simulating the data from the current parameters.

use jnirm::random::{gamma_rate, inverse_wishart, std_normal, stream_rng, ChainRng};
use jnirm::sampler::Sampler;
use jnirm::simulate::{simulate_items, simulate_network};
use jnirm::{DataKind, ItemResponses, LatentState, ModelConfig, NetworkData};
use nalgebra::{DMatrix, DVector};

const N: usize = 6;
const M: usize = 4;

fn config() -> ModelConfig {
    let mut c = ModelConfig::new(1, 1);
    c.iterations = 10;
    c.burn_in = 0;
    c.thin = 1;
    c.center_theta = false;
    c.adapt_rho = false;
    c.rho_proposal_sd = 0.3;
    c.wishart_df = Some(10.0);
    c.prior_delta_precision = 1.0;
    c.precision_prior_shape = 3.0;
    c.precision_prior_rate = 3.0;
    c
}

pub struct Kinds {
    pub network: DataKind,
    pub items: DataKind,
}

fn prior_state(rng: &mut ChainRng, cfg: &ModelConfig, kinds: &Kinds) -> LatentState {
    let sigma = inverse_wishart(rng, &cfg.iw_scale(), cfg.iw_df()).unwrap();
    let chol = sigma.clone().cholesky().unwrap();
    let z = DMatrix::from_fn(N, 3, |_, _| std_normal(rng));
    let latent = z * chol.l().transpose();
    let precision = |rng: &mut ChainRng, kind: DataKind| match kind {
        DataKind::Binary => 1.0,
        DataKind::Continuous => 1.0 / gamma_rate(rng, cfg.precision_prior_shape, cfg.precision_prior_rate).unwrap(),
    };
    let sigma2_e = precision(rng, kinds.network);
    let sigma2_eps = precision(rng, kinds.items);
    let delta = std_normal(rng) / cfg.prior_delta_precision.sqrt();
    let rho = rng_uniform(rng) * 2.0 - 1.0;
    // ξ_i = (α_i, β_i) ~ N((1, 0), I)
    let a = DMatrix::from_fn(M, 1, |_, _| 1.0 + std_normal(rng));
    let beta = DVector::from_fn(M, |_, _| std_normal(rng));
    LatentState {
        u: latent.columns(0, 1).into_owned(),
        v: latent.columns(1, 1).into_owned(),
        theta: latent.columns(2, 1).into_owned(),
        sigma_utheta: sigma,
        delta,
        rho,
        sigma2_e,
        sigma2_eps,
        beta,
        a,
        phi: DMatrix::zeros(N, N),
        eta: DMatrix::zeros(N, M),
    }
}

fn rng_uniform(rng: &mut ChainRng) -> f64 {
    use rand::Rng;
    rng.random::<f64>()
}

fn simulate_data(
    rng: &mut ChainRng,
    s: &LatentState,
    kinds: &Kinds,
) -> (NetworkData, DMatrix<f64>, ItemResponses, DMatrix<f64>) {
    let (net, phi) = simulate_network(rng, s.delta, &s.u, &s.v, s.rho, s.sigma2_e, kinds.network).unwrap();
    let (items, eta) = simulate_items(rng, &s.beta, &s.a, &s.theta, s.sigma2_eps, kinds.items).unwrap();
    (net, phi, items, eta)
}

fn monitors(s: &LatentState) -> Vec<f64> {
    let sig = &s.sigma_utheta;
    vec![
        s.delta,
        s.delta * s.delta,
        s.rho,
        s.rho * s.rho,
        1.0 / s.sigma2_e,
        1.0 / s.sigma2_eps,
        sig[(0, 0)],
        sig[(1, 1)],
        sig[(2, 2)],
        sig[(0, 2)],
        sig[(0, 1)],
        s.beta[0],
        s.a[(0, 0)],
        s.a[(1, 0)] * s.a[(1, 0)],
        s.u[(0, 0)] * s.theta[(0, 0)],
        s.v[(1, 0)] * s.v[(1, 0)],
    ]
}

const NAMES: [&str; 16] = [
    "delta",
    "delta^2",
    "rho",
    "rho^2",
    "1/sigma2_e",
    "1/sigma2_eps",
    "Sigma_uu",
    "Sigma_vv",
    "Sigma_tt",
    "Sigma_ut",
    "Sigma_uv",
    "beta_1",
    "alpha_1",
    "alpha_2^2",
    "u_1*theta_1",
    "v_2^2",
];

/// Mean and standard error by batch means.
fn mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let size = n / batches;
    let bm: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let var = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// z-scores of forward-minus-successive means for every monitor.
pub fn geweke_z_scores(kinds: &Kinds, seed: u64, marginal_draws: usize, chain_len: usize) -> Vec<(&'static str, f64)> {
    let cfg = config();
    let mut rng = stream_rng(seed, 0);
    let forward: Vec<Vec<f64>> = (0..marginal_draws)
        .map(|_| monitors(&prior_state(&mut rng, &cfg, kinds)))
        .collect();

    let mut rng = stream_rng(seed, 1);
    let mut start = prior_state(&mut rng, &cfg, kinds);
    let (net, phi, items, eta) = simulate_data(&mut rng, &start, kinds);
    start.phi = phi;
    start.eta = eta;
    let mut sampler = Sampler::from_state(Some(&net), Some(&items), &cfg, start, seed, 2).unwrap();
    let mut successive = Vec::with_capacity(chain_len);
    for _ in 0..chain_len {
        sampler.sweep().unwrap();
        let (net, phi, items, eta) = simulate_data(&mut rng, sampler.state(), kinds);
        sampler
            .replace_data(Some(net), Some(phi), Some(items), Some(eta))
            .unwrap();
        successive.push(monitors(sampler.state()));
    }

    let mut out = Vec::new();
    for (j, name) in NAMES.iter().enumerate() {
        let f: Vec<f64> = forward.iter().map(|m| m[j]).collect();
        let s: Vec<f64> = successive.iter().map(|m| m[j]).collect();
        let (mf, sef) = mean_se(&f, 50);
        let (ms, ses) = mean_se(&s, 50);
        let se = (sef * sef + ses * ses).sqrt();
        if se > 0.0 {
            out.push((*name, (mf - ms) / se));
        }
    }
    out
}
