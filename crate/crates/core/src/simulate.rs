//! Data generation from the joint model and the simulation studies built on
//! it: parameter recovery, network density by intercept and latent
//! variance, and intercept/variance bias in sparse networks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{JnirmError, Result};
use crate::identify::svd_identify;
use crate::linalg::{cholesky_jittered, require_spd};
use crate::model::{expected_network, expected_responses, DataKind, ItemResponses, Mode, ModelConfig, NetworkData};
use crate::random::{std_normal, stream_rng};
use crate::sampler::{NoProgress, Sampler};

const SCHOOL_LIKE: &str = include_str!("data/school_like.params");

/// Parameters of the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeParams {
    pub n: usize,
    pub k: usize,
    /// Item rank; 0 generates a network only.
    pub d: usize,
    pub delta: f64,
    pub rho: f64,
    /// Network error variance (taken as 1 for binary networks).
    pub sigma2_e: f64,
    /// Item error variance (taken as 1 for binary items).
    pub sigma2_eps: f64,
    /// `(2K + D) × (2K + D)` covariance of `(u_p, v_p, θ_p)`.
    pub sigma_utheta: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub a: DMatrix<f64>,
    pub network_kind: DataKind,
    pub item_kind: DataKind,
    /// Subscale membership of each item, if known.
    pub groups: Option<Vec<usize>>,
}

fn parse_kind(s: &str) -> Result<DataKind> {
    match s {
        "binary" => Ok(DataKind::Binary),
        "continuous" => Ok(DataKind::Continuous),
        other => Err(JnirmError::config(format!("unknown data kind '{other}'"))),
    }
}

fn kind_name(k: DataKind) -> &'static str {
    match k {
        DataKind::Binary => "binary",
        DataKind::Continuous => "continuous",
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| JnirmError::config(format!("'{t}' is not a number")))
        })
        .collect()
}

fn parse_matrix(s: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s.split(';').map(parse_list).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = rows.into_iter().filter(|r| !r.is_empty()).collect();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(JnirmError::config("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| format!("{}", m[(i, j)]))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("; ")
}

impl GenerativeParams {
    /// Frozen synthetic parameters: `K = 4`, `D = 3`, 16 items in subscales of
    /// 5, 7 and 4, `δ = -1.2`, `ρ = 0.3`, `σ_ε² = 0.35`.
    pub fn school_like() -> Self {
        Self::parse(SCHOOL_LIKE).expect("bundled parameter file is valid")
    }

    /// Network-only parameters with `U, V` independent with common variance.
    pub fn network_only(n: usize, k: usize, delta: f64, latent_variance: f64, rho: f64) -> Self {
        GenerativeParams {
            n,
            k,
            d: 0,
            delta,
            rho,
            sigma2_e: 1.0,
            sigma2_eps: 1.0,
            sigma_utheta: DMatrix::identity(2 * k, 2 * k) * latent_variance,
            beta: DVector::zeros(0),
            a: DMatrix::zeros(0, 0),
            network_kind: DataKind::Binary,
            item_kind: DataKind::Continuous,
            groups: None,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn has_items(&self) -> bool {
        self.d > 0 && !self.beta.is_empty()
    }

    pub fn effective_sigma2_e(&self) -> f64 {
        match self.network_kind {
            DataKind::Binary => 1.0,
            DataKind::Continuous => self.sigma2_e,
        }
    }

    pub fn effective_sigma2_eps(&self) -> f64 {
        match self.item_kind {
            DataKind::Binary => 1.0,
            DataKind::Continuous => self.sigma2_eps,
        }
    }

    /// Parses the `key = value` format written by [`GenerativeParams::to_text`].
    /// Matrices list rows separated by `;`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| JnirmError::config(format!("line {}: expected key = value", lineno + 1)))?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| JnirmError::config(format!("missing parameter '{k}'")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| JnirmError::config(format!("parameter '{k}' is not a number")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse::<usize>()
                .map_err(|_| JnirmError::config(format!("parameter '{k}' is not a count")))
        };
        let d = int("d")?;
        let (beta, a) = if d > 0 {
            (DVector::from_vec(parse_list(&get("beta")?)?), parse_matrix(&get("a")?)?)
        } else {
            (DVector::zeros(0), DMatrix::zeros(0, 0))
        };
        let groups = match map.get("groups") {
            Some(g) => Some(parse_list(g)?.into_iter().map(|x| x as usize).collect()),
            None => None,
        };
        let p = GenerativeParams {
            n: int("n")?,
            k: int("k")?,
            d,
            delta: num("delta")?,
            rho: num("rho")?,
            sigma2_e: map.get("sigma2_e").map_or(Ok(1.0), |_| num("sigma2_e"))?,
            sigma2_eps: map.get("sigma2_eps").map_or(Ok(1.0), |_| num("sigma2_eps"))?,
            sigma_utheta: parse_matrix(&get("sigma_utheta")?)?,
            beta,
            a,
            network_kind: map
                .get("network_kind")
                .map_or(Ok(DataKind::Binary), |s| parse_kind(s))?,
            item_kind: map
                .get("item_kind")
                .map_or(Ok(DataKind::Continuous), |s| parse_kind(s))?,
            groups,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        let mut out = vec![
            format!("n = {}", self.n),
            format!("k = {}", self.k),
            format!("d = {}", self.d),
            format!("delta = {}", self.delta),
            format!("rho = {}", self.rho),
            format!("sigma2_e = {}", self.sigma2_e),
            format!("sigma2_eps = {}", self.sigma2_eps),
            format!("network_kind = {}", kind_name(self.network_kind)),
            format!("item_kind = {}", kind_name(self.item_kind)),
        ];
        if self.has_items() {
            out.push(format!(
                "beta = {}",
                self.beta.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(", ")
            ));
            out.push(format!("a = {}", format_matrix(&self.a)));
        }
        out.push(format!("sigma_utheta = {}", format_matrix(&self.sigma_utheta)));
        if let Some(g) = &self.groups {
            out.push(format!(
                "groups = {}",
                g.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
            ));
        }
        out.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.k == 0 {
            return Err(JnirmError::config("need n >= 2 and k >= 1"));
        }
        let p = 2 * self.k + self.d;
        if self.sigma_utheta.shape() != (p, p) {
            return Err(JnirmError::dims(format!(
                "sigma_utheta must be {p}x{p}, got {}x{}",
                self.sigma_utheta.nrows(),
                self.sigma_utheta.ncols()
            )));
        }
        require_spd(&self.sigma_utheta, "sigma_utheta")?;
        if !(self.rho.abs() < 1.0) {
            return Err(JnirmError::config("rho must lie in (-1, 1)"));
        }
        if !(self.sigma2_e > 0.0 && self.sigma2_eps > 0.0) {
            return Err(JnirmError::config("error variances must be positive"));
        }
        if self.d > 0 {
            if self.a.nrows() != self.beta.len() || self.a.ncols() != self.d || self.beta.is_empty() {
                return Err(JnirmError::dims("item slopes must be M x D with M = len(beta)"));
            }
            if let Some(g) = &self.groups {
                if g.len() != self.beta.len() || g.iter().any(|&x| x >= self.d) {
                    return Err(JnirmError::config("groups must assign each item to a factor < d"));
                }
            }
        }
        Ok(())
    }

    /// Model configuration matching these parameters' shape and data kinds.
    pub fn fit_config(&self) -> ModelConfig {
        let mode = if self.has_items() {
            Mode::Joint
        } else {
            Mode::NetworkOnly
        };
        ModelConfig::new(self.k, self.d.max(1)).with_mode(mode)
    }
}

/// One synthetic dataset with its generating latent values.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub network: NetworkData,
    pub items: Option<ItemResponses>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    /// Latent network values before thresholding (the data themselves for
    /// continuous networks).
    pub phi: DMatrix<f64>,
    pub eta: Option<DMatrix<f64>>,
    /// `δ + UVᵀ`.
    pub expected_network: DMatrix<f64>,
    /// `1βᵀ + ΘAᵀ`.
    pub expected_responses: Option<DMatrix<f64>>,
}

/// Latent network values `δ + UVᵀ + E` with dyadic errors of variance
/// `σ_e²` and within-dyad correlation `ρ`; self-dyads get variance
/// `σ_e²(1+ρ)`. Binary edges are the indicators `φ > 0`.
pub fn simulate_network<R: Rng + ?Sized>(
    rng: &mut R,
    delta: f64,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    rho: f64,
    sigma2_e: f64,
    kind: DataKind,
) -> Result<(NetworkData, DMatrix<f64>)> {
    if !(rho.abs() < 1.0) {
        return Err(JnirmError::config("rho must lie in (-1, 1)"));
    }
    let mut phi = expected_network(delta, u, v)?;
    let n = phi.nrows();
    let sd = sigma2_e.sqrt();
    let tail = (1.0 - rho * rho).sqrt();
    for a in 0..n {
        phi[(a, a)] += sd * (1.0 + rho).sqrt() * std_normal(rng);
        for b in (a + 1)..n {
            let z1 = std_normal(rng);
            let z2 = std_normal(rng);
            phi[(a, b)] += sd * z1;
            phi[(b, a)] += sd * (rho * z1 + tail * z2);
        }
    }
    let edges = match kind {
        DataKind::Binary => phi.map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
        DataKind::Continuous => phi.clone(),
    };
    Ok((NetworkData::new(edges, kind)?, phi))
}

/// Latent responses `1βᵀ + ΘAᵀ + ε`; binary responses are `η > 0`.
pub fn simulate_items<R: Rng + ?Sized>(
    rng: &mut R,
    beta: &DVector<f64>,
    a: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    sigma2_eps: f64,
    kind: DataKind,
) -> Result<(ItemResponses, DMatrix<f64>)> {
    let mut eta = expected_responses(beta, a, theta)?;
    let sd = sigma2_eps.sqrt();
    for x in eta.iter_mut() {
        *x += sd * std_normal(rng);
    }
    let values = match kind {
        DataKind::Binary => eta.map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
        DataKind::Continuous => eta.clone(),
    };
    Ok((ItemResponses::new(values, kind)?, eta))
}

/// Draws person latents iid from `N(0, Σ_uθ)`, then the network and items.
pub fn simulate_joint<R: Rng + ?Sized>(params: &GenerativeParams, rng: &mut R) -> Result<SimulatedData> {
    params.validate()?;
    let (n, k, d) = (params.n, params.k, params.d);
    let chol = cholesky_jittered(&params.sigma_utheta)?;
    let l = chol.l();
    let p = 2 * k + d;
    let z = DMatrix::from_fn(n, p, |_, _| std_normal(rng));
    let f = z * l.transpose();
    let u = f.columns(0, k).into_owned();
    let v = f.columns(k, k).into_owned();
    let theta = f.columns(2 * k, d).into_owned();
    let (network, phi) = simulate_network(
        rng,
        params.delta,
        &u,
        &v,
        params.rho,
        params.effective_sigma2_e(),
        params.network_kind,
    )?;
    let (items, eta, expected_y) = if params.has_items() {
        let (it, eta) = simulate_items(
            rng,
            &params.beta,
            &params.a,
            &theta,
            params.effective_sigma2_eps(),
            params.item_kind,
        )?;
        let ey = expected_responses(&params.beta, &params.a, &theta)?;
        (Some(it), Some(eta), Some(ey))
    } else {
        (None, None, None)
    };
    Ok(SimulatedData {
        network,
        items,
        expected_network: expected_network(params.delta, &u, &v)?,
        u,
        v,
        theta,
        phi,
        eta,
        expected_responses: expected_y,
    })
}

/// Realised densities of binary networks over a grid of intercepts (rows)
/// and common latent variances (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub n: usize,
    pub k: usize,
    pub intercepts: Vec<f64>,
    pub variances: Vec<f64>,
    pub densities: DMatrix<f64>,
}

/// One network per (intercept, variance) cell with `ρ = 0` and `U, V` having
/// iid coordinates of the given variance. Cell `(i, j)` uses stream
/// `i · len(variances) + j` of `seed`.
pub fn density_table(intercepts: &[f64], variances: &[f64], k: usize, n: usize, seed: u64) -> Result<DensityTable> {
    if variances.iter().any(|&v| !(v > 0.0)) {
        return Err(JnirmError::config("latent variances must be positive"));
    }
    let cells: Vec<(usize, usize)> = (0..intercepts.len())
        .flat_map(|i| (0..variances.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let mut rng = stream_rng(seed, (i * variances.len() + j) as u64);
            let params = GenerativeParams::network_only(n, k, intercepts[i], variances[j], 0.0);
            simulate_joint(&params, &mut rng).map(|s| s.network.observed_mean())
        })
        .collect::<Result<_>>()?;
    let mut densities = DMatrix::zeros(intercepts.len(), variances.len());
    for (&(i, j), d) in cells.iter().zip(values) {
        densities[(i, j)] = d;
    }
    Ok(DensityTable {
        n,
        k,
        intercepts: intercepts.to_vec(),
        variances: variances.to_vec(),
        densities,
    })
}

/// Fourth standardized moment (non-excess; 3 for a normal sample), with
/// divisor `n` in both moments.
pub fn kurtosis(sample: &[f64]) -> Result<f64> {
    let n = sample.len();
    if n < 4 {
        return Err(JnirmError::Degenerate("kurtosis needs at least 4 values".into()));
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let m2 = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if m2 <= 1e-300 {
        return Err(JnirmError::Degenerate("kurtosis of a constant sample".into()));
    }
    let m4 = sample.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
    Ok(m4 / (m2 * m2))
}

/// Sample variance (divisor `n - 1`).
fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Bias, variance and MSE of one parameter's posterior-mean estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecovery {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    /// Variance across replications (divisor `R`, so `mse = bias² + variance`).
    pub variance: f64,
    pub mse: f64,
}

impl ParameterRecovery {
    pub fn from_estimates(name: &str, truth: f64, estimates: &[f64]) -> Self {
        let r = estimates.len().max(1) as f64;
        let mean = estimates.iter().sum::<f64>() / r;
        let bias = mean - truth;
        let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / r;
        let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / r;
        ParameterRecovery {
            name: name.to_string(),
            truth,
            bias,
            variance,
            mse,
        }
    }
}

/// Distribution summary of cellwise differences between posterior-mean and
/// true expected values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellErrorSummary {
    pub cells: usize,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
}

impl CellErrorSummary {
    pub fn from_differences(mut diffs: Vec<f64>) -> Self {
        let n = diffs.len();
        if n == 0 {
            return CellErrorSummary {
                cells: 0,
                mean: f64::NAN,
                sd: f64::NAN,
                q05: f64::NAN,
                median: f64::NAN,
                q95: f64::NAN,
            };
        }
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let sd = (diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        diffs.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| diffs[((n - 1) as f64 * p).round() as usize];
        CellErrorSummary {
            cells: n,
            mean,
            sd,
            q05: q(0.05),
            median: q(0.5),
            q95: q(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    /// `δ`, `ρ`, `σ_ε²` (when items are continuous), then `β_1..β_M`.
    pub parameters: Vec<ParameterRecovery>,
    pub network_cells: CellErrorSummary,
    pub item_cells: Option<CellErrorSummary>,
    /// Mean kurtosis of each identified sender and receiver column.
    pub kurtosis_u: Vec<f64>,
    pub kurtosis_v: Vec<f64>,
}

struct ReplicationFit {
    estimates: Vec<f64>,
    network_diffs: Vec<f64>,
    item_diffs: Vec<f64>,
    kurt_u: Vec<f64>,
    kurt_v: Vec<f64>,
}

fn fit_replication(params: &GenerativeParams, config: &ModelConfig, seed: u64, rep: usize) -> Result<ReplicationFit> {
    let mut rng = stream_rng(seed, 2 * rep as u64);
    let data = simulate_joint(params, &mut rng)?;
    let out = Sampler::new(
        Some(&data.network),
        data.items.as_ref(),
        config,
        seed,
        2 * rep as u64 + 1,
    )?
    .run(&mut NoProgress, 0)?;
    let mut estimates = vec![out.posterior_mean_delta(), out.posterior_mean_rho()];
    if params.has_items() && params.item_kind == DataKind::Continuous {
        estimates.push(out.posterior_mean_sigma2_eps());
    }
    if params.has_items() {
        estimates.extend(out.posterior_mean_beta().iter());
    }
    let uvt = out
        .mean_uvt
        .as_ref()
        .ok_or_else(|| JnirmError::config("recovery needs a network fit"))?;
    let n = params.n;
    let mut network_diffs = Vec::with_capacity(n * (n - 1));
    let delta_hat = out.posterior_mean_delta();
    for b in 0..n {
        for a in 0..n {
            if a != b {
                network_diffs.push(delta_hat + uvt[(a, b)] - data.expected_network[(a, b)]);
            }
        }
    }
    let mut item_diffs = Vec::new();
    if let (Some(tat), Some(ey)) = (&out.mean_theta_at, &data.expected_responses) {
        let beta_hat = out.posterior_mean_beta();
        for i in 0..ey.ncols() {
            for p in 0..n {
                item_diffs.push(beta_hat[i] + tat[(p, i)] - ey[(p, i)]);
            }
        }
    }
    let ident = svd_identify(uvt, params.k)?;
    let kurt = |m: &DMatrix<f64>| -> Result<Vec<f64>> { m.column_iter().map(|c| kurtosis(c.as_slice())).collect() };
    Ok(ReplicationFit {
        estimates,
        network_diffs,
        item_diffs,
        kurt_u: kurt(&ident.left)?,
        kurt_v: kurt(&ident.right)?,
    })
}

/// Repeats simulate → fit → posterior means `replications` times (in
/// parallel, replication `r` using streams `2r` and `2r + 1` of `seed`) and
/// summarises the recovery of the scalar parameters and expected values.
pub fn recovery_study(
    params: &GenerativeParams,
    replications: usize,
    fit_config: &ModelConfig,
    seed: u64,
) -> Result<RecoveryReport> {
    params.validate()?;
    fit_config.validate()?;
    let fits: Vec<Result<ReplicationFit>> = (0..replications)
        .into_par_iter()
        .map(|r| fit_replication(params, fit_config, seed, r))
        .collect();
    let mut names = vec!["delta".to_string(), "rho".to_string()];
    let mut truths = vec![params.delta, params.rho];
    if params.has_items() && params.item_kind == DataKind::Continuous {
        names.push("sigma2_eps".into());
        truths.push(params.sigma2_eps);
    }
    if params.has_items() {
        for (i, b) in params.beta.iter().enumerate() {
            names.push(format!("beta_{}", i + 1));
            truths.push(*b);
        }
    }
    let mut per_param: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut failures = Vec::new();
    let mut network_diffs = Vec::new();
    let mut item_diffs = Vec::new();
    let mut ku = vec![Vec::new(); params.k];
    let mut kv = vec![Vec::new(); params.k];
    for fit in fits {
        match fit {
            Ok(f) => {
                for (slot, e) in per_param.iter_mut().zip(f.estimates) {
                    slot.push(e);
                }
                network_diffs.extend(f.network_diffs);
                item_diffs.extend(f.item_diffs);
                for j in 0..params.k {
                    ku[j].push(f.kurt_u[j]);
                    kv[j].push(f.kurt_v[j]);
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    let mean = |x: &Vec<f64>| x.iter().sum::<f64>() / x.len().max(1) as f64;
    Ok(RecoveryReport {
        n: params.n,
        replications,
        failures: failures.len(),
        failure_messages: failures,
        parameters: names
            .iter()
            .zip(&truths)
            .zip(&per_param)
            .map(|((n, &t), e)| ParameterRecovery::from_estimates(n, t, e))
            .collect(),
        network_cells: CellErrorSummary::from_differences(network_diffs),
        item_cells: params
            .has_items()
            .then(|| CellErrorSummary::from_differences(item_diffs)),
        kurtosis_u: ku.iter().map(mean).collect(),
        kurtosis_v: kv.iter().map(mean).collect(),
    })
}

/// One row of the sparse-network bias study, averaged over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub n: usize,
    pub intercept: f64,
    pub replications: usize,
    pub failures: usize,
    pub mean_density: f64,
    pub bias_delta: f64,
    /// Bias of the sample variance of each identified sender column.
    pub bias_var_u: Vec<f64>,
    pub bias_var_v: Vec<f64>,
    pub kurtosis_u: Vec<f64>,
    pub kurtosis_v: Vec<f64>,
}

struct SparsityFit {
    density: f64,
    delta: f64,
    var_u: Vec<f64>,
    var_v: Vec<f64>,
    kurt_u: Vec<f64>,
    kurt_v: Vec<f64>,
}

/// For each `(N, intercept)`: simulate binary networks with identity latent
/// covariance and `ρ = 0`, fit the network-only model, identify `Û, V̂` from
/// the posterior mean of `UVᵀ` and compare with the truth (variance 1).
/// Replication `r` of cell `c` uses streams `2(c·R + r)` and `2(c·R + r) + 1`.
pub fn sparsity_bias_study(
    intercepts: &[f64],
    n_values: &[usize],
    k: usize,
    replications: usize,
    fit_config: &ModelConfig,
    seed: u64,
) -> Result<Vec<SparsityRow>> {
    let mut config = fit_config.clone();
    config.mode = Mode::NetworkOnly;
    config.k = k;
    config.validate()?;
    let cells: Vec<(usize, f64)> = n_values
        .iter()
        .flat_map(|&n| intercepts.iter().map(move |&i| (n, i)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..replications).map(move |r| (c, r)))
        .collect();
    let fits: Vec<Result<SparsityFit>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let (n, intercept) = cells[c];
            let stream = 2 * (c * replications + r) as u64;
            let params = GenerativeParams::network_only(n, k, intercept, 1.0, 0.0);
            let mut rng = stream_rng(seed, stream);
            let data = simulate_joint(&params, &mut rng)?;
            let out = Sampler::new(Some(&data.network), None, &config, seed, stream + 1)?.run(&mut NoProgress, 0)?;
            let uvt = out.mean_uvt.as_ref().expect("network mode");
            let ident = svd_identify(uvt, k)?;
            let cols = |m: &DMatrix<f64>, f: &dyn Fn(&[f64]) -> Result<f64>| -> Result<Vec<f64>> {
                m.column_iter().map(|c| f(c.as_slice())).collect()
            };
            Ok(SparsityFit {
                density: data.network.observed_mean(),
                delta: out.posterior_mean_delta(),
                var_u: cols(&ident.left, &|x| Ok(variance(x)))?,
                var_v: cols(&ident.right, &|x| Ok(variance(x)))?,
                kurt_u: cols(&ident.left, &kurtosis)?,
                kurt_v: cols(&ident.right, &kurtosis)?,
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(cells.len());
    for (c, &(n, intercept)) in cells.iter().enumerate() {
        let mut ok = Vec::new();
        let mut failures = 0;
        for f in &fits[c * replications..(c + 1) * replications] {
            match f {
                Ok(f) => ok.push(f),
                Err(_) => failures += 1,
            }
        }
        let m = ok.len().max(1) as f64;
        let avg = |g: &dyn Fn(&SparsityFit) -> f64| ok.iter().map(|f| g(f)).sum::<f64>() / m;
        let avg_col = |g: &dyn Fn(&SparsityFit) -> &Vec<f64>, shift: f64| -> Vec<f64> {
            (0..k).map(|j| avg(&|f| g(f)[j]) - shift).collect()
        };
        rows.push(SparsityRow {
            n,
            intercept,
            replications,
            failures,
            mean_density: avg(&|f| f.density),
            bias_delta: avg(&|f| f.delta) - intercept,
            bias_var_u: avg_col(&|f| &f.var_u, 1.0),
            bias_var_v: avg_col(&|f| &f.var_v, 1.0),
            kurtosis_u: avg_col(&|f| &f.kurt_u, 0.0),
            kurtosis_v: avg_col(&|f| &f.kurt_v, 0.0),
        });
    }
    Ok(rows)
}
