//! Model fit and convergence diagnostics: network summary statistics,
//! posterior predictive checks, AUC with row-holdout cross-validation,
//! split-R̂ and Kolmogorov–Smirnov helpers.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{JnirmError, Result};
use crate::model::{DataKind, ItemResponses, ModelConfig, NetworkData};
use crate::random::stream_rng;
use crate::sampler::{ChainOutput, NoProgress, Sampler};
use crate::simulate::{simulate_items, simulate_network};

/// Definitions of the derived network statistics, recorded with outputs.
pub const STAT_DEFINITIONS: &str =
    "transitivity = closed two-paths i->j->k with i->k / all two-paths i->j->k (i,j,k distinct); \
balance = mutual dyads / dyads with at least one tie; \
dyadic_dependence = Pearson correlation of (X_ab, X_ba) over ordered pairs with both cells observed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub sender_degrees: Vec<f64>,
    pub receiver_degrees: Vec<f64>,
    pub density: f64,
    pub dyadic_dependence: f64,
    /// False when the dyadic correlation is undefined (zero variance) and
    /// reported as 0.
    pub dyadic_dependence_defined: bool,
    pub transitivity: f64,
    pub balance: f64,
}

/// Summary statistics of a binary network over its observed cells;
/// unobserved cells count as absent ties.
pub fn network_stats(net: &NetworkData) -> Result<NetworkStats> {
    if net.kind() != DataKind::Binary {
        return Err(JnirmError::InvalidData(
            "network statistics need a binary network".into(),
        ));
    }
    Ok(stats_of(net.edges(), net.mask()))
}

fn stats_of(edges: &DMatrix<f64>, mask: &DMatrix<bool>) -> NetworkStats {
    let n = edges.nrows();
    let x = DMatrix::from_fn(n, n, |a, b| if mask[(a, b)] && edges[(a, b)] > 0.5 { 1.0 } else { 0.0 });
    let observed = mask.iter().filter(|&&m| m).count();
    let density = if observed == 0 { 0.0 } else { x.sum() / observed as f64 };
    let sender_degrees = (0..n).map(|a| x.row(a).sum()).collect();
    let receiver_degrees = (0..n).map(|b| x.column(b).sum()).collect();

    let (mut sx, mut sy, mut sxx, mut syy, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut mutual, mut connected) = (0usize, 0usize);
    for a in 0..n {
        for b in 0..n {
            if a == b || !mask[(a, b)] || !mask[(b, a)] {
                continue;
            }
            let (p, q) = (x[(a, b)], x[(b, a)]);
            sx += p;
            sy += q;
            sxx += p * p;
            syy += q * q;
            sxy += p * q;
            cnt += 1.0;
        }
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let (p, q) = (x[(a, b)], x[(b, a)]);
            if p + q > 0.0 {
                connected += 1;
                if p * q > 0.0 {
                    mutual += 1;
                }
            }
        }
    }
    let (dyadic_dependence, defined) = if cnt > 1.0 {
        let cov = sxy / cnt - (sx / cnt) * (sy / cnt);
        let vx = sxx / cnt - (sx / cnt).powi(2);
        let vy = syy / cnt - (sy / cnt).powi(2);
        if vx > 1e-15 && vy > 1e-15 {
            (cov / (vx * vy).sqrt(), true)
        } else {
            (0.0, false)
        }
    } else {
        (0.0, false)
    };
    let x2 = &x * &x;
    let (mut two_paths, mut closed) = (0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            if i != k {
                two_paths += x2[(i, k)];
                closed += x2[(i, k)] * x[(i, k)];
            }
        }
    }
    NetworkStats {
        sender_degrees,
        receiver_degrees,
        density,
        dyadic_dependence,
        dyadic_dependence_defined: defined,
        transitivity: if two_paths > 0.0 { closed / two_paths } else { 0.0 },
        balance: if connected > 0 {
            mutual as f64 / connected as f64
        } else {
            0.0
        },
    }
}

/// Area under the ROC curve via the Mann–Whitney statistic; ties count ½.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(JnirmError::dims("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(JnirmError::Degenerate("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(JnirmError::InvalidData("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over ties.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Potential scale reduction factor with each chain split in halves.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(JnirmError::config("split-Rhat needs at least two chains"));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(JnirmError::dims("chains differ in length"));
    }
    if len < 4 {
        return Err(JnirmError::config("chains too short for split-Rhat"));
    }
    let half = len / 2;
    let splits: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[len - half..]]).collect();
    let n = half as f64;
    let m = splits.len() as f64;
    let means: Vec<f64> = splits.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let w = splits
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        return Err(JnirmError::Degenerate("zero within-chain variance".into()));
    }
    let grand = means.iter().sum::<f64>() / m;
    let b = n * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let var_hat = (n - 1.0) / n * w + b / n;
    Ok((var_hat / w).sqrt())
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_pvalue(d: f64, effective_n: f64) -> f64 {
    let root = effective_n.sqrt();
    kolmogorov_q((root + 0.12 + 0.11 / root) * d)
}

/// One-sample Kolmogorov–Smirnov test against U(0, 1): `(D, p)`.
pub fn ks_uniform(sample: &[f64]) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(JnirmError::config("empty sample"));
    }
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok((d, ks_pvalue(d, n)))
}

/// Two-sample Kolmogorov–Smirnov test: `(D, p)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(JnirmError::config("empty sample"));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    Ok((d, ks_pvalue(d, ne)))
}

/// Per-item summaries of observed and replicated responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPpcStats {
    pub observed_means: Vec<f64>,
    pub replicated_means: Vec<f64>,
    /// Response categories (when the observed values are a small set of
    /// integers) and per-item observed/replicated frequencies, `[item][cat]`.
    pub categories: Vec<f64>,
    pub observed_frequencies: Vec<Vec<f64>>,
    pub replicated_frequencies: Vec<Vec<f64>>,
    pub observed_covariance: DMatrix<f64>,
    /// Average over replicates of each replicate's item covariance.
    pub replicated_covariance: DMatrix<f64>,
    /// Pearson correlation of the off-diagonal entries of the two covariances.
    pub covariance_correlation: f64,
}

fn masked_column_mean(values: &DMatrix<f64>, mask: &DMatrix<bool>, i: usize) -> f64 {
    let (s, c) = (0..values.nrows())
        .filter(|&p| mask[(p, i)])
        .fold((0.0, 0usize), |(s, c), p| (s + values[(p, i)], c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// Pairwise-complete item covariance (divisor = pair count).
fn masked_covariance(values: &DMatrix<f64>, mask: &DMatrix<bool>) -> DMatrix<f64> {
    let m = values.ncols();
    let n = values.nrows();
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let rows: Vec<usize> = (0..n).filter(|&p| mask[(p, i)] && mask[(p, j)]).collect();
            if rows.len() < 2 {
                cov[(i, j)] = f64::NAN;
                cov[(j, i)] = f64::NAN;
                continue;
            }
            let c = rows.len() as f64;
            let mi = rows.iter().map(|&p| values[(p, i)]).sum::<f64>() / c;
            let mj = rows.iter().map(|&p| values[(p, j)]).sum::<f64>() / c;
            let v = rows
                .iter()
                .map(|&p| (values[(p, i)] - mi) * (values[(p, j)] - mj))
                .sum::<f64>()
                / c;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va <= 0.0 || vb <= 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

fn off_diagonal(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Observed categories if the observed responses are at most 10 distinct
/// integers.
fn response_categories(items: &ItemResponses) -> Vec<f64> {
    let mut cats: Vec<f64> = Vec::new();
    for (v, &m) in items.values().iter().zip(items.mask().iter()) {
        if !m {
            continue;
        }
        if v.fract() != 0.0 {
            return Vec::new();
        }
        if !cats.contains(v) {
            cats.push(*v);
            if cats.len() > 10 {
                return Vec::new();
            }
        }
    }
    cats.sort_by(|a, b| a.total_cmp(b));
    cats
}

fn nearest_category(x: f64, cats: &[f64]) -> usize {
    cats.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map_or(0, |(i, _)| i)
}

fn category_frequencies(values: &DMatrix<f64>, mask: &DMatrix<bool>, cats: &[f64]) -> Vec<Vec<f64>> {
    (0..values.ncols())
        .map(|i| {
            let mut f = vec![0.0; cats.len()];
            let mut c = 0.0f64;
            for p in 0..values.nrows() {
                if mask[(p, i)] {
                    f[nearest_category(values[(p, i)], cats)] += 1.0;
                    c += 1.0;
                }
            }
            f.iter().map(|x| x / c.max(1.0)).collect()
        })
        .collect()
}

/// Compares observed items with replicated response matrices (same shape,
/// evaluated on the observed mask).
pub fn item_ppc_stats(items: &ItemResponses, replicates: &[DMatrix<f64>]) -> Result<ItemPpcStats> {
    let m = items.n_items();
    if m < 2 {
        return Err(JnirmError::Degenerate(
            "item covariance needs at least two items".into(),
        ));
    }
    if replicates.is_empty() {
        return Err(JnirmError::config("no replicated responses"));
    }
    if replicates.iter().any(|r| r.shape() != items.values().shape()) {
        return Err(JnirmError::dims("replicate shape differs from the observed responses"));
    }
    let mask = items.mask();
    let r = replicates.len() as f64;
    let observed_means = (0..m).map(|i| masked_column_mean(items.values(), mask, i)).collect();
    let replicated_means = (0..m)
        .map(|i| replicates.iter().map(|y| masked_column_mean(y, mask, i)).sum::<f64>() / r)
        .collect();
    let categories = response_categories(items);
    let (observed_frequencies, replicated_frequencies) = if categories.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let obs = category_frequencies(items.values(), mask, &categories);
        let mut rep = vec![vec![0.0; categories.len()]; m];
        for y in replicates {
            for (acc, f) in rep.iter_mut().zip(category_frequencies(y, mask, &categories)) {
                for (a, b) in acc.iter_mut().zip(f) {
                    *a += b / r;
                }
            }
        }
        (obs, rep)
    };
    let observed_covariance = masked_covariance(items.values(), mask);
    let mut replicated_covariance = DMatrix::zeros(m, m);
    for y in replicates {
        replicated_covariance += masked_covariance(y, mask) / r;
    }
    let covariance_correlation = pearson(
        &off_diagonal(&observed_covariance),
        &off_diagonal(&replicated_covariance),
    );
    Ok(ItemPpcStats {
        observed_means,
        replicated_means,
        categories,
        observed_frequencies,
        replicated_frequencies,
        observed_covariance,
        replicated_covariance,
        covariance_correlation,
    })
}

/// Posterior predictive comparison of named scalar statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcResult {
    pub stat_names: Vec<String>,
    pub observed: Vec<f64>,
    /// `replicated[r][s]`: statistic `s` on replicate `r`.
    pub replicated: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Observed value inside the central 95% replicated interval.
    pub covered: Vec<bool>,
    pub coverage_rate: f64,
    pub item_stats: Option<ItemPpcStats>,
    pub definitions: String,
}

fn network_stat_vector(s: &NetworkStats) -> Vec<f64> {
    let sd = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    let mut out = vec![
        s.density,
        s.dyadic_dependence,
        s.transitivity,
        s.balance,
        sd(&s.sender_degrees),
        sd(&s.receiver_degrees),
    ];
    out.extend(&s.sender_degrees);
    out.extend(&s.receiver_degrees);
    out
}

fn network_stat_names(n: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        "density",
        "dyadic_dependence",
        "transitivity",
        "balance",
        "sd_sender_degree",
        "sd_receiver_degree",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((0..n).map(|a| format!("sender_degree_{}", a + 1)));
    names.extend((0..n).map(|a| format!("receiver_degree_{}", a + 1)));
    names
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicates the data once per selected stored draw (evenly spaced over the
/// retained draws) and compares statistics with the observed data.
/// Replicate `r` uses stream `r` of `seed`.
pub fn posterior_predictive(
    chain: &ChainOutput,
    network: Option<&NetworkData>,
    items: Option<&ItemResponses>,
    n_replicates: usize,
    seed: u64,
) -> Result<PpcResult> {
    let draws = &chain.draws;
    if draws.is_empty() || n_replicates == 0 {
        return Err(JnirmError::config(
            "posterior predictive checks need stored draws (keep_draws)",
        ));
    }
    if n_replicates > draws.len() {
        return Err(JnirmError::config(format!(
            "requested {n_replicates} replicates but only {} draws were retained",
            draws.len()
        )));
    }
    let network = network.filter(|_| chain.mean_uvt.is_some());
    let items = items.filter(|_| chain.mean_theta_at.is_some());
    if let Some(net) = network {
        if net.kind() != DataKind::Binary {
            return Err(JnirmError::InvalidData("network checks need a binary network".into()));
        }
    }
    let step = draws.len() as f64 / n_replicates as f64;
    let picks: Vec<usize> = (0..n_replicates).map(|r| (r as f64 * step) as usize).collect();
    type Replicate = (Option<Vec<f64>>, Option<DMatrix<f64>>);
    let sims: Vec<Replicate> = picks
        .par_iter()
        .enumerate()
        .map(|(r, &idx)| -> Result<_> {
            let d = &draws[idx];
            let mut rng = stream_rng(seed, r as u64);
            let net_stats = match network {
                Some(net) => {
                    let (rep, _) = simulate_network(&mut rng, d.delta, &d.u, &d.v, d.rho, 1.0, DataKind::Binary)?;
                    Some(network_stat_vector(&stats_of(rep.edges(), net.mask())))
                }
                None => None,
            };
            let item_rep = match items {
                Some(it) => {
                    let (rep, _) = simulate_items(&mut rng, &d.beta, &d.a, &d.theta, d.sigma2_eps, it.kind())?;
                    Some(rep.values().clone())
                }
                None => None,
            };
            Ok((net_stats, item_rep))
        })
        .collect::<Result<_>>()?;

    let mut names = Vec::new();
    let mut observed = Vec::new();
    let mut replicated: Vec<Vec<f64>> = vec![Vec::new(); n_replicates];
    if let Some(net) = network {
        names.extend(network_stat_names(net.n_nodes()));
        observed.extend(network_stat_vector(&network_stats(net)?));
        for (r, (s, _)) in sims.iter().enumerate() {
            replicated[r].extend(s.as_ref().expect("network replicate"));
        }
    }
    let mut item_stats = None;
    if let Some(it) = items {
        let reps: Vec<DMatrix<f64>> = sims.iter().map(|(_, y)| y.clone().expect("item replicate")).collect();
        let mask = it.mask();
        for i in 0..it.n_items() {
            names.push(format!("item_mean_{}", i + 1));
            observed.push(masked_column_mean(it.values(), mask, i));
            for (r, y) in reps.iter().enumerate() {
                replicated[r].push(masked_column_mean(y, mask, i));
            }
        }
        if it.n_items() >= 2 {
            item_stats = Some(item_ppc_stats(it, &reps)?);
        }
    }
    let mut lower = Vec::with_capacity(names.len());
    let mut upper = Vec::with_capacity(names.len());
    let mut covered = Vec::with_capacity(names.len());
    for s in 0..names.len() {
        let mut col: Vec<f64> = replicated.iter().map(|r| r[s]).collect();
        col.sort_by(|a, b| a.total_cmp(b));
        let lo = quantile_sorted(&col, 0.025);
        let hi = quantile_sorted(&col, 0.975);
        lower.push(lo);
        upper.push(hi);
        covered.push(observed[s] >= lo && observed[s] <= hi);
    }
    let coverage_rate = if covered.is_empty() {
        f64::NAN
    } else {
        covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64
    };
    Ok(PpcResult {
        stat_names: names,
        observed,
        replicated,
        lower,
        upper,
        covered,
        coverage_rate,
        item_stats,
        definitions: STAT_DEFINITIONS.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutMetric {
    Auc,
    /// Root mean squared error, used for continuous networks.
    Rmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRow {
    pub node: usize,
    /// `None` when the held-out labels are all of one class.
    pub score: Option<f64>,
    pub n_cells: usize,
    pub n_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutResult {
    pub metric: HoldoutMetric,
    pub rows: Vec<HoldoutRow>,
    /// Median over rows with a defined score.
    pub median: f64,
    pub skipped: usize,
    /// Every refit excluded its held-out row from the likelihood.
    pub leak_free: bool,
}

/// Shortened chain settings for cross-validation refits: one fifth of the
/// iterations and burn-in, thinning capped so at least 50 draws remain.
pub fn holdout_config(config: &ModelConfig) -> ModelConfig {
    let mut c = config.clone();
    c.iterations = (config.iterations / 5).max(2);
    c.burn_in = (config.burn_in / 5).min(c.iterations - 1);
    let kept = c.iterations - c.burn_in;
    c.thin = config.thin.clamp(1, (kept / 50).max(1));
    c
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// For each selected node, masks its outgoing row, refits with `config`
/// (which the caller usually shortens with [`holdout_config`]) and scores
/// the held-out cells by the posterior mean edge probability (binary) or
/// posterior mean expected value (continuous). Row `a` uses stream `a` of
/// `seed`. Rows run in parallel.
pub fn row_holdout_cv(
    network: &NetworkData,
    items: Option<&ItemResponses>,
    config: &ModelConfig,
    rows: Option<&[usize]>,
    seed: u64,
) -> Result<HoldoutResult> {
    let n = network.n_nodes();
    if n < 3 {
        return Err(JnirmError::dims("row holdout needs at least 3 nodes"));
    }
    if !config.mode.has_network() {
        return Err(JnirmError::config("row holdout needs a network mode"));
    }
    let all: Vec<usize> = (0..n).collect();
    let rows = rows.unwrap_or(&all);
    if rows.iter().any(|&a| a >= n) {
        return Err(JnirmError::dims("holdout row out of range"));
    }
    let metric = match network.kind() {
        DataKind::Binary => HoldoutMetric::Auc,
        DataKind::Continuous => HoldoutMetric::Rmse,
    };
    let results: Vec<(HoldoutRow, bool)> = rows
        .par_iter()
        .map(|&a| -> Result<_> {
            let held = network.hold_out_row(a)?;
            let out = Sampler::new(Some(&held), items, config, seed, a as u64)?.run(&mut NoProgress, 0)?;
            let leak_free = out
                .observed_network
                .as_ref()
                .is_some_and(|m| (0..n).all(|b| !m[(a, b)]));
            let cells: Vec<usize> = (0..n).filter(|&b| network.is_observed(a, b)).collect();
            let labels: Vec<f64> = cells.iter().map(|&b| network.edges()[(a, b)]).collect();
            let n_positive = labels.iter().filter(|&&x| x > 0.5).count();
            let score = match metric {
                HoldoutMetric::Auc => {
                    let prob = out.mean_edge_prob.as_ref().expect("binary network fit");
                    let scores: Vec<f64> = cells.iter().map(|&b| prob[(a, b)]).collect();
                    let lab: Vec<bool> = labels.iter().map(|&x| x > 0.5).collect();
                    auc(&scores, &lab).ok()
                }
                HoldoutMetric::Rmse => {
                    let uvt = out.mean_uvt.as_ref().expect("network fit");
                    let delta = out.posterior_mean_delta();
                    if cells.is_empty() {
                        None
                    } else {
                        let sse: f64 = cells
                            .iter()
                            .zip(&labels)
                            .map(|(&b, &y)| (delta + uvt[(a, b)] - y).powi(2))
                            .sum();
                        Some((sse / cells.len() as f64).sqrt())
                    }
                }
            };
            Ok((
                HoldoutRow {
                    node: a,
                    score,
                    n_cells: cells.len(),
                    n_positive,
                },
                leak_free,
            ))
        })
        .collect::<Result<_>>()?;
    let leak_free = results.iter().all(|(_, l)| *l);
    let rows: Vec<HoldoutRow> = results.into_iter().map(|(r, _)| r).collect();
    let scores: Vec<f64> = rows.iter().filter_map(|r| r.score).collect();
    Ok(HoldoutResult {
        metric,
        skipped: rows.len() - scores.len(),
        median: median(scores),
        rows,
        leak_free,
    })
}

/// Joint fit against separate network-only and item-only fits of the same
/// data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub holdout_rows: Vec<usize>,
    pub joint_holdout: HoldoutResult,
    pub network_only_holdout: HoldoutResult,
    /// Observed vs replicated-mean item covariance correlation.
    pub joint_covariance_correlation: f64,
    pub item_only_covariance_correlation: f64,
}

/// Row-holdout scores under joint and network-only fits (shortened with
/// [`holdout_config`]), and item covariance recovery under full-length joint
/// and item-only fits with `n_replicates` predictive replicates.
pub fn compare_modes(
    network: &NetworkData,
    items: &ItemResponses,
    config: &ModelConfig,
    holdout_rows: Option<&[usize]>,
    n_replicates: usize,
    seed: u64,
) -> Result<ModeComparison> {
    let rows: Vec<usize> = holdout_rows.map_or_else(|| (0..network.n_nodes()).collect(), |r| r.to_vec());
    let mut joint = config.clone();
    joint.mode = crate::model::Mode::Joint;
    joint.keep_draws = true;
    let mut net_only = joint.clone();
    net_only.mode = crate::model::Mode::NetworkOnly;
    let mut item_only = joint.clone();
    item_only.mode = crate::model::Mode::ItemOnly;

    let joint_holdout = row_holdout_cv(network, Some(items), &holdout_config(&joint), Some(&rows), seed)?;
    let network_only_holdout = row_holdout_cv(network, None, &holdout_config(&net_only), Some(&rows), seed)?;
    let cov_corr = |cfg: &ModelConfig, net: Option<&NetworkData>, stream: u64| -> Result<f64> {
        let out = Sampler::new(net, Some(items), cfg, seed, stream)?.run(&mut NoProgress, 0)?;
        let reps = n_replicates.min(out.draws.len());
        let ppc = posterior_predictive(&out, None, Some(items), reps, seed.wrapping_add(stream))?;
        ppc.item_stats
            .map(|s| s.covariance_correlation)
            .ok_or_else(|| JnirmError::Degenerate("item covariance needs at least two items".into()))
    };
    let n = network.n_nodes() as u64;
    Ok(ModeComparison {
        holdout_rows: rows,
        joint_holdout,
        network_only_holdout,
        joint_covariance_correlation: cov_corr(&joint, Some(network), n)?,
        item_only_covariance_correlation: cov_corr(&item_only, None, n + 1)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(rows: &[&[f64]]) -> NetworkData {
        let n = rows.len();
        NetworkData::new(DMatrix::from_fn(n, n, |a, b| rows[a][b]), DataKind::Binary).unwrap()
    }

    #[test]
    fn empty_and_complete_networks() {
        let empty = network_stats(&net(&[&[0., 0., 0.], &[0., 0., 0.], &[0., 0., 0.]])).unwrap();
        assert_eq!(empty.density, 0.0);
        assert!(!empty.dyadic_dependence_defined);
        assert_eq!(empty.dyadic_dependence, 0.0);
        assert!(empty.sender_degrees.iter().all(|&d| d == 0.0));
        let full = network_stats(&net(&[&[0., 1., 1.], &[1., 0., 1.], &[1., 1., 0.]])).unwrap();
        assert_eq!((full.density, full.transitivity, full.balance), (1.0, 1.0, 1.0));
    }

    #[test]
    fn three_cycle() {
        let s = network_stats(&net(&[&[0., 1., 0.], &[0., 0., 1.], &[1., 0., 0.]])).unwrap();
        assert_eq!(s.transitivity, 0.0);
        assert_eq!(s.balance, 0.0);
        assert_eq!(s.sender_degrees, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn auc_examples() {
        let a = auc(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap();
        assert!((a - 0.75).abs() < 1e-15);
        assert_eq!(auc(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 1.0], &[true, false]).unwrap(), 0.5);
        assert!(auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn rhat_identical_and_offset() {
        let c: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        let r = gelman_rubin(&[c.clone(), c.clone()]).unwrap();
        assert!((r - 1.0).abs() < 0.05, "{r}");
        let shifted: Vec<f64> = c.iter().map(|x| x + 100.0).collect();
        assert!(gelman_rubin(&[c.clone(), shifted]).unwrap() > 1.1);
        assert!(gelman_rubin(&[vec![1.0; 10], vec![1.0; 10]]).is_err());
    }

    #[test]
    fn ks_basics() {
        let u: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&u).unwrap().1 > 0.99);
        let skew: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&skew).unwrap().1 < 1e-6);
        assert!(ks_two_sample(&u, &u).unwrap().0 == 0.0);
    }

    #[test]
    fn identical_replicates_give_unit_covariance_correlation() {
        let y = DMatrix::from_fn(20, 4, |p, i| ((p * 7 + i * 3) % 5) as f64 + (p as f64 * 0.1) * i as f64);
        let items = ItemResponses::new(y.clone(), DataKind::Continuous).unwrap();
        let s = item_ppc_stats(&items, &[y.clone(), y]).unwrap();
        assert!((s.covariance_correlation - 1.0).abs() < 1e-12);
        let single = ItemResponses::new(DMatrix::from_element(5, 1, 1.0), DataKind::Continuous).unwrap();
        assert!(item_ppc_stats(&single, &[DMatrix::zeros(5, 1)]).is_err());
    }

    #[test]
    fn holdout_config_shortens() {
        let c = holdout_config(&ModelConfig::new(2, 1));
        assert_eq!((c.iterations, c.burn_in), (4000, 400));
        assert!(c.validate().is_ok());
    }
}
