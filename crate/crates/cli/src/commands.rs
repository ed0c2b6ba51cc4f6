//! Subcommand implementations. Each command resolves its settings, runs,
//! writes its outputs into the output directory and returns the manifest.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use jnirm::diagnostics::{
    compare_modes, gelman_rubin, holdout_config, posterior_predictive, row_holdout_cv, HoldoutMetric,
};
use jnirm::identify::{congruence, svd_identify, target_rotate, RotationOptions, TargetPattern};
use jnirm::inference::{cca, independence_test, DependenceReport, PValueMethod};
use jnirm::io::{format_value, numbered, read_items, read_matrix_file, read_network, write_matrix_file, NetworkFormat};
use jnirm::sampler::{run_chains, ChainOutput, Draw};
use jnirm::simulate::{density_table, recovery_study, simulate_joint, sparsity_bias_study, GenerativeParams};
use jnirm::{DataKind, ItemResponses, Mode, ModelConfig, NetworkData};

use crate::error::{io_error, CliError};
use crate::manifest::{self, RunManifest};
use crate::settings::Settings;

pub struct Context<'a> {
    pub settings: &'a Settings,
    pub out: &'a Path,
    pub manifest: RunManifest,
}

impl Context<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.output(name);
        self.out.join(name)
    }

    fn matrix(&mut self, name: &str, header: &[String], m: &DMatrix<f64>) -> Result<(), CliError> {
        let p = self.path(name);
        write_matrix_file(&p, header, m)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Numerical(format!("cannot serialize {name}: {e}")))?;
        std::fs::write(&p, text + "\n").map_err(|e| io_error(&p, e))
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let p = self.path(name);
        let file = std::fs::File::create(&p).map_err(|e| io_error(&p, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let err = |e: csv::Error| CliError::Data(format!("{}: {e}", p.display()));
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| io_error(&p, e))
    }
}

fn kind(s: &Settings, key: &str, default: &str) -> Result<DataKind, CliError> {
    match s.get::<String>(key, default.into())?.as_str() {
        "binary" => Ok(DataKind::Binary),
        "continuous" => Ok(DataKind::Continuous),
        other => Err(CliError::Usage(format!(
            "`{key}` must be binary or continuous, got `{other}`"
        ))),
    }
}

struct Inputs {
    network: Option<NetworkData>,
    items: Option<ItemResponses>,
    item_names: Option<Vec<String>>,
}

fn load_inputs(ctx: &mut Context) -> Result<Inputs, CliError> {
    let s = ctx.settings;
    let network_path: Option<PathBuf> = s.get_opt::<String>("network")?.map(PathBuf::from);
    let items_path: Option<PathBuf> = s.get_opt::<String>("items")?.map(PathBuf::from);
    let network = match &network_path {
        Some(p) => {
            let k = kind(s, "network-kind", "binary")?;
            let format: NetworkFormat = s.get::<String>("network-format", "auto".into())?.parse()?;
            let nodes = s.get_opt::<usize>("nodes")?;
            ctx.manifest.add_input("network", p)?;
            Some(read_network(p, k, format, nodes)?)
        }
        None => None,
    };
    let (items, item_names) = match &items_path {
        Some(p) => {
            let k = kind(s, "item-kind", "continuous")?;
            ctx.manifest.add_input("items", p)?;
            let (it, names) = read_items(p, k)?;
            (Some(it), names)
        }
        None => (None, None),
    };
    if let (Some(n), Some(i)) = (&network, &items) {
        if n.n_nodes() != i.n_persons() {
            return Err(CliError::Data(format!(
                "network has {} nodes but the item file has {} rows",
                n.n_nodes(),
                i.n_persons()
            )));
        }
    }
    Ok(Inputs {
        network,
        items,
        item_names,
    })
}

fn model_config(s: &Settings, inputs: &Inputs, seed: u64) -> Result<ModelConfig, CliError> {
    let default_mode = match (&inputs.network, &inputs.items) {
        (Some(_), Some(_)) => "joint",
        (Some(_), None) => "network-only",
        (None, Some(_)) => "item-only",
        (None, None) => return Err(CliError::Usage("give --network and/or --items".into())),
    };
    let mode: Mode = s.get::<String>("mode", default_mode.into())?.parse()?;
    if mode.has_network() && inputs.network.is_none() {
        return Err(CliError::Usage("this mode needs --network".into()));
    }
    if mode.has_items() && inputs.items.is_none() {
        return Err(CliError::Usage("this mode needs --items".into()));
    }
    let mut c = ModelConfig::new(s.get("k", 2usize)?, s.get("d", 1usize)?).with_mode(mode);
    c.iterations = s.get("iters", c.iterations)?;
    c.burn_in = s.get("burn", c.burn_in)?;
    c.thin = s.get("thin", c.thin)?;
    c.prior_delta_precision = s.get("delta-prior-precision", c.prior_delta_precision)?;
    c.precision_prior_shape = s.get("gamma-shape", c.precision_prior_shape)?;
    c.precision_prior_rate = s.get("gamma-rate", c.precision_prior_rate)?;
    c.rho_proposal_sd = s.get("rho-sd", c.rho_proposal_sd)?;
    c.adapt_rho = s.get("adapt-rho", c.adapt_rho)?;
    c.wishart_df = s.get_opt("wishart-df")?;
    c.keep_draws = s.get("keep-draws", false)?;
    c.seed = seed;
    c.validate()?;
    Ok(c)
}

fn pvalue_method(s: &Settings) -> Result<PValueMethod, CliError> {
    Ok(s.get::<String>("pvalue", "bartlett".into())?.parse()?)
}

#[derive(Serialize)]
struct RhatSummary {
    delta: Option<f64>,
    rho: Option<f64>,
    sigma2_e: Option<f64>,
    sigma2_eps: Option<f64>,
}

#[derive(Serialize)]
struct FitSummary {
    mode: Mode,
    k: usize,
    d: usize,
    chains: usize,
    samples: usize,
    delta: Option<f64>,
    rho: Option<f64>,
    sigma2_e: Option<f64>,
    sigma2_eps: Option<f64>,
    beta: Option<Vec<f64>>,
    rho_acceptance: Option<f64>,
    rhat: Option<RhatSummary>,
    network_singular_values: Option<Vec<f64>>,
    item_singular_values: Option<Vec<f64>>,
    network_ill_determined: Option<bool>,
    item_ill_determined: Option<bool>,
    sigma_utheta: DMatrix<f64>,
    rotation_converged: Option<bool>,
}

fn rhat(chains: &[ChainOutput], f: impl Fn(&ChainOutput) -> &Vec<f64>) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let traces: Vec<Vec<f64>> = chains.iter().map(|c| f(c).clone()).collect();
    gelman_rubin(&traces).ok()
}

pub fn fit(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = load_inputs(ctx)?;
    let s = ctx.settings;
    let seed = s.seed()?;
    let config = model_config(s, &inputs, seed)?;
    let n_chains: usize = s.get("chains", 1)?;
    if n_chains == 0 {
        return Err(CliError::Usage("chains must be positive".into()));
    }
    let groups: Option<Vec<usize>> = match s.get_opt::<String>("groups")? {
        Some(text) => Some(group_membership(&text, config.d)?),
        None => None,
    };
    let oblique = s.get::<String>("rotation", "oblique".into())?;
    let oblique = match oblique.as_str() {
        "oblique" => true,
        "orthogonal" => false,
        o => {
            return Err(CliError::Usage(format!(
                "rotation must be oblique or orthogonal, got `{o}`"
            )))
        }
    };
    s.check_unused()?;
    ctx.manifest.stage("load");

    let chains = run_chains(inputs.network.as_ref(), inputs.items.as_ref(), &config, seed, n_chains)?;
    ctx.manifest.stage("sampling");
    let mut merged = chains[0].clone();
    for c in &chains[1..] {
        merged = merged.merge(c)?;
    }
    let has_net = config.mode.has_network();
    let has_items = config.mode.has_items();

    write_traces(
        ctx,
        &merged,
        has_net,
        has_items,
        inputs.network.as_ref().map(|n| n.kind()),
    )?;
    let mut summary = FitSummary {
        mode: config.mode,
        k: config.k,
        d: config.d,
        chains: n_chains,
        samples: merged.n_samples,
        delta: has_net.then(|| merged.posterior_mean_delta()),
        rho: has_net.then(|| merged.posterior_mean_rho()),
        sigma2_e: has_net.then(|| merged.posterior_mean_sigma2_e()),
        sigma2_eps: has_items.then(|| merged.posterior_mean_sigma2_eps()),
        beta: has_items.then(|| merged.posterior_mean_beta().iter().copied().collect()),
        rho_acceptance: has_net.then(|| merged.accept_rate_rho()),
        rhat: (n_chains > 1).then(|| RhatSummary {
            delta: has_net.then(|| rhat(&chains, |c| &c.traces.delta)).flatten(),
            rho: has_net.then(|| rhat(&chains, |c| &c.traces.rho)).flatten(),
            sigma2_e: has_net.then(|| rhat(&chains, |c| &c.traces.sigma2_e)).flatten(),
            sigma2_eps: has_items.then(|| rhat(&chains, |c| &c.traces.sigma2_eps)).flatten(),
        }),
        network_singular_values: None,
        item_singular_values: None,
        network_ill_determined: None,
        item_ill_determined: None,
        sigma_utheta: merged.mean_sigma_utheta.clone(),
        rotation_converged: None,
    };

    if let Some(uvt) = &merged.mean_uvt {
        ctx.matrix("uvt_mean.csv", &numbered("node", uvt.ncols()), uvt)?;
        if let Some(p) = &merged.mean_edge_prob {
            ctx.matrix("edge_prob.csv", &numbered("node", p.ncols()), p)?;
        }
        let id = svd_identify(uvt, config.k)?;
        ctx.matrix("factors_u.csv", &numbered("U", config.k), &id.left)?;
        ctx.matrix("factors_v.csv", &numbered("V", config.k), &id.right)?;
        summary.network_singular_values = Some(id.singular_values.iter().copied().collect());
        summary.network_ill_determined = Some(id.ill_determined);
    }
    if let Some(tat) = &merged.mean_theta_at {
        let id = svd_identify(tat, config.d)?;
        ctx.matrix("theta.csv", &numbered("theta", config.d), &id.left)?;
        let item_labels = inputs
            .item_names
            .clone()
            .unwrap_or_else(|| numbered("item", id.right.nrows()));
        write_loadings(ctx, "loadings.csv", &item_labels, &id.right)?;
        summary.item_singular_values = Some(id.singular_values.iter().copied().collect());
        summary.item_ill_determined = Some(id.ill_determined);
        if let Some(g) = &groups {
            if g.len() != id.right.nrows() {
                return Err(CliError::Usage(format!(
                    "groups cover {} items but the data have {}",
                    g.len(),
                    id.right.nrows()
                )));
            }
            let target = TargetPattern::from_groups(g, config.d)?;
            let rot = target_rotate(
                &id.right,
                &target,
                RotationOptions {
                    oblique,
                    ..Default::default()
                },
            )?;
            write_loadings(ctx, "rotated_loadings.csv", &item_labels, &rot.rotated_loadings)?;
            // Θ̂ transformed so that Θ Aᵀ is unchanged.
            let theta_rot = &id.left * &rot.rotation_matrix;
            ctx.matrix("theta_rotated.csv", &numbered("theta", config.d), &theta_rot)?;
            ctx.matrix(
                "factor_correlation.csv",
                &numbered("theta", config.d),
                &rot.factor_correlation,
            )?;
            let pattern = DMatrix::from_fn(g.len(), config.d, |i, j| if g[i] == j { 1.0 } else { 0.0 });
            let cong = congruence(&rot.rotated_loadings, &pattern)?;
            ctx.matrix("congruence.csv", &numbered("subscale", config.d), &cong)?;
            summary.rotation_converged = Some(rot.converged);
        }
    }
    if config.keep_draws {
        ctx.json("draws.json", &merged.draws)?;
    }
    ctx.json("summary.json", &summary)?;
    ctx.manifest.stage("outputs");
    Ok(())
}

fn group_membership(text: &str, d: usize) -> Result<Vec<usize>, CliError> {
    // Either subscale sizes ("5,7,4") or one 1-based subscale per item.
    let values: Vec<usize> = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("invalid groups `{text}`")))?;
    if values.len() == d {
        Ok(values
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
            .collect())
    } else if values.iter().all(|&g| (1..=d).contains(&g)) {
        Ok(values.iter().map(|g| g - 1).collect())
    } else {
        Err(CliError::Usage(format!(
            "groups `{text}` are neither {d} subscale sizes nor 1-based subscale labels"
        )))
    }
}

fn write_loadings(ctx: &mut Context, name: &str, labels: &[String], a: &DMatrix<f64>) -> Result<(), CliError> {
    let mut header = vec!["item"];
    let cols = numbered("factor", a.ncols());
    header.extend(cols.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..a.nrows())
        .map(|i| {
            let mut r = vec![labels[i].clone()];
            r.extend((0..a.ncols()).map(|j| format_value(a[(i, j)])));
            r
        })
        .collect();
    ctx.table(name, &header, &rows)
}

fn write_traces(
    ctx: &mut Context,
    out: &ChainOutput,
    has_net: bool,
    has_items: bool,
    net_kind: Option<DataKind>,
) -> Result<(), CliError> {
    let t = &out.traces;
    let mut cols: Vec<(String, &Vec<f64>)> = Vec::new();
    if has_net {
        cols.push(("delta".into(), &t.delta));
        cols.push(("rho".into(), &t.rho));
        if net_kind == Some(DataKind::Continuous) {
            cols.push(("sigma2_e".into(), &t.sigma2_e));
        }
    }
    if has_items {
        cols.push(("sigma2_eps".into(), &t.sigma2_eps));
        for (i, b) in t.beta.iter().enumerate() {
            cols.push((format!("beta{}", i + 1), b));
        }
    }
    for (i, s) in t.sigma_diag.iter().enumerate() {
        cols.push((format!("sigma_diag{}", i + 1), s));
    }
    let len = t.len();
    let m = DMatrix::from_fn(len, cols.len(), |r, c| cols[c].1.get(r).copied().unwrap_or(f64::NAN));
    let header: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
    ctx.matrix("traces.csv", &header, &m)
}

fn read_block(path: &Path, ctx: &mut Context, role: &str) -> Result<DMatrix<f64>, CliError> {
    ctx.manifest.add_input(role, path)?;
    let (_, m) = read_matrix_file(path)?;
    if m.iter().any(|x| x.is_nan()) {
        return Err(CliError::Data(format!("{}: missing values", path.display())));
    }
    Ok(m)
}

fn write_dependence(
    ctx: &mut Context,
    report: &DependenceReport,
    x_names: &[String],
    y_names: &[String],
) -> Result<(), CliError> {
    ctx.json("dependence.json", report)?;
    let s = report.canonical_correlations.len();
    let mut header = vec!["variable".to_string()];
    header.extend(numbered("function", s));
    let mut rows = Vec::new();
    for (names, coef) in [
        (x_names, &report.std_coefficients_network),
        (y_names, &report.std_coefficients_items),
    ] {
        for (i, name) in names.iter().enumerate() {
            let mut r = vec![name.clone()];
            r.extend((0..s).map(|j| format_value(coef[(i, j)])));
            rows.push(r);
        }
    }
    let mut r = vec!["canonical_correlation".to_string()];
    r.extend(report.canonical_correlations.iter().map(|&c| format_value(c)));
    rows.push(r);
    let mut r = vec!["sequential_pvalue".to_string()];
    r.extend(report.sequential_pvalues.iter().map(|&c| format_value(c)));
    rows.push(r);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.table("coefficients.csv", &header, &rows)
}

/// Dependence test between identified network factors and item factors.
pub fn test(ctx: &mut Context) -> Result<(), CliError> {
    let s = ctx.settings;
    let method = pvalue_method(s)?;
    let (x, y, xn, yn) = match s.get_opt::<String>("run")? {
        Some(run) => {
            let run = PathBuf::from(run);
            let theta_file = if run.join("theta_rotated.csv").exists() {
                "theta_rotated.csv"
            } else {
                "theta.csv"
            };
            s.check_unused()?;
            let (hu, u) = read_matrix_file(&run.join("factors_u.csv"))?;
            let (hv, v) = read_matrix_file(&run.join("factors_v.csv"))?;
            ctx.manifest.add_input("factors-u", &run.join("factors_u.csv"))?;
            ctx.manifest.add_input("factors-v", &run.join("factors_v.csv"))?;
            let theta = read_block(&run.join(theta_file), ctx, "theta")?;
            let x = jnirm::linalg::hstack(&u, &v)?;
            let (_, th) = read_matrix_file(&run.join(theta_file))?;
            let xn: Vec<String> = hu.into_iter().chain(hv).collect();
            (x, theta, xn, numbered("theta", th.ncols()))
        }
        None => {
            let xp = PathBuf::from(s.require::<String>("network-factors")?);
            let yp = PathBuf::from(s.require::<String>("item-factors")?);
            s.check_unused()?;
            let x = read_block(&xp, ctx, "network-factors")?;
            let y = read_block(&yp, ctx, "item-factors")?;
            let (hx, _) = read_matrix_file(&xp)?;
            let (hy, _) = read_matrix_file(&yp)?;
            (x, y, hx, hy)
        }
    };
    if x.nrows() != y.nrows() {
        return Err(CliError::Data(format!(
            "row counts differ: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    ctx.manifest.stage("load");
    let t = independence_test(&x, &y, method)?;
    let report = cca(&x, &y, method)?;
    debug_assert!((t.lambda - report.wilks_lambda).abs() < 1e-8);
    write_dependence(ctx, &report, &xn, &yn)?;
    ctx.manifest.stage("analysis");
    Ok(())
}

/// Canonical correlation analysis of two CSV blocks.
pub fn cca_cmd(ctx: &mut Context) -> Result<(), CliError> {
    let s = ctx.settings;
    let method = pvalue_method(s)?;
    let xp = PathBuf::from(s.require::<String>("x")?);
    let yp = PathBuf::from(s.require::<String>("y")?);
    s.check_unused()?;
    let x = read_block(&xp, ctx, "x")?;
    let y = read_block(&yp, ctx, "y")?;
    let (hx, _) = read_matrix_file(&xp)?;
    let (hy, _) = read_matrix_file(&yp)?;
    if x.nrows() != y.nrows() {
        return Err(CliError::Data(format!(
            "row counts differ: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let report = cca(&x, &y, method)?;
    write_dependence(ctx, &report, &hx, &hy)?;
    ctx.manifest.stage("analysis");
    Ok(())
}

fn holdout_rows(s: &Settings, n: usize) -> Result<Vec<usize>, CliError> {
    let count: usize = s.get("holdout-rows", n)?;
    if count == 0 || count > n {
        return Err(CliError::Usage(format!("holdout-rows must be in 1..={n}")));
    }
    // Evenly spaced nodes.
    Ok((0..count).map(|i| i * n / count).collect())
}

fn metric_name(m: HoldoutMetric) -> &'static str {
    match m {
        HoldoutMetric::Auc => "auc",
        HoldoutMetric::Rmse => "rmse",
    }
}

/// Scree proportions and holdout scores across a range of network ranks.
pub fn select_dim(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = load_inputs(ctx)?;
    let s = ctx.settings;
    let seed = s.seed()?;
    let mut config = model_config(s, &inputs, seed)?;
    if !config.mode.has_network() {
        return Err(CliError::Usage("select-dim needs a network".into()));
    }
    let network = inputs.network.as_ref().expect("network mode");
    let n = network.n_nodes();
    let k_min: usize = s.get("k-min", 1)?;
    let k_max: usize = s.get("k-max", 4)?;
    if k_min == 0 || k_min > k_max || k_max >= n {
        return Err(CliError::Usage(format!(
            "rank range {k_min}..={k_max} must lie in 1..{n}"
        )));
    }
    let rows = holdout_rows(s, n)?;
    s.check_unused()?;
    ctx.manifest.stage("load");

    config.k = k_max;
    let full = run_chains(Some(network), inputs.items.as_ref(), &config, seed, 1)?.remove(0);
    let scree = jnirm::identify::variance_explained(full.mean_uvt.as_ref().expect("network mode"), k_max)?;
    ctx.manifest.stage("scree-fit");
    let mut table = Vec::new();
    let mut cumulative = 0.0;
    for k in 1..=k_max {
        cumulative += scree[k - 1];
        if k < k_min {
            continue;
        }
        let mut c = config.clone();
        c.k = k;
        let cv = row_holdout_cv(
            network,
            inputs.items.as_ref(),
            &holdout_config(&c),
            Some(&rows),
            seed.wrapping_add(k as u64),
        )?;
        table.push(vec![
            k.to_string(),
            format_value(scree[k - 1]),
            format_value(cumulative),
            metric_name(cv.metric).to_string(),
            format_value(cv.median),
            cv.skipped.to_string(),
        ]);
        ctx.manifest.stage(&format!("holdout-k{k}"));
    }
    ctx.table(
        "select_dim.csv",
        &[
            "k",
            "variance_explained",
            "cumulative_variance_explained",
            "metric",
            "median_holdout",
            "rows_skipped",
        ],
        &table,
    )
}

fn generative_params(s: &Settings, ctx: &mut Context) -> Result<GenerativeParams, CliError> {
    let mut p = match s.get_opt::<String>("params")? {
        Some(path) => {
            let path = PathBuf::from(path);
            ctx.manifest.add_input("params", &path)?;
            let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            GenerativeParams::parse(&text)?
        }
        None => match s.get::<String>("preset", "school-like".into())?.as_str() {
            "school-like" => GenerativeParams::school_like(),
            other => return Err(CliError::Usage(format!("unknown preset `{other}`"))),
        },
    };
    if let Some(n) = s.get_opt::<usize>("n")? {
        p = p.with_n(n);
    }
    p.validate()?;
    Ok(p)
}

/// Draws one dataset from the generative model.
pub fn simulate(ctx: &mut Context) -> Result<(), CliError> {
    let s = ctx.settings;
    let params = generative_params(s, ctx)?;
    let seed = s.seed()?;
    s.check_unused()?;
    let data = simulate_joint(&params, &mut jnirm::random::stream_rng(seed, 0))?;
    let n = params.n;
    let net = DMatrix::from_fn(n, n, |a, b| {
        if data.network.is_observed(a, b) || a != b {
            data.network.edges()[(a, b)]
        } else {
            f64::NAN
        }
    });
    ctx.matrix("network.csv", &numbered("node", n), &net)?;
    if let Some(items) = &data.items {
        ctx.matrix("items.csv", &numbered("item", items.n_items()), items.values())?;
        ctx.matrix("truth_theta.csv", &numbered("theta", params.d), &data.theta)?;
    }
    ctx.matrix("truth_u.csv", &numbered("U", params.k), &data.u)?;
    ctx.matrix("truth_v.csv", &numbered("V", params.k), &data.v)?;
    let p = ctx.path("params.txt");
    std::fs::write(&p, params.to_text()).map_err(|e| io_error(&p, e))?;
    ctx.manifest.stage("simulate");
    Ok(())
}

/// Posterior predictive checks for a finished `fit --keep-draws` run.
pub fn ppc(ctx: &mut Context) -> Result<(), CliError> {
    let s = ctx.settings;
    let run = PathBuf::from(s.require::<String>("run")?);
    let requested: Option<usize> = s.get_opt("replicates")?;
    let seed = s.seed()?;
    s.check_unused()?;
    let fit_config = manifest::read_config(&run)?;
    let file = fit_config
        .into_iter()
        .filter(|(k, _)| {
            [
                "network",
                "items",
                "network-kind",
                "item-kind",
                "network-format",
                "nodes",
                "mode",
            ]
            .contains(&k.as_str())
        })
        .collect();
    let fit_settings = Settings::from_maps(file, Default::default());
    let mut sub = Context {
        settings: &fit_settings,
        out: ctx.out,
        manifest: RunManifest::new("ppc-inputs"),
    };
    let inputs = load_inputs(&mut sub)?;
    let mode: Mode = fit_settings.get::<String>("mode", "joint".into())?.parse()?;
    ctx.manifest.inputs.extend(sub.manifest.inputs);
    let draws_path = run.join("draws.json");
    ctx.manifest.add_input("draws", &draws_path)?;
    let text = std::fs::read_to_string(&draws_path).map_err(|e| io_error(&draws_path, e))?;
    let draws: Vec<Draw> =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", draws_path.display())))?;
    ctx.manifest.stage("load");
    let reps = requested.unwrap_or(draws.len());

    // Only the draws and which blocks were fitted matter for replication.
    let template = draws
        .first()
        .cloned()
        .ok_or_else(|| CliError::Data("no stored draws; refit with keep-draws".into()))?;
    let chain = ChainOutput {
        n_samples: draws.len(),
        mean_uvt: mode.has_network().then(|| template.u.clone() * template.v.transpose()),
        mean_edge_prob: None,
        mean_theta_at: mode
            .has_items()
            .then(|| template.theta.clone() * template.a.transpose()),
        mean_item_cov: None,
        mean_sigma_utheta: template.sigma_utheta.clone(),
        traces: Default::default(),
        draws,
        rho_accepted: 0,
        rho_proposed: 0,
        observed_network: None,
        final_state: placeholder_state(&template),
    };
    let network = inputs.network.as_ref().filter(|n| n.kind() == DataKind::Binary);
    let result = posterior_predictive(&chain, network, inputs.items.as_ref(), reps, seed)?;
    ctx.manifest.stage("replicate");
    let rows: Vec<Vec<String>> = (0..result.stat_names.len())
        .map(|i| {
            vec![
                result.stat_names[i].clone(),
                format_value(result.observed[i]),
                format_value(result.lower[i]),
                format_value(result.upper[i]),
                result.covered[i].to_string(),
            ]
        })
        .collect();
    ctx.table(
        "ppc_stats.csv",
        &["statistic", "observed", "lower_2_5", "upper_97_5", "covered"],
        &rows,
    )?;
    let rep = DMatrix::from_fn(result.replicated.len(), result.stat_names.len(), |r, c| {
        result.replicated[r][c]
    });
    ctx.matrix("ppc_replicated.csv", &result.stat_names, &rep)?;
    #[derive(Serialize)]
    struct Coverage<'a> {
        replicates: usize,
        coverage_rate: f64,
        covered: std::collections::BTreeMap<&'a str, bool>,
        item_covariance_correlation: Option<f64>,
        definitions: &'a str,
    }
    ctx.json(
        "ppc.json",
        &Coverage {
            replicates: reps,
            coverage_rate: result.coverage_rate,
            covered: result
                .stat_names
                .iter()
                .map(String::as_str)
                .zip(result.covered.iter().copied())
                .collect(),
            item_covariance_correlation: result.item_stats.as_ref().map(|s| s.covariance_correlation),
            definitions: &result.definitions,
        },
    )
}

fn placeholder_state(d: &Draw) -> jnirm::LatentState {
    jnirm::LatentState {
        u: d.u.clone(),
        v: d.v.clone(),
        theta: d.theta.clone(),
        sigma_utheta: d.sigma_utheta.clone(),
        delta: d.delta,
        rho: d.rho,
        sigma2_e: d.sigma2_e,
        sigma2_eps: d.sigma2_eps,
        beta: d.beta.clone(),
        a: d.a.clone(),
        phi: DMatrix::zeros(0, 0),
        eta: DMatrix::zeros(0, 0),
    }
}

fn study_config(s: &Settings, base: ModelConfig, seed: u64) -> Result<ModelConfig, CliError> {
    let mut c = base;
    c.iterations = s.get("iters", 20_000usize)?;
    c.burn_in = s.get("burn", 2_000usize)?;
    c.thin = s.get("thin", 10usize)?;
    c.seed = seed;
    c.validate()?;
    Ok(c)
}

/// Simulate-and-refit recovery study.
pub fn study_recovery(ctx: &mut Context) -> Result<(), CliError> {
    let s = ctx.settings;
    let params = generative_params(s, ctx)?;
    let reps: usize = s.get("reps", 100)?;
    let seed = s.seed()?;
    let config = study_config(s, params.fit_config(), seed)?;
    s.check_unused()?;
    let report = recovery_study(&params, reps, &config, seed)?;
    ctx.manifest.stage("replications");
    let rows: Vec<Vec<String>> = report
        .parameters
        .iter()
        .map(|p| {
            vec![
                p.name.clone(),
                format_value(p.truth),
                format_value(p.bias),
                format_value(p.variance),
                format_value(p.mse),
            ]
        })
        .collect();
    ctx.table(
        "recovery.csv",
        &["parameter", "true_value", "bias", "variance", "mse"],
        &rows,
    )?;
    let mut cells = vec![("network", report.network_cells)];
    if let Some(c) = report.item_cells {
        cells.push(("items", c));
    }
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|(name, c)| {
            vec![
                name.to_string(),
                c.cells.to_string(),
                format_value(c.mean),
                format_value(c.sd),
                format_value(c.q05),
                format_value(c.median),
                format_value(c.q95),
            ]
        })
        .collect();
    ctx.table(
        "recovery_cells.csv",
        &["block", "cells", "mean", "sd", "q05", "median", "q95"],
        &rows,
    )?;
    ctx.json("recovery.json", &report)
}

/// Densities of simulated binary networks by intercept and latent variance.
pub fn study_density(ctx: &mut Context) -> Result<(), CliError> {
    let s = ctx.settings;
    let n: usize = s.get("n", 1000)?;
    let k: usize = s.get("k", 2)?;
    let intercepts = s.list("intercepts", &[0.0, -1.0, -2.0, -3.0, -4.0])?;
    let variances = s.list("variances", &[0.2, 1.0])?;
    let seed = s.seed()?;
    s.check_unused()?;
    let t = density_table(&intercepts, &variances, k, n, seed)?;
    let mut header = vec!["intercept".to_string()];
    header.extend(variances.iter().map(|v| format!("variance_{v}")));
    let rows: Vec<Vec<String>> = intercepts
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let mut r = vec![format_value(b)];
            r.extend((0..variances.len()).map(|j| format_value(t.densities[(i, j)])));
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.table("density_table.csv", &header, &rows)?;
    ctx.manifest.stage("simulate");
    Ok(())
}

/// Intercept and latent-variance bias of network-only fits to sparse networks.
pub fn study_sparsity(ctx: &mut Context) -> Result<(), CliError> {
    let s = ctx.settings;
    let n_values: Vec<usize> = s.list("n", &[100])?;
    let k: usize = s.get("k", 2)?;
    let intercepts = s.list("intercepts", &[0.0, -1.0, -2.0, -3.0, -4.0])?;
    let reps: usize = s.get("reps", 20)?;
    let seed = s.seed()?;
    let config = study_config(s, ModelConfig::new(k, 1).with_mode(Mode::NetworkOnly), seed)?;
    s.check_unused()?;
    let table = sparsity_bias_study(&intercepts, &n_values, k, reps, &config, seed)?;
    ctx.manifest.stage("replications");
    let mut header: Vec<String> = ["n", "true_intercept", "density", "bias_intercept"]
        .map(String::from)
        .to_vec();
    for block in ["bias_var_u", "bias_var_v", "kurtosis_u", "kurtosis_v"] {
        header.extend((1..=k).map(|j| format!("{block}_d{j}")));
    }
    header.push("failures".into());
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| {
            let mut row = vec![
                r.n.to_string(),
                format_value(r.intercept),
                format_value(r.mean_density),
                format_value(r.bias_delta),
            ];
            for block in [&r.bias_var_u, &r.bias_var_v, &r.kurtosis_u, &r.kurtosis_v] {
                row.extend(block.iter().map(|&x| format_value(x)));
            }
            row.push(r.failures.to_string());
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.table("sparsity_bias.csv", &header, &rows)
}

/// Joint versus separate fits of the same data.
pub fn compare(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = load_inputs(ctx)?;
    let s = ctx.settings;
    let seed = s.seed()?;
    let (network, items) = match (&inputs.network, &inputs.items) {
        (Some(n), Some(i)) => (n, i),
        _ => return Err(CliError::Usage("compare needs both --network and --items".into())),
    };
    let config = model_config(s, &inputs, seed)?;
    let rows = holdout_rows(s, network.n_nodes())?;
    let replicates: usize = s.get("replicates", 500)?;
    s.check_unused()?;
    ctx.manifest.stage("load");
    let c = compare_modes(network, items, &config, Some(&rows), replicates, seed)?;
    ctx.manifest.stage("fits");
    let table: Vec<Vec<String>> = c
        .joint_holdout
        .rows
        .iter()
        .zip(&c.network_only_holdout.rows)
        .map(|(j, s)| {
            let f = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), format_value);
            vec![(j.node + 1).to_string(), f(j.score), f(s.score)]
        })
        .collect();
    ctx.table("compare_rows.csv", &["node", "joint", "network_only"], &table)?;
    ctx.json("compare.json", &c)
}
