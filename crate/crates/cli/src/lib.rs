//! Command-line front end: argument parsing, configuration resolution and
//! run manifests around the `jnirm` library.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod error;
pub mod manifest;
pub mod settings;

pub use error::CliError;
use manifest::RunManifest;
use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "jnirm", version, about = "Joint network and item response modelling")]
pub struct Cli {
    /// Worker threads for chains, replications and cross-validation
    /// (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Network CSV (adjacency matrix or edge list).
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Item response CSV (persons × items).
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// binary | continuous
    #[arg(long)]
    pub network_kind: Option<String>,
    /// binary | continuous
    #[arg(long)]
    pub item_kind: Option<String>,
    /// auto | adjacency | edgelist
    #[arg(long)]
    pub network_format: Option<String>,
    /// Node count for edge lists.
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ChainArgs {
    /// joint | network-only | item-only
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub delta_prior_precision: Option<f64>,
    #[arg(long)]
    pub gamma_shape: Option<f64>,
    #[arg(long)]
    pub gamma_rate: Option<f64>,
    #[arg(long)]
    pub rho_sd: Option<f64>,
    #[arg(long)]
    pub adapt_rho: Option<bool>,
    #[arg(long)]
    pub wishart_df: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Store every retained draw (needed by `ppc`).
    #[arg(long)]
    pub keep_draws: bool,
    /// Item subscales for target rotation: sizes ("5,7,4") or one 1-based
    /// label per item.
    #[arg(long)]
    pub groups: Option<String>,
    /// oblique | orthogonal
    #[arg(long)]
    pub rotation: Option<String>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of a finished fit.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub network_factors: Option<PathBuf>,
    #[arg(long)]
    pub item_factors: Option<PathBuf>,
    /// bartlett | rao
    #[arg(long)]
    pub pvalue: Option<String>,
}

#[derive(Debug, Args)]
pub struct CcaArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub pvalue: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelectDimArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Number of evenly spaced nodes to hold out (default: all).
    #[arg(long)]
    pub holdout_rows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Generative parameter file.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Built-in parameters when no file is given (school-like).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PpcArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long)]
    pub holdout_rows: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RecoveryArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated intercepts.
    #[arg(long, allow_hyphen_values = true)]
    pub intercepts: Option<String>,
    /// Comma-separated latent variances.
    #[arg(long)]
    pub variances: Option<String>,
}

#[derive(Debug, Args)]
pub struct SparsityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated node counts.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub intercepts: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Study {
    /// Simulate-and-refit parameter recovery.
    Recovery(RecoveryArgs),
    /// Network density by intercept and latent variance.
    DensityTable(DensityArgs),
    /// Intercept and latent variance bias in sparse networks.
    SparsityBias(SparsityArgs),
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model by Gibbs sampling.
    Fit(FitArgs),
    /// Test independence of identified network and item factors.
    Test(TestArgs),
    /// Canonical correlation analysis of two CSV blocks.
    Cca(CcaArgs),
    /// Scree and holdout scores across network ranks.
    SelectDim(SelectDimArgs),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Posterior predictive checks for a fit run with --keep-draws.
    Ppc(PpcArgs),
    /// Simulation studies.
    #[command(subcommand)]
    Study(Study),
    /// Joint versus separate fits of the same data.
    Compare(CompareArgs),
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn add_data(s: &mut Settings, d: &DataArgs) {
    s.flag("network", path_str(&d.network));
    s.flag("items", path_str(&d.items));
    s.flag("network-kind", d.network_kind.clone());
    s.flag("item-kind", d.item_kind.clone());
    s.flag("network-format", d.network_format.clone());
    s.flag("nodes", d.nodes);
}

fn add_chain(s: &mut Settings, c: &ChainArgs) {
    s.flag("mode", c.mode.clone());
    s.flag("k", c.k);
    s.flag("d", c.d);
    s.flag("iters", c.iters);
    s.flag("burn", c.burn);
    s.flag("thin", c.thin);
    s.flag("delta-prior-precision", c.delta_prior_precision);
    s.flag("gamma-shape", c.gamma_shape);
    s.flag("gamma-rate", c.gamma_rate);
    s.flag("rho-sd", c.rho_sd);
    s.flag("adapt-rho", c.adapt_rho);
    s.flag("wishart-df", c.wishart_df);
}

type Runner = fn(&mut commands::Context) -> Result<(), CliError>;

fn prepare(cmd: &Command) -> Result<(&Common, Settings, &'static str, Runner), CliError> {
    let common = match cmd {
        Command::Fit(a) => &a.common,
        Command::Test(a) => &a.common,
        Command::Cca(a) => &a.common,
        Command::SelectDim(a) => &a.common,
        Command::Simulate(a) => &a.common,
        Command::Ppc(a) => &a.common,
        Command::Compare(a) => &a.common,
        Command::Study(Study::Recovery(a)) => &a.common,
        Command::Study(Study::DensityTable(a)) => &a.common,
        Command::Study(Study::SparsityBias(a)) => &a.common,
    };
    let mut s = Settings::new(common.config.as_deref())?;
    s.flag("seed", common.seed);
    let (name, run): (&'static str, Runner) = match cmd {
        Command::Fit(a) => {
            add_data(&mut s, &a.data);
            add_chain(&mut s, &a.chain);
            s.flag("chains", a.chains);
            s.switch("keep-draws", a.keep_draws);
            s.flag("groups", a.groups.clone());
            s.flag("rotation", a.rotation.clone());
            ("fit", commands::fit)
        }
        Command::Test(a) => {
            s.flag("run", path_str(&a.run));
            s.flag("network-factors", path_str(&a.network_factors));
            s.flag("item-factors", path_str(&a.item_factors));
            s.flag("pvalue", a.pvalue.clone());
            ("test", commands::test)
        }
        Command::Cca(a) => {
            s.flag("x", path_str(&a.x));
            s.flag("y", path_str(&a.y));
            s.flag("pvalue", a.pvalue.clone());
            ("cca", commands::cca_cmd)
        }
        Command::SelectDim(a) => {
            add_data(&mut s, &a.data);
            add_chain(&mut s, &a.chain);
            s.flag("k-min", a.k_min);
            s.flag("k-max", a.k_max);
            s.flag("holdout-rows", a.holdout_rows);
            ("select-dim", commands::select_dim)
        }
        Command::Simulate(a) => {
            s.flag("params", path_str(&a.params));
            s.flag("preset", a.preset.clone());
            s.flag("n", a.n);
            ("simulate", commands::simulate)
        }
        Command::Ppc(a) => {
            s.flag("run", path_str(&a.run));
            s.flag("replicates", a.replicates);
            ("ppc", commands::ppc)
        }
        Command::Compare(a) => {
            add_data(&mut s, &a.data);
            add_chain(&mut s, &a.chain);
            s.flag("holdout-rows", a.holdout_rows);
            s.flag("replicates", a.replicates);
            ("compare", commands::compare)
        }
        Command::Study(Study::Recovery(a)) => {
            s.flag("params", path_str(&a.params));
            s.flag("preset", a.preset.clone());
            s.flag("n", a.n);
            s.flag("reps", a.reps);
            s.flag("iters", a.iters);
            s.flag("burn", a.burn);
            s.flag("thin", a.thin);
            ("study recovery", commands::study_recovery)
        }
        Command::Study(Study::DensityTable(a)) => {
            s.flag("n", a.n);
            s.flag("k", a.k);
            s.flag("intercepts", a.intercepts.clone());
            s.flag("variances", a.variances.clone());
            ("study density-table", commands::study_density)
        }
        Command::Study(Study::SparsityBias(a)) => {
            s.flag("n", a.n.clone());
            s.flag("k", a.k);
            s.flag("intercepts", a.intercepts.clone());
            s.flag("reps", a.reps);
            s.flag("iters", a.iters);
            s.flag("burn", a.burn);
            s.flag("thin", a.thin);
            ("study sparsity-bias", commands::study_sparsity)
        }
    };
    Ok((common, s, name, run))
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let (common, settings, name, run) = prepare(&cli.command)?;
    std::fs::create_dir_all(&common.out).map_err(|e| error::io_error(&common.out, e))?;
    let mut ctx = commands::Context {
        settings: &settings,
        out: &common.out,
        manifest: RunManifest::new(name),
    };
    if let Some(c) = &common.config {
        ctx.manifest.add_input("config", c)?;
    }
    let result = run(&mut ctx);
    ctx.manifest.config = settings.resolved();
    if let Some(t) = cli.threads {
        ctx.manifest.config.insert("threads".into(), t.to_string());
    }
    result?;
    ctx.manifest.write(&common.out)
}

/// Parses `args` (including the program name) and runs; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jnirm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
