//! Command-line interface: `simulate`, `fit`, `eval` and `study`.

use std::fs;
use std::path::{Path, PathBuf};

use chaingraph_core::em::{default_grid, fit_from, grid_search, FitOptions, GridResult};
use chaingraph_core::sim::{
    run_study, simulate_panel, GraphStructure, GroundTruth, QuantileScheme, ScoreMode, StudyConfig,
};
use chaingraph_core::{score_support, EStepConfig, MarginalMode, MomentMode, PenaltyConfig, PenaltyKind, SecondMoment};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{
    self, EvalConfig, FitConfig, MomentModeArg, PenaltyArg, SecondMomentArg, SimulateConfig, StructureArg,
    StudyConfigFile,
};
use crate::error::{exit, AppError, Result};
use crate::io::{self, Schema};
use crate::manifest::Manifest;
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "chaingraph", version, about = "Sparse dynamic chain graphs for ordinal and mixed time series")]
pub struct Cli {
    /// TOML file with `[simulate]`, `[fit]`, `[eval]` or `[study]` tables; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a ground truth and an ordinal panel from it.
    Simulate(SimulateArgs),
    /// Fit a chain-graph model to a long-format panel.
    Fit(FitArgs),
    /// Score estimated matrices against the truth.
    Eval(EvalArgs),
    /// Run a replicated simulation study.
    Study(StudyArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn at_least_two(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(v),
        Ok(_) => Err("must be at least 2".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        Ok(_) => Err("must be at least 1".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Number of variables.
    #[arg(long, value_parser = at_least_two)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// Number of independent trajectories.
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Time points per trajectory.
    #[arg(long = "T", value_parser = at_least_two)]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    /// Ordinal categories per variable.
    #[arg(long, value_parser = at_least_two)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureArg>,
    /// Bandwidth of the band structure.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<usize>,
    /// Fraction of nonzero diagonal entries of Γ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_diag_fraction: Option<f64>,
    /// Equiprobable categories instead of randomised quantile ranges.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub fixed_quantiles: bool,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Long-format panel (sample_id, time_index, variable_id, value).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// TOML file with column roles and variable kinds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyArg>,
    /// Fixed penalty on the off-diagonal of Θ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Fixed penalty on Γ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// λ grid as start:end:count (log-spaced).
    #[arg(long, conflicts_with = "lambda")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_lambda: Option<String>,
    /// ρ grid as start:end:count (log-spaced).
    #[arg(long, conflicts_with = "rho")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_rho: Option<String>,
    /// Points per axis of the default grid.
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    /// SCAD shape parameter.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scad_a: Option<f64>,
    /// Estimate one marginal per variable, pooled over time.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub pool_marginals: bool,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_mode: Option<MomentModeArg>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_moment: Option<SecondMomentArg>,
    /// E-step refinement sweeps.
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em_tol: Option<f64>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em_max_iter: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub glasso_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_tol: Option<f64>,
    /// Rescale Θ to correlation form after every M-step.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub rescale_correlation: bool,
    /// Report partial correlations in the undirected edge list.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub partial_correlation: bool,
    /// Exit with status 0 even if a fit did not converge.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub allow_nonconverged: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_est: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_est: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_true: Option<PathBuf>,
    /// Metrics file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct StudyArgs {
    #[arg(long, value_parser = at_least_two)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long = "T", value_parser = at_least_two)]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, value_parser = at_least_two)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_diag_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub fixed_quantiles: bool,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub pool_marginals: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let file = cli.config.as_deref().map(io::read_text).transpose()?;
    let file = file.as_deref();
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&config::resolve(file, "simulate", &args)?),
        Command::Fit(args) => cmd_fit(&config::resolve(file, "fit", &args)?),
        Command::Eval(args) => cmd_eval(&config::resolve(file, "eval", &args)?),
        Command::Study(args) => cmd_study(&config::resolve(file, "study", &args)?),
    }
}

fn init_workers(workers: usize) {
    if workers > 0 {
        // a second call in the same process keeps the first pool, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| AppError::Io { path: dir.to_path_buf(), source })
}

fn log_config(command: &str, rendered: &str) {
    log::info!("{command}: resolved configuration\n{rendered}");
}

fn structure(arg: StructureArg, bandwidth: usize) -> GraphStructure {
    match arg {
        StructureArg::Random => GraphStructure::Random,
        StructureArg::Band => GraphStructure::Band { bandwidth },
        StructureArg::Cluster => GraphStructure::Cluster,
    }
}

fn scheme(fixed: bool) -> QuantileScheme {
    if fixed {
        QuantileScheme::Fixed
    } else {
        QuantileScheme::Randomized
    }
}

fn penalty_kind(arg: PenaltyArg) -> PenaltyKind {
    match arg {
        PenaltyArg::L1 => PenaltyKind::L1,
        PenaltyArg::Scad => PenaltyKind::Scad,
    }
}

fn marginal_mode(pool: bool) -> MarginalMode {
    if pool {
        MarginalMode::Pooled
    } else {
        MarginalMode::PerTime
    }
}

pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<i32> {
    let rendered = config::render(cfg)?;
    log_config("simulate", &rendered);
    if cfg.categories < 2 {
        return Err(AppError::Config("categories must be at least 2".into()));
    }
    init_workers(cfg.workers);
    let truth =
        GroundTruth::generate(cfg.p, structure(cfg.structure, cfg.bandwidth), cfg.gamma_diag_fraction, cfg.seed)?;
    let panel = simulate_panel(
        &truth,
        cfg.n,
        cfg.t,
        cfg.categories,
        scheme(cfg.fixed_quantiles),
        chaingraph_core::sim::panel_seed(cfg.seed),
    )?;
    ensure_dir(&cfg.out)?;
    let names = panel.dataset.names().to_vec();
    let mut manifest = Manifest::new("simulate", cfg.seed, &rendered);
    let data = cfg.out.join("data.csv");
    io::write_dataset(&data, &panel.dataset)?;
    manifest.add_output(&data)?;
    let theta = cfg.out.join("theta_true.csv");
    io::write_matrix(&theta, &truth.theta_true, &names)?;
    manifest.add_output(&theta)?;
    let gamma = cfg.out.join("gamma_true.csv");
    io::write_matrix(&gamma, &truth.gamma_true, &names)?;
    manifest.add_output(&gamma)?;
    manifest.write(&cfg.out.join("manifest.toml"))?;
    Ok(exit::OK)
}

/// Fit options from a resolved `fit` configuration.
pub fn fit_options(cfg: &FitConfig) -> FitOptions {
    FitOptions {
        em_tol: cfg.em_tol,
        em_max_iter: cfg.em_max_iter,
        glasso_tol: cfg.glasso_tol,
        gamma_tol: cfg.gamma_tol,
        estep: EStepConfig {
            sweeps: cfg.sweeps,
            mode: match cfg.moment_mode {
                MomentModeArg::Inter => MomentMode::Inter,
                MomentModeArg::Intra => MomentMode::Intra,
            },
            second_moment: match cfg.second_moment {
                SecondMomentArg::PlugIn => SecondMoment::PlugIn,
                SecondMomentArg::NeighbourVariance => SecondMoment::NeighbourVariance,
            },
        },
        marginals: marginal_mode(cfg.pool_marginals),
        rescale_correlation: cfg.rescale_correlation,
        scad_a: cfg.scad_a,
        ..FitOptions::default()
    }
}

pub fn cmd_fit(cfg: &FitConfig) -> Result<i32> {
    let rendered = config::render(cfg)?;
    log_config("fit", &rendered);
    init_workers(cfg.workers);
    if cfg.lambda.is_some() != cfg.rho.is_some() && cfg.grid_lambda.is_none() && cfg.grid_rho.is_none() {
        log::info!("only one of lambda/rho fixed; the other axis uses the default grid");
    }
    let schema = match &cfg.schema {
        Some(path) => toml::from_str::<Schema>(&io::read_text(path)?)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?,
        None => Schema::default(),
    };
    let dataset = io::load_dataset(&cfg.data, &schema)?;
    let opts = fit_options(cfg);
    let bounds = dataset.latent_bounds(opts.marginals)?;

    let axis = |fixed: Option<f64>, grid: &Option<String>| -> Result<Option<Vec<f64>>> {
        match (fixed, grid) {
            (Some(v), _) => Ok(Some(vec![v])),
            (None, Some(spec)) => config::parse_grid(spec).map(Some),
            (None, None) => Ok(None),
        }
    };
    let (mut lambdas, mut rhos) = (axis(cfg.lambda, &cfg.grid_lambda)?, axis(cfg.rho, &cfg.grid_rho)?);
    if lambdas.is_none() || rhos.is_none() {
        let (dl, dr) = default_grid(&bounds, &opts, cfg.grid_size)?;
        lambdas.get_or_insert(dl);
        rhos.get_or_insert(dr);
    }
    let (lambdas, rhos) = (lambdas.unwrap_or_default(), rhos.unwrap_or_default());
    let kind = penalty_kind(cfg.penalty);
    let grid_mode = lambdas.len() * rhos.len() > 1;

    let (model, grid): (_, Option<GridResult>) = if grid_mode {
        let res = grid_search(&bounds, kind, &lambdas, &rhos, &opts)?;
        (res.best.clone(), Some(res))
    } else {
        let pen = PenaltyConfig::with_shape(kind, lambdas[0], rhos[0], cfg.scad_a)?;
        (fit_from(&bounds, &pen, &opts, None)?, None)
    };

    ensure_dir(&cfg.out)?;
    let names = dataset.names().to_vec();
    let mut manifest = Manifest::new("fit", cfg.seed, &rendered);
    manifest.add_input(&cfg.data)?;
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = cfg.out.join(name);
        f(&path)?;
        manifest.add_output(&path)
    };
    emit("theta.csv", &|p| io::write_matrix(p, &model.theta, &names))?;
    emit("gamma.csv", &|p| io::write_matrix(p, &model.gamma, &names))?;
    emit("edges_undirected.csv", &|p| io::write_undirected_edges(p, &model.theta, &names, cfg.partial_correlation))?;
    emit("edges_directed.csv", &|p| io::write_directed_edges(p, &model.gamma, &names))?;
    emit("fit_report.txt", &|p| io::write_text(p, &report::fit_report(&dataset, &model, &opts, grid.as_ref())))?;
    if let Some(g) = &grid {
        emit("bic_surface.csv", &|p| report::write_bic_surface(p, g))?;
    }
    manifest.write(&cfg.out.join("manifest.toml"))?;

    let all_converged = match &grid {
        Some(g) => g.grid.iter().all(|c| c.converged && c.error.is_none()),
        None => model.converged,
    };
    if all_converged || cfg.allow_nonconverged {
        Ok(exit::OK)
    } else {
        log::warn!("at least one fit reached the iteration limit without converging");
        Ok(exit::NOT_CONVERGED)
    }
}

pub fn cmd_eval(cfg: &EvalConfig) -> Result<i32> {
    let rendered = config::render(cfg)?;
    log_config("eval", &rendered);
    let (theta_est, _) = io::read_matrix(&cfg.theta_est)?;
    let (theta_true, _) = io::read_matrix(&cfg.theta_true)?;
    let (gamma_est, _) = io::read_matrix(&cfg.gamma_est)?;
    let (gamma_true, _) = io::read_matrix(&cfg.gamma_true)?;
    let theta = score_support(&theta_est, &theta_true, ScoreMode::OffDiagonalSymmetric)?;
    let gamma = score_support(&gamma_est, &gamma_true, ScoreMode::Full)?;
    if let Some(dir) = cfg.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    report::write_metrics(&cfg.out, &theta, &gamma)?;
    Ok(exit::OK)
}

pub fn cmd_study(cfg: &StudyConfigFile) -> Result<i32> {
    let rendered = config::render(cfg)?;
    log_config("study", &rendered);
    init_workers(cfg.workers);
    let mut sc = StudyConfig::new(cfg.p, cfg.n, cfg.t, cfg.reps, penalty_kind(cfg.penalty), cfg.seed);
    sc.categories = cfg.categories;
    sc.structure = structure(cfg.structure, cfg.bandwidth);
    sc.quantiles = scheme(cfg.fixed_quantiles);
    sc.gamma_diag_fraction = cfg.gamma_diag_fraction;
    sc.grid_size = cfg.grid_size;
    sc.fit.marginals = marginal_mode(cfg.pool_marginals);
    let rep = run_study(&sc)?;
    ensure_dir(&cfg.out)?;
    let mut manifest = Manifest::new("study", cfg.seed, &rendered);
    let table = cfg.out.join("study.csv");
    report::write_study_table(&table, &rep)?;
    manifest.add_output(&table)?;
    let summary = cfg.out.join("study_summary.txt");
    io::write_text(&summary, &report::study_summary(&rep, &sc))?;
    manifest.add_output(&summary)?;
    manifest.write(&cfg.out.join("manifest.toml"))?;
    Ok(exit::OK)
}
