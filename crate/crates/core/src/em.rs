//! Penalized EM driver, BIC and penalty-grid search.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::data::{LatentBounds, MarginalMode, OrdinalSeriesDataset};
use crate::error::{Error, Result};
use crate::estep::{accumulate_stats, expected_s_gamma, EStepConfig, SufficientStats};
use crate::linalg::Matrix;
use crate::mstep::{
    compute_weights, glasso_theta_warm, q_pen_value, update_gamma_cd, PenaltyConfig, PenaltyKind, WeightMatrices,
    SCAD_A,
};

/// Tolerances and limits for one fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop when `max(|ΔΘ|∞, |ΔΓ|∞)` falls to this value.
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub glasso_tol: f64,
    pub glasso_max_iter: usize,
    pub gamma_tol: f64,
    pub gamma_max_iter: usize,
    pub estep: EStepConfig,
    pub marginals: MarginalMode,
    /// Rescale `Θ` after every M-step so that `Θ⁻¹` has unit diagonal.
    pub rescale_correlation: bool,
    /// SCAD shape used by [`grid_search`].
    pub scad_a: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            em_tol: 1e-3,
            em_max_iter: 50,
            glasso_tol: 1e-5,
            glasso_max_iter: 500,
            gamma_tol: 1e-6,
            gamma_max_iter: 500,
            estep: EStepConfig::default(),
            marginals: MarginalMode::PerTime,
            rescale_correlation: false,
            scad_a: SCAD_A,
        }
    }
}

/// A fitted dynamic chain graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGraphModel {
    /// Intra-slice precision matrix.
    pub theta: Matrix,
    /// Autoregressive matrix; `γⱼₗ ≠ 0` is an edge from `l` at `t − 1` to `j` at `t`.
    pub gamma: Matrix,
    pub penalty: PenaltyConfig,
    pub weights: WeightMatrices,
    pub bic: f64,
    pub bic_terms: BicBreakdown,
    /// Off-diagonal nonzeros of `Θ`, both triangles.
    pub df_theta: usize,
    pub df_gamma: usize,
    /// EM iterations of the final (weighted, for SCAD) stage.
    pub iterations: usize,
    /// EM iterations of the L1 warm start (SCAD only).
    pub warm_start_iterations: usize,
    pub converged: bool,
    /// Penalised Q after every iteration of the final stage.
    pub q_trace: Vec<f64>,
    /// Spectral radius of `Γ`, reported but not constrained.
    pub spectral_radius: f64,
    /// Second moments raised to `m1²` in the final E-step.
    pub clamped_cells: usize,
    pub estep_sweeps: usize,
    pub n: usize,
    pub time_points: usize,
}

/// `BIC = fit_term + complexity_term`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BicBreakdown {
    /// `n(T−1){−log det Θ + tr(E(S_Γ) Θ)}`.
    pub fit_term: f64,
    /// `log(n(T−1)) (df(Θ)/2 + df(Γ) + p)`.
    pub complexity_term: f64,
    pub total: f64,
}

fn off_diagonal_nonzeros(m: &Matrix) -> usize {
    let p = m.rows();
    (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).filter(|&(i, j)| i != j && m[(i, j)] != 0.0).count()
}

fn nonzeros(m: &Matrix) -> usize {
    m.as_slice().iter().filter(|&&x| x != 0.0).count()
}

/// BIC of a fitted model, with `stats` from the E-step at the fitted parameters.
pub fn bic(model: &ChainGraphModel, stats: &SufficientStats, n: usize, t: usize) -> Result<BicBreakdown> {
    bic_terms(&model.theta, &model.gamma, stats, n, t)
}

fn bic_terms(theta: &Matrix, gamma: &Matrix, stats: &SufficientStats, n: usize, t: usize) -> Result<BicBreakdown> {
    let n_eff = (n * (t - 1)) as f64;
    let s = expected_s_gamma(stats, gamma);
    let fit_term = n_eff * (-theta.spd_log_det()? + s.trace_of_product(theta));
    let df = off_diagonal_nonzeros(theta) as f64 / 2.0 + nonzeros(gamma) as f64 + theta.rows() as f64;
    let complexity_term = libm::log(n_eff) * df;
    Ok(BicBreakdown { fit_term, complexity_term, total: fit_term + complexity_term })
}

struct EmRun {
    theta: Matrix,
    gamma: Matrix,
    iterations: usize,
    converged: bool,
    q_trace: Vec<f64>,
}

/// Rescales `Θ` to correlation form, `Θ ← DΘD` and `Γ ← D⁻¹ΓD` with
/// `D = diag(Θ⁻¹)^{1/2}`.
fn rescale_to_correlation(theta: &Matrix, gamma: &Matrix) -> Result<(Matrix, Matrix)> {
    let sigma = theta.spd_inverse()?;
    let d: Vec<f64> = sigma.diag().iter().map(|&v| libm::sqrt(v)).collect();
    let p = theta.rows();
    let theta = Matrix::from_fn(p, p, |i, j| d[i] * theta[(i, j)] * d[j]);
    let gamma = Matrix::from_fn(p, p, |i, j| gamma[(i, j)] * d[j] / d[i]);
    Ok((theta, gamma))
}

fn run_em(
    bounds: &LatentBounds,
    weights: &WeightMatrices,
    init: Option<(&Matrix, &Matrix)>,
    opts: &FitOptions,
) -> Result<EmRun> {
    let p = bounds.p();
    let (mut theta, mut gamma) = match init {
        Some((t, g)) => (t.clone(), g.clone()),
        None => (Matrix::identity(p), Matrix::zeros(p, p)),
    };
    let mut q_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.em_max_iter {
        iterations += 1;
        let stats = accumulate_stats(bounds, &theta, &gamma, &opts.estep)?;
        let s_gamma = expected_s_gamma(&stats, &gamma);
        let glasso = glasso_theta_warm(&s_gamma, &weights.w, opts.glasso_tol, opts.glasso_max_iter, Some(&theta))
            .or_else(|_| glasso_theta_warm(&s_gamma, &weights.w, opts.glasso_tol, opts.glasso_max_iter, None))?;
        let gfit = update_gamma_cd(&stats, &glasso.theta, &weights.nu, &gamma, opts.gamma_tol, opts.gamma_max_iter)?;
        let (new_theta, new_gamma) = if opts.rescale_correlation {
            rescale_to_correlation(&glasso.theta, &gfit.gamma)?
        } else {
            (glasso.theta, gfit.gamma)
        };
        q_trace.push(q_pen_value(&stats, &new_theta, &new_gamma, weights)?);
        let change = new_theta.max_abs_diff(&theta).max(new_gamma.max_abs_diff(&gamma));
        theta = new_theta;
        gamma = new_gamma;
        if change <= opts.em_tol {
            converged = true;
            break;
        }
    }
    Ok(EmRun { theta, gamma, iterations, converged, q_trace })
}

/// Fits a dataset: marginals, latent bounds, then [`fit_bounds`].
pub fn fit(dataset: &OrdinalSeriesDataset, penalty: &PenaltyConfig, opts: &FitOptions) -> Result<ChainGraphModel> {
    let bounds = dataset.latent_bounds(opts.marginals)?;
    fit_bounds(&bounds, penalty, opts)
}

/// Fits from precomputed latent bounds, starting at `Θ = I`, `Γ = 0`.
pub fn fit_bounds(bounds: &LatentBounds, penalty: &PenaltyConfig, opts: &FitOptions) -> Result<ChainGraphModel> {
    fit_from(bounds, penalty, opts, None)
}

/// Fits from an explicit starting point. SCAD runs an L1 fit at the same
/// `(λ, ρ)`, derives LLA weights from it, and refits once with those weights.
pub fn fit_from(
    bounds: &LatentBounds,
    penalty: &PenaltyConfig,
    opts: &FitOptions,
    init: Option<(&Matrix, &Matrix)>,
) -> Result<ChainGraphModel> {
    let p = bounds.p();
    let l1_weights = WeightMatrices::constant(p, penalty.lambda, penalty.rho);
    let (run, weights, warm_iters) = match penalty.kind {
        PenaltyKind::L1 => (run_em(bounds, &l1_weights, init, opts)?, l1_weights, 0),
        PenaltyKind::Scad => {
            let warm = run_em(bounds, &l1_weights, init, opts)?;
            let weights = compute_weights(&warm.theta, &warm.gamma, penalty);
            let run = run_em(bounds, &weights, Some((&warm.theta, &warm.gamma)), opts)?;
            (run, weights, warm.iterations)
        }
    };
    let stats = accumulate_stats(bounds, &run.theta, &run.gamma, &opts.estep)?;
    let terms = bic_terms(&run.theta, &run.gamma, &stats, bounds.n(), bounds.time_points())?;
    Ok(ChainGraphModel {
        df_theta: off_diagonal_nonzeros(&run.theta),
        df_gamma: nonzeros(&run.gamma),
        spectral_radius: run.gamma.spectral_radius(),
        theta: run.theta,
        gamma: run.gamma,
        penalty: *penalty,
        weights,
        bic: terms.total,
        bic_terms: terms,
        iterations: run.iterations,
        warm_start_iterations: warm_iters,
        converged: run.converged,
        q_trace: run.q_trace,
        clamped_cells: stats.clamped,
        estep_sweeps: opts.estep.sweeps,
        n: bounds.n(),
        time_points: bounds.time_points(),
    })
}

/// One point of the BIC surface.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub lambda: f64,
    pub rho: f64,
    pub bic: Option<f64>,
    pub df_theta: usize,
    pub df_gamma: usize,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    /// Row-major over `(λ index, ρ index)` in the order the grids were given.
    pub grid: Vec<GridCell>,
    pub best: ChainGraphModel,
    pub best_index: usize,
}

/// `count` log-spaced values from `0.01·max` to `max`.
pub fn log_grid(max: f64, count: usize) -> Vec<f64> {
    let max = if max > 0.0 { max } else { 1.0 };
    if count <= 1 {
        return alloc::vec![max];
    }
    let (lo, hi) = (libm::log(0.01 * max), libm::log(max));
    (0..count).map(|k| libm::exp(lo + (hi - lo) * k as f64 / (count - 1) as f64)).collect()
}

/// Default `(λ, ρ)` grids scaled by the largest off-diagonal of `E(S_Γ)`
/// and the largest entry of `S_pc / n_eff` at `Θ = I`, `Γ = 0`.
pub fn default_grid(bounds: &LatentBounds, opts: &FitOptions, count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = bounds.p();
    let stats = accumulate_stats(bounds, &Matrix::identity(p), &Matrix::zeros(p, p), &opts.estep)?;
    let s = expected_s_gamma(&stats, &Matrix::zeros(p, p));
    let lambda_max = s.max_abs_off_diagonal();
    let rho_max = 2.0 * stats.s_pc.max_abs() / stats.n_eff;
    Ok((log_grid(lambda_max, count), log_grid(rho_max, count)))
}

/// Fits every `(λ, ρ)` pair and keeps the BIC minimiser. Within each `ρ`
/// the `λ` path runs from the largest value down, warm-starting each fit
/// from the previous one. Ties go to the larger `(λ, ρ)`.
pub fn grid_search(
    bounds: &LatentBounds,
    kind: PenaltyKind,
    lambdas: &[f64],
    rhos: &[f64],
    opts: &FitOptions,
) -> Result<GridResult> {
    if lambdas.is_empty() || rhos.is_empty() {
        return Err(Error::InvalidParameter("penalty grids must be non-empty".to_string()));
    }
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));

    let column = |ri: usize| -> Vec<(usize, Result<ChainGraphModel>)> {
        let rho = rhos[ri];
        let mut prev: Option<(Matrix, Matrix)> = None;
        let mut out = Vec::with_capacity(lambdas.len());
        for &li in &order {
            let res = PenaltyConfig::with_shape(kind, lambdas[li], rho, opts.scad_a)
                .and_then(|pen| fit_from(bounds, &pen, opts, prev.as_ref().map(|(t, g)| (t, g))));
            if let Ok(m) = &res {
                prev = Some((m.theta.clone(), m.gamma.clone()));
            }
            out.push((li * rhos.len() + ri, res));
        }
        out
    };

    #[cfg(feature = "rayon")]
    let columns: Vec<Vec<(usize, Result<ChainGraphModel>)>> = {
        use rayon::prelude::*;
        (0..rhos.len()).into_par_iter().map(column).collect()
    };
    #[cfg(not(feature = "rayon"))]
    let columns: Vec<Vec<(usize, Result<ChainGraphModel>)>> = (0..rhos.len()).map(column).collect();

    let mut slots: Vec<Option<Result<ChainGraphModel>>> = (0..lambdas.len() * rhos.len()).map(|_| None).collect();
    for (idx, res) in columns.into_iter().flatten() {
        slots[idx] = Some(res);
    }

    let mut grid = Vec::with_capacity(slots.len());
    let mut best: Option<(usize, ChainGraphModel)> = None;
    for (idx, slot) in slots.into_iter().enumerate() {
        let (li, ri) = (idx / rhos.len(), idx % rhos.len());
        let (lambda, rho) = (lambdas[li], rhos[ri]);
        match slot.expect("every grid cell is fitted") {
            Ok(model) => {
                grid.push(GridCell {
                    lambda,
                    rho,
                    bic: Some(model.bic),
                    df_theta: model.df_theta,
                    df_gamma: model.df_gamma,
                    iterations: model.iterations,
                    converged: model.converged,
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((_, b)) => {
                        let tol = 1e-9 * b.bic.abs().max(1.0);
                        model.bic < b.bic - tol
                            || ((model.bic - b.bic).abs() <= tol && (lambda, rho) > (b.penalty.lambda, b.penalty.rho))
                    }
                };
                if better {
                    best = Some((idx, model));
                }
            }
            Err(e) => grid.push(GridCell {
                lambda,
                rho,
                bic: None,
                df_theta: 0,
                df_gamma: 0,
                iterations: 0,
                converged: false,
                error: Some(e.to_string()),
            }),
        }
    }
    let (best_index, best) = best.ok_or_else(|| Error::InvalidParameter("every grid fit failed".to_string()))?;
    Ok(GridResult { grid, best, best_index })
}
