//! Two-stage M-step: weighted graphical lasso for `Θ` given `Γ`, then cyclic
//! coordinate descent for `Γ` given `Θ`.
//!
//! Both stages maximise the per-observation objective
//!
//! ```text
//! log det Θ − tr(E(S_Γ) Θ) − Σ_{j≠j′} w_{jj′}|θ_{jj′}| − Σ_{j,l} ν_{jl}|γ_{jl}|
//! ```
//!
//! with fixed weights; L1 uses constant weights, SCAD uses one-step LLA
//! weights taken from an L1 warm start.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estep::{expected_s_gamma, SufficientStats};
use crate::linalg::Matrix;

/// Default SCAD shape parameter.
pub const SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyKind {
    L1,
    #[default]
    Scad,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    /// Penalty on the off-diagonal of `Θ`.
    pub lambda: f64,
    /// Penalty on `Γ`.
    pub rho: f64,
    /// SCAD shape, `a > 2`.
    pub a: f64,
}

impl PenaltyConfig {
    pub fn new(kind: PenaltyKind, lambda: f64, rho: f64) -> Result<Self> {
        Self::with_shape(kind, lambda, rho, SCAD_A)
    }

    pub fn with_shape(kind: PenaltyKind, lambda: f64, rho: f64, a: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) || !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "penalties must be finite and >= 0 (lambda={lambda}, rho={rho})"
            )));
        }
        if !(a > 2.0) {
            return Err(Error::InvalidParameter(format!("SCAD shape must exceed 2 (a={a})")));
        }
        Ok(Self { kind, lambda, rho, a })
    }

    pub fn l1(lambda: f64, rho: f64) -> Result<Self> {
        Self::new(PenaltyKind::L1, lambda, rho)
    }

    pub fn scad(lambda: f64, rho: f64) -> Result<Self> {
        Self::new(PenaltyKind::Scad, lambda, rho)
    }
}

/// Element-wise penalty weights for `Θ` (`w`, zero diagonal) and `Γ` (`nu`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrices {
    pub w: Matrix,
    pub nu: Matrix,
}

impl WeightMatrices {
    pub fn constant(p: usize, lambda: f64, rho: f64) -> Self {
        let w = Matrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { lambda });
        let nu = Matrix::from_fn(p, p, |_, _| rho);
        Self { w, nu }
    }
}

/// SCAD derivative `P′_{λ,a}(x) = λ{ I(x ≤ λ) + (aλ − x)₊ / ((a − 1)λ) I(x > λ) }`.
pub fn scad_derivative(x: f64, lam: f64, a: f64) -> f64 {
    if lam <= 0.0 {
        return 0.0;
    }
    let x = x.abs();
    if x <= lam {
        lam
    } else {
        (a * lam - x).max(0.0) / (a - 1.0)
    }
}

/// Penalty weights at the current estimates.
pub fn compute_weights(theta_k: &Matrix, gamma_k: &Matrix, cfg: &PenaltyConfig) -> WeightMatrices {
    let p = theta_k.rows();
    match cfg.kind {
        PenaltyKind::L1 => WeightMatrices::constant(p, cfg.lambda, cfg.rho),
        PenaltyKind::Scad => {
            WeightMatrices {
                w: Matrix::from_fn(p, p, |i, j| {
                    if i == j {
                        0.0
                    } else {
                        scad_derivative(theta_k[(i, j)], cfg.lambda, cfg.a)
                    }
                }),
                nu: Matrix::from_fn(p, p, |i, j| scad_derivative(gamma_k[(i, j)], cfg.rho, cfg.a)),
            }
        }
    }
}

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Output of the graphical lasso.
#[derive(Debug, Clone, PartialEq)]
pub struct GlassoFit {
    pub theta: Matrix,
    /// Working covariance `W ≈ Θ⁻¹`.
    pub sigma: Matrix,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted graphical lasso with an unpenalised diagonal, cold start.
pub fn glasso_theta(s: &Matrix, w: &Matrix, tol: f64, max_iter: usize) -> Result<GlassoFit> {
    glasso_theta_warm(s, w, tol, max_iter, None)
}

/// Block coordinate descent over columns (Friedman, Hastie & Tibshirani),
/// optionally warm-started from a previous precision estimate.
pub fn glasso_theta_warm(
    s: &Matrix,
    w: &Matrix,
    tol: f64,
    max_iter: usize,
    warm: Option<&Matrix>,
) -> Result<GlassoFit> {
    let p = s.rows();
    if !s.is_square() || w.rows() != p || w.cols() != p {
        return Err(Error::DimensionMismatch { expected: p, found: w.rows() });
    }
    if let Some(j) = (0..p).find(|&j| !(s[(j, j)] > 0.0)) {
        return Err(Error::NonPositiveDiagonal(j));
    }
    if p == 1 {
        let theta = Matrix::from_row_major(1, 1, vec![1.0 / s[(0, 0)]]);
        return Ok(GlassoFit { theta, sigma: s.clone(), iterations: 0, converged: true });
    }

    // beta[j] holds the lasso coefficients of column j (entry j unused)
    let (mut big_w, mut beta) = match warm.map(|t| (t, t.spd_inverse())) {
        Some((t, Ok(inv))) if t.rows() == p => {
            let mut big_w = inv;
            for j in 0..p {
                big_w[(j, j)] = s[(j, j)];
            }
            let beta = (0..p)
                .map(|j| (0..p).map(|k| if k == j { 0.0 } else { -t[(k, j)] / t[(j, j)] }).collect())
                .collect::<Vec<Vec<f64>>>();
            (big_w, beta)
        }
        _ => (s.clone(), vec![vec![0.0; p]; p]),
    };

    let inner_tol = (tol * 1e-3).max(1e-13);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            lasso_column(&big_w, s, w, j, &mut beta[j], inner_tol);
            for k in 0..p {
                if k == j {
                    continue;
                }
                let new: f64 = (0..p).filter(|&m| m != j).map(|m| big_w[(k, m)] * beta[j][m]).sum();
                max_change = max_change.max((new - big_w[(k, j)]).abs());
                big_w[(k, j)] = new;
                big_w[(j, k)] = new;
            }
        }
        if max_change <= tol {
            converged = true;
            break;
        }
    }

    let mut theta = Matrix::zeros(p, p);
    for j in 0..p {
        let quad: f64 = (0..p).filter(|&k| k != j).map(|k| big_w[(k, j)] * beta[j][k]).sum();
        let tjj = 1.0 / (big_w[(j, j)] - quad);
        theta[(j, j)] = tjj;
        for k in 0..p {
            if k != j {
                theta[(k, j)] = -beta[j][k] * tjj;
            }
        }
    }
    // exact zeros win; otherwise average the two column estimates
    for j in 0..p {
        for k in j + 1..p {
            let (a, b) = (theta[(j, k)], theta[(k, j)]);
            let v = if a == 0.0 || b == 0.0 { 0.0 } else { 0.5 * (a + b) };
            theta[(j, k)] = v;
            theta[(k, j)] = v;
        }
    }
    if !theta.is_finite() || theta.cholesky().is_err() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(GlassoFit { theta, sigma: big_w, iterations, converged })
}

/// `min_β ½βᵀVβ − βᵀu + Σₖ wₖ|βₖ|` with `V = W₋ⱼ,₋ⱼ`, `u = S₋ⱼ,ⱼ`.
fn lasso_column(big_w: &Matrix, s: &Matrix, w: &Matrix, j: usize, beta: &mut [f64], tol: f64) {
    let p = s.rows();
    for _ in 0..10_000 {
        let mut max_delta: f64 = 0.0;
        for k in 0..p {
            if k == j {
                continue;
            }
            let mut r = s[(k, j)];
            for m in 0..p {
                if m != j && m != k {
                    r -= big_w[(k, m)] * beta[m];
                }
            }
            let new = soft_threshold(r, w[(k, j)]) / big_w[(k, k)];
            max_delta = max_delta.max((new - beta[k]).abs());
            beta[k] = new;
        }
        if max_delta <= tol {
            break;
        }
    }
}

/// Largest violation of the glasso optimality conditions, measured with
/// an independent inverse of `Θ`.
pub fn glasso_kkt_residual(theta: &Matrix, s: &Matrix, w: &Matrix) -> Result<f64> {
    let inv = theta.spd_inverse()?;
    let p = theta.rows();
    let mut worst: f64 = 0.0;
    for j in 0..p {
        for k in 0..p {
            let g = inv[(j, k)] - s[(j, k)];
            let r = if j == k {
                g.abs()
            } else if theta[(j, k)] == 0.0 {
                (g.abs() - w[(j, k)]).max(0.0)
            } else {
                (g - w[(j, k)] * theta[(j, k)].signum()).abs()
            };
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaFit {
    pub gamma: Matrix,
    pub sweeps: usize,
    pub converged: bool,
    /// Penalised objective after every sweep (to be maximised).
    pub objective_trace: Vec<f64>,
}

/// Gradient of `tr(E(S_Γ) Θ)` with respect to `Γ`: `2 Θ (Γ S_pp − S_cp) / n_eff`.
pub fn gamma_gradient(stats: &SufficientStats, theta: &Matrix, gamma: &Matrix) -> Matrix {
    let s_cp = stats.s_pc.transpose();
    let inner = gamma.matmul(&stats.s_pp).sub(&s_cp);
    theta.matmul(&inner).scaled(2.0 / stats.n_eff)
}

/// Largest violation of the `Γ` subgradient conditions.
pub fn gamma_kkt_residual(stats: &SufficientStats, theta: &Matrix, gamma: &Matrix, nu: &Matrix) -> f64 {
    let g = gamma_gradient(stats, theta, gamma);
    let p = gamma.rows();
    let mut worst: f64 = 0.0;
    for j in 0..p {
        for l in 0..p {
            let r = if gamma[(j, l)] == 0.0 {
                (g[(j, l)].abs() - nu[(j, l)]).max(0.0)
            } else {
                (g[(j, l)] + nu[(j, l)] * gamma[(j, l)].signum()).abs()
            };
            worst = worst.max(r);
        }
    }
    worst
}

/// Cyclic coordinate descent for `Γ` at fixed `Θ`; each coordinate takes the
/// closed-form soft-threshold step
/// `γⱼₗ = sgn(g)(|g| − νⱼₗ)₊ / (2 θⱼⱼ (S_pp)ₗₗ)`.
pub fn update_gamma_cd(
    stats: &SufficientStats,
    theta: &Matrix,
    nu: &Matrix,
    gamma_init: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<GammaFit> {
    let p = theta.rows();
    let n_eff = stats.n_eff;
    let spp = stats.s_pp.scaled(1.0 / n_eff);
    // A = Θ S_cp / n_eff, with S_cp = S_pcᵀ
    let a = theta.matmul(&stats.s_pc.transpose()).scaled(1.0 / n_eff);
    let mut gamma = gamma_init.clone();
    let mut m = gamma.matmul(&spp);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    for j in 0..p {
        if !(theta[(j, j)] > 0.0) {
            return Err(Error::ZeroDenominator { row: j, col: j });
        }
        if !(spp[(j, j)] > 0.0) {
            return Err(Error::ZeroDenominator { row: j, col: j });
        }
    }

    while sweeps < max_iter {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let tjj = theta[(j, j)];
            for l in 0..p {
                let h = 2.0 * tjj * spp[(l, l)];
                let theta_m: f64 = (0..p).map(|k| theta[(j, k)] * m[(k, l)]).sum();
                let grad = 2.0 * (theta_m - a[(j, l)]);
                let old = gamma[(j, l)];
                let g = h * old - grad;
                let new = soft_threshold(g, nu[(j, l)]) / h;
                let delta = new - old;
                if delta != 0.0 {
                    gamma[(j, l)] = new;
                    for (mv, sv) in m.row_mut(j).iter_mut().zip(spp.row(l)) {
                        *mv += delta * sv;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
        }
        trace.push(gamma_objective(stats, theta, &gamma, nu));
        if max_delta <= tol && gamma_kkt_residual(stats, theta, &gamma, nu) <= tol {
            converged = true;
            break;
        }
    }
    Ok(GammaFit { gamma, sweeps, converged, objective_trace: trace })
}

/// `−tr(E(S_Γ) Θ) − Σ ν|γ|`, the `Γ`-dependent part of the objective.
fn gamma_objective(stats: &SufficientStats, theta: &Matrix, gamma: &Matrix, nu: &Matrix) -> f64 {
    let s = expected_s_gamma(stats, gamma);
    -s.trace_of_product(theta) - weighted_l1(gamma, nu, false)
}

fn weighted_l1(x: &Matrix, w: &Matrix, skip_diagonal: bool) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            if skip_diagonal && i == j {
                continue;
            }
            acc += w[(i, j)] * x[(i, j)].abs();
        }
    }
    acc
}

/// Penalised expected complete-data log-likelihood
/// `(n_eff/2)[−p log 2π + log det Θ − tr(E(S_Γ)Θ) − Σ_{j≠j′} w|θ| − Σ ν|γ|]`.
pub fn q_pen_value(stats: &SufficientStats, theta: &Matrix, gamma: &Matrix, weights: &WeightMatrices) -> Result<f64> {
    let p = theta.rows() as f64;
    let log_det = theta.spd_log_det()?;
    let s = expected_s_gamma(stats, gamma);
    let inner = -p * libm::log(2.0 * core::f64::consts::PI) + log_det
        - s.trace_of_product(theta)
        - weighted_l1(theta, &weights.w, true)
        - weighted_l1(gamma, &weights.nu, false);
    Ok(0.5 * stats.n_eff * inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scad_derivative_branches() {
        assert_eq!(scad_derivative(0.5, 1.0, 3.7), 1.0);
        assert_eq!(scad_derivative(5.0, 1.0, 3.7), 0.0);
        assert!((scad_derivative(2.0, 1.0, 3.7) - 1.7 / 2.7).abs() < 1e-15);
        assert_eq!(scad_derivative(2.0, 0.0, 3.7), 0.0);
        // continuous at x = λ and x = aλ
        assert!((scad_derivative(1.0 + 1e-12, 1.0, 3.7) - 1.0).abs() < 1e-9);
        assert!(scad_derivative(3.7 - 1e-12, 1.0, 3.7).abs() < 1e-9);
    }

    #[test]
    fn weights_by_kind() {
        let theta = Matrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let gamma = Matrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, 0.05]);
        let w = compute_weights(&theta, &gamma, &PenaltyConfig::l1(0.1, 0.2).unwrap());
        assert_eq!(w.w[(0, 1)], 0.1);
        assert_eq!(w.w[(0, 0)], 0.0);
        assert_eq!(w.nu[(1, 1)], 0.2);
        let w = compute_weights(&theta, &gamma, &PenaltyConfig::scad(0.1, 0.1).unwrap());
        assert_eq!(w.w[(0, 1)], 0.1);
        assert_eq!(w.nu[(0, 0)], 0.0);
        assert_eq!(w.nu[(1, 1)], 0.1);
    }

    #[test]
    fn penalty_config_validation() {
        assert!(PenaltyConfig::with_shape(PenaltyKind::Scad, 0.1, 0.1, 2.0).is_err());
        assert!(PenaltyConfig::l1(-1.0, 0.0).is_err());
        assert!(PenaltyConfig::l1(0.0, f64::NAN).is_err());
    }

    #[test]
    fn glasso_unpenalised_inverse() {
        let fit = glasso_theta(&Matrix::identity(3), &Matrix::zeros(3, 3), 1e-8, 100).unwrap();
        assert!(fit.theta.max_abs_diff(&Matrix::identity(3)) < 1e-10);
        let s = Matrix::from_diag(&[2.0, 0.5]);
        let fit = glasso_theta(&s, &Matrix::zeros(2, 2), 1e-8, 100).unwrap();
        assert!(fit.theta.max_abs_diff(&Matrix::from_diag(&[0.5, 2.0])) < 1e-10);
    }

    #[test]
    fn glasso_rejects_nonpositive_diagonal() {
        let s = Matrix::from_diag(&[1.0, 0.0]);
        assert_eq!(glasso_theta(&s, &Matrix::zeros(2, 2), 1e-5, 10).unwrap_err(), Error::NonPositiveDiagonal(1));
    }

    #[test]
    fn glasso_heavy_penalty_is_diagonal() {
        let s = Matrix::from_row_major(3, 3, vec![1.0, 0.4, 0.2, 0.4, 2.0, -0.3, 0.2, -0.3, 1.5]);
        let w = WeightMatrices::constant(3, 1e3, 0.0).w;
        let fit = glasso_theta(&s, &w, 1e-6, 100).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                if j != k {
                    assert_eq!(fit.theta[(j, k)], 0.0);
                } else {
                    assert!((fit.theta[(j, j)] - 1.0 / s[(j, j)]).abs() < 1e-12);
                }
            }
        }
    }

    fn scalar_stats(s_cc: f64, s_pp: f64, s_pc: f64) -> SufficientStats {
        let one = |x: f64| Matrix::from_row_major(1, 1, vec![x]);
        SufficientStats { s_cc: one(s_cc), s_pp: one(s_pp), s_pc: one(s_pc), n_eff: 1.0, clamped: 0 }
    }

    #[test]
    fn gamma_scalar_least_squares() {
        let stats = scalar_stats(3.0, 2.0, 1.0);
        for theta in [0.3, 1.0, 7.0] {
            let t = Matrix::from_row_major(1, 1, vec![theta]);
            let fit = update_gamma_cd(&stats, &t, &Matrix::zeros(1, 1), &Matrix::zeros(1, 1), 1e-12, 100).unwrap();
            assert!((fit.gamma[(0, 0)] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_threshold_kills_zero_cross_moment() {
        let stats = SufficientStats {
            s_cc: Matrix::identity(2),
            s_pp: Matrix::identity(2),
            s_pc: Matrix::zeros(2, 2),
            n_eff: 4.0,
            clamped: 0,
        };
        let nu = Matrix::from_fn(2, 2, |_, _| 0.01);
        let init = Matrix::from_fn(2, 2, |i, j| (i + j) as f64);
        let fit = update_gamma_cd(&stats, &Matrix::identity(2), &nu, &init, 1e-10, 100).unwrap();
        assert_eq!(fit.gamma, Matrix::zeros(2, 2));
    }

    #[test]
    fn gamma_zero_denominator() {
        let stats = scalar_stats(1.0, 0.0, 0.0);
        let err = update_gamma_cd(&stats, &Matrix::identity(1), &Matrix::zeros(1, 1), &Matrix::zeros(1, 1), 1e-6, 10);
        assert_eq!(err.unwrap_err(), Error::ZeroDenominator { row: 0, col: 0 });
    }

    #[test]
    fn q_pen_identity_value() {
        let p = 3;
        let stats = SufficientStats {
            s_cc: Matrix::identity(p).scaled(8.0),
            s_pp: Matrix::identity(p).scaled(8.0),
            s_pc: Matrix::zeros(p, p),
            n_eff: 8.0,
            clamped: 0,
        };
        let w = WeightMatrices::constant(p, 0.0, 0.0);
        let q = q_pen_value(&stats, &Matrix::identity(p), &Matrix::zeros(p, p), &w).unwrap();
        let expected = 4.0 * (-3.0 * libm::log(2.0 * core::f64::consts::PI) - 3.0);
        assert!((q - expected).abs() < 1e-12);

        let gamma = Matrix::from_fn(p, p, |i, j| if i == j { 0.1 } else { 0.0 });
        let q0 = q_pen_value(&stats, &Matrix::identity(p), &gamma, &w).unwrap();
        let q1 = q_pen_value(&stats, &Matrix::identity(p), &gamma, &WeightMatrices::constant(p, 0.0, 0.5)).unwrap();
        assert!(q1 < q0);
    }
}
