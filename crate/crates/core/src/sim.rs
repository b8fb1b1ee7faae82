//! Ground-truth generation, latent VAR(1) panels, discretisation to ordinal
//! data, and support-recovery scoring.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Cell, OrdinalSeriesDataset, VarKind};
use crate::em::{default_grid, grid_search, FitOptions};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mstep::PenaltyKind;

/// Off-diagonal magnitude of generated precision edges.
pub const EDGE_WEIGHT: f64 = 0.3;
/// Margin added on top of `|λ_min|` when making `Θ` positive definite.
pub const DIAGONAL_MARGIN: f64 = 0.2;
/// Default fraction of nonzero diagonal entries in `Γ`.
pub const GAMMA_DIAGONAL_FRACTION: f64 = 0.2;
/// Upper bound enforced on the spectral radius of generated `Γ`.
pub const GAMMA_MAX_RADIUS: f64 = 0.9;
/// Threshold below which an estimated entry counts as zero.
pub const SUPPORT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphStructure {
    /// `⌈(p − 1)/2⌉` edges placed uniformly, about `100/p` % of the entries.
    #[default]
    Random,
    /// `|i − j| ≤ bandwidth`.
    Band { bandwidth: usize },
    /// Blocks of five variables; each within-block pair is an edge with probability 0.3.
    Cluster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta_true: Matrix,
    pub gamma_true: Matrix,
    pub seed: u64,
}

impl GroundTruth {
    /// `Θ` and `Γ` from one seeded generator (Γ comes from an independent `Θ` draw).
    pub fn generate(p: usize, structure: GraphStructure, diag_fraction: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta_true = gen_theta(p, structure, &mut rng)?;
        let gamma_true = gen_gamma(p, diag_fraction, &mut rng)?;
        Ok(Self { theta_true, gamma_true, seed })
    }
}

fn adjacency<R: Rng + ?Sized>(p: usize, structure: GraphStructure, rng: &mut R) -> Vec<(usize, usize)> {
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect();
    match structure {
        GraphStructure::Random => {
            let k = (p - 1).div_ceil(2).min(pairs.len());
            let mut picked: Vec<usize> = sample(rng, pairs.len(), k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|idx| pairs[idx]).collect()
        }
        GraphStructure::Band { bandwidth } => pairs.into_iter().filter(|&(i, j)| j - i <= bandwidth).collect(),
        GraphStructure::Cluster => {
            pairs.into_iter().filter(|&(i, j)| i / 5 == j / 5).filter(|_| rng.gen::<f64>() < 0.3).collect()
        }
    }
}

/// Sparse symmetric positive definite precision matrix: edges of weight
/// [`EDGE_WEIGHT`], diagonal `|λ_min| + DIAGONAL_MARGIN`, so the smallest
/// eigenvalue is at least 0.1.
pub fn gen_theta<R: Rng + ?Sized>(p: usize, structure: GraphStructure, rng: &mut R) -> Result<Matrix> {
    if p < 2 {
        return Err(Error::InvalidParameter("gen_theta needs p >= 2".to_string()));
    }
    let mut a = Matrix::zeros(p, p);
    for (i, j) in adjacency(p, structure, rng) {
        a[(i, j)] = EDGE_WEIGHT;
        a[(j, i)] = EDGE_WEIGHT;
    }
    let lmin = a.symmetric_eigenvalues()[0];
    let diag = lmin.abs() + DIAGONAL_MARGIN;
    for i in 0..p {
        a[(i, i)] = diag;
    }
    Ok(a)
}

/// Number of nonzero diagonal entries of `Γ` for a given fraction.
pub fn gamma_diagonal_count(p: usize, fraction: f64) -> usize {
    // ceil with a little slack so that 0.2 · 10 is exactly 2
    (libm::ceil(fraction * p as f64 - 1e-9).max(0.0) as usize).min(p)
}

/// Strict upper triangle of an independent precision draw plus a fraction
/// of `Uniform(0, 1)` diagonal entries. `Γ` is upper triangular, so its
/// spectral radius is `max |γⱼⱼ|`; it is scaled down to [`GAMMA_MAX_RADIUS`]
/// when larger.
pub fn gen_gamma<R: Rng + ?Sized>(p: usize, diag_fraction: f64, rng: &mut R) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&diag_fraction) {
        return Err(Error::InvalidParameter(format!("diagonal fraction {diag_fraction} outside [0, 1]")));
    }
    let donor = gen_theta(p, GraphStructure::Random, rng)?;
    let mut gamma = Matrix::from_fn(p, p, |i, j| if j > i { donor[(i, j)] } else { 0.0 });
    let k = gamma_diagonal_count(p, diag_fraction);
    let mut idx = sample(rng, p, k).into_vec();
    idx.sort_unstable();
    for j in idx {
        // open interval (0, 1)
        let mut u: f64 = rng.gen();
        while u == 0.0 {
            u = rng.gen();
        }
        gamma[(j, j)] = u;
    }
    let radius = gamma.diag().iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    if radius > GAMMA_MAX_RADIUS {
        gamma = gamma.scaled(GAMMA_MAX_RADIUS / radius);
    }
    Ok(gamma)
}

/// How category boundaries are chosen when discretising.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantileScheme {
    /// Sorted `Uniform(0.1, 0.9)` cut probabilities at least 0.05 apart.
    #[default]
    Randomized,
    /// Equiprobable categories.
    Fixed,
}

/// Sorted cut probabilities for `categories` classes.
pub fn cut_probabilities<R: Rng + ?Sized>(categories: usize, scheme: QuantileScheme, rng: &mut R) -> Vec<f64> {
    let m = categories - 1;
    match scheme {
        QuantileScheme::Fixed => (1..categories).map(|k| k as f64 / categories as f64).collect(),
        QuantileScheme::Randomized => {
            let (lo, hi) = (0.1, 0.9);
            let gap = if m > 1 { 0.05_f64.min(0.5 * (hi - lo) / (m - 1) as f64) } else { 0.0 };
            // uniform order statistics on a shortened range, then spread by the gap
            let span = (hi - lo) - gap * m.saturating_sub(1) as f64;
            let mut u: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() * span).collect();
            u.sort_by(f64::total_cmp);
            u.iter().enumerate().map(|(k, x)| lo + x + gap * k as f64).collect()
        }
    }
}

/// A simulated panel together with the latent values it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub dataset: OrdinalSeriesDataset,
    /// Same layout as the dataset: variable fastest, then time, then sample.
    pub latent: Vec<f64>,
    /// Per-variable cut probabilities.
    pub cut_probs: Vec<Vec<f64>>,
}

/// Latent VAR(1) trajectories `Z(1) ~ N(0, Θ⁻¹)`, `Z(t) = Γ Z(t−1) + ε(t)`.
pub fn simulate_latent<R: Rng + ?Sized>(truth: &GroundTruth, n: usize, t: usize, rng: &mut R) -> Result<Vec<f64>> {
    let p = truth.theta_true.rows();
    let chol = truth.theta_true.cholesky()?;
    let mut out = Vec::with_capacity(n * t * p);
    let mut prev = vec![0.0; p];
    for _ in 0..n {
        for step in 0..t {
            let u: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            // Cov(L⁻ᵀ u) = (L Lᵀ)⁻¹ = Θ⁻¹
            let eps = chol.solve_upper(&u);
            let cur: Vec<f64> = if step == 0 {
                eps
            } else {
                let mean = truth.gamma_true.matvec(&prev);
                mean.iter().zip(&eps).map(|(m, e)| m + e).collect()
            };
            out.extend_from_slice(&cur);
            prev = cur;
        }
    }
    Ok(out)
}

/// Simulates `n` trajectories of length `t` and cuts every variable at
/// empirical quantiles of its pooled latent values.
pub fn simulate_panel(
    truth: &GroundTruth,
    n: usize,
    t: usize,
    categories: usize,
    scheme: QuantileScheme,
    seed: u64,
) -> Result<SimulatedPanel> {
    if categories < 2 {
        return Err(Error::InvalidParameter("need at least two categories".to_string()));
    }
    if n < 1 || t < 1 {
        return Err(Error::InvalidParameter("need n >= 1 and T >= 1".to_string()));
    }
    let p = truth.theta_true.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = simulate_latent(truth, n, t, &mut rng)?;

    let mut cut_probs = Vec::with_capacity(p);
    let mut codes = vec![0u32; latent.len()];
    for j in 0..p {
        let probs = cut_probabilities(categories, scheme, &mut rng);
        let mut pooled: Vec<f64> = latent.iter().skip(j).step_by(p).copied().collect();
        pooled.sort_by(f64::total_cmp);
        let total = pooled.len();
        let thresholds: Vec<f64> = probs
            .iter()
            .map(|&q| {
                let k = libm::ceil(q * total as f64) as usize;
                pooled[k.clamp(1, total) - 1]
            })
            .collect();
        for (idx, &z) in latent.iter().enumerate().skip(j).step_by(p) {
            codes[idx] = thresholds.iter().filter(|&&c| z > c).count() as u32;
        }
        cut_probs.push(probs);
    }
    let values = codes.into_iter().map(Cell::Ordinal).collect();
    let kinds = vec![VarKind::Ordinal { categories: categories as u32 }; p];
    let dataset = OrdinalSeriesDataset::new(n, t, p, values, kinds, None)?;
    Ok(SimulatedPanel { dataset, latent, cut_probs })
}

/// Which entries of a matrix are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Strict upper triangle (symmetric matrices such as `Θ`).
    OffDiagonalSymmetric,
    /// All `p²` entries (`Γ`).
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecoveryScores {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub f1: f64,
    pub sen: f64,
    pub spe: f64,
}

impl RecoveryScores {
    /// Scores from counts. Empty denominators score 1 (nothing to miss).
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Self {
            tp,
            fp,
            fn_,
            tn,
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            sen: ratio(tp, tp + fn_),
            spe: ratio(tn, tn + fp),
        }
    }
}

/// Support recovery of `estimated` against `truth`.
pub fn score_support(estimated: &Matrix, truth: &Matrix, mode: ScoreMode) -> Result<RecoveryScores> {
    if estimated.rows() != truth.rows() || estimated.cols() != truth.cols() {
        return Err(Error::DimensionMismatch { expected: truth.rows(), found: estimated.rows() });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for i in 0..truth.rows() {
        for j in 0..truth.cols() {
            if mode == ScoreMode::OffDiagonalSymmetric && j <= i {
                continue;
            }
            let est = estimated[(i, j)].abs() > SUPPORT_EPS;
            let tru = truth[(i, j)].abs() > SUPPORT_EPS;
            match (est, tru) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    Ok(RecoveryScores::from_counts(tp, fp, fn_, tn))
}

/// Simulation-study settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub p: usize,
    pub n: usize,
    pub t: usize,
    pub reps: usize,
    pub penalty: PenaltyKind,
    pub seed: u64,
    pub categories: usize,
    pub structure: GraphStructure,
    pub quantiles: QuantileScheme,
    pub gamma_diag_fraction: f64,
    /// Points per penalty axis of the default BIC grid.
    pub grid_size: usize,
    pub fit: FitOptions,
}

impl StudyConfig {
    pub fn new(p: usize, n: usize, t: usize, reps: usize, penalty: PenaltyKind, seed: u64) -> Self {
        Self {
            p,
            n,
            t,
            reps,
            penalty,
            seed,
            categories: 4,
            structure: GraphStructure::Random,
            quantiles: QuantileScheme::Randomized,
            gamma_diag_fraction: GAMMA_DIAGONAL_FRACTION,
            grid_size: 10,
            fit: FitOptions::default(),
        }
    }

    pub fn scenario(&self) -> String {
        format!("p={}&n={}&T={}", self.p, self.n, self.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub rep: usize,
    pub seed: u64,
    pub theta: RecoveryScores,
    pub gamma: RecoveryScores,
    pub lambda: f64,
    pub rho: f64,
    pub iterations: usize,
    pub warm_start_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            libm::sqrt(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0))
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StudySummary {
    pub f1_theta: MeanSd,
    pub sen_theta: MeanSd,
    pub spe_theta: MeanSd,
    pub f1_gamma: MeanSd,
    pub sen_gamma: MeanSd,
    pub spe_gamma: MeanSd,
    pub median_iterations: f64,
    pub median_total_iterations: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub scenario: String,
    pub rows: Vec<ReplicateResult>,
    /// `(replicate, error)` for replicates excluded from the summary.
    pub failures: Vec<(usize, String)>,
    pub summary: StudySummary,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// One replicate: truth, panel, BIC grid search, scores.
pub fn run_replicate(cfg: &StudyConfig, rep: usize) -> Result<ReplicateResult> {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let truth = GroundTruth::generate(cfg.p, cfg.structure, cfg.gamma_diag_fraction, seed)?;
    let panel = simulate_panel(&truth, cfg.n, cfg.t, cfg.categories, cfg.quantiles, panel_seed(seed))?;
    let bounds = panel.dataset.latent_bounds(cfg.fit.marginals)?;
    let (lambdas, rhos) = default_grid(&bounds, &cfg.fit, cfg.grid_size)?;
    let res = grid_search(&bounds, cfg.penalty, &lambdas, &rhos, &cfg.fit)?;
    let best = &res.best;
    Ok(ReplicateResult {
        rep,
        seed,
        theta: score_support(&best.theta, &truth.theta_true, ScoreMode::OffDiagonalSymmetric)?,
        gamma: score_support(&best.gamma, &truth.gamma_true, ScoreMode::Full)?,
        lambda: best.penalty.lambda,
        rho: best.penalty.rho,
        iterations: best.iterations,
        warm_start_iterations: best.warm_start_iterations,
        converged: best.converged,
    })
}

/// Panel seed derived from a replicate seed, so truth and panel use
/// independent streams.
pub fn panel_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

pub fn summarize(rows: &[ReplicateResult]) -> StudySummary {
    let col = |f: &dyn Fn(&ReplicateResult) -> f64| MeanSd::of(&rows.iter().map(f).collect::<Vec<_>>());
    StudySummary {
        f1_theta: col(&|r| r.theta.f1),
        sen_theta: col(&|r| r.theta.sen),
        spe_theta: col(&|r| r.theta.spe),
        f1_gamma: col(&|r| r.gamma.f1),
        sen_gamma: col(&|r| r.gamma.sen),
        spe_gamma: col(&|r| r.gamma.spe),
        median_iterations: median(rows.iter().map(|r| r.iterations as f64).collect()),
        median_total_iterations: median(rows.iter().map(|r| (r.iterations + r.warm_start_iterations) as f64).collect()),
    }
}

/// Runs `reps` independent replicates (seed `seed + rep`) and aggregates.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.reps < 1 {
        return Err(Error::InvalidParameter("reps must be >= 1".to_string()));
    }
    #[cfg(feature = "rayon")]
    let results: Vec<Result<ReplicateResult>> = {
        use rayon::prelude::*;
        (0..cfg.reps).into_par_iter().map(|r| run_replicate(cfg, r)).collect()
    };
    #[cfg(not(feature = "rayon"))]
    let results: Vec<Result<ReplicateResult>> = (0..cfg.reps).map(|r| run_replicate(cfg, r)).collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    let summary = summarize(&rows);
    Ok(StudyReport { scenario: cfg.scenario(), rows, failures, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let s = RecoveryScores::from_counts(2, 1, 1, 10);
        assert!((s.f1 - 4.0 / 6.0).abs() < 1e-15);
        let truth = Matrix::from_row_major(2, 2, vec![1.0, 0.5, 0.0, 1.0]);
        let s = score_support(&truth, &truth, ScoreMode::Full).unwrap();
        assert_eq!((s.f1, s.sen, s.spe), (1.0, 1.0, 1.0));
        let s = score_support(&Matrix::zeros(2, 2), &truth, ScoreMode::Full).unwrap();
        assert_eq!((s.f1, s.sen, s.spe), (0.0, 0.0, 1.0));
        assert!(score_support(&Matrix::zeros(3, 3), &truth, ScoreMode::Full).is_err());
    }

    #[test]
    fn symmetric_mode_scores_upper_triangle_only() {
        let truth = Matrix::from_row_major(3, 3, vec![1.0, 0.3, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let s = score_support(&truth, &truth, ScoreMode::OffDiagonalSymmetric).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_, s.tn), (1, 0, 0, 2));
    }

    #[test]
    fn band_structure_is_tridiagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = gen_theta(6, GraphStructure::Band { bandwidth: 1 }, &mut rng).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(theta[(i, j)] != 0.0, i.abs_diff(j) <= 1, "({i}, {j})");
            }
        }
    }

    #[test]
    fn random_structure_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = gen_theta(10, GraphStructure::Random, &mut rng).unwrap();
        let edges =
            (0..10).flat_map(|i| (i + 1..10).map(move |j| (i, j))).filter(|&(i, j)| theta[(i, j)] != 0.0).count();
        assert_eq!(edges, 5);
        assert!(theta.symmetric_eigenvalues()[0] >= 0.1 - 1e-12);
    }

    #[test]
    fn gamma_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = gen_gamma(10, 0.2, &mut rng).unwrap();
        for i in 0..10 {
            for j in 0..i {
                assert_eq!(g[(i, j)], 0.0);
            }
        }
        let diag: Vec<f64> = g.diag().into_iter().filter(|&d| d != 0.0).collect();
        assert_eq!(diag.len(), 2);
        assert!(diag.iter().all(|&d| d > 0.0 && d < 1.0));
        assert_eq!(gamma_diagonal_count(10, 0.2), 2);
        assert_eq!(gamma_diagonal_count(7, 0.2), 2);
    }

    #[test]
    fn randomized_cut_probabilities_are_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for c in [2, 4, 8, 17, 30] {
            let q = cut_probabilities(c, QuantileScheme::Randomized, &mut rng);
            assert_eq!(q.len(), c - 1);
            assert!(q.iter().all(|&x| (0.1..=0.9).contains(&x)));
            let min_gap = if c - 1 > 1 { 0.05_f64.min(0.4 / (c - 2) as f64) } else { 0.0 };
            assert!(q.windows(2).all(|w| w[1] - w[0] >= min_gap - 1e-12), "c = {c}: {q:?}");
        }
        assert_eq!(cut_probabilities(4, QuantileScheme::Fixed, &mut rng), vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn panel_codes_in_range_and_reproducible() {
        let truth = GroundTruth::generate(5, GraphStructure::Random, 0.2, 9).unwrap();
        let a = simulate_panel(&truth, 30, 4, 4, QuantileScheme::Randomized, 77).unwrap();
        let b = simulate_panel(&truth, 30, 4, 4, QuantileScheme::Randomized, 77).unwrap();
        assert_eq!(a, b);
        assert!(a.dataset.values().iter().all(|c| matches!(c, Cell::Ordinal(k) if *k < 4)));
        assert!(simulate_panel(&truth, 30, 4, 1, QuantileScheme::Fixed, 1).is_err());
    }

    #[test]
    fn summary_of_single_replicate() {
        let row = ReplicateResult {
            rep: 0,
            seed: 0,
            theta: RecoveryScores::from_counts(1, 1, 1, 1),
            gamma: RecoveryScores::from_counts(2, 0, 0, 1),
            lambda: 0.1,
            rho: 0.1,
            iterations: 3,
            warm_start_iterations: 4,
            converged: true,
        };
        let s = summarize(core::slice::from_ref(&row));
        assert_eq!(s.f1_theta.mean, row.theta.f1);
        assert_eq!(s.f1_theta.sd, 0.0);
        assert_eq!(s.f1_gamma.mean, 1.0);
        assert_eq!(s.median_iterations, 3.0);
        assert_eq!(s.median_total_iterations, 7.0);
    }
}
