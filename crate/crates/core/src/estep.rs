//! E-step: conditional second-moment matrices of the latent panel.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::LatentBounds;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::moments::{mean_field_product, plug_in_moments, Regression, SecondMoment};

/// Which neighbours a cell is conditioned on when its moments are refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentMode {
    /// Previous slice (through `Γ`) and the other variables of the same slice.
    #[default]
    Inter,
    /// The other variables of the same slice only.
    Intra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EStepConfig {
    /// Refinement sweeps of the plug-in means, `t` ascending then `j` ascending.
    pub sweeps: usize,
    pub mode: MomentMode,
    pub second_moment: SecondMoment,
}

impl Default for EStepConfig {
    fn default() -> Self {
        Self { sweeps: 2, mode: MomentMode::Inter, second_moment: SecondMoment::PlugIn }
    }
}

/// Conditional expectations `S_cc`, `S_pp` and `S_pc` (unnormalised sums).
///
/// `S_pc` has rows indexed by the variable at `t − 1` and columns by the
/// variable at `t`; the current-by-past matrix is its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub s_cc: Matrix,
    pub s_pp: Matrix,
    pub s_pc: Matrix,
    /// `n (T − 1)`.
    pub n_eff: f64,
    /// Cells whose second moment had to be raised to `m1²`.
    pub clamped: usize,
}

impl SufficientStats {
    pub fn p(&self) -> usize {
        self.s_cc.rows()
    }

    fn zeros(p: usize) -> Self {
        Self { s_cc: Matrix::zeros(p, p), s_pp: Matrix::zeros(p, p), s_pc: Matrix::zeros(p, p), n_eff: 0.0, clamped: 0 }
    }

    fn merge(&mut self, other: &SufficientStats) {
        self.s_cc.add_assign(&other.s_cc);
        self.s_pp.add_assign(&other.s_pp);
        self.s_pc.add_assign(&other.s_pc);
        self.n_eff += other.n_eff;
        self.clamped += other.clamped;
    }
}

/// Builds the sufficient statistics at the current parameters `(Θ⋆, Γ⋆)`.
pub fn accumulate_stats(
    bounds: &LatentBounds,
    theta_star: &Matrix,
    gamma_star: &Matrix,
    cfg: &EStepConfig,
) -> Result<SufficientStats> {
    let p = bounds.p();
    if theta_star.rows() != p || gamma_star.rows() != p {
        return Err(Error::DimensionMismatch { expected: p, found: theta_star.rows() });
    }
    let regs = Regression::all(theta_star)?;

    let per_sample = |i: usize| sample_stats(bounds, i, &regs, gamma_star, cfg);

    #[cfg(feature = "rayon")]
    let parts: Vec<Result<SufficientStats>> = {
        use rayon::prelude::*;
        (0..bounds.n()).into_par_iter().map(per_sample).collect()
    };
    #[cfg(not(feature = "rayon"))]
    let parts: Vec<Result<SufficientStats>> = (0..bounds.n()).map(per_sample).collect();

    let mut total = SufficientStats::zeros(p);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

fn sample_stats(
    bounds: &LatentBounds,
    i: usize,
    regs: &[Regression],
    gamma: &Matrix,
    cfg: &EStepConfig,
) -> Result<SufficientStats> {
    let (tt, p) = (bounds.time_points(), bounds.p());
    let cells = bounds.sample(i);
    let mut m1 = vec![0.0; tt * p];
    let mut m2 = vec![0.0; tt * p];
    let mut var = vec![0.0; tt * p];
    for (idx, &b) in cells.iter().enumerate() {
        let (m, _) = plug_in_moments(b, 0.0, 1.0, 0.0);
        m1[idx] = m.m1;
        m2[idx] = m.m2;
        var[idx] = m.variance();
    }

    let mut clamped = 0;
    let mut base = vec![0.0; p];
    for sweep in 0..cfg.sweeps {
        for t in 0..tt {
            let use_prev = t > 0 && cfg.mode == MomentMode::Inter;
            if use_prev {
                base = gamma.matvec(&m1[(t - 1) * p..t * p]);
            }
            for j in 0..p {
                let idx = t * p + j;
                let b = cells[idx];
                if b.as_point().is_some() {
                    continue;
                }
                let row = &m1[t * p..(t + 1) * p];
                let mu = regs[j].conditional_mean(j, row, use_prev.then_some(&base[..]));
                let extra = match cfg.second_moment {
                    SecondMoment::PlugIn => 0.0,
                    SecondMoment::NeighbourVariance => regs[j].neighbour_variance(&var[t * p..(t + 1) * p]),
                };
                let (m, was_clamped) = plug_in_moments(b, mu, regs[j].sigma_sq, extra);
                if !(m.m1.is_finite() && m.m2.is_finite()) {
                    return Err(Error::NonFiniteMoment { sample: i, time: t, var: j });
                }
                if was_clamped && sweep + 1 == cfg.sweeps {
                    clamped += 1;
                }
                m1[idx] = m.m1;
                m2[idx] = m.m2;
                var[idx] = m.variance();
            }
        }
    }

    let mut out = SufficientStats::zeros(p);
    out.clamped = clamped;
    out.n_eff = (tt - 1) as f64;
    for t in 0..tt {
        let cur = &m1[t * p..(t + 1) * p];
        let sq = &m2[t * p..(t + 1) * p];
        if t >= 1 {
            add_slice_moments(&mut out.s_cc, cur, sq);
            let prev = &m1[(t - 1) * p..t * p];
            for a in 0..p {
                for b in 0..p {
                    out.s_pc[(a, b)] += mean_field_product(prev[a], cur[b]);
                }
            }
        }
        if t + 1 < tt {
            add_slice_moments(&mut out.s_pp, cur, sq);
        }
    }
    Ok(out)
}

/// Adds `E[Z Zᵀ]` for one slice: second moments on the diagonal,
/// mean-field products elsewhere.
fn add_slice_moments(acc: &mut Matrix, m1: &[f64], m2: &[f64]) {
    let p = m1.len();
    for a in 0..p {
        for b in 0..p {
            acc[(a, b)] += if a == b { m2[a] } else { mean_field_product(m1[a], m1[b]) };
        }
    }
}

/// `E(S_Γ | y) = (S_cc − S_pcᵀΓᵀ − Γ S_pc + Γ S_pp Γᵀ) / n_eff`, symmetrised.
pub fn expected_s_gamma(stats: &SufficientStats, gamma: &Matrix) -> Matrix {
    let gs = gamma.matmul(&stats.s_pc);
    let cross = gs.add(&gs.transpose());
    let quad = gamma.matmul(&stats.s_pp).matmul(&gamma.transpose());
    stats.s_cc.sub(&cross).add(&quad).scaled(1.0 / stats.n_eff).symmetrized()
}
