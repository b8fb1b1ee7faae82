//! Moments of truncated latent Gaussians.
//!
//! Every latent cell `Z(t)ᵢⱼ` is, conditionally on its neighbours, a normal
//! variable `N(μ′, σ′²)` truncated to the interval implied by its observation.
//! [`truncnorm_moments`] gives the exact first two moments of such a
//! variable; [`approx_first_moment`] and [`approx_second_moment`] plug the
//! current neighbour means into `μ′` (first-order delta method).

use alloc::vec::Vec;

use crate::data::CellBounds;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::normal;

/// A normal `N(mu0, sigma0²)` restricted to `[c1, c2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormalSpec {
    pub mu0: f64,
    pub sigma0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl TruncatedNormalSpec {
    pub fn new(mu0: f64, sigma0: f64, c1: f64, c2: f64) -> Result<Self> {
        if !(sigma0 > 0.0) || !sigma0.is_finite() || !mu0.is_finite() {
            return Err(Error::InvalidParameter("truncated normal needs finite mu0 and sigma0 > 0".into()));
        }
        if !(c1 <= c2) {
            return Err(Error::InvalidParameter("truncation interval needs c1 <= c2".into()));
        }
        Ok(Self { mu0, sigma0, c1, c2 })
    }
}

/// First and second moment of one latent cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMoments {
    pub m1: f64,
    pub m2: f64,
}

impl CellMoments {
    pub fn variance(&self) -> f64 {
        (self.m2 - self.m1 * self.m1).max(0.0)
    }
}

/// `λ = (φ(δ₁) − φ(δ₂)) / Z` and `κ = (δ₁φ(δ₁) − δ₂φ(δ₂)) / Z` with
/// `Z = Φ(δ₂) − Φ(δ₁)`, evaluated without forming `Z` when it underflows.
fn truncation_ratios(d1: f64, d2: f64) -> (f64, f64) {
    if d1 >= 0.0 {
        upper_tail_ratios(d1, d2)
    } else if d2 <= 0.0 {
        // reflect X → −X: λ changes sign, κ is invariant
        let (lam, kap) = upper_tail_ratios(-d2, -d1);
        (-lam, kap)
    } else {
        let z = normal::cdf(d2) - normal::cdf(d1);
        let (p1, p2) = (normal::pdf(d1), normal::pdf(d2));
        let (q1, q2) = (xpdf(d1, p1), xpdf(d2, p2));
        ((p1 - p2) / z, (q1 - q2) / z)
    }
}

#[inline]
fn xpdf(d: f64, pdf: f64) -> f64 {
    if d.is_infinite() {
        0.0
    } else {
        d * pdf
    }
}

/// Ratios for `0 ≤ d1 < d2` via Mills ratios scaled by `φ(d1)`.
fn upper_tail_ratios(d1: f64, d2: f64) -> (f64, f64) {
    let r1 = normal::mills_ratio(d1);
    if d2.is_infinite() {
        return (1.0 / r1, d1 / r1);
    }
    let r2 = normal::mills_ratio(d2);
    // e = φ(d2)/φ(d1)
    let x = -0.5 * (d2 - d1) * (d2 + d1);
    let e = libm::exp(x);
    let denom = r1 - r2 * e;
    let lam = -libm::expm1(x) / denom;
    let kap = (d1 - d2 * e) / denom;
    (lam, kap)
}

/// Exact moments of a truncated normal. Degenerate intervals return the
/// point mass; far tails go through Mills-ratio asymptotics and never NaN.
pub fn truncnorm_moments(spec: &TruncatedNormalSpec) -> CellMoments {
    let TruncatedNormalSpec { mu0, sigma0, c1, c2 } = *spec;
    if c1 == c2 {
        return CellMoments { m1: c1, m2: c1 * c1 };
    }
    let d1 = (c1 - mu0) / sigma0;
    let d2 = (c2 - mu0) / sigma0;
    let (lam, kap) = truncation_ratios(d1, d2);
    let m1 = (mu0 + sigma0 * lam).clamp(c1, c2);
    let var = (sigma0 * sigma0 * (1.0 + kap - lam * lam)).max(0.0);
    CellMoments { m1, m2: m1 * m1 + var }
}

/// Per-variable regression of `Z(t)ⱼ` on `Z(t)₋ⱼ` implied by `Σ = Θ⁻¹`.
///
/// `Σⱼ,₋ⱼ Σ⁻¹₋ⱼ,₋ⱼ = −Θⱼ,₋ⱼ / θⱼⱼ` and the Schur complement is `1 / θⱼⱼ`, so no
/// sub-matrix inversion is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    /// Length `p`; the entry at `j` is zero.
    pub row: Vec<f64>,
    pub sigma_sq: f64,
}

impl Regression {
    pub fn from_precision(theta: &Matrix, j: usize) -> Self {
        let p = theta.rows();
        let tjj = theta[(j, j)];
        let row = (0..p).map(|k| if k == j { 0.0 } else { -theta[(j, k)] / tjj }).collect();
        Self { row, sigma_sq: 1.0 / tjj }
    }

    /// Regressions for every variable of a positive definite `Θ`.
    pub fn all(theta: &Matrix) -> Result<Vec<Self>> {
        theta.cholesky()?;
        Ok((0..theta.rows()).map(|j| Self::from_precision(theta, j)).collect())
    }

    /// `μ′ = baseⱼ + Σₖ rowₖ (zₖ − baseₖ)`, `base = Γ z(t−1)` or zero.
    pub fn conditional_mean(&self, j: usize, z_curr: &[f64], base: Option<&[f64]>) -> f64 {
        match base {
            Some(b) => b[j] + self.row.iter().zip(z_curr).zip(b).map(|((r, z), bk)| r * (z - bk)).sum::<f64>(),
            None => self.row.iter().zip(z_curr).map(|(r, z)| r * z).sum(),
        }
    }

    /// Variance contributed by uncertain neighbours, `Σₖ rowₖ² Var(Zₖ)`.
    pub fn neighbour_variance(&self, variances: &[f64]) -> f64 {
        self.row.iter().zip(variances).map(|(r, v)| r * r * v).sum()
    }
}

/// Parameters of `Z(t)ⱼ | Z(t−1), Z(t)₋ⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalParams {
    pub mu_prime: f64,
    pub sigma_prime_sq: f64,
    /// `Σⱼ,₋ⱼ Σ⁻¹₋ⱼ,₋ⱼ` padded to length `p` with a zero at `j`.
    pub regression_row: Vec<f64>,
}

/// Conditional normal parameters of variable `j` at time `t` given the
/// plug-in means at `t − 1` (if any) and the other variables at `t`.
pub fn conditional_params_intra(
    theta: &Matrix,
    gamma: &Matrix,
    z_prev_mean: Option<&[f64]>,
    z_curr_means: &[f64],
    j: usize,
) -> Result<ConditionalParams> {
    let p = theta.rows();
    if z_curr_means.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: z_curr_means.len() });
    }
    theta.cholesky()?;
    let reg = Regression::from_precision(theta, j);
    let base = z_prev_mean.map(|z| gamma.matvec(z));
    let mu_prime = reg.conditional_mean(j, z_curr_means, base.as_deref());
    Ok(ConditionalParams { mu_prime, sigma_prime_sq: reg.sigma_sq, regression_row: reg.row })
}

/// Moments of a cell truncated to `bounds` under `N(mu, sigma_sq)`, with
/// `extra_var` added to the second moment. The flag reports a clamp
/// of `m2` up to `m1²`.
pub(crate) fn plug_in_moments(bounds: CellBounds, mu: f64, sigma_sq: f64, extra_var: f64) -> (CellMoments, bool) {
    if let Some(z) = bounds.as_point() {
        return (CellMoments { m1: z, m2: z * z }, false);
    }
    let spec = TruncatedNormalSpec { mu0: mu, sigma0: libm::sqrt(sigma_sq), c1: bounds.lower, c2: bounds.upper };
    let base = truncnorm_moments(&spec);
    let m2 = base.m2 + extra_var;
    let floor = base.m1 * base.m1;
    if m2 < floor - 1e-8 || !m2.is_finite() {
        (CellMoments { m1: base.m1, m2: floor + 1e-12 }, true)
    } else {
        (CellMoments { m1: base.m1, m2: m2.max(floor) }, false)
    }
}

/// Plug-in first moment `E[Z(t)ⱼ | y]`.
/// How a latent cell's second moment is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SecondMoment {
    /// `Var + mean²` of the truncated normal at the plug-in conditional parameters.
    #[default]
    PlugIn,
    /// As `PlugIn`, plus `Σₖ βₖ² Var(Zₖ)` carried over from the neighbours' uncertainty.
    NeighbourVariance,
}

pub fn approx_first_moment(bounds: CellBounds, params: &ConditionalParams) -> f64 {
    plug_in_moments(bounds, params.mu_prime, params.sigma_prime_sq, 0.0).0.m1
}

/// Plug-in second moment `E[Z(t)ⱼ² | y]`.
///
/// Lemma-1 second moment at `(μ′, σ′²)` plus the spread of `μ′` itself,
/// `Σₖ βₖ² Var(Z(t)ₖ)`, taken from the neighbours' current moments (the
/// cross terms vanish under the mean-field factorisation).
pub fn approx_second_moment(
    bounds: CellBounds,
    params: &ConditionalParams,
    neighbor_moments: &[CellMoments],
    kind: SecondMoment,
) -> f64 {
    let extra: f64 = match kind {
        SecondMoment::PlugIn => 0.0,
        SecondMoment::NeighbourVariance => {
            params.regression_row.iter().zip(neighbor_moments).map(|(b, m)| b * b * m.variance()).sum()
        }
    };
    plug_in_moments(bounds, params.mu_prime, params.sigma_prime_sq, extra).0.m2
}

/// Mean-field cross moment `E[Zₐ Z_b | y] ≈ E[Zₐ | y] E[Z_b | y]`.
#[inline]
pub fn mean_field_product(m1_a: f64, m1_b: f64) -> f64 {
    m1_a * m1_b
}
