//! Sparse dynamic chain-graph models for ordinal, continuous and mixed
//! multivariate time series.
//!
//! The latent process is a Gaussian-copula VAR(1),
//! `Z(t) = Γ Z(t-1) + ε(t)` with `ε(t) ~ N(0, Θ⁻¹)`. The precision matrix
//! `Θ` carries the undirected network inside one time slice and the
//! autoregressive matrix `Γ` the directed (Granger) network between
//! consecutive slices. Both are estimated by a penalized EM algorithm:
//!
//! * [`data`] turns observations into truncation intervals on the latent scale,
//! * [`moments`] and [`estep`] build the conditional sufficient statistics,
//! * [`mstep`] runs the weighted graphical lasso and the `Γ` coordinate descent,
//! * [`em`] drives the iteration, computes BIC and searches the penalty grid,
//! * [`sim`] generates ground truth and scores support recovery.
//!
//! The crate is `no_std` (with `alloc`) when built without the `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod em;
pub mod error;
pub mod estep;
pub mod linalg;
pub mod moments;
pub mod mstep;
pub mod normal;
pub mod sim;

pub use data::{
    compute_bounds, empirical_cdf, Cell, CellBounds, LatentBounds, MarginalMode, MarginalModel, OrdinalSeriesDataset,
    VarKind,
};
pub use em::{bic, fit, fit_bounds, grid_search, BicBreakdown, ChainGraphModel, FitOptions, GridResult};
pub use error::{Error, Result};
pub use estep::{accumulate_stats, expected_s_gamma, EStepConfig, MomentMode, SufficientStats};
pub use linalg::Matrix;
pub use moments::{truncnorm_moments, CellMoments, SecondMoment, TruncatedNormalSpec};
pub use mstep::{PenaltyConfig, PenaltyKind, WeightMatrices};
pub use sim::{run_study, score_support, GroundTruth, RecoveryScores, ScoreMode, StudyConfig, StudyReport};
