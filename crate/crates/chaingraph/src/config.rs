//! Run configuration: a TOML file with one table per command, overridden by
//! command-line flags.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyArg {
    L1,
    Scad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StructureArg {
    Random,
    Band,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MomentModeArg {
    Inter,
    Intra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SecondMomentArg {
    PlugIn,
    NeighbourVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub p: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub categories: usize,
    pub seed: u64,
    pub structure: StructureArg,
    pub bandwidth: usize,
    pub gamma_diag_fraction: f64,
    pub fixed_quantiles: bool,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            p: 10,
            n: 20,
            t: 5,
            categories: 4,
            seed: 1,
            structure: StructureArg::Random,
            bandwidth: 1,
            gamma_diag_fraction: 0.2,
            fixed_quantiles: false,
            out: PathBuf::from("sim"),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub schema: Option<PathBuf>,
    pub penalty: PenaltyArg,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    /// `start:end:count`, log-spaced.
    pub grid_lambda: Option<String>,
    pub grid_rho: Option<String>,
    /// Points per axis of the data-driven default grid.
    pub grid_size: usize,
    pub scad_a: f64,
    pub pool_marginals: bool,
    pub moment_mode: MomentModeArg,
    pub second_moment: SecondMomentArg,
    pub sweeps: usize,
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub glasso_tol: f64,
    pub gamma_tol: f64,
    pub rescale_correlation: bool,
    pub partial_correlation: bool,
    pub allow_nonconverged: bool,
    pub seed: u64,
    pub workers: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data.csv"),
            out: PathBuf::from("fit"),
            schema: None,
            penalty: PenaltyArg::Scad,
            lambda: None,
            rho: None,
            grid_lambda: None,
            grid_rho: None,
            grid_size: 10,
            scad_a: chaingraph_core::mstep::SCAD_A,
            pool_marginals: false,
            moment_mode: MomentModeArg::Inter,
            second_moment: SecondMomentArg::PlugIn,
            sweeps: 2,
            em_tol: 1e-3,
            em_max_iter: 50,
            glasso_tol: 1e-5,
            gamma_tol: 1e-6,
            rescale_correlation: false,
            partial_correlation: false,
            allow_nonconverged: false,
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub theta_est: PathBuf,
    pub theta_true: PathBuf,
    pub gamma_est: PathBuf,
    pub gamma_true: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            theta_est: PathBuf::from("theta.csv"),
            theta_true: PathBuf::from("theta_true.csv"),
            gamma_est: PathBuf::from("gamma.csv"),
            gamma_true: PathBuf::from("gamma_true.csv"),
            out: PathBuf::from("metrics.csv"),
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfigFile {
    pub p: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub reps: usize,
    pub penalty: PenaltyArg,
    pub seed: u64,
    pub categories: usize,
    pub structure: StructureArg,
    pub bandwidth: usize,
    pub gamma_diag_fraction: f64,
    pub fixed_quantiles: bool,
    pub grid_size: usize,
    pub pool_marginals: bool,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for StudyConfigFile {
    fn default() -> Self {
        Self {
            p: 10,
            n: 20,
            t: 5,
            reps: 50,
            penalty: PenaltyArg::Scad,
            seed: 1,
            categories: 4,
            structure: StructureArg::Random,
            bandwidth: 1,
            gamma_diag_fraction: 0.2,
            fixed_quantiles: false,
            grid_size: 10,
            pool_marginals: false,
            out: PathBuf::from("study"),
            workers: 0,
        }
    }
}

/// Merges the `[section]` table of a config file (plus its top-level
/// `workers`/`seed` keys) with flag overrides and deserialises the result.
pub fn resolve<T: DeserializeOwned>(file: Option<&str>, section: &str, flags: &impl Serialize) -> Result<T> {
    let mut table = toml::Table::new();
    if let Some(text) = file {
        let root: toml::Table = text.parse().map_err(|e| AppError::Config(format!("{e}")))?;
        for key in ["workers", "seed"] {
            if let Some(v) = root.get(key) {
                table.insert(key.to_string(), v.clone());
            }
        }
        match root.get(section) {
            Some(toml::Value::Table(t)) => table.extend(t.clone()),
            Some(_) => return Err(AppError::Config(format!("`{section}` must be a table"))),
            None => {}
        }
    }
    let overrides = toml::Table::try_from(flags).map_err(|e| AppError::Config(format!("{e}")))?;
    table.extend(overrides);
    T::deserialize(toml::Value::Table(table)).map_err(|e| AppError::Config(format!("{e}")))
}

/// Canonical TOML rendering of a resolved config.
pub fn render<T: Serialize>(cfg: &T) -> Result<String> {
    toml::to_string(cfg).map_err(|e| AppError::Config(format!("{e}")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses `start:end:count` into `count` log-spaced values from `end` down to `start`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || AppError::Config(format!("grid `{spec}` is not of the form start:end:count"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, k] = parts.as_slice() else { return Err(bad()) };
    let (a, b): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    let k: usize = k.parse().map_err(|_| bad())?;
    if !(a > 0.0 && b >= a && a.is_finite() && b.is_finite()) || k == 0 {
        return Err(AppError::Config(format!("grid `{spec}` needs 0 < start <= end and count >= 1")));
    }
    if k == 1 {
        return Ok(vec![b]);
    }
    let (la, lb) = (a.ln(), b.ln());
    Ok((0..k).map(|i| (lb - (lb - la) * i as f64 / (k - 1) as f64).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Flags {
        #[serde(skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
    }

    #[test]
    fn flags_override_file() {
        let file = "workers = 3\n[simulate]\nn = 7\np = 4\n";
        let cfg: SimulateConfig = resolve(Some(file), "simulate", &Flags { n: Some(9) }).unwrap();
        assert_eq!((cfg.n, cfg.p, cfg.workers, cfg.t), (9, 4, 3, 5));
        let cfg: SimulateConfig = resolve(Some(file), "simulate", &Flags { n: None }).unwrap();
        assert_eq!(cfg.n, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(resolve::<SimulateConfig>(Some("[simulate]\nbogus = 1\n"), "simulate", &Flags { n: None }).is_err());
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.01:1:10").unwrap();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1.0).abs() < 1e-12 && (g[9] - 0.01).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(parse_grid("0.5:0.5:1").unwrap(), vec![0.5]);
        for bad in ["1:0.1:3", "0:1:3", "a:b:c", "0.1:1", "0.1:1:0"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
