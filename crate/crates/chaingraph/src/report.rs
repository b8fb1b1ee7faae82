//! Human-readable fit reports and delimited result tables.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use chaingraph_core::em::{ChainGraphModel, FitOptions, GridResult};
use chaingraph_core::sim::{MeanSd, StudyConfig, StudyReport};
use chaingraph_core::{MarginalMode, MomentMode, OrdinalSeriesDataset, PenaltyKind, RecoveryScores, SecondMoment};

use crate::error::{AppError, Result};
use crate::io::fmt_f64;

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| AppError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) }
}

pub fn fit_report(
    ds: &OrdinalSeriesDataset,
    m: &ChainGraphModel,
    opts: &FitOptions,
    grid: Option<&GridResult>,
) -> String {
    let mut s = String::new();
    let pen = &m.penalty;
    let kind = match pen.kind {
        PenaltyKind::L1 => "l1".to_string(),
        PenaltyKind::Scad => format!("scad (a = {})", pen.a),
    };
    let mode = match opts.estep.mode {
        MomentMode::Inter => "inter",
        MomentMode::Intra => "intra",
    };
    let second = match opts.estep.second_moment {
        SecondMoment::PlugIn => "plug-in",
        SecondMoment::NeighbourVariance => "neighbour-variance",
    };
    let marginals = match opts.marginals {
        MarginalMode::PerTime => "per time point",
        MarginalMode::Pooled => "pooled over time",
    };
    let _ = writeln!(s, "chain-graph fit");
    let _ = writeln!(s, "samples: {}  time points: {}  variables: {}", ds.n(), ds.time_points(), ds.p());
    let _ = writeln!(s, "marginals: {marginals}");
    let _ = writeln!(s, "e-step: {} sweeps, {mode} conditioning, {second} second moments", opts.estep.sweeps);
    let _ = writeln!(s, "penalty: {kind}  lambda: {}  rho: {}", fmt_f64(pen.lambda), fmt_f64(pen.rho));
    let _ = writeln!(s, "converged: {}  iterations: {}", m.converged, m.iterations);
    if pen.kind == PenaltyKind::Scad {
        let _ = writeln!(s, "l1 warm-start iterations: {}", m.warm_start_iterations);
    }
    let trace: Vec<String> = m.q_trace.iter().map(|q| fmt_f64(*q)).collect();
    let _ = writeln!(s, "q_trace: {}", trace.join(" "));
    let _ = writeln!(s, "df_theta: {}  df_gamma: {}", m.df_theta, m.df_gamma);
    let _ = writeln!(
        s,
        "bic: {}  (fit {}, complexity {})",
        fmt_f64(m.bic),
        fmt_f64(m.bic_terms.fit_term),
        fmt_f64(m.bic_terms.complexity_term)
    );
    let _ = writeln!(s, "spectral radius of gamma: {}", fmt_f64(m.spectral_radius));
    let _ = writeln!(s, "clamped second moments: {}", m.clamped_cells);
    if let Some(g) = grid {
        let _ = writeln!(s);
        let _ = writeln!(s, "bic surface ({} cells, best at index {})", g.grid.len(), g.best_index);
        let _ = writeln!(
            s,
            "{:>12} {:>12} {:>14} {:>8} {:>8} {:>5} {:>9}",
            "lambda", "rho", "bic", "df_theta", "df_gamma", "iter", "converged"
        );
        for c in &g.grid {
            let bic = c.bic.map_or_else(|| "failed".to_string(), |b| format!("{b:.4}"));
            let _ = writeln!(
                s,
                "{:>12.6} {:>12.6} {:>14} {:>8} {:>8} {:>5} {:>9}",
                c.lambda, c.rho, bic, c.df_theta, c.df_gamma, c.iterations, c.converged
            );
        }
    }
    s
}

pub fn write_bic_surface(path: &Path, grid: &GridResult) -> Result<()> {
    let mut w = writer(path)?;
    let e = csv_io(path);
    w.write_record(["lambda", "rho", "bic", "df_theta", "df_gamma", "iterations", "converged", "error"]).map_err(&e)?;
    for c in &grid.grid {
        w.write_record([
            fmt_f64(c.lambda),
            fmt_f64(c.rho),
            c.bic.map(fmt_f64).unwrap_or_default(),
            c.df_theta.to_string(),
            c.df_gamma.to_string(),
            c.iterations.to_string(),
            c.converged.to_string(),
            c.error.clone().unwrap_or_default(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| AppError::Io { path: path.to_path_buf(), source })
}

pub fn write_metrics(path: &Path, theta: &RecoveryScores, gamma: &RecoveryScores) -> Result<()> {
    let mut w = writer(path)?;
    let e = csv_io(path);
    w.write_record(["matrix", "tp", "fp", "fn", "tn", "f1", "sen", "spe"]).map_err(&e)?;
    for (name, r) in [("theta", theta), ("gamma", gamma)] {
        w.write_record([
            name.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
            r.tn.to_string(),
            fmt_f64(r.f1),
            fmt_f64(r.sen),
            fmt_f64(r.spe),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| AppError::Io { path: path.to_path_buf(), source })
}

pub fn write_study_table(path: &Path, rep: &StudyReport) -> Result<()> {
    let mut w = writer(path)?;
    let e = csv_io(path);
    w.write_record([
        "scenario",
        "rep",
        "seed",
        "f1_theta",
        "sen_theta",
        "spe_theta",
        "f1_gamma",
        "sen_gamma",
        "spe_gamma",
        "lambda",
        "rho",
        "iterations",
        "converged",
    ])
    .map_err(&e)?;
    for r in &rep.rows {
        w.write_record([
            rep.scenario.clone(),
            r.rep.to_string(),
            r.seed.to_string(),
            fmt_f64(r.theta.f1),
            fmt_f64(r.theta.sen),
            fmt_f64(r.theta.spe),
            fmt_f64(r.gamma.f1),
            fmt_f64(r.gamma.sen),
            fmt_f64(r.gamma.spe),
            fmt_f64(r.lambda),
            fmt_f64(r.rho),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| AppError::Io { path: path.to_path_buf(), source })
}

fn ms(x: &MeanSd) -> String {
    format!("{:.2} ({:.2})", x.mean, x.sd)
}

pub fn study_summary(rep: &StudyReport, cfg: &StudyConfig) -> String {
    let s = &rep.summary;
    let mut out = String::new();
    let _ = writeln!(out, "scenario: {}", rep.scenario);
    let _ = writeln!(
        out,
        "replicates: {} fitted, {} failed; penalty {:?}; {} categories; gamma diagonal fraction {}",
        rep.rows.len(),
        rep.failures.len(),
        cfg.penalty,
        cfg.categories,
        cfg.gamma_diag_fraction
    );
    let _ = writeln!(out, "{:<8} {:>12} {:>12} {:>12}", "", "F1", "SEN", "SPE");
    let _ = writeln!(out, "{:<8} {:>12} {:>12} {:>12}", "theta", ms(&s.f1_theta), ms(&s.sen_theta), ms(&s.spe_theta));
    let _ = writeln!(out, "{:<8} {:>12} {:>12} {:>12}", "gamma", ms(&s.f1_gamma), ms(&s.sen_gamma), ms(&s.spe_gamma));
    let _ = writeln!(
        out,
        "median EM iterations: {} (including warm start: {})",
        s.median_iterations, s.median_total_iterations
    );
    for (rep, err) in &rep.failures {
        let _ = writeln!(out, "replicate {rep} failed: {err}");
    }
    out
}
