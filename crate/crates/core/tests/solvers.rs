use chaingraph_core::estep::SufficientStats;
use chaingraph_core::mstep::{
    gamma_kkt_residual, glasso_kkt_residual, glasso_theta, q_pen_value, update_gamma_cd, WeightMatrices,
};
use chaingraph_core::{expected_s_gamma, fit_bounds, CellBounds, FitOptions, LatentBounds, Matrix, PenaltyConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_cov(rng: &mut ChaCha8Rng, p: usize) -> Matrix {
    let m = p + rng.gen_range(2..3 * p + 3);
    let x = gaussian(rng, m, p);
    let s = x.transpose() * &x / m as f64;
    Matrix::from_fn(p, p, |i, j| s[(i, j)])
}

fn random_stats(rng: &mut ChaCha8Rng, p: usize) -> SufficientStats {
    // moments of a joint (past, current) sample so that the blocks are consistent
    let m = 4 * p + 10;
    let x = gaussian(rng, m, 2 * p);
    let joint = x.transpose() * &x;
    let block = |r0: usize, c0: usize| Matrix::from_fn(p, p, |i, j| joint[(r0 + i, c0 + j)]);
    SufficientStats { s_pp: block(0, 0), s_cc: block(p, p), s_pc: block(0, p), n_eff: m as f64, clamped: 0 }
}

#[test]
fn glasso_satisfies_kkt_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..60 {
        let p = [2, 5, 10][case % 3];
        let s = random_cov(&mut rng, p);
        let lam: f64 = rng.gen_range(0.01..0.6);
        let w = Matrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { lam * rng.gen_range(0.5..1.5) });
        let w = w.symmetrized();
        let fit = glasso_theta(&s, &w, 1e-8, 5000).unwrap();
        assert!(fit.converged, "case {case}");
        // independent inverse
        let inv = to_na(&fit.theta).try_inverse().unwrap();
        for j in 0..p {
            for k in 0..p {
                let g = inv[(j, k)] - s[(j, k)];
                let r = if j == k {
                    g.abs()
                } else if fit.theta[(j, k)] == 0.0 {
                    (g.abs() - w[(j, k)]).max(0.0)
                } else {
                    (g - w[(j, k)] * fit.theta[(j, k)].signum()).abs()
                };
                assert!(r <= 1e-4, "case {case} ({j},{k}) residual {r}");
            }
        }
        assert!(glasso_kkt_residual(&fit.theta, &s, &w).unwrap() <= 1e-4);
    }
}

#[test]
fn glasso_two_by_two_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let s = random_cov(&mut rng, 2);
        let lam = rng.gen_range(0.0..1.5 * s[(0, 1)].abs());
        let w = Matrix::from_row_major(2, 2, vec![0.0, lam, lam, 0.0]);
        let fit = glasso_theta(&s, &w, 1e-10, 5000).unwrap();
        let s12 = s[(0, 1)];
        let w12 = s12.signum() * (s12.abs() - lam).max(0.0);
        let cov = DMatrix::from_row_slice(2, 2, &[s[(0, 0)], w12, w12, s[(1, 1)]]);
        let want = cov.try_inverse().unwrap();
        for (a, b) in fit.theta.as_slice().iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-6, "{:?} vs {}", fit.theta, want);
        }
    }
}

#[test]
fn gamma_cd_without_penalty_is_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..50 {
        let p = [2, 4, 7][case % 3];
        let stats = random_stats(&mut rng, p);
        let theta = random_cov(&mut rng, p).spd_inverse().unwrap();
        let nu = Matrix::zeros(p, p);
        let fit = update_gamma_cd(&stats, &theta, &nu, &Matrix::zeros(p, p), 1e-12, 100_000).unwrap();
        // Γ S_pp = S_cp
        let want = to_na(&stats.s_pc).transpose() * to_na(&stats.s_pp).try_inverse().unwrap();
        let got = to_na(&fit.gamma);
        assert!((got - want).abs().max() < 1e-6, "case {case}");
    }
}

#[test]
fn gamma_cd_with_penalty_satisfies_subgradient_conditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for case in 0..50 {
        let p = [2, 4, 7][case % 3];
        let stats = random_stats(&mut rng, p);
        let theta = random_cov(&mut rng, p).spd_inverse().unwrap();
        let nu = Matrix::from_fn(p, p, |_, _| rng.gen_range(0.01..0.5));
        let fit = update_gamma_cd(&stats, &theta, &nu, &Matrix::zeros(p, p), 1e-10, 100_000).unwrap();
        assert!(fit.converged);
        // gradient 2Θ(ΓS_pp − S_cp)/N recomputed with nalgebra
        let g = 2.0 * to_na(&theta) * (to_na(&fit.gamma) * to_na(&stats.s_pp) - to_na(&stats.s_pc).transpose())
            / stats.n_eff;
        for j in 0..p {
            for l in 0..p {
                let (x, gr, v) = (fit.gamma[(j, l)], g[(j, l)], nu[(j, l)]);
                let r = if x == 0.0 { (gr.abs() - v).max(0.0) } else { (gr + v * x.signum()).abs() };
                assert!(r <= 1e-6, "case {case} ({j},{l}) residual {r}");
            }
        }
        assert!(gamma_kkt_residual(&stats, &theta, &fit.gamma, &nu) <= 1e-6);
        assert!(fit.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-10));
    }
}

#[test]
fn q_pen_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = 4;
    let stats = random_stats(&mut rng, p);
    let theta = random_cov(&mut rng, p).spd_inverse().unwrap();
    let gamma = Matrix::from_fn(p, p, |_, _| rng.gen_range(-0.5..0.5));
    let weights = WeightMatrices::constant(p, 0.2, 0.1);
    let got = q_pen_value(&stats, &theta, &gamma, &weights).unwrap();

    let (t, g) = (to_na(&theta), to_na(&gamma));
    let (scc, spp, spc) = (to_na(&stats.s_cc), to_na(&stats.s_pp), to_na(&stats.s_pc));
    let s = (&scc - &g * &spc - spc.transpose() * g.transpose() + &g * &spp * g.transpose()) / stats.n_eff;
    let logdet = t.clone().cholesky().unwrap().determinant().ln();
    let mut l1 = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                l1 += 0.2 * t[(i, j)].abs();
            }
            l1 += 0.1 * g[(i, j)].abs();
        }
    }
    let want = 0.5 * stats.n_eff * (-(p as f64) * (2.0 * std::f64::consts::PI).ln() + logdet - (s * &t).trace() - l1);
    assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn expected_s_gamma_on_points_is_residual_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, t, p) = (7, 5, 3);
    let z: Vec<f64> = (0..n * t * p).map(|_| rng.sample(StandardNormal)).collect();
    let bounds = LatentBounds::from_cells(n, t, p, z.iter().map(|&v| CellBounds::point(v)).collect()).unwrap();
    let gamma = Matrix::from_fn(p, p, |_, _| rng.gen_range(-0.6..0.6));
    let stats = chaingraph_core::accumulate_stats(
        &bounds,
        &Matrix::identity(p),
        &gamma,
        &chaingraph_core::EStepConfig::default(),
    )
    .unwrap();
    assert_eq!(stats.n_eff, (n * (t - 1)) as f64);
    let mut want = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        for s in 1..t {
            let at = |s: usize| DMatrix::from_column_slice(p, 1, &z[(i * t + s) * p..(i * t + s + 1) * p]);
            let r = at(s) - to_na(&gamma) * at(s - 1);
            want += &r * r.transpose();
        }
    }
    want /= stats.n_eff;
    let got = to_na(&expected_s_gamma(&stats, &gamma));
    assert!((got - want).abs().max() < 1e-12);
}

#[test]
fn bic_matches_direct_formula_on_continuous_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (n, t, p) = (30, 4, 3);
    let z: Vec<f64> = (0..n * t * p).map(|_| rng.sample(StandardNormal)).collect();
    let bounds = LatentBounds::from_cells(n, t, p, z.iter().map(|&v| CellBounds::point(v)).collect()).unwrap();
    let model = fit_bounds(&bounds, &PenaltyConfig::l1(0.05, 0.05).unwrap(), &FitOptions::default()).unwrap();

    let n_eff = (n * (t - 1)) as f64;
    let (th, g) = (to_na(&model.theta), to_na(&model.gamma));
    let mut s = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        for k in 1..t {
            let at = |k: usize| DMatrix::from_column_slice(p, 1, &z[(i * t + k) * p..(i * t + k + 1) * p]);
            let r = at(k) - &g * at(k - 1);
            s += &r * r.transpose();
        }
    }
    s /= n_eff;
    let fit_term = n_eff * (-th.clone().cholesky().unwrap().determinant().ln() + (&s * &th).trace());
    let off = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).filter(|&(i, j)| i != j && th[(i, j)] != 0.0).count();
    let df = off as f64 / 2.0 + g.iter().filter(|&&x| x != 0.0).count() as f64 + p as f64;
    let want = fit_term + n_eff.ln() * df;
    assert!((model.bic - want).abs() < 1e-8 * want.abs(), "{} vs {want}", model.bic);
}

#[test]
fn em_output_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (n, t, p) = (25, 4, 3);
    let z: Vec<f64> = (0..n * t * p).map(|_| rng.sample(StandardNormal)).collect();
    // coarsen to three ordered levels per cell
    let cells = z
        .iter()
        .map(|&v| match v {
            v if v < -0.5 => CellBounds { lower: f64::NEG_INFINITY, upper: -0.5 },
            v if v < 0.5 => CellBounds { lower: -0.5, upper: 0.5 },
            _ => CellBounds { lower: 0.5, upper: f64::INFINITY },
        })
        .collect();
    let bounds = LatentBounds::from_cells(n, t, p, cells).unwrap();
    let opts = FitOptions { em_tol: 1e-7, em_max_iter: 2000, glasso_tol: 1e-9, gamma_tol: 1e-10, ..Default::default() };
    let pen = PenaltyConfig::l1(0.05, 0.05).unwrap();
    let model = fit_bounds(&bounds, &pen, &opts).unwrap();
    assert!(model.converged);
    let again = chaingraph_core::em::fit_from(&bounds, &pen, &opts, Some((&model.theta, &model.gamma))).unwrap();
    assert!(again.theta.max_abs_diff(&model.theta) < 1e-5);
    assert!(again.gamma.max_abs_diff(&model.gamma) < 1e-5);
    assert!(again.iterations <= 2);
}
