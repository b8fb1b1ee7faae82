use chaingraph_core::em::{default_grid, grid_search};
use chaingraph_core::sim::{
    gen_gamma, gen_theta, simulate_latent, simulate_panel, GraphStructure, QuantileScheme, EDGE_WEIGHT,
};
use chaingraph_core::{run_study, Cell, FitOptions, GroundTruth, Matrix, PenaltyKind, StudyConfig};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn generated_precision_is_positive_definite_with_expected_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in [2, 5, 10, 20] {
        for structure in [GraphStructure::Random, GraphStructure::Band { bandwidth: 2 }, GraphStructure::Cluster] {
            let theta = gen_theta(p, structure, &mut rng).unwrap();
            let eig = to_na(&theta).symmetric_eigen().eigenvalues;
            assert!(eig.min() >= 0.2 - 1e-9, "p={p} {structure:?} min eigenvalue {}", eig.min());
            let mut edges = 0;
            for i in 0..p {
                for j in 0..p {
                    assert_eq!(theta[(i, j)], theta[(j, i)]);
                    if i < j && theta[(i, j)] != 0.0 {
                        assert_eq!(theta[(i, j)], EDGE_WEIGHT);
                        edges += 1;
                        match structure {
                            GraphStructure::Band { bandwidth } => assert!(j - i <= bandwidth),
                            GraphStructure::Cluster => assert_eq!(i / 5, j / 5),
                            GraphStructure::Random => {}
                        }
                    }
                }
            }
            match structure {
                GraphStructure::Random => assert_eq!(edges, (p - 1).div_ceil(2)),
                GraphStructure::Band { bandwidth } => {
                    assert_eq!(edges, (1..=bandwidth.min(p - 1)).map(|d| p - d).sum::<usize>())
                }
                GraphStructure::Cluster => {}
            }
        }
    }
}

#[test]
fn generated_gamma_is_stable_upper_triangular() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let g = gen_gamma(10, 0.2, &mut rng).unwrap();
        let diag = (0..10).filter(|&j| g[(j, j)] != 0.0).count();
        assert_eq!(diag, 2);
        for i in 0..10 {
            for j in 0..i {
                assert_eq!(g[(i, j)], 0.0);
            }
        }
        let radius = to_na(&g).complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(radius <= 0.9 + 1e-12 && radius > 0.0);
    }
}

#[test]
fn first_slice_covariance_is_inverse_precision() {
    let truth = GroundTruth::generate(4, GraphStructure::Band { bandwidth: 1 }, 0.2, 9).unwrap();
    let (n, t, p) = (20_000, 2, 4);
    let z = simulate_latent(&truth, n, t, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let v = DMatrix::from_column_slice(p, 1, &z[i * t * p..i * t * p + p]);
        cov += &v * v.transpose();
    }
    cov /= n as f64;
    let want = to_na(&truth.theta_true).try_inverse().unwrap();
    let err = (cov - &want).abs().max();
    assert!(err < 0.05 * want.abs().max(), "max error {err}");
}

#[test]
fn zero_gamma_gives_no_lag_correlation() {
    let mut truth = GroundTruth::generate(3, GraphStructure::Random, 0.2, 4).unwrap();
    truth.gamma_true = Matrix::zeros(3, 3);
    let (n, t, p) = (5_000, 3, 3);
    let z = simulate_latent(&truth, n, t, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let mut lag = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let at = |s: usize| DMatrix::from_column_slice(p, 1, &z[(i * t + s) * p..(i * t + s + 1) * p]);
        lag += at(1) * at(0).transpose();
    }
    lag /= n as f64;
    assert!(lag.abs().max() < 0.08, "{lag}");
}

#[test]
fn panel_uses_every_category_and_keeps_latent_order() {
    let truth = GroundTruth::generate(5, GraphStructure::Random, 0.2, 3).unwrap();
    for scheme in [QuantileScheme::Randomized, QuantileScheme::Fixed] {
        let panel = simulate_panel(&truth, 40, 5, 4, scheme, 77).unwrap();
        let codes: Vec<u32> = panel
            .dataset
            .values()
            .iter()
            .map(|c| match c {
                Cell::Ordinal(k) => *k,
                other => panic!("unexpected {other:?}"),
            })
            .collect();
        for j in 0..5 {
            let idx: Vec<usize> = (j..codes.len()).step_by(5).collect();
            for k in 0..4 {
                assert!(idx.iter().any(|&i| codes[i] == k), "variable {j} lacks level {k}");
            }
            for &a in &idx {
                for &b in &idx {
                    if panel.latent[a] < panel.latent[b] {
                        assert!(codes[a] <= codes[b]);
                    }
                }
            }
            assert!(panel.cut_probs[j].windows(2).all(|w| w[1] > w[0]));
        }
        let again = simulate_panel(&truth, 40, 5, 4, scheme, 77).unwrap();
        assert_eq!(again, panel);
    }
}

#[test]
fn pure_noise_selects_the_heaviest_penalty() {
    let mut truth = GroundTruth::generate(5, GraphStructure::Random, 0.0, 12).unwrap();
    truth.theta_true = Matrix::identity(5);
    truth.gamma_true = Matrix::zeros(5, 5);
    let panel = simulate_panel(&truth, 60, 6, 4, QuantileScheme::Randomized, 13).unwrap();
    let opts = FitOptions::default();
    let bounds = panel.dataset.latent_bounds(opts.marginals).unwrap();
    let (mut lambdas, mut rhos) = default_grid(&bounds, &opts, 4).unwrap();
    lambdas.push(10.0);
    rhos.push(10.0);
    let res = grid_search(&bounds, PenaltyKind::L1, &lambdas, &rhos, &opts).unwrap();
    assert_eq!(res.best.df_theta, 0);
    assert_eq!(res.best.df_gamma, 0);
    assert_eq!(res.grid.len(), 25);
}

#[test]
fn small_study_is_reproducible() {
    let mut cfg = StudyConfig::new(5, 15, 4, 3, PenaltyKind::Scad, 100);
    cfg.grid_size = 3;
    let a = run_study(&cfg).unwrap();
    let b = run_study(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len() + a.failures.len(), 3);
    assert_eq!(a.scenario, "p=5&n=15&T=4");
    for r in &a.rows {
        assert!((0.0..=1.0).contains(&r.theta.f1) && (0.0..=1.0).contains(&r.gamma.f1));
    }
}
