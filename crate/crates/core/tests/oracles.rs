//! Checks of the fast support-accelerated implementations against slow
//! reference solvers that share no code with them.

use mtdl_core::{
    lasso_fit, objective, predict, ridge_fit, update_dictionary, update_sparse_code, Dictionary,
    FeatureMatrix, SparseCode, TrainConfig, TrainerState,
};
use mtdl_testkit as reference;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn uniform(rng: &mut ChaCha20Rng) -> f64 {
    rng.gen::<f64>() * 2.0 - 1.0
}

fn random_unit_dictionary(rng: &mut ChaCha20Rng, p: usize, l: usize) -> Dictionary {
    let mut atoms = Vec::with_capacity(p * l);
    for _ in 0..l {
        let col: Vec<f64> = (0..p).map(|_| uniform(rng)).collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        atoms.extend(col.iter().map(|v| v / norm));
    }
    Dictionary::new(p, l, 0, atoms).unwrap()
}

/// Warm-started CCD rounds until the code stops moving.
fn ccd_to_convergence(
    dict: &Dictionary,
    x: &[f64],
    config: &TrainConfig,
    tol: f64,
) -> SparseCode {
    let mut z = SparseCode::zeros(dict.atom_count()).unwrap();
    for _ in 0..100_000 {
        let next = update_sparse_code(dict, x, &z, config).unwrap();
        let moved = next
            .to_dense()
            .iter()
            .zip(z.to_dense())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        z = next;
        if moved < tol {
            break;
        }
    }
    z
}

#[test]
fn ccd_code_matches_proximal_oracle() {
    let (p, l, lambda) = (20, 50, 0.1);
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let config = TrainConfig::new(l, vec![0]);
    for _ in 0..5 {
        let dict = random_unit_dictionary(&mut rng, p, l);
        let x: Vec<f64> = (0..p).map(|_| uniform(&mut rng)).collect();
        let z = ccd_to_convergence(&dict, &x, &config, 1e-10);
        let oracle = reference::fista_lasso_code(
            dict.to_matrix().values(),
            p,
            l,
            &x,
            lambda,
            1e-14,
            2_000_000,
        );
        for (a, b) in z.to_dense().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "coordinate off: {a} vs {b}");
        }
    }
}

#[test]
fn encode_matches_proximal_oracle() {
    let (p, l, lambda) = (20, 50, 0.1);
    let mut rng = ChaCha20Rng::seed_from_u64(202);
    let dict = random_unit_dictionary(&mut rng, p, l);
    let columns: Vec<Vec<f64>> =
        (0..6).map(|_| (0..p).map(|_| uniform(&mut rng)).collect()).collect();
    let patches = FeatureMatrix::from_columns(&columns).unwrap();
    let result = mtdl_core::encode(&dict, &patches, lambda, 1e-10, 100_000).unwrap();
    assert!(result.unconverged.is_empty());
    for (i, col) in columns.iter().enumerate() {
        let oracle = reference::fista_lasso_code(
            dict.to_matrix().values(),
            p,
            l,
            col,
            lambda,
            1e-14,
            2_000_000,
        );
        for (a, b) in result.codes[i].to_dense().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "column {i}: {a} vs {b}");
        }
    }
}

#[test]
fn ccd_never_increases_the_per_sample_objective() {
    let (p, l, lambda) = (12, 30, 0.1);
    let mut rng = ChaCha20Rng::seed_from_u64(303);
    let config = TrainConfig::new(l, vec![0]);
    for _ in 0..100 {
        let dict = random_unit_dictionary(&mut rng, p, l);
        let x: Vec<f64> = (0..p).map(|_| uniform(&mut rng)).collect();
        // Random warm start with a sparse support.
        let mut z0 = vec![0.0; l];
        for j in 0..l {
            if rng.gen::<f64>() < 0.15 {
                z0[j] = uniform(&mut rng);
            }
        }
        let z0 = SparseCode::from_dense(&z0).unwrap();
        let dict_values = dict.to_matrix();
        let before =
            reference::lasso_objective(dict_values.values(), p, l, &x, &z0.to_dense(), lambda);
        let z1 = update_sparse_code(&dict, &x, &z0, &config).unwrap();
        let after =
            reference::lasso_objective(dict_values.values(), p, l, &x, &z1.to_dense(), lambda);
        assert!(
            after <= before + 1e-12 * before.max(1.0),
            "objective rose from {before} to {after}"
        );
    }
}

#[test]
fn dictionary_step_matches_dense_reference() {
    let (p, l) = (5, 3);
    let mut rng = ChaCha20Rng::seed_from_u64(404);
    for _ in 0..50 {
        let mut dict = random_unit_dictionary(&mut rng, p, l);
        let x: Vec<f64> = (0..p).map(|_| uniform(&mut rng)).collect();
        let mut z = vec![0.0; l];
        for zj in z.iter_mut() {
            if rng.gen::<f64>() < 0.7 {
                *zj = uniform(&mut rng);
            }
        }
        let prior: Vec<f64> = (0..l).map(|_| rng.gen::<f64>() * 2.0).collect();

        let dense_before = dict.to_matrix().values().to_vec();
        let mut dense_hessian = vec![0.0; l * l];
        for (j, &h) in prior.iter().enumerate() {
            dense_hessian[j * l + j] = h;
        }
        let expected =
            reference::dense_dict_step(&dense_before, p, l, &x, &z, &dense_hessian);

        let code = SparseCode::from_dense(&z).unwrap();
        let mut state = TrainerState {
            phi: dict.shared_block().to_vec(),
            hessian_diag: vec![prior.clone()],
            epoch: 0,
        };
        update_dictionary(&mut dict, &x, &code, &mut state, 0).unwrap();

        for (a, b) in dict.to_matrix().values().iter().zip(&expected.dict) {
            assert!((a - b).abs() < 1e-12, "dictionary entry {a} vs {b}");
        }
        for j in 0..l {
            assert!((state.hessian_diag[0][j] - expected.hessian[j * l + j]).abs() < 1e-12);
        }
        assert_eq!(state.phi, dict.shared_block());
    }
}

#[test]
fn objective_matches_dense_evaluation() {
    let mut rng = ChaCha20Rng::seed_from_u64(505);
    let p = 7;
    let dims = [(4usize, 6usize), (5, 3)];
    let mut tasks = Vec::new();
    let mut dicts = Vec::new();
    let mut codes = Vec::new();
    let mut dense_tasks = Vec::new();
    let mut dense_dicts = Vec::new();
    let mut dense_codes = Vec::new();
    for &(l, n) in &dims {
        let dict = random_unit_dictionary(&mut rng, p, l);
        let cols: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| uniform(&mut rng)).collect()).collect();
        let task = FeatureMatrix::from_columns(&cols).unwrap();
        let task_codes: Vec<SparseCode> = (0..n)
            .map(|_| {
                let mut z = vec![0.0; l];
                for zj in z.iter_mut() {
                    if rng.gen::<f64>() < 0.5 {
                        *zj = uniform(&mut rng);
                    }
                }
                SparseCode::from_dense(&z).unwrap()
            })
            .collect();
        dense_tasks.push((task.values().to_vec(), p, n));
        dense_dicts.push((dict.to_matrix().values().to_vec(), p, l));
        dense_codes.push(task_codes.iter().map(|c| c.to_dense()).collect::<Vec<_>>());
        tasks.push(task);
        dicts.push(dict);
        codes.push(task_codes);
    }
    let fast = objective(&tasks, &dicts, &codes, 0.1).unwrap();
    let dense =
        reference::dense_multi_task_objective(&dense_tasks, &dense_dicts, &dense_codes, 0.1);
    assert!((fast - dense).abs() <= 1e-10 * dense.max(1.0), "{fast} vs {dense}");
}

/// Standardization replicated exactly as the regression module documents it:
/// centered target, population-std columns.
fn standardize_for_check(x: &FeatureMatrix, y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = x.rows();
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let y_centered: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut cols = Vec::new();
    for j in 0..x.cols() {
        let col = x.col(j);
        let mean = col.iter().sum::<f64>() / nf;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let scale = var.sqrt();
        assert!(scale > 0.0, "test design should have no constant columns");
        cols.push(col.iter().map(|&v| (v - mean) / scale).collect());
    }
    (cols, y_centered)
}

fn regression_objective(cols: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> f64 {
    let n = y.len();
    let mut resid = y.to_vec();
    for (j, col) in cols.iter().enumerate() {
        for (r, &c) in resid.iter_mut().zip(col) {
            *r -= w[j] * c;
        }
    }
    let sq: f64 = resid.iter().map(|r| r * r).sum();
    sq / (2.0 * n as f64) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

#[test]
fn lasso_fit_matches_long_proximal_run_and_satisfies_kkt() {
    let (n, d, lambda) = (40, 15, 0.1);
    let mut rng = ChaCha20Rng::seed_from_u64(606);
    for _ in 0..5 {
        let columns: Vec<Vec<f64>> =
            (0..d).map(|_| (0..n).map(|_| uniform(&mut rng)).collect()).collect();
        let x = FeatureMatrix::from_columns(&columns).unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                2.0 * x.get(i, 0) - 1.5 * x.get(i, 3) + 0.5 * x.get(i, 7) + 0.3 * uniform(&mut rng)
            })
            .collect();

        let model = lasso_fit(&x, &y, lambda).unwrap();
        let (cols, y_centered) = standardize_for_check(&x, &y);

        let mut flat = Vec::new();
        for c in &cols {
            flat.extend_from_slice(c);
        }
        let oracle = reference::ista_lasso_regression(&flat, n, d, &y_centered, lambda, 1_000_000);

        let fit_obj = regression_objective(&cols, &y_centered, &model.std_weights, lambda);
        let oracle_obj = regression_objective(&cols, &y_centered, &oracle, lambda);
        assert!(
            fit_obj <= oracle_obj + 1e-8,
            "fit objective {fit_obj} vs oracle {oracle_obj}"
        );

        // Subgradient optimality on the standardized problem.
        let mut resid = y_centered.clone();
        for (j, col) in cols.iter().enumerate() {
            for (r, &c) in resid.iter_mut().zip(col) {
                *r -= model.std_weights[j] * c;
            }
        }
        for (j, col) in cols.iter().enumerate() {
            let corr = col.iter().zip(&resid).map(|(&c, &r)| c * r).sum::<f64>() / n as f64;
            if model.std_weights[j] == 0.0 {
                assert!(corr.abs() <= lambda + 1e-6, "kkt violated at zero weight {j}");
            } else {
                assert!(
                    (corr - lambda * model.std_weights[j].signum()).abs() <= 1e-6,
                    "kkt violated at active weight {j}"
                );
            }
        }
    }
}

#[test]
fn ridge_fit_matches_cholesky_reference() {
    let (n, d) = (30, 8);
    let mut rng = ChaCha20Rng::seed_from_u64(707);
    for &lambda in &[1e-3, 0.1, 10.0] {
        let columns: Vec<Vec<f64>> =
            (0..d).map(|_| (0..n).map(|_| uniform(&mut rng)).collect()).collect();
        let x = FeatureMatrix::from_columns(&columns).unwrap();
        let y: Vec<f64> = (0..n).map(|i| x.get(i, 1) - 2.0 * x.get(i, 4) + uniform(&mut rng)).collect();

        let model = ridge_fit(&x, &y, lambda).unwrap();
        let (cols, y_centered) = standardize_for_check(&x, &y);
        let mut gram = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                gram[j * d + i] = cols[i].iter().zip(&cols[j]).map(|(&a, &b)| a * b).sum();
            }
            gram[i * d + i] += n as f64 * lambda;
            rhs[i] = cols[i].iter().zip(&y_centered).map(|(&a, &b)| a * b).sum();
        }
        let oracle = reference::cholesky_solve(&gram, d, &rhs);
        for (a, b) in model.std_weights.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn predict_agrees_with_original_space_weights() {
    let (n, d) = (25, 6);
    let mut rng = ChaCha20Rng::seed_from_u64(808);
    let columns: Vec<Vec<f64>> =
        (0..d).map(|_| (0..n).map(|_| 3.0 * uniform(&mut rng) + 1.0).collect()).collect();
    let x = FeatureMatrix::from_columns(&columns).unwrap();
    let y: Vec<f64> = (0..n).map(|i| x.get(i, 0) - x.get(i, 5) + uniform(&mut rng)).collect();
    let model = lasso_fit(&x, &y, 0.05).unwrap();
    let through_standardization = predict(&model, &x).unwrap();
    for i in 0..n {
        let direct: f64 = model.intercept
            + (0..d).map(|j| model.weights[j] * x.get(i, j)).sum::<f64>();
        assert!((through_standardization[i] - direct).abs() < 1e-9);
    }
}
