//! Lasso and ridge regression on standardized designs, with k-fold
//! cross-validated selection of the regularization strength.
//!
//! Design matrices are stored feature-per-column: `x.rows()` is the sample
//! count and `x.cols()` the predictor count, so each predictor is
//! contiguous for the coordinate sweeps.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{dot, soft_threshold, FeatureMatrix};

const FIT_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegressionMethod {
    #[default]
    Lasso,
    Ridge,
}

impl FromStr for RegressionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso" => Ok(RegressionMethod::Lasso),
            "ridge" => Ok(RegressionMethod::Ridge),
            other => Err(Error::InvalidInput(format!(
                "unknown regression method {other:?}, expected lasso or ridge"
            ))),
        }
    }
}

impl std::fmt::Display for RegressionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegressionMethod::Lasso => write!(f, "lasso"),
            RegressionMethod::Ridge => write!(f, "ridge"),
        }
    }
}

/// Training-time standardization: per-column mean and population-std scale
/// (zero for dropped constant columns) plus the target mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub col_means: Vec<f64>,
    pub col_scales: Vec<f64>,
    pub y_mean: f64,
}

/// Fitted linear model. `weights`/`intercept` live in the original feature
/// space; `std_weights` are the coefficients of the standardized problem
/// (zero at dropped columns) kept for optimality checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub standardization: Standardization,
    pub std_weights: Vec<f64>,
    /// Set when the target was constant and only the intercept is meaningful.
    pub intercept_only: bool,
}

/// Cross-validation outcome: the evaluated grid, mean validation rMSE per
/// value, and the winner (ties broken toward more regularization).
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub grid: Vec<f64>,
    pub mean_rmse: Vec<f64>,
    pub chosen: f64,
    pub folds: usize,
}

/// The default regularization grid: 13 log-spaced points from 1e-3 to 1e3.
pub fn default_grid() -> Vec<f64> {
    (0..13).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect()
}

struct StandardizedProblem {
    /// Standardized columns, kept predictors only.
    cols: Vec<Vec<f64>>,
    /// Original column index of each kept predictor.
    kept: Vec<usize>,
    /// Per kept column, `||x_j||^2 / n` (1 up to rounding).
    col_sq_over_n: Vec<f64>,
    y_centered: Vec<f64>,
    standardization: Standardization,
    degenerate_target: bool,
}

fn standardize(x: &FeatureMatrix, y: &[f64]) -> Result<StandardizedProblem> {
    let n = x.rows();
    if y.len() != n {
        return dim_err(format!("{n} design rows but {} targets", y.len()));
    }
    if n < 2 {
        return invalid("regression needs at least two samples");
    }
    if y.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite target value");
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let y_centered: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let degenerate_target = y_centered.iter().all(|&v| v == 0.0);

    let mut cols = Vec::new();
    let mut kept = Vec::new();
    let mut col_sq_over_n = Vec::new();
    let mut col_means = vec![0.0; x.cols()];
    let mut col_scales = vec![0.0; x.cols()];
    for j in 0..x.cols() {
        let col = x.col(j);
        let mean = col.iter().sum::<f64>() / nf;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let scale = var.sqrt();
        col_means[j] = mean;
        if scale > 0.0 {
            col_scales[j] = scale;
            let standardized: Vec<f64> = col.iter().map(|&v| (v - mean) / scale).collect();
            col_sq_over_n.push(dot(&standardized, &standardized) / nf);
            cols.push(standardized);
            kept.push(j);
        }
    }
    Ok(StandardizedProblem {
        cols,
        kept,
        col_sq_over_n,
        y_centered,
        standardization: Standardization { col_means, col_scales, y_mean },
        degenerate_target,
    })
}

fn assemble_model(problem: StandardizedProblem, kept_weights: &[f64], d: usize) -> RegressionModel {
    let mut std_weights = vec![0.0; d];
    let mut weights = vec![0.0; d];
    let mut intercept = problem.standardization.y_mean;
    for (k, &j) in problem.kept.iter().enumerate() {
        std_weights[j] = kept_weights[k];
        let scale = problem.standardization.col_scales[j];
        weights[j] = kept_weights[k] / scale;
        intercept -= kept_weights[k] * problem.standardization.col_means[j] / scale;
    }
    RegressionModel {
        weights,
        intercept,
        standardization: problem.standardization,
        std_weights,
        intercept_only: problem.degenerate_target,
    }
}

/// Minimizes `(1/2n) ||y - X w||^2 + lambda ||w||_1` on the standardized
/// problem by cyclic coordinate descent, then maps the solution back to the
/// original feature space.
pub fn lasso_fit(x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<RegressionModel> {
    if lambda < 0.0 || !lambda.is_finite() {
        return invalid(format!("lambda must be nonnegative, got {lambda}"));
    }
    let problem = standardize(x, y)?;
    let n = x.rows() as f64;
    let d_kept = problem.cols.len();
    let mut w = vec![0.0; d_kept];
    let mut resid = problem.y_centered.clone();

    for _ in 0..MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..d_kept {
            let col = &problem.cols[j];
            let a = problem.col_sq_over_n[j];
            let rho = dot(col, &resid) / n + a * w[j];
            let updated = soft_threshold(rho, lambda) / a;
            let delta = updated - w[j];
            if delta != 0.0 {
                for (r, &c) in resid.iter_mut().zip(col) {
                    *r -= delta * c;
                }
                w[j] = updated;
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < FIT_TOL {
            break;
        }
    }
    Ok(assemble_model(problem, &w, x.cols()))
}

/// Solves `(X^T X + n lambda I) w = X^T y` on the standardized problem by
/// Gaussian elimination with partial pivoting.
pub fn ridge_fit(x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<RegressionModel> {
    if lambda < 0.0 || !lambda.is_finite() {
        return invalid(format!("lambda must be nonnegative, got {lambda}"));
    }
    let problem = standardize(x, y)?;
    let n = x.rows() as f64;
    let d_kept = problem.cols.len();

    let mut system = vec![vec![0.0; d_kept + 1]; d_kept];
    for i in 0..d_kept {
        for j in i..d_kept {
            let g = dot(&problem.cols[i], &problem.cols[j]);
            system[i][j] = g;
            system[j][i] = g;
        }
        system[i][i] += n * lambda;
        system[i][d_kept] = dot(&problem.cols[i], &problem.y_centered);
    }
    let w = solve_linear(&mut system)?;
    Ok(assemble_model(problem, &w, x.cols()))
}

fn solve_linear(system: &mut [Vec<f64>]) -> Result<Vec<f64>> {
    let d = system.len();
    for k in 0..d {
        let pivot = (k..d)
            .max_by(|&a, &b| system[a][k].abs().total_cmp(&system[b][k].abs()))
            .expect("nonempty pivot range");
        if system[pivot][k].abs() == 0.0 {
            return Err(Error::DegenerateInput("singular regression system".into()));
        }
        system.swap(k, pivot);
        for i in k + 1..d {
            let factor = system[i][k] / system[k][k];
            if factor != 0.0 {
                for j in k..=d {
                    system[i][j] -= factor * system[k][j];
                }
            }
        }
    }
    let mut w = vec![0.0; d];
    for i in (0..d).rev() {
        let mut acc = system[i][d];
        for j in i + 1..d {
            acc -= system[i][j] * w[j];
        }
        w[i] = acc / system[i][i];
    }
    Ok(w)
}

/// Applies the stored standardization, then the standardized weights and
/// the target mean.
pub fn predict(model: &RegressionModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    let d = model.std_weights.len();
    if x.cols() != d {
        return dim_err(format!("{} predictors, model expects {d}", x.cols()));
    }
    let mut out = vec![model.standardization.y_mean; x.rows()];
    for j in 0..d {
        let scale = model.standardization.col_scales[j];
        if scale > 0.0 && model.std_weights[j] != 0.0 {
            let wj = model.std_weights[j];
            let mean = model.standardization.col_means[j];
            for (o, &v) in out.iter_mut().zip(x.col(j)) {
                *o += wj * (v - mean) / scale;
            }
        }
    }
    Ok(out)
}

/// Seeded k-fold cross validation over a regularization grid. Samples are
/// shuffled once, folds are contiguous chunks of the shuffled order, and
/// the grid value with the lowest mean validation rMSE wins (ties go to
/// the larger value).
pub fn cross_validate(
    x: &FeatureMatrix,
    y: &[f64],
    method: RegressionMethod,
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<CvReport> {
    let n = x.rows();
    if y.len() != n {
        return dim_err(format!("{n} design rows but {} targets", y.len()));
    }
    if folds < 2 {
        return invalid("cross validation needs at least two folds");
    }
    if n < folds {
        return invalid(format!("{n} samples cannot fill {folds} folds"));
    }
    if grid.is_empty() {
        return invalid("empty regularization grid");
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut split_designs = Vec::with_capacity(folds);
    for f in 0..folds {
        let lo = f * n / folds;
        let hi = (f + 1) * n / folds;
        let val_idx: Vec<usize> = order[lo..hi].to_vec();
        let train_idx: Vec<usize> =
            order[..lo].iter().chain(&order[hi..]).copied().collect();
        let x_train = x.select_rows(&train_idx)?;
        let x_val = x.select_rows(&val_idx)?;
        let y_train: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
        let y_val: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();
        split_designs.push((x_train, y_train, x_val, y_val));
    }

    let mut mean_rmse = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut total = 0.0;
        for (x_train, y_train, x_val, y_val) in &split_designs {
            let model = match method {
                RegressionMethod::Lasso => lasso_fit(x_train, y_train, lambda)?,
                RegressionMethod::Ridge => ridge_fit(x_train, y_train, lambda)?,
            };
            let pred = predict(&model, x_val)?;
            total += crate::metrics::rmse(y_val, &pred)?;
        }
        mean_rmse.push(total / folds as f64);
    }

    let mut best = 0;
    for k in 1..grid.len() {
        let better = mean_rmse[k] < mean_rmse[best]
            || (mean_rmse[k] == mean_rmse[best] && grid[k] > grid[best]);
        if better {
            best = k;
        }
    }
    Ok(CvReport {
        grid: grid.to_vec(),
        mean_rmse,
        chosen: grid[best],
        folds,
    })
}
