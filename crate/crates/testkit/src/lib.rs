//! Slow, obviously-correct reference implementations used as oracles in
//! tests. Everything works on plain slices with column-major matrices and
//! shares no code with the crates under test.

/// sign(x) * max(|x| - t, 0).
pub fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Dense column-major matrix-vector product: `a` is rows x cols.
pub fn matvec(a: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(v.len(), cols);
    let mut out = vec![0.0; rows];
    for j in 0..cols {
        let col = &a[j * rows..(j + 1) * rows];
        for i in 0..rows {
            out[i] += col[i] * v[j];
        }
    }
    out
}

/// Dense column-major transposed product `a^T v`.
pub fn matvec_t(a: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(v.len(), rows);
    (0..cols)
        .map(|j| {
            let col = &a[j * rows..(j + 1) * rows];
            col.iter().zip(v).map(|(&c, &x)| c * x).sum()
        })
        .collect()
}

/// 0.5 * ||x - D z||^2 + lambda * ||z||_1, all dense.
pub fn lasso_objective(d: &[f64], rows: usize, cols: usize, x: &[f64], z: &[f64], lambda: f64) -> f64 {
    let recon = matvec(d, rows, cols, z);
    let err: f64 = recon.iter().zip(x).map(|(r, &xi)| (r - xi) * (r - xi)).sum();
    0.5 * err + lambda * z.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest eigenvalue of D^T D by power iteration (for safe step sizes).
pub fn spectral_sq_norm(d: &[f64], rows: usize, cols: usize) -> f64 {
    let mut v = vec![1.0; cols];
    let mut lambda = 1.0;
    for _ in 0..300 {
        let dv = matvec(d, rows, cols, &v);
        let mut next = matvec_t(d, rows, cols, &dv);
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in next.iter_mut() {
            *x /= norm;
        }
        lambda = norm;
        v = next;
    }
    lambda
}

/// Accelerated proximal gradient (FISTA) for
/// `min_z 0.5 ||x - D z||^2 + lambda ||z||_1`, run until the iterate moves
/// by less than `tol` in max norm or `max_iter` steps have passed.
pub fn fista_lasso_code(
    d: &[f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let lipschitz = spectral_sq_norm(d, rows, cols).max(1e-12) * 1.05;
    let step = 1.0 / lipschitz;
    let mut z = vec![0.0; cols];
    let mut y = vec![0.0; cols];
    let mut t: f64 = 1.0;
    for _ in 0..max_iter {
        let recon = matvec(d, rows, cols, &y);
        let resid: Vec<f64> = recon.iter().zip(x).map(|(r, &xi)| r - xi).collect();
        let grad = matvec_t(d, rows, cols, &resid);
        let mut next = vec![0.0; cols];
        let mut max_change: f64 = 0.0;
        for j in 0..cols {
            next[j] = soft(y[j] - step * grad[j], step * lambda);
            max_change = max_change.max((next[j] - z[j]).abs());
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        for j in 0..cols {
            y[j] = next[j] + (t - 1.0) / t_next * (next[j] - z[j]);
        }
        t = t_next;
        z = next;
        if max_change < tol {
            break;
        }
    }
    z
}

/// Plain proximal gradient (ISTA) for the regression lasso
/// `min_w (1/2n) ||y - X w||^2 + lambda ||w||_1` with `x` column-major
/// n x d. Runs the full iteration budget unless the iterate stops moving
/// at machine precision.
pub fn ista_lasso_regression(
    x: &[f64],
    n: usize,
    d: usize,
    y: &[f64],
    lambda: f64,
    max_iter: usize,
) -> Vec<f64> {
    let lipschitz = spectral_sq_norm(x, n, d).max(1e-12) / n as f64 * 1.05;
    let step = 1.0 / lipschitz;
    let mut w = vec![0.0; d];
    for _ in 0..max_iter {
        let pred = matvec(x, n, d, &w);
        let resid: Vec<f64> = pred.iter().zip(y).map(|(p, &yi)| p - yi).collect();
        let grad = matvec_t(x, n, d, &resid);
        let mut moved = false;
        for j in 0..d {
            let next = soft(w[j] - step * grad[j] / n as f64, step * lambda);
            if next != w[j] {
                moved = true;
                w[j] = next;
            }
        }
        if !moved {
            break;
        }
    }
    w
}

/// Cholesky solve of the symmetric positive-definite system `a w = b`
/// (column-major d x d). Independent route for ridge checks.
pub fn cholesky_solve(a: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), d * d);
    assert_eq!(b.len(), d);
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        for i in j..d {
            let mut sum = a[j * d + i];
            for k in 0..j {
                sum -= l[k * d + i] * l[k * d + j];
            }
            if i == j {
                assert!(sum > 0.0, "matrix not positive definite");
                l[j * d + j] = sum.sqrt();
            } else {
                l[j * d + i] = sum / l[j * d + j];
            }
        }
    }
    let mut fwd = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[k * d + i] * fwd[k];
        }
        fwd[i] = sum / l[i * d + i];
    }
    let mut w = vec![0.0; d];
    for i in (0..d).rev() {
        let mut sum = fwd[i];
        for k in i + 1..d {
            sum -= l[i * d + k] * w[k];
        }
        w[i] = sum / l[i * d + i];
    }
    w
}

/// One dictionary SGD step re-implemented densely: full-rank-one Hessian
/// accumulation, residual over every column, updates and ball projection on
/// the columns where `z` is nonzero.
pub struct DenseDictStep {
    pub dict: Vec<f64>,
    pub hessian: Vec<f64>,
}

pub fn dense_dict_step(
    dict: &[f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    z: &[f64],
    hessian: &[f64],
) -> DenseDictStep {
    assert_eq!(dict.len(), rows * cols);
    assert_eq!(z.len(), cols);
    assert_eq!(hessian.len(), cols * cols);

    let mut h = hessian.to_vec();
    for i in 0..cols {
        for j in 0..cols {
            h[j * cols + i] += z[i] * z[j];
        }
    }

    let recon = matvec(dict, rows, cols, z);
    let resid: Vec<f64> = recon.iter().zip(x).map(|(r, &xi)| r - xi).collect();

    let mut out = dict.to_vec();
    for mu in 0..cols {
        if z[mu] == 0.0 {
            continue;
        }
        let rate = z[mu] / h[mu * cols + mu];
        for i in 0..rows {
            out[mu * rows + i] -= rate * resid[i];
        }
        let norm: f64 = (0..rows)
            .map(|i| out[mu * rows + i] * out[mu * rows + i])
            .sum::<f64>()
            .sqrt();
        if norm > 1.0 {
            for i in 0..rows {
                out[mu * rows + i] /= norm;
            }
        }
    }
    DenseDictStep { dict: out, hessian: h }
}

/// Multi-task objective evaluated densely, without support shortcuts.
pub fn dense_multi_task_objective(
    tasks: &[(Vec<f64>, usize, usize)],
    dicts: &[(Vec<f64>, usize, usize)],
    codes: &[Vec<Vec<f64>>],
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for (t, (x, rows, cols)) in tasks.iter().enumerate() {
        let (d, drows, dcols) = &dicts[t];
        assert_eq!(rows, drows);
        for i in 0..*cols {
            let xi = &x[i * rows..(i + 1) * rows];
            let z = &codes[t][i];
            total += lasso_objective(d, *drows, *dcols, xi, z, lambda);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fista_solves_an_orthonormal_instance() {
        // Identity dictionary: solution is soft(x, lambda) per coordinate.
        let d = vec![1.0, 0.0, 0.0, 1.0];
        let x = vec![0.9, -0.3];
        let z = fista_lasso_code(&d, 2, 2, &x, 0.1, 1e-14, 100_000);
        assert!((z[0] - 0.8).abs() < 1e-10);
        assert!((z[1] + 0.2).abs() < 1e-10);
    }

    #[test]
    fn ista_regression_reaches_the_shrunk_solution() {
        // Orthogonal design with ||col||^2 = n: w_j = soft(corr_j, lambda).
        let x = vec![1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let y = vec![2.0, 0.0, 0.0, -2.0];
        let w = ista_lasso_regression(&x, 4, 2, &y, 0.25, 1_000_000);
        assert!((w[0] - 0.75).abs() < 1e-10, "w0 = {}", w[0]);
        assert!((w[1] - 0.75).abs() < 1e-10, "w1 = {}", w[1]);
    }

    #[test]
    fn cholesky_inverts_a_small_spd_system() {
        let a = vec![4.0, 1.0, 1.0, 3.0];
        let b = vec![1.0, 2.0];
        let w = cholesky_solve(&a, 2, &b);
        assert!((4.0 * w[0] + w[1] - 1.0).abs() < 1e-12);
        assert!((w[0] + 3.0 * w[1] - 2.0).abs() < 1e-12);
    }
}
