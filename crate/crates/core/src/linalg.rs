//! Dense column-major matrices, index-backed sparse vectors, and the two
//! micro-operations used by every solver step: soft thresholding and
//! support-restricted matrix-vector multiplication.

use crate::error::{dim_err, invalid, Error, Result};

/// Dense matrix of f64 values with column-major storage.
///
/// A column holds one sample (e.g. one patch feature vector), so sample
/// access is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from column-major values. All entries must be finite
    /// and both dimensions at least 1.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!("matrix dimensions must be positive, got {rows}x{cols}"));
        }
        if values.len() != rows * cols {
            return dim_err(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return invalid(format!("non-finite matrix entry {v}"));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix whose j-th column is `columns[j]`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return invalid("matrix needs at least one column");
        }
        let rows = columns[0].len();
        if columns.iter().any(|c| c.len() != rows) {
            return dim_err("columns have inconsistent lengths");
        }
        let values: Vec<f64> = columns.iter().flat_map(|c| c.iter().copied()).collect();
        Self::from_vec(rows, columns.len(), values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::from_vec(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[col * self.rows + row]
    }

    /// Contiguous view of one column.
    pub fn col(&self, col: usize) -> &[f64] {
        &self.values[col * self.rows..(col + 1) * self.rows]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transposed(&self) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for j in 0..self.cols {
            for i in 0..self.rows {
                values[i * self.cols + j] = self.get(i, j);
            }
        }
        Self { rows: self.cols, cols: self.rows, values }
    }

    /// New matrix keeping only the listed columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return invalid("column selection is empty");
        }
        if let Some(&j) = indices.iter().find(|&&j| j >= self.cols) {
            return dim_err(format!("column index {j} out of range for {} columns", self.cols));
        }
        let columns: Vec<Vec<f64>> = indices.iter().map(|&j| self.col(j).to_vec()).collect();
        Self::from_columns(&columns)
    }

    /// New matrix keeping only the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return invalid("row selection is empty");
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.rows) {
            return dim_err(format!("row index {i} out of range for {} rows", self.rows));
        }
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for j in 0..self.cols {
            for &i in indices {
                values.push(self.get(i, j));
            }
        }
        Self::from_vec(indices.len(), self.cols, values)
    }
}

/// Sparse vector with an explicit, strictly increasing index set over the
/// nonzero entries. Positions are 0-based; every stored value is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    length: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCode {
    /// All-zero code of the given dimension.
    pub fn zeros(length: usize) -> Result<Self> {
        if length == 0 {
            return invalid("sparse code dimension must be positive");
        }
        Ok(Self { length, indices: Vec::new(), values: Vec::new() })
    }

    pub fn new(length: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if length == 0 {
            return invalid("sparse code dimension must be positive");
        }
        if indices.len() != values.len() {
            return dim_err(format!(
                "index/value length mismatch: {} vs {}",
                indices.len(),
                values.len()
            ));
        }
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return invalid("sparse code indices must be strictly increasing");
        }
        if let Some(&last) = indices.last() {
            if last >= length {
                return invalid(format!("index {last} out of range for dimension {length}"));
            }
        }
        if values.iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return invalid("sparse code values must be nonzero and finite");
        }
        Ok(Self { length, indices, values })
    }

    /// Sparsifies a dense vector, dropping exact zeros.
    pub fn from_dense(dense: &[f64]) -> Result<Self> {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (j, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                indices.push(j);
                values.push(v);
            }
        }
        Self::new(dense.len(), indices, values)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.length];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }

    /// Code dimension (not the number of nonzeros).
    pub fn dim(&self) -> usize {
        self.length
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// Soft thresholding shrinkage: sign(x) * max(|x| - phi, 0).
pub fn soft_threshold(x: f64, phi: f64) -> f64 {
    debug_assert!(phi >= 0.0);
    if x > phi {
        x - phi
    } else if x < -phi {
        x + phi
    } else {
        0.0
    }
}

/// Matrix-vector product `a * b` accumulating only the columns of `a` at
/// `b`'s nonzero indices. Equals the dense product.
pub fn sparse_mul(a: &FeatureMatrix, b: &SparseCode) -> Result<Vec<f64>> {
    if a.cols() != b.dim() {
        return dim_err(format!(
            "matrix has {} columns but code dimension is {}",
            a.cols(),
            b.dim()
        ));
    }
    let mut out = vec![0.0; a.rows()];
    for (j, v) in b.iter() {
        for (o, &aij) in out.iter_mut().zip(a.col(j)) {
            *o += aij * v;
        }
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[allow(dead_code)]
pub(crate) fn is_dim_error(e: &Error) -> bool {
    matches!(e, Error::DimensionMismatch(_))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_matches_definition() {
        assert!((soft_threshold(0.5, 0.1) - 0.4).abs() < 1e-15);
        assert!((soft_threshold(-0.3, 0.1) - (-0.2)).abs() < 1e-15);
        assert_eq!(soft_threshold(0.05, 0.1), 0.0);
        assert_eq!(soft_threshold(-0.05, 0.1), 0.0);
        assert_eq!(soft_threshold(0.0, 0.0), 0.0);
    }

    #[test]
    fn sparse_mul_identity_selects_value() {
        let a = FeatureMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = SparseCode::new(2, vec![0], vec![0.7]).unwrap();
        assert_eq!(sparse_mul(&a, &b).unwrap(), vec![0.7, 0.0]);
    }

    #[test]
    fn sparse_mul_empty_support_is_zero() {
        let a = FeatureMatrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = SparseCode::zeros(2).unwrap();
        assert_eq!(sparse_mul(&a, &b).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn sparse_mul_selects_single_column() {
        // Columns (1,3) and (2,4); unit weight on the second column.
        let a = FeatureMatrix::from_vec(2, 2, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let b = SparseCode::new(2, vec![1], vec![1.0]).unwrap();
        assert_eq!(sparse_mul(&a, &b).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn sparse_mul_rejects_dimension_mismatch() {
        let a = FeatureMatrix::from_vec(2, 2, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let b = SparseCode::zeros(3).unwrap();
        assert!(is_dim_error(&sparse_mul(&a, &b).unwrap_err()));
    }

    #[test]
    fn matrix_rejects_bad_shapes_and_values() {
        assert!(FeatureMatrix::from_vec(0, 1, vec![]).is_err());
        assert!(FeatureMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(FeatureMatrix::from_vec(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn matrix_row_and_column_selection() {
        let m = FeatureMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = m.select_columns(&[2, 0]).unwrap();
        assert_eq!(c.values(), &[5.0, 6.0, 1.0, 2.0]);
        let r = m.select_rows(&[1]).unwrap();
        assert_eq!(r.values(), &[2.0, 4.0, 6.0]);
        let t = m.transposed();
        assert_eq!(t.rows(), 3);
        assert_eq!(t.get(0, 1), 2.0);
        assert_eq!(t.transposed(), m);
    }

    #[test]
    fn sparse_code_validates_invariants() {
        assert!(SparseCode::new(3, vec![0, 0], vec![1.0, 2.0]).is_err());
        assert!(SparseCode::new(3, vec![2, 1], vec![1.0, 2.0]).is_err());
        assert!(SparseCode::new(3, vec![3], vec![1.0]).is_err());
        assert!(SparseCode::new(3, vec![1], vec![0.0]).is_err());
        assert!(SparseCode::new(3, vec![1], vec![f64::INFINITY]).is_err());
    }
}
