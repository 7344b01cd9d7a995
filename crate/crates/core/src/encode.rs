//! Inference-time sparse coding against a frozen dictionary, plus
//! max-pooling of per-patch codes into one feature vector per subject.

use std::collections::HashMap;
use std::str::FromStr;

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{dot, soft_threshold, FeatureMatrix, SparseCode};
use crate::trainer::Dictionary;

/// Codes for a batch of patches plus the columns that hit the sweep cap
/// before reaching the tolerance.
#[derive(Debug, Clone)]
pub struct EncodeResult {
    pub codes: Vec<SparseCode>,
    pub unconverged: Vec<usize>,
}

/// Solves the lasso subproblem per patch column at the fixed dictionary by
/// cyclic coordinate descent from a zero start, sweeping all coordinates
/// until the largest coordinate change drops below `tol` or `max_sweeps`
/// sweeps have run. Columns are independent of each other.
pub fn encode(
    dict: &Dictionary,
    patches: &FeatureMatrix,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<EncodeResult> {
    if patches.rows() != dict.feature_dim() {
        return dim_err(format!(
            "patches have {} rows, dictionary expects {}",
            patches.rows(),
            dict.feature_dim()
        ));
    }
    if !lambda.is_finite() || lambda <= 0.0 || !tol.is_finite() || tol <= 0.0 || max_sweeps == 0 {
        return invalid("encode needs lambda > 0, tol > 0 and max_sweeps >= 1");
    }
    let atoms = dict.atom_count();
    let mut codes = Vec::with_capacity(patches.cols());
    let mut unconverged = Vec::new();

    for i in 0..patches.cols() {
        let x = patches.col(i);
        let mut z = vec![0.0; atoms];
        // resid = D z - x.
        let mut resid: Vec<f64> = x.iter().map(|&v| -v).collect();
        let mut converged = false;
        for _ in 0..max_sweeps {
            let mut max_change: f64 = 0.0;
            for j in 0..atoms {
                let atom = dict.atom(j);
                let g = dot(atom, &resid);
                let updated = soft_threshold(z[j] - g, lambda);
                let delta = updated - z[j];
                if delta != 0.0 {
                    for (r, &d) in resid.iter_mut().zip(atom) {
                        *r += delta * d;
                    }
                    z[j] = updated;
                }
                max_change = max_change.max(delta.abs());
            }
            if max_change < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            unconverged.push(i);
        }
        codes.push(SparseCode::from_dense(&z)?);
    }
    Ok(EncodeResult { codes, unconverged })
}

/// Maps each patch to its owning subject. Subject order is the order of
/// first appearance and every subject owns at least one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrouping {
    subject_of: Vec<String>,
    subjects: Vec<String>,
    index_of: HashMap<String, usize>,
}

impl PatchGrouping {
    pub fn new(subject_of: Vec<String>) -> Result<Self> {
        if subject_of.is_empty() {
            return invalid("grouping has no patches");
        }
        let mut subjects = Vec::new();
        let mut index_of = HashMap::new();
        for subject in &subject_of {
            if !index_of.contains_key(subject) {
                index_of.insert(subject.clone(), subjects.len());
                subjects.push(subject.clone());
            }
        }
        Ok(Self { subject_of, subjects, index_of })
    }

    pub fn patch_count(&self) -> usize {
        self.subject_of.len()
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn subject_of(&self, patch: usize) -> &str {
        &self.subject_of[patch]
    }

    pub fn subject_labels(&self) -> &[String] {
        &self.subject_of
    }

    pub fn subject_index(&self, subject: &str) -> Option<usize> {
        self.index_of.get(subject).copied()
    }

    /// Patch indices owned by the listed subjects, in patch order.
    pub fn patches_of_subjects(&self, keep: &[String]) -> Result<Vec<usize>> {
        for s in keep {
            if !self.index_of.contains_key(s) {
                return Err(Error::InvalidInput(format!("unknown subject {s:?}")));
            }
        }
        let keep_set: HashMap<&str, ()> = keep.iter().map(|s| (s.as_str(), ())).collect();
        Ok((0..self.patch_count())
            .filter(|&i| keep_set.contains_key(self.subject_of(i)))
            .collect())
    }

    /// Grouping restricted to the given patches (same relative order).
    pub fn restricted_to(&self, patches: &[usize]) -> Result<Self> {
        if let Some(&i) = patches.iter().find(|&&i| i >= self.patch_count()) {
            return dim_err(format!("patch index {i} out of range"));
        }
        Self::new(patches.iter().map(|&i| self.subject_of[i].clone()).collect())
    }
}

/// How per-patch code values combine into one value per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    /// Value of largest magnitude, sign preserved; ties keep the earliest
    /// patch. Strong negative activations survive.
    #[default]
    AbsMax,
    /// Plain signed maximum over the pooled values (implicit zeros of
    /// inactive patches included).
    SignedMax,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absmax" => Ok(PoolMode::AbsMax),
            "signedmax" => Ok(PoolMode::SignedMax),
            other => Err(Error::InvalidInput(format!(
                "unknown pool mode {other:?}, expected absmax or signedmax"
            ))),
        }
    }
}

impl std::fmt::Display for PoolMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolMode::AbsMax => write!(f, "absmax"),
            PoolMode::SignedMax => write!(f, "signedmax"),
        }
    }
}

/// One fixed-length feature vector per subject, with optional named target
/// columns carried alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectFeatureTable {
    pub subjects: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<(String, Vec<f64>)>,
}

impl SubjectFeatureTable {
    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Reduces per-patch codes to one vector per subject, coordinate-wise, in
/// the grouping's subject order.
pub fn max_pool(
    codes: &[SparseCode],
    grouping: &PatchGrouping,
    mode: PoolMode,
) -> Result<SubjectFeatureTable> {
    if codes.len() != grouping.patch_count() {
        return dim_err(format!(
            "{} codes for {} patches",
            codes.len(),
            grouping.patch_count()
        ));
    }
    let dim = codes[0].dim();
    if codes.iter().any(|c| c.dim() != dim) {
        return dim_err("codes disagree on dimension");
    }
    let n_subjects = grouping.subjects().len();
    let features = match mode {
        PoolMode::AbsMax => {
            let mut features: Vec<Vec<f64>> = vec![vec![0.0; dim]; n_subjects];
            for (i, code) in codes.iter().enumerate() {
                let s = grouping
                    .subject_index(grouping.subject_of(i))
                    .expect("grouping subjects cover all patches");
                let feat = &mut features[s];
                for (j, v) in code.iter() {
                    if v.abs() > feat[j].abs() {
                        feat[j] = v;
                    }
                }
            }
            features
        }
        PoolMode::SignedMax => {
            let mut patch_counts = vec![0usize; n_subjects];
            let mut active_counts = vec![vec![0usize; dim]; n_subjects];
            let mut max_active = vec![vec![f64::NEG_INFINITY; dim]; n_subjects];
            for (i, code) in codes.iter().enumerate() {
                let s = grouping
                    .subject_index(grouping.subject_of(i))
                    .expect("grouping subjects cover all patches");
                patch_counts[s] += 1;
                for (j, v) in code.iter() {
                    active_counts[s][j] += 1;
                    if v > max_active[s][j] {
                        max_active[s][j] = v;
                    }
                }
            }
            (0..n_subjects)
                .map(|s| {
                    (0..dim)
                        .map(|j| {
                            if active_counts[s][j] < patch_counts[s] {
                                // Some patch is implicitly zero at j.
                                max_active[s][j].max(0.0)
                            } else {
                                max_active[s][j]
                            }
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok(SubjectFeatureTable {
        subjects: grouping.subjects().to_vec(),
        features,
        targets: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TrainConfig;

    fn identity_dict(n: usize) -> Dictionary {
        let mut atoms = vec![0.0; n * n];
        for j in 0..n {
            atoms[j * n + j] = 1.0;
        }
        Dictionary::new(n, n, 0, atoms).unwrap()
    }

    #[test]
    fn encode_zero_signal_gives_zero_code() {
        let dict = identity_dict(3);
        let patches = FeatureMatrix::zeros(3, 2).unwrap();
        let result = encode(&dict, &patches, 0.1, 1e-8, 100).unwrap();
        assert!(result.codes.iter().all(|c| c.nnz() == 0));
        assert!(result.unconverged.is_empty());
    }

    #[test]
    fn encode_orthonormal_dictionary_matches_closed_form() {
        // For orthonormal atoms the lasso solution is the thresholded
        // correlation, reached in one sweep.
        let dict = identity_dict(4);
        let x = vec![0.5, -0.05, 0.2, -0.3];
        let patches = FeatureMatrix::from_vec(4, 1, x.clone()).unwrap();
        let result = encode(&dict, &patches, 0.1, 1e-12, 100).unwrap();
        let expected: Vec<f64> = x.iter().map(|&v| soft_threshold(v, 0.1)).collect();
        assert_eq!(result.codes[0].to_dense(), expected);
    }

    #[test]
    fn encode_columns_are_independent() {
        let dict = test_dictionary();
        let all = deterministic_patches(dict.feature_dim(), 5, 0.3);
        let batch = encode(&dict, &all, 0.1, 1e-10, 500).unwrap();
        for i in 0..all.cols() {
            let single = all.select_columns(&[i]).unwrap();
            let one = encode(&dict, &single, 0.1, 1e-10, 500).unwrap();
            assert_eq!(one.codes[0], batch.codes[i]);
        }
    }

    #[test]
    fn encode_matches_training_ccd_at_convergence() {
        let dict = test_dictionary();
        let patches = deterministic_patches(dict.feature_dim(), 3, 0.9);
        let encoded = encode(&dict, &patches, 0.1, 1e-12, 2000).unwrap();
        let mut cfg = TrainConfig::new(dict.shared_cols(), vec![dict.individual_cols()]);
        cfg.lambda = 0.1;
        for i in 0..patches.cols() {
            let mut z = SparseCode::zeros(dict.atom_count()).unwrap();
            for _ in 0..2000 {
                let next =
                    crate::trainer::update_sparse_code(&dict, patches.col(i), &z, &cfg).unwrap();
                let diff: f64 = next
                    .to_dense()
                    .iter()
                    .zip(z.to_dense())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                z = next;
                if diff < 1e-12 {
                    break;
                }
            }
            for (a, b) in z.to_dense().iter().zip(encoded.codes[i].to_dense()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pooling_singleton_subject_is_verbatim() {
        let grouping = PatchGrouping::new(vec!["a".into()]).unwrap();
        let code = SparseCode::new(3, vec![0, 2], vec![1.5, -0.5]).unwrap();
        let table = max_pool(std::slice::from_ref(&code), &grouping, PoolMode::AbsMax).unwrap();
        assert_eq!(table.features[0], code.to_dense());
    }

    #[test]
    fn pooling_keeps_sign_of_largest_magnitude() {
        let grouping = PatchGrouping::new(vec!["a".into(), "a".into()]).unwrap();
        let c1 = SparseCode::from_dense(&[2.0, -1.0]).unwrap();
        let c2 = SparseCode::from_dense(&[-3.0, 0.5]).unwrap();
        let table = max_pool(&[c1.clone(), c2.clone()], &grouping, PoolMode::AbsMax).unwrap();
        assert_eq!(table.features[0], vec![-3.0, -1.0]);
        // Signed pooling instead takes the plain maximum per coordinate.
        let table = max_pool(&[c1, c2], &grouping, PoolMode::SignedMax).unwrap();
        assert_eq!(table.features[0], vec![2.0, 0.5]);
    }

    #[test]
    fn pooling_all_zero_codes_gives_zero_features() {
        let grouping = PatchGrouping::new(vec!["a".into(), "b".into(), "a".into()]).unwrap();
        let codes = vec![
            SparseCode::zeros(2).unwrap(),
            SparseCode::zeros(2).unwrap(),
            SparseCode::zeros(2).unwrap(),
        ];
        let table = max_pool(&codes, &grouping, PoolMode::AbsMax).unwrap();
        assert_eq!(table.subjects, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(table.features, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let table = max_pool(&codes, &grouping, PoolMode::SignedMax).unwrap();
        assert_eq!(table.features, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn pooling_signed_max_keeps_all_negative_pools() {
        let grouping = PatchGrouping::new(vec!["a".into(), "a".into()]).unwrap();
        let c1 = SparseCode::from_dense(&[-2.0, 1.0]).unwrap();
        let c2 = SparseCode::from_dense(&[-0.5, 2.0]).unwrap();
        let table = max_pool(&[c1, c2], &grouping, PoolMode::SignedMax).unwrap();
        assert_eq!(table.features[0], vec![-0.5, 2.0]);
    }

    #[test]
    fn pooling_rejects_count_mismatch_and_empty_grouping() {
        assert!(PatchGrouping::new(vec![]).is_err());
        let grouping = PatchGrouping::new(vec!["a".into()]).unwrap();
        let codes = vec![
            SparseCode::zeros(2).unwrap(),
            SparseCode::zeros(2).unwrap(),
        ];
        assert!(max_pool(&codes, &grouping, PoolMode::AbsMax).is_err());
        assert!(grouping.patches_of_subjects(&["nope".to_string()]).is_err());
    }

    #[test]
    fn pooling_is_permutation_invariant_for_distinct_magnitudes() {
        let grouping = PatchGrouping::new(vec!["a".into(); 4]).unwrap();
        let codes: Vec<SparseCode> = [
            vec![0.1, -4.0, 0.0],
            vec![-2.0, 1.0, 0.5],
            vec![3.0, 0.0, -0.25],
            vec![-0.5, 2.0, 1.5],
        ]
        .iter()
        .map(|v| SparseCode::from_dense(v).unwrap())
        .collect();
        let forward = max_pool(&codes, &grouping, PoolMode::AbsMax).unwrap();
        let mut reversed = codes.clone();
        reversed.reverse();
        let backward = max_pool(&reversed, &grouping, PoolMode::AbsMax).unwrap();
        assert_eq!(forward.features, backward.features);
        assert_eq!(forward.features[0], vec![3.0, -4.0, 1.5]);
    }

    fn test_dictionary() -> Dictionary {
        let p = 6;
        let l = 9;
        let mut atoms = Vec::with_capacity(p * l);
        for j in 0..l {
            let col: Vec<f64> =
                (0..p).map(|i| ((i * 7 + j * 3) as f64 * 0.61).sin()).collect();
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            atoms.extend(col.iter().map(|v| v / norm));
        }
        Dictionary::new(p, 4, 5, atoms).unwrap()
    }

    fn deterministic_patches(rows: usize, cols: usize, phase: f64) -> FeatureMatrix {
        let values: Vec<f64> = (0..rows * cols)
            .map(|k| (phase + k as f64 * 0.83).cos() * 0.9)
            .collect();
        FeatureMatrix::from_vec(rows, cols, values).unwrap()
    }
}
