//! Seeded synthetic multi-task data with planted dictionaries: every task
//! mixes a common shared atom block with its own individual block, patches
//! are sparse combinations of atoms plus Gaussian noise, and per-subject
//! targets are a sparse linear readout of the pooled planted codes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use mtdl_core::{max_pool, Dictionary, FeatureMatrix, PatchGrouping, PoolMode, SparseCode};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub tasks: usize,
    pub feature_dim: usize,
    pub shared_atoms: usize,
    pub individual_atoms: usize,
    /// Nonzero entries per planted code.
    pub code_sparsity: usize,
    pub patches_per_task: usize,
    pub subjects: usize,
    pub noise: f64,
    /// Nonzero weights in the target readout.
    pub target_nnz: usize,
    pub target_count: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            tasks: 3,
            feature_dim: 32,
            shared_atoms: 8,
            individual_atoms: 8,
            code_sparsity: 3,
            patches_per_task: 2000,
            subjects: 50,
            noise: 0.01,
            target_nnz: 4,
            target_count: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let total = self.shared_atoms + self.individual_atoms;
        if self.tasks == 0 || self.feature_dim == 0 || total == 0 {
            return Err(CliError::config("synthetic spec needs tasks, features and atoms"));
        }
        if self.code_sparsity == 0 || self.code_sparsity > total {
            return Err(CliError::config(format!(
                "code sparsity {} impossible with {total} atoms",
                self.code_sparsity
            )));
        }
        if self.subjects == 0 || self.patches_per_task < self.subjects {
            return Err(CliError::config(format!(
                "{} patches cannot cover {} subjects",
                self.patches_per_task, self.subjects
            )));
        }
        if self.noise < 0.0 {
            return Err(CliError::config("noise level must be nonnegative"));
        }
        if self.target_count == 0 {
            return Err(CliError::config("at least one target column is required"));
        }
        let readout_dim = self.tasks * total;
        if self.target_nnz == 0 || self.target_nnz > readout_dim {
            return Err(CliError::config(format!(
                "target readout needs 1..={readout_dim} nonzero weights, got {}",
                self.target_nnz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub tasks: Vec<FeatureMatrix>,
    pub groupings: Vec<PatchGrouping>,
    pub subjects: Vec<String>,
    pub target_names: Vec<String>,
    /// Per subject (in `subjects` order), `target_count` values.
    pub target_rows: Vec<Vec<f64>>,
    pub planted_dictionaries: Vec<Dictionary>,
    pub planted_codes: Vec<Vec<SparseCode>>,
}

impl SyntheticData {
    pub fn target_pairs(&self) -> Vec<(String, Vec<f64>)> {
        self.subjects
            .iter()
            .cloned()
            .zip(self.target_rows.iter().cloned())
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha20Rng) -> f64 {
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_atom(rng: &mut ChaCha20Rng, dim: usize) -> Vec<f64> {
    loop {
        let col: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return col.iter().map(|v| v / norm).collect();
        }
    }
}

fn nonzero_gaussian(rng: &mut ChaCha20Rng) -> f64 {
    loop {
        let v = gaussian(rng);
        if v != 0.0 {
            return v;
        }
    }
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p = spec.feature_dim;
    let total_atoms = spec.shared_atoms + spec.individual_atoms;

    let shared: Vec<Vec<f64>> =
        (0..spec.shared_atoms).map(|_| unit_atom(&mut rng, p)).collect();

    let mut planted_dictionaries = Vec::with_capacity(spec.tasks);
    for _ in 0..spec.tasks {
        let mut atoms = Vec::with_capacity(p * total_atoms);
        for col in &shared {
            atoms.extend_from_slice(col);
        }
        for _ in 0..spec.individual_atoms {
            atoms.extend_from_slice(&unit_atom(&mut rng, p));
        }
        planted_dictionaries.push(Dictionary::new(
            p,
            spec.shared_atoms,
            spec.individual_atoms,
            atoms,
        )?);
    }

    let subjects: Vec<String> = {
        let width = spec.subjects.to_string().len().max(4);
        (1..=spec.subjects).map(|i| format!("s{i:0width$}")).collect()
    };

    // Patches distributed over subjects as evenly as possible, in subject
    // order, identically for every task.
    let mut patch_owner = Vec::with_capacity(spec.patches_per_task);
    let base = spec.patches_per_task / spec.subjects;
    let extra = spec.patches_per_task % spec.subjects;
    for (s, subject) in subjects.iter().enumerate() {
        let count = base + usize::from(s < extra);
        patch_owner.extend(std::iter::repeat_n(subject.clone(), count));
    }
    let grouping = PatchGrouping::new(patch_owner)?;

    let mut tasks = Vec::with_capacity(spec.tasks);
    let mut planted_codes = Vec::with_capacity(spec.tasks);
    for dict in &planted_dictionaries {
        let mut columns = Vec::with_capacity(spec.patches_per_task);
        let mut codes = Vec::with_capacity(spec.patches_per_task);
        for _ in 0..spec.patches_per_task {
            let mut support: Vec<usize> =
                sample(&mut rng, total_atoms, spec.code_sparsity).into_vec();
            support.sort_unstable();
            let values: Vec<f64> =
                support.iter().map(|_| nonzero_gaussian(&mut rng)).collect();
            let code = SparseCode::new(total_atoms, support, values)?;
            let mut x = dict.reconstruct(&code)?;
            for xi in x.iter_mut() {
                *xi += spec.noise * gaussian(&mut rng);
            }
            columns.push(x);
            codes.push(code);
        }
        tasks.push(FeatureMatrix::from_columns(&columns)?);
        planted_codes.push(codes);
    }

    // Target readout over the concatenated pooled planted codes.
    let mut pooled_per_subject: Vec<Vec<f64>> = vec![Vec::new(); spec.subjects];
    for codes in &planted_codes {
        let table = max_pool(codes, &grouping, PoolMode::AbsMax)?;
        for (s, features) in table.features.iter().enumerate() {
            pooled_per_subject[s].extend_from_slice(features);
        }
    }
    let readout_dim = spec.tasks * total_atoms;
    let target_names: Vec<String> =
        (1..=spec.target_count).map(|m| format!("y{m}")).collect();
    let mut target_rows = vec![Vec::with_capacity(spec.target_count); spec.subjects];
    for _ in 0..spec.target_count {
        let mut positions: Vec<usize> =
            sample(&mut rng, readout_dim, spec.target_nnz).into_vec();
        positions.sort_unstable();
        let weights: Vec<f64> =
            positions.iter().map(|_| nonzero_gaussian(&mut rng)).collect();
        for (s, pooled) in pooled_per_subject.iter().enumerate() {
            let signal: f64 =
                positions.iter().zip(&weights).map(|(&j, &w)| w * pooled[j]).sum();
            target_rows[s].push(signal + spec.noise * gaussian(&mut rng));
        }
    }

    Ok(SyntheticData {
        tasks,
        groupings: vec![grouping; spec.tasks],
        subjects,
        target_names,
        target_rows,
        planted_dictionaries,
        planted_codes,
    })
}
