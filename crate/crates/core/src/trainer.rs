//! Joint dictionary learning over multiple tasks by stochastic coordinate
//! coding: each task owns a dictionary split into a shared atom block
//! (constrained equal across tasks) and a task-individual block. Per sample,
//! the sparse code is refreshed by cyclic coordinate descent and the active
//! dictionary atoms take one SGD step scaled by an accumulated Hessian
//! diagonal, followed by projection onto the unit ball.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{dot, norm2, soft_threshold, FeatureMatrix, SparseCode};

/// Atom norms may exceed 1 by at most this much after projection.
pub const NORM_TOL: f64 = 1e-12;

/// Per-task dictionary `[shared | individual]` with unit-ball columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    feature_dim: usize,
    shared_cols: usize,
    individual_cols: usize,
    /// Column-major, shared block first.
    atoms: Vec<f64>,
}

impl Dictionary {
    pub fn new(
        feature_dim: usize,
        shared_cols: usize,
        individual_cols: usize,
        atoms: Vec<f64>,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return invalid("dictionary feature dimension must be positive");
        }
        let total = shared_cols + individual_cols;
        if total == 0 {
            return invalid("dictionary needs at least one atom");
        }
        if atoms.len() != feature_dim * total {
            return dim_err(format!(
                "expected {} atom values, got {}",
                feature_dim * total,
                atoms.len()
            ));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite dictionary entry");
        }
        let dict = Self { feature_dim, shared_cols, individual_cols, atoms };
        for j in 0..total {
            let norm = dict.atom_norm(j);
            if norm > 1.0 + NORM_TOL {
                return invalid(format!("atom {j} has norm {norm} > 1"));
            }
        }
        Ok(dict)
    }

    pub fn from_matrix(matrix: &FeatureMatrix, shared_cols: usize) -> Result<Self> {
        if shared_cols > matrix.cols() {
            return dim_err(format!(
                "shared block of {shared_cols} atoms exceeds {} columns",
                matrix.cols()
            ));
        }
        Self::new(
            matrix.rows(),
            shared_cols,
            matrix.cols() - shared_cols,
            matrix.values().to_vec(),
        )
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn shared_cols(&self) -> usize {
        self.shared_cols
    }

    pub fn individual_cols(&self) -> usize {
        self.individual_cols
    }

    pub fn atom_count(&self) -> usize {
        self.shared_cols + self.individual_cols
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.feature_dim..(j + 1) * self.feature_dim]
    }

    fn atom_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.atoms[j * self.feature_dim..(j + 1) * self.feature_dim]
    }

    pub fn atom_norm(&self, j: usize) -> f64 {
        norm2(self.atom(j))
    }

    pub fn max_atom_norm(&self) -> f64 {
        (0..self.atom_count()).map(|j| self.atom_norm(j)).fold(0.0, f64::max)
    }

    /// The shared block, column-major (contiguous prefix of the storage).
    pub fn shared_block(&self) -> &[f64] {
        &self.atoms[..self.feature_dim * self.shared_cols]
    }

    pub(crate) fn set_shared_block(&mut self, phi: &[f64]) {
        debug_assert_eq!(phi.len(), self.feature_dim * self.shared_cols);
        self.atoms[..phi.len()].copy_from_slice(phi);
    }

    pub fn to_matrix(&self) -> FeatureMatrix {
        FeatureMatrix::from_vec(self.feature_dim, self.atom_count(), self.atoms.clone())
            .expect("dictionary storage is a valid matrix")
    }

    /// Reconstruction `D z` restricted to the code's support.
    pub fn reconstruct(&self, code: &SparseCode) -> Result<Vec<f64>> {
        if code.dim() != self.atom_count() {
            return dim_err(format!(
                "code dimension {} does not match {} atoms",
                code.dim(),
                self.atom_count()
            ));
        }
        let mut out = vec![0.0; self.feature_dim];
        for (j, v) in code.iter() {
            for (o, &d) in out.iter_mut().zip(self.atom(j)) {
                *o += d * v;
            }
        }
        Ok(out)
    }
}

/// Training hyperparameters. Defaults: lambda 0.1, 10 epochs, one full CCD
/// pass plus three support-restricted passes per sample, batch size fixed
/// at one sample.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub ccd_full_passes: usize,
    pub ccd_support_passes: usize,
    pub shared_atoms: usize,
    /// One entry per task.
    pub individual_atoms: Vec<usize>,
    pub rng_seed: u64,
    pub shuffle_samples: bool,
}

impl TrainConfig {
    pub fn new(shared_atoms: usize, individual_atoms: Vec<usize>) -> Self {
        Self {
            lambda: 0.1,
            epochs: 10,
            ccd_full_passes: 1,
            ccd_support_passes: 3,
            shared_atoms,
            individual_atoms,
            rng_seed: 0,
            shuffle_samples: false,
        }
    }

    pub fn validate(&self, task_count: usize) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return invalid(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.ccd_full_passes == 0 {
            return invalid("at least one full CCD pass is required");
        }
        if self.individual_atoms.len() != task_count {
            return dim_err(format!(
                "{} individual-atom counts for {} tasks",
                self.individual_atoms.len(),
                task_count
            ));
        }
        if self
            .individual_atoms
            .iter()
            .all(|&l| l == 0)
            && self.shared_atoms == 0
        {
            return invalid("dictionary needs at least one atom");
        }
        Ok(())
    }

    fn atom_count(&self, task: usize) -> usize {
        self.shared_atoms + self.individual_atoms[task]
    }
}

/// Mutable state threaded through training: the shared block, one Hessian
/// diagonal per task, and the epoch counter.
#[derive(Debug, Clone)]
pub struct TrainerState {
    /// Shared block, column-major `feature_dim x shared_atoms`.
    pub phi: Vec<f64>,
    /// Per task, accumulated `sum z_mu^2` per atom; nondecreasing.
    pub hessian_diag: Vec<Vec<f64>>,
    pub epoch: usize,
}

/// Everything `train` returns: per-task dictionaries (shared blocks all
/// equal), the retained per-sample codes, the per-epoch objective values,
/// and the final trainer state.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dictionaries: Vec<Dictionary>,
    pub codes: Vec<Vec<SparseCode>>,
    pub objective_trace: Vec<f64>,
    pub state: TrainerState,
}

/// Random-patch initialization: the shared block draws columns uniformly
/// without replacement from the pooled columns of all tasks, each individual
/// block from its own task. Selected columns are scaled to unit norm;
/// zero-norm columns are skipped in favor of the next candidate.
pub fn init_dictionaries(
    tasks: &[FeatureMatrix],
    config: &TrainConfig,
    rng_seed: u64,
) -> Result<Vec<Dictionary>> {
    if tasks.is_empty() {
        return invalid("no tasks given");
    }
    config.validate(tasks.len())?;
    let p = tasks[0].rows();
    if tasks.iter().any(|t| t.rows() != p) {
        return dim_err("tasks disagree on feature dimension");
    }
    let total_cols: usize = tasks.iter().map(|t| t.cols()).sum();
    if config.shared_atoms > total_cols {
        return invalid(format!(
            "{} shared atoms requested from {total_cols} pooled columns",
            config.shared_atoms
        ));
    }
    for (t, task) in tasks.iter().enumerate() {
        if config.individual_atoms[t] > task.cols() {
            return invalid(format!(
                "{} individual atoms requested from {} columns of task {t}",
                config.individual_atoms[t],
                task.cols()
            ));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);

    // Pooled candidates in task order; the shuffled prefix realizes a
    // uniform draw without replacement, skipping zero-norm columns.
    let pooled: Vec<(usize, usize)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(t, task)| (0..task.cols()).map(move |i| (t, i)))
        .collect();
    let shared = draw_unit_columns(&pooled, tasks, config.shared_atoms, &mut rng)?;

    let mut dictionaries = Vec::with_capacity(tasks.len());
    for (t, task) in tasks.iter().enumerate() {
        let own: Vec<(usize, usize)> = (0..task.cols()).map(|i| (t, i)).collect();
        let individual = draw_unit_columns(&own, tasks, config.individual_atoms[t], &mut rng)?;
        let mut atoms = Vec::with_capacity(p * config.atom_count(t));
        for col in shared.iter().chain(individual.iter()) {
            atoms.extend_from_slice(col);
        }
        dictionaries.push(Dictionary::new(
            p,
            config.shared_atoms,
            config.individual_atoms[t],
            atoms,
        )?);
    }
    Ok(dictionaries)
}

fn draw_unit_columns(
    candidates: &[(usize, usize)],
    tasks: &[FeatureMatrix],
    count: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(count);
    for idx in order {
        if out.len() == count {
            break;
        }
        let (t, i) = candidates[idx];
        let col = tasks[t].col(i);
        let norm = norm2(col);
        if norm > 0.0 {
            out.push(col.iter().map(|v| v / norm).collect());
        }
    }
    if out.len() < count {
        return Err(Error::DegenerateInput(format!(
            "only {} nonzero columns available for {count} atoms",
            out.len()
        )));
    }
    Ok(out)
}

/// Cyclic coordinate descent on one sample's code at a fixed dictionary:
/// `ccd_full_passes` sweeps over every coordinate (rebuilding the nonzero
/// index set), then `ccd_support_passes` sweeps restricted to that set.
/// Coordinates are visited in ascending order and each update sees the
/// current values of the others.
pub fn update_sparse_code(
    dict: &Dictionary,
    x: &[f64],
    code: &SparseCode,
    config: &TrainConfig,
) -> Result<SparseCode> {
    if x.len() != dict.feature_dim() {
        return dim_err(format!(
            "sample has {} entries, dictionary expects {}",
            x.len(),
            dict.feature_dim()
        ));
    }
    if code.dim() != dict.atom_count() {
        return dim_err(format!(
            "code dimension {} does not match {} atoms",
            code.dim(),
            dict.atom_count()
        ));
    }
    let mut z = code.to_dense();
    // resid = D z - x, maintained incrementally as coordinates move.
    let mut resid: Vec<f64> = dict.reconstruct(code)?;
    for (r, &xi) in resid.iter_mut().zip(x) {
        *r -= xi;
    }

    for _ in 0..config.ccd_full_passes {
        for j in 0..z.len() {
            coordinate_step(dict, config.lambda, j, &mut z, &mut resid);
        }
    }
    // The support is fixed after the full passes; values on it may cross
    // zero and come back during the restricted sweeps.
    let support: Vec<usize> =
        (0..z.len()).filter(|&j| z[j] != 0.0).collect();
    for _ in 0..config.ccd_support_passes {
        for &j in &support {
            coordinate_step(dict, config.lambda, j, &mut z, &mut resid);
        }
    }
    SparseCode::from_dense(&z)
}

#[inline]
fn coordinate_step(dict: &Dictionary, lambda: f64, j: usize, z: &mut [f64], resid: &mut [f64]) {
    let atom = dict.atom(j);
    let g = dot(atom, resid);
    let updated = soft_threshold(z[j] - g, lambda);
    let delta = updated - z[j];
    if delta != 0.0 {
        for (r, &d) in resid.iter_mut().zip(atom) {
            *r += delta * d;
        }
        z[j] = updated;
    }
}

/// One stochastic gradient step on the atoms active in `code`: accumulate
/// the Hessian diagonal, step each active column against the residual with
/// rate `1 / H(mu, mu)`, project columns with norm > 1 back onto the unit
/// ball, and write the shared block through to `state.phi`.
pub fn update_dictionary(
    dict: &mut Dictionary,
    x: &[f64],
    code: &SparseCode,
    state: &mut TrainerState,
    task: usize,
) -> Result<()> {
    if x.len() != dict.feature_dim() {
        return dim_err(format!(
            "sample has {} entries, dictionary expects {}",
            x.len(),
            dict.feature_dim()
        ));
    }
    if code.dim() != dict.atom_count() {
        return dim_err(format!(
            "code dimension {} does not match {} atoms",
            code.dim(),
            dict.atom_count()
        ));
    }
    if task >= state.hessian_diag.len()
        || state.hessian_diag[task].len() != dict.atom_count()
        || state.phi.len() != dict.shared_block().len()
    {
        return dim_err(format!("trainer state does not match task {task}"));
    }
    if code.nnz() == 0 {
        return Ok(());
    }
    let hessian = &mut state.hessian_diag[task];

    for (j, v) in code.iter() {
        hessian[j] += v * v;
    }

    let mut resid = dict.reconstruct(code)?;
    for (r, &xi) in resid.iter_mut().zip(x) {
        *r -= xi;
    }

    for (j, v) in code.iter() {
        let h = hessian[j];
        debug_assert!(h > 0.0, "active atom with zero Hessian mass");
        let rate = v / h;
        let atom = dict.atom_mut(j);
        for (a, &r) in atom.iter_mut().zip(&resid) {
            *a -= rate * r;
        }
        let norm = norm2(atom);
        if norm > 1.0 {
            for a in atom.iter_mut() {
                *a /= norm;
            }
        }
    }

    state.phi.copy_from_slice(dict.shared_block());
    Ok(())
}

/// Runs the full training loop: for each epoch, each task, each sample, the
/// shared block is copied in from `phi`, the sample's code is refreshed by
/// CCD, the active atoms take one SGD step, and the shared block is written
/// back. Sample codes persist across epochs; the objective is recorded once
/// per epoch. All returned dictionaries carry the final shared block.
pub fn train(tasks: &[FeatureMatrix], config: &TrainConfig) -> Result<TrainOutput> {
    let mut dictionaries = init_dictionaries(tasks, config, config.rng_seed)?;
    let mut codes: Vec<Vec<SparseCode>> = tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            (0..task.cols())
                .map(|_| SparseCode::zeros(config.atom_count(t)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    // Unit prior on the Hessian diagonal: with a zero prior the first
    // stochastic step on an atom is R / z_mu, unbounded for small z_mu,
    // and the 1/H schedule can never undo the damage.
    let mut state = TrainerState {
        phi: dictionaries[0].shared_block().to_vec(),
        hessian_diag: (0..tasks.len()).map(|t| vec![1.0; config.atom_count(t)]).collect(),
        epoch: 0,
    };
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(config.rng_seed.wrapping_add(1));
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        for (t, task) in tasks.iter().enumerate() {
            let mut order: Vec<usize> = (0..task.cols()).collect();
            if config.shuffle_samples {
                order.shuffle(&mut shuffle_rng);
            }
            for i in order {
                let x = task.col(i);
                dictionaries[t].set_shared_block(&state.phi);
                let code = update_sparse_code(&dictionaries[t], x, &codes[t][i], config)?;
                update_dictionary(&mut dictionaries[t], x, &code, &mut state, t)?;
                codes[t][i] = code;
            }
        }
        state.epoch = epoch;
        // The joint objective is defined under the equal-shared-block
        // constraint, so the epoch record uses the current shared block in
        // every task (the next sample visit would copy it in anyway).
        for dict in &mut dictionaries {
            dict.set_shared_block(&state.phi);
        }
        trace.push(objective(tasks, &dictionaries, &codes, config.lambda)?);
    }

    for dict in &mut dictionaries {
        dict.set_shared_block(&state.phi);
    }
    Ok(TrainOutput { dictionaries, codes, objective_trace: trace, state })
}

/// Joint objective: sum over tasks of half the squared reconstruction error
/// plus `lambda` times the code l1 mass.
pub fn objective(
    tasks: &[FeatureMatrix],
    dictionaries: &[Dictionary],
    codes: &[Vec<SparseCode>],
    lambda: f64,
) -> Result<f64> {
    if tasks.len() != dictionaries.len() || tasks.len() != codes.len() {
        return dim_err(format!(
            "{} tasks, {} dictionaries, {} code sets",
            tasks.len(),
            dictionaries.len(),
            codes.len()
        ));
    }
    let mut total = 0.0;
    for ((task, dict), task_codes) in tasks.iter().zip(dictionaries).zip(codes) {
        if task_codes.len() != task.cols() {
            return dim_err(format!(
                "{} codes for {} samples",
                task_codes.len(),
                task.cols()
            ));
        }
        for (i, code) in task_codes.iter().enumerate() {
            let recon = dict.reconstruct(code)?;
            let x = task.col(i);
            let err: f64 = recon.iter().zip(x).map(|(r, &xi)| (r - xi) * (r - xi)).sum();
            total += 0.5 * err + lambda * code.l1_norm();
        }
    }
    Ok(total)
}
