//! Experiment configuration: a flat `key = value` text format with `#`
//! comments. Every run copies its resolved configuration into the output
//! directory, so the same format doubles as the run manifest.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use mtdl_core::{PoolMode, RegressionMethod};

use crate::error::{CliError, Result};
use crate::synth::SynthSpec;

/// How dictionaries are trained across tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainingMode {
    /// One joint run; the shared block is threaded through all tasks.
    #[default]
    Joint,
    /// Each task trained on its own with an undivided dictionary.
    Single,
}

impl FromStr for TrainingMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(TrainingMode::Joint),
            "single" => Ok(TrainingMode::Single),
            other => Err(CliError::config(format!(
                "unknown mode {other:?}, expected joint or single"
            ))),
        }
    }
}

impl std::fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainingMode::Joint => write!(f, "joint"),
            TrainingMode::Single => write!(f, "single"),
        }
    }
}

/// Which per-task feature tables feed the regression design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Concatenate every task's pooled features per subject.
    #[default]
    Concat,
    /// Use only the last task's pooled features.
    Last,
}

impl FromStr for FeatureMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FeatureMode::Concat),
            "last" => Ok(FeatureMode::Last),
            other => Err(CliError::config(format!(
                "unknown feature mode {other:?}, expected concat or last"
            ))),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureMode::Concat => write!(f, "concat"),
            FeatureMode::Last => write!(f, "last"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repeats: usize,
    /// Training fraction of the subject-level split.
    pub split: f64,
    pub mode: TrainingMode,
    pub lambda: f64,
    pub epochs: usize,
    pub ccd_full_passes: usize,
    pub ccd_support_passes: usize,
    pub shared_atoms: usize,
    pub individual_atoms: usize,
    pub shuffle_samples: bool,
    pub pool: PoolMode,
    pub feature_mode: FeatureMode,
    pub regression: RegressionMethod,
    pub cv_folds: usize,
    pub cv_grid_min: f64,
    pub cv_grid_max: f64,
    pub cv_grid_points: usize,
    pub encode_tol: f64,
    pub encode_max_sweeps: usize,
    pub out_dir: PathBuf,
    /// Task matrices; when empty the pipeline generates synthetic data.
    pub tasks: Vec<PathBuf>,
    pub groupings: Vec<PathBuf>,
    pub targets: Option<PathBuf>,
    pub synth: SynthSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 40,
            split: 0.8,
            mode: TrainingMode::Joint,
            lambda: 0.1,
            epochs: 10,
            ccd_full_passes: 1,
            ccd_support_passes: 3,
            shared_atoms: 8,
            individual_atoms: 8,
            shuffle_samples: false,
            pool: PoolMode::AbsMax,
            feature_mode: FeatureMode::Concat,
            regression: RegressionMethod::Lasso,
            cv_folds: 5,
            cv_grid_min: 1e-3,
            cv_grid_max: 1e3,
            cv_grid_points: 13,
            encode_tol: 1e-6,
            encode_max_sweeps: 200,
            out_dir: PathBuf::from("mtdl-out"),
            tasks: Vec::new(),
            groupings: Vec::new(),
            targets: None,
            synth: SynthSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(CliError::config(format!(
                "split must lie in (0, 1), got {}",
                self.split
            )));
        }
        if self.repeats == 0 {
            return Err(CliError::config("repeats must be at least 1"));
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(CliError::config("lambda must be positive"));
        }
        if self.cv_grid_points == 0
            || !self.cv_grid_min.is_finite()
            || self.cv_grid_min <= 0.0
            || self.cv_grid_max < self.cv_grid_min
        {
            return Err(CliError::config("invalid cross-validation grid"));
        }
        if self.cv_folds < 2 {
            return Err(CliError::config("cv_folds must be at least 2"));
        }
        if !self.tasks.is_empty() {
            if self.groupings.len() != self.tasks.len() {
                return Err(CliError::config(format!(
                    "{} groupings for {} task files",
                    self.groupings.len(),
                    self.tasks.len()
                )));
            }
            if self.targets.is_none() {
                return Err(CliError::config("task files given without a targets file"));
            }
        }
        self.synth.validate()?;
        Ok(())
    }

    /// The log-spaced regularization grid.
    pub fn cv_grid(&self) -> Vec<f64> {
        if self.cv_grid_points == 1 {
            return vec![self.cv_grid_min];
        }
        let lo = self.cv_grid_min.log10();
        let hi = self.cv_grid_max.log10();
        let step = (hi - lo) / (self.cv_grid_points - 1) as f64;
        (0..self.cv_grid_points)
            .map(|k| 10f64.powf(lo + step * k as f64))
            .collect()
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::parse(path, lineno + 1, "expected key = value"))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| CliError::parse(path, lineno + 1, e.to_string()))?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| CliError::config(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "split" => self.split = num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "lambda" => self.lambda = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => {
                if value != "1" {
                    return Err(CliError::config("batch size is fixed at 1"));
                }
            }
            "ccd_full_passes" => self.ccd_full_passes = num(key, value)?,
            "ccd_support_passes" => self.ccd_support_passes = num(key, value)?,
            "shared_atoms" => self.shared_atoms = num(key, value)?,
            "individual_atoms" => self.individual_atoms = num(key, value)?,
            "shuffle_samples" => self.shuffle_samples = num(key, value)?,
            "pool" => self.pool = value.parse().map_err(|e: mtdl_core::Error| CliError::config(e.to_string()))?,
            "feature_mode" => self.feature_mode = value.parse()?,
            "regression" => {
                self.regression =
                    value.parse().map_err(|e: mtdl_core::Error| CliError::config(e.to_string()))?
            }
            "cv_folds" => self.cv_folds = num(key, value)?,
            "cv_grid_min" => self.cv_grid_min = num(key, value)?,
            "cv_grid_max" => self.cv_grid_max = num(key, value)?,
            "cv_grid_points" => self.cv_grid_points = num(key, value)?,
            "encode_tol" => self.encode_tol = num(key, value)?,
            "encode_max_sweeps" => self.encode_max_sweeps = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "tasks" => self.tasks = split_paths(value),
            "groupings" => self.groupings = split_paths(value),
            "targets" => {
                self.targets = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            "synth_tasks" => self.synth.tasks = num(key, value)?,
            "synth_feature_dim" => self.synth.feature_dim = num(key, value)?,
            "synth_shared_atoms" => self.synth.shared_atoms = num(key, value)?,
            "synth_individual_atoms" => self.synth.individual_atoms = num(key, value)?,
            "synth_code_sparsity" => self.synth.code_sparsity = num(key, value)?,
            "synth_patches_per_task" => self.synth.patches_per_task = num(key, value)?,
            "synth_subjects" => self.synth.subjects = num(key, value)?,
            "synth_noise" => self.synth.noise = num(key, value)?,
            "synth_target_nnz" => self.synth.target_nnz = num(key, value)?,
            "synth_target_count" => self.synth.target_count = num(key, value)?,
            other => {
                return Err(CliError::config(format!("unknown configuration key {other:?}")))
            }
        }
        Ok(())
    }

    /// Resolved configuration as config-file text (also the run manifest
    /// body). `batch_size` is echoed even though it is not settable: the
    /// trainer visits one sample per update by construction.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("repeats", self.repeats.to_string());
        kv("split", crate::io::fmt_f64(self.split));
        kv("mode", self.mode.to_string());
        kv("lambda", crate::io::fmt_f64(self.lambda));
        kv("epochs", self.epochs.to_string());
        kv("batch_size", "1".to_string());
        kv("ccd_full_passes", self.ccd_full_passes.to_string());
        kv("ccd_support_passes", self.ccd_support_passes.to_string());
        kv("shared_atoms", self.shared_atoms.to_string());
        kv("individual_atoms", self.individual_atoms.to_string());
        kv("shuffle_samples", self.shuffle_samples.to_string());
        kv("pool", self.pool.to_string());
        kv("feature_mode", self.feature_mode.to_string());
        kv("regression", self.regression.to_string());
        kv("cv_folds", self.cv_folds.to_string());
        kv("cv_grid_min", crate::io::fmt_f64(self.cv_grid_min));
        kv("cv_grid_max", crate::io::fmt_f64(self.cv_grid_max));
        kv("cv_grid_points", self.cv_grid_points.to_string());
        kv("encode_tol", crate::io::fmt_f64(self.encode_tol));
        kv("encode_max_sweeps", self.encode_max_sweeps.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        if !self.tasks.is_empty() {
            kv("tasks", join_paths(&self.tasks));
            kv("groupings", join_paths(&self.groupings));
            if let Some(t) = &self.targets {
                kv("targets", t.display().to_string());
            }
        }
        kv("synth_tasks", self.synth.tasks.to_string());
        kv("synth_feature_dim", self.synth.feature_dim.to_string());
        kv("synth_shared_atoms", self.synth.shared_atoms.to_string());
        kv("synth_individual_atoms", self.synth.individual_atoms.to_string());
        kv("synth_code_sparsity", self.synth.code_sparsity.to_string());
        kv("synth_patches_per_task", self.synth.patches_per_task.to_string());
        kv("synth_subjects", self.synth.subjects.to_string());
        kv("synth_noise", crate::io::fmt_f64(self.synth.noise));
        kv("synth_target_nnz", self.synth.target_nnz.to_string());
        kv("synth_target_count", self.synth.target_count.to_string());
        out
    }
}

fn split_paths(value: &str) -> Vec<PathBuf> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect()
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.epochs, 10);
        assert_eq!(c.ccd_full_passes, 1);
        assert_eq!(c.ccd_support_passes, 3);
        assert_eq!(c.split, 0.8);
        assert_eq!(c.repeats, 40);
        assert_eq!(c.cv_folds, 5);
        assert_eq!(c.cv_grid_min, 1e-3);
        assert_eq!(c.cv_grid_max, 1e3);
        assert_eq!(c.cv_grid_points, 13);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn grid_is_log_spaced_and_spans_the_range() {
        let c = ExperimentConfig::default();
        let grid = c.cv_grid();
        assert_eq!(grid.len(), 13);
        assert!((grid[0] - 1e-3).abs() < 1e-15);
        assert!((grid[12] - 1e3).abs() < 1e-9);
        for w in grid.windows(2) {
            assert!((w[1] / w[0] - 10f64.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = ExperimentConfig {
            seed: 99,
            mode: TrainingMode::Single,
            pool: PoolMode::SignedMax,
            feature_mode: FeatureMode::Last,
            regression: RegressionMethod::Ridge,
            ..ExperimentConfig::default()
        };
        c.synth.noise = 0.25;
        let dir = std::env::temp_dir().join(format!("mtdl-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.cfg");
        std::fs::write(&path, c.to_text()).unwrap();
        let parsed = ExperimentConfig::parse_file(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(parsed, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = ExperimentConfig::default();
        assert!(c.set("lambdaa", "0.1").is_err());
        assert!(c.set("mode", "both").is_err());
    }
}
