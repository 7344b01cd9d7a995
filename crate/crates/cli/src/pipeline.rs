//! End-to-end experiment protocol: subject-level train/test splits, joint
//! or per-task dictionary training on training-subject patches, encoding
//! and pooling of both splits, cross-validated regression per target, and
//! mean/std aggregation over repeated trials.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use mtdl_core::metrics::{self, StdMode, TaskEval};
use mtdl_core::{
    cross_validate, encode, lasso_fit, max_pool, predict, ridge_fit, train, Dictionary,
    FeatureMatrix, PatchGrouping, RegressionMethod, RegressionModel, SubjectFeatureTable,
    TrainConfig,
};

use crate::config::{ExperimentConfig, FeatureMode, TrainingMode};
use crate::error::{CliError, Result};
use crate::io::{self, ResultRow};
use crate::synth;

const STREAM_DATA: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_CV: u64 = 10;

/// splitmix64 of `master + stream * golden-ratio`, so nearby streams land
/// far apart.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut x = master.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything a repeat needs: task matrices, patch groupings, the stable
/// subject universe, and per-subject targets.
#[derive(Debug, Clone)]
pub struct PipelineData {
    pub tasks: Vec<FeatureMatrix>,
    pub groupings: Vec<PatchGrouping>,
    pub subjects: Vec<String>,
    pub target_names: Vec<String>,
    pub targets: HashMap<String, Vec<f64>>,
}

impl PipelineData {
    pub fn from_synthetic(data: synth::SyntheticData) -> Self {
        let targets = data
            .subjects
            .iter()
            .cloned()
            .zip(data.target_rows.iter().cloned())
            .collect();
        Self {
            tasks: data.tasks,
            groupings: data.groupings,
            subjects: data.subjects,
            target_names: data.target_names,
            targets,
        }
    }

    /// Subjects eligible for the regression stage under the feature mode.
    fn eligible_subjects(&self, mode: FeatureMode) -> Vec<String> {
        match mode {
            FeatureMode::Concat => self
                .subjects
                .iter()
                .filter(|s| {
                    self.groupings.iter().all(|g| g.subject_index(s).is_some())
                })
                .cloned()
                .collect(),
            FeatureMode::Last => {
                let last = self.groupings.last().expect("at least one task");
                self.subjects
                    .iter()
                    .filter(|s| last.subject_index(s).is_some())
                    .cloned()
                    .collect()
            }
        }
    }
}

/// Loads file-based data or synthesizes a dataset seeded from the master
/// seed.
pub fn load_data(config: &ExperimentConfig) -> Result<PipelineData> {
    config.validate()?;
    if config.tasks.is_empty() {
        let data = synth::generate(&config.synth, derive_seed(config.seed, STREAM_DATA))?;
        return Ok(PipelineData::from_synthetic(data));
    }
    let mut tasks = Vec::new();
    let mut groupings = Vec::new();
    for (task_path, grouping_path) in config.tasks.iter().zip(&config.groupings) {
        let matrix = io::load_matrix(task_path)?;
        let grouping = io::load_grouping(grouping_path)?;
        if grouping.patch_count() != matrix.cols() {
            return Err(CliError::config(format!(
                "{}: {} patches but grouping lists {}",
                task_path.display(),
                matrix.cols(),
                grouping.patch_count()
            )));
        }
        tasks.push(matrix);
        groupings.push(grouping);
    }
    let p = tasks[0].rows();
    if tasks.iter().any(|t| t.rows() != p) {
        return Err(CliError::config("task matrices disagree on feature dimension"));
    }

    let mut subjects = Vec::new();
    let mut seen = HashSet::new();
    for grouping in &groupings {
        for s in grouping.subjects() {
            if seen.insert(s.clone()) {
                subjects.push(s.clone());
            }
        }
    }

    let targets_path = config.targets.as_ref().expect("validated");
    let (target_names, rows) = io::load_targets(targets_path)?;
    let targets: HashMap<String, Vec<f64>> = rows.into_iter().collect();
    Ok(PipelineData { tasks, groupings, subjects, target_names, targets })
}

/// Metrics of one successful repeat.
#[derive(Debug, Clone)]
pub struct RepeatMetrics {
    pub rmse_per_target: Vec<f64>,
    pub nmse: f64,
    pub wr: f64,
    pub chosen_lambdas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub seed: u64,
    pub result: std::result::Result<RepeatMetrics, String>,
}

#[derive(Debug)]
pub struct PipelineReport {
    pub target_names: Vec<String>,
    pub repeats: Vec<RepeatOutcome>,
    pub summary: Vec<ResultRow>,
    pub failed: usize,
}

impl PipelineReport {
    pub fn mean_of(&self, metric: &str, task: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.metric == metric && r.task == task)
            .map(|r| r.mean)
    }

    /// Per successful repeat, the mean test rMSE across targets.
    pub fn repeat_mean_rmse(&self) -> Vec<f64> {
        self.repeats
            .iter()
            .filter_map(|o| o.result.as_ref().ok())
            .map(|m| m.rmse_per_target.iter().sum::<f64>() / m.rmse_per_target.len() as f64)
            .collect()
    }
}

fn subject_split(
    universe: &[String],
    ratio: f64,
    seed: u64,
) -> (Vec<String>, Vec<String>) {
    let mut order: Vec<usize> = (0..universe.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train_n = ((universe.len() as f64 * ratio).round() as usize)
        .clamp(1, universe.len().saturating_sub(1).max(1));
    let train_set: HashSet<usize> = order[..train_n].iter().copied().collect();
    let train = universe
        .iter()
        .enumerate()
        .filter(|(i, _)| train_set.contains(i))
        .map(|(_, s)| s.clone())
        .collect();
    let test = universe
        .iter()
        .enumerate()
        .filter(|(i, _)| !train_set.contains(i))
        .map(|(_, s)| s.clone())
        .collect();
    (train, test)
}

fn train_dictionaries(
    train_tasks: &[FeatureMatrix],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<Dictionary>> {
    let base = |shared: usize, individual: Vec<usize>, rng_seed: u64| TrainConfig {
        lambda: config.lambda,
        epochs: config.epochs,
        ccd_full_passes: config.ccd_full_passes,
        ccd_support_passes: config.ccd_support_passes,
        shared_atoms: shared,
        individual_atoms: individual,
        rng_seed,
        shuffle_samples: config.shuffle_samples,
    };
    match config.mode {
        TrainingMode::Joint => {
            let cfg = base(
                config.shared_atoms,
                vec![config.individual_atoms; train_tasks.len()],
                seed,
            );
            Ok(train(train_tasks, &cfg)?.dictionaries)
        }
        TrainingMode::Single => {
            let total = config.shared_atoms + config.individual_atoms;
            let mut dictionaries = Vec::with_capacity(train_tasks.len());
            for (t, task) in train_tasks.iter().enumerate() {
                let cfg = base(total, vec![0], derive_seed(seed, t as u64));
                let out = train(std::slice::from_ref(task), &cfg)?;
                dictionaries.push(out.dictionaries.into_iter().next().expect("one task"));
            }
            Ok(dictionaries)
        }
    }
}

struct PooledSplit {
    table: SubjectFeatureTable,
    index_of: HashMap<String, usize>,
}

fn encode_and_pool(
    dict: &Dictionary,
    patches: &FeatureMatrix,
    grouping: &PatchGrouping,
    config: &ExperimentConfig,
) -> Result<PooledSplit> {
    let result = encode(dict, patches, config.lambda, config.encode_tol, config.encode_max_sweeps)?;
    if !result.unconverged.is_empty() {
        eprintln!(
            "warning: {} of {} patch encodings hit the sweep cap",
            result.unconverged.len(),
            patches.cols()
        );
    }
    let table = max_pool(&result.codes, grouping, config.pool)?;
    let index_of = table
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    Ok(PooledSplit { table, index_of })
}

fn assemble_design(
    pooled: &[PooledSplit],
    subjects: &[String],
    mode: FeatureMode,
) -> Result<FeatureMatrix> {
    let use_tasks: Vec<usize> = match mode {
        FeatureMode::Concat => (0..pooled.len()).collect(),
        FeatureMode::Last => vec![pooled.len() - 1],
    };
    let mut rows = Vec::with_capacity(subjects.len());
    for subject in subjects {
        let mut row = Vec::new();
        for &t in &use_tasks {
            let idx = pooled[t].index_of.get(subject).ok_or_else(|| {
                CliError::config(format!("subject {subject:?} has no patches in task {t}"))
            })?;
            row.extend_from_slice(&pooled[t].table.features[*idx]);
        }
        rows.push(row);
    }
    let dim = rows[0].len();
    let columns: Vec<Vec<f64>> = (0..dim)
        .map(|k| rows.iter().map(|r| r[k]).collect())
        .collect();
    Ok(FeatureMatrix::from_columns(&columns)?)
}

fn fit_at(
    x: &FeatureMatrix,
    y: &[f64],
    method: RegressionMethod,
    lambda: f64,
) -> Result<RegressionModel> {
    Ok(match method {
        RegressionMethod::Lasso => lasso_fit(x, y, lambda)?,
        RegressionMethod::Ridge => ridge_fit(x, y, lambda)?,
    })
}

/// One repeat: split subjects, train on training-subject patches, encode
/// and pool both splits, cross-validate and fit per target, score on the
/// held-out subjects.
pub fn run_repeat(
    data: &PipelineData,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<RepeatMetrics> {
    let (train_subjects, test_subjects) =
        subject_split(&data.subjects, config.split, derive_seed(seed, STREAM_SPLIT));

    let eligible: HashSet<String> =
        data.eligible_subjects(config.feature_mode).into_iter().collect();
    let design_train: Vec<String> = train_subjects
        .iter()
        .filter(|s| eligible.contains(*s))
        .cloned()
        .collect();
    let design_test: Vec<String> = test_subjects
        .iter()
        .filter(|s| eligible.contains(*s))
        .cloned()
        .collect();
    if design_train.len() < config.cv_folds {
        return Err(CliError::config(format!(
            "{} training subjects cannot fill {} folds",
            design_train.len(),
            config.cv_folds
        )));
    }
    if design_test.len() < 2 {
        return Err(CliError::config("need at least two test subjects"));
    }
    for subject in design_train.iter().chain(&design_test) {
        if !data.targets.contains_key(subject) {
            return Err(CliError::config(format!("no targets for subject {subject:?}")));
        }
    }

    // Per-task training views restricted to training subjects.
    let mut train_matrices = Vec::with_capacity(data.tasks.len());
    let mut train_groupings = Vec::with_capacity(data.tasks.len());
    for (task, grouping) in data.tasks.iter().zip(&data.groupings) {
        let owned: Vec<String> = train_subjects
            .iter()
            .filter(|s| grouping.subject_index(s).is_some())
            .cloned()
            .collect();
        if owned.is_empty() {
            return Err(CliError::config("a task lost every training subject in the split"));
        }
        let patches = grouping.patches_of_subjects(&owned)?;
        train_matrices.push(task.select_columns(&patches)?);
        train_groupings.push(grouping.restricted_to(&patches)?);
    }

    let dictionaries =
        train_dictionaries(&train_matrices, config, derive_seed(seed, STREAM_TRAIN))?;

    // Encode and pool both splits for the tasks the feature mode uses.
    let used_tasks: Vec<usize> = match config.feature_mode {
        FeatureMode::Concat => (0..data.tasks.len()).collect(),
        FeatureMode::Last => vec![data.tasks.len() - 1],
    };
    let mut pooled_train: Vec<PooledSplit> = Vec::new();
    let mut pooled_test: Vec<PooledSplit> = Vec::new();
    for t in 0..data.tasks.len() {
        if !used_tasks.contains(&t) {
            // Placeholder keeps task indices aligned.
            pooled_train.push(PooledSplit {
                table: SubjectFeatureTable {
                    subjects: Vec::new(),
                    features: Vec::new(),
                    targets: Vec::new(),
                },
                index_of: HashMap::new(),
            });
            pooled_test.push(PooledSplit {
                table: SubjectFeatureTable {
                    subjects: Vec::new(),
                    features: Vec::new(),
                    targets: Vec::new(),
                },
                index_of: HashMap::new(),
            });
            continue;
        }
        pooled_train.push(encode_and_pool(
            &dictionaries[t],
            &train_matrices[t],
            &train_groupings[t],
            config,
        )?);
        let test_owned: Vec<String> = test_subjects
            .iter()
            .filter(|s| data.groupings[t].subject_index(s).is_some())
            .cloned()
            .collect();
        let patches = data.groupings[t].patches_of_subjects(&test_owned)?;
        let matrix = data.tasks[t].select_columns(&patches)?;
        let grouping = data.groupings[t].restricted_to(&patches)?;
        pooled_test.push(encode_and_pool(&dictionaries[t], &matrix, &grouping, config)?);
    }

    let x_train = assemble_design(&pooled_train, &design_train, config.feature_mode)?;
    let x_test = assemble_design(&pooled_test, &design_test, config.feature_mode)?;

    let grid = config.cv_grid();
    let mut rmse_per_target = Vec::with_capacity(data.target_names.len());
    let mut chosen_lambdas = Vec::with_capacity(data.target_names.len());
    let mut evals = Vec::with_capacity(data.target_names.len());
    for m in 0..data.target_names.len() {
        let y_train: Vec<f64> =
            design_train.iter().map(|s| data.targets[s][m]).collect();
        let y_test: Vec<f64> = design_test.iter().map(|s| data.targets[s][m]).collect();
        let report = cross_validate(
            &x_train,
            &y_train,
            config.regression,
            config.cv_folds,
            &grid,
            derive_seed(seed, STREAM_CV + m as u64),
        )?;
        let model = fit_at(&x_train, &y_train, config.regression, report.chosen)?;
        let pred = predict(&model, &x_test)?;
        rmse_per_target.push(metrics::rmse(&y_test, &pred)?);
        chosen_lambdas.push(report.chosen);
        evals.push(TaskEval::new(y_test, pred)?);
    }

    let nmse = metrics::nmse(&evals, StdMode::Population)?;
    let wr = metrics::weighted_corr(&evals)?;
    Ok(RepeatMetrics { rmse_per_target, nmse, wr, chosen_lambdas })
}

fn aggregate_rows(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], 0.0),
        _ => metrics::aggregate(values).expect("two or more trials"),
    }
}

/// Runs every repeat, writes `manifest.txt`, `results.csv`, `repeats.csv`
/// (and `failures.txt` when repeats fail) into the output directory, and
/// returns the aggregated report. Failed repeats are excluded from the
/// aggregation and counted in the manifest.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineReport> {
    let data = load_data(config)?;
    run_pipeline_on(&data, config)
}

/// Same as [`run_pipeline`] but with data supplied by the caller.
pub fn run_pipeline_on(
    data: &PipelineData,
    config: &ExperimentConfig,
) -> Result<PipelineReport> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::io(&config.out_dir, e))?;

    let mut repeats = Vec::with_capacity(config.repeats);
    for r in 0..config.repeats {
        let seed = derive_seed(config.seed, 1000 + r as u64);
        let result = run_repeat(data, config, seed).map_err(|e| e.to_string());
        repeats.push(RepeatOutcome { repeat: r, seed, result });
    }

    let successes: Vec<&RepeatMetrics> =
        repeats.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    let failed = repeats.len() - successes.len();

    let mut summary = Vec::new();
    for (m, name) in data.target_names.iter().enumerate() {
        let values: Vec<f64> = successes.iter().map(|s| s.rmse_per_target[m]).collect();
        let (mean, std) = aggregate_rows(&values);
        summary.push(ResultRow { metric: "rmse".into(), task: name.clone(), mean, std });
    }
    let nmse_values: Vec<f64> = successes.iter().map(|s| s.nmse).collect();
    let (mean, std) = aggregate_rows(&nmse_values);
    summary.push(ResultRow { metric: "nmse".into(), task: "all".into(), mean, std });
    let wr_values: Vec<f64> = successes.iter().map(|s| s.wr).collect();
    let (mean, std) = aggregate_rows(&wr_values);
    summary.push(ResultRow { metric: "wr".into(), task: "all".into(), mean, std });

    io::save_results(&config.out_dir.join("results.csv"), &summary)?;

    let mut repeat_csv = io::CsvWriter::create(
        &config.out_dir.join("repeats.csv"),
        "repeat,seed,metric,task,value",
    )?;
    for outcome in &repeats {
        if let Ok(metrics) = &outcome.result {
            for (m, name) in data.target_names.iter().enumerate() {
                repeat_csv.line(&format!(
                    "{},{},rmse,{},{}",
                    outcome.repeat,
                    outcome.seed,
                    name,
                    io::fmt_f64(metrics.rmse_per_target[m])
                ))?;
                repeat_csv.line(&format!(
                    "{},{},cv_lambda,{},{}",
                    outcome.repeat,
                    outcome.seed,
                    name,
                    io::fmt_f64(metrics.chosen_lambdas[m])
                ))?;
            }
            repeat_csv.line(&format!(
                "{},{},nmse,all,{}",
                outcome.repeat,
                outcome.seed,
                io::fmt_f64(metrics.nmse)
            ))?;
            repeat_csv.line(&format!(
                "{},{},wr,all,{}",
                outcome.repeat,
                outcome.seed,
                io::fmt_f64(metrics.wr)
            ))?;
        }
    }
    repeat_csv.finish()?;

    if failed > 0 {
        let mut text = String::new();
        for outcome in &repeats {
            if let Err(message) = &outcome.result {
                text.push_str(&format!(
                    "repeat {} (seed {}): {message}\n",
                    outcome.repeat, outcome.seed
                ));
            }
        }
        io::write_text(&config.out_dir.join("failures.txt"), &text)?;
    }

    let manifest = format!(
        "{}repeats_completed = {}\nrepeats_failed = {}\n",
        config.to_text(),
        successes.len(),
        failed
    );
    io::write_text(&config.out_dir.join("manifest.txt"), &manifest)?;

    Ok(PipelineReport { target_names: data.target_names.clone(), repeats, summary, failed })
}

/// One row of the dictionary-split sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub shared: usize,
    pub individual: usize,
    pub mean_rmse: f64,
    pub std_rmse: f64,
}

/// Reruns the pipeline once per shared:individual split on identical data
/// and writes one rMSE row per split to `sweep.csv`.
pub fn run_sweep(
    config: &ExperimentConfig,
    splits: &[(usize, usize)],
) -> Result<Vec<SweepRow>> {
    if splits.is_empty() {
        return Err(CliError::config("no dictionary splits given"));
    }
    let data = load_data(config)?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::io(&config.out_dir, e))?;
    let mut rows = Vec::with_capacity(splits.len());
    for &(shared, individual) in splits {
        let mut sub = config.clone();
        sub.shared_atoms = shared;
        sub.individual_atoms = individual;
        sub.out_dir = config.out_dir.join(format!("split_{shared}_{individual}"));
        let report = run_pipeline_on(&data, &sub)?;
        let per_repeat = report.repeat_mean_rmse();
        let (mean, std) = aggregate_rows(&per_repeat);
        rows.push(SweepRow { shared, individual, mean_rmse: mean, std_rmse: std });
    }
    let mut text = String::from("split,shared_atoms,individual_atoms,mean_rmse,std_rmse\n");
    for row in &rows {
        text.push_str(&format!(
            "{}:{},{},{},{},{}\n",
            row.shared,
            row.individual,
            row.shared,
            row.individual,
            io::fmt_f64(row.mean_rmse),
            io::fmt_f64(row.std_rmse)
        ));
    }
    io::write_text(&config.out_dir.join("sweep.csv"), &text)?;
    Ok(rows)
}

/// Parses `a:b` pairs like `250:1750,1000:1000`.
pub fn parse_splits(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| CliError::config(format!("bad split {pair:?}, expected a:b")))?;
            let shared = a
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("bad shared atom count {a:?}")))?;
            let individual = b
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("bad individual atom count {b:?}")))?;
            Ok((shared, individual))
        })
        .collect()
}

/// Writes a synthetic dataset to disk in the pipeline's file formats,
/// including the planted dictionaries and codes for inspection.
pub fn write_synthetic(dir: &Path, data: &synth::SyntheticData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (t, task) in data.tasks.iter().enumerate() {
        io::save_matrix(&dir.join(format!("task_{t:02}.bin")), task)?;
        io::save_grouping(&dir.join(format!("grouping_{t:02}.txt")), &data.groupings[t])?;
        io::save_dictionary(
            &dir.join(format!("planted_dict_{t:02}.bin")),
            &data.planted_dictionaries[t],
        )?;
        let codes: Vec<Vec<f64>> =
            data.planted_codes[t].iter().map(|c| c.to_dense()).collect();
        io::save_matrix(
            &dir.join(format!("planted_codes_{t:02}.bin")),
            &FeatureMatrix::from_columns(&codes)?,
        )?;
    }
    io::save_targets(&dir.join("targets.csv"), &data.target_names, &data.target_pairs())
}
