use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtdl_cli::config::ExperimentConfig;
use mtdl_cli::error::{CliError, Result};
use mtdl_cli::{io, pipeline, synth};
use mtdl_core::metrics::{self, StdMode, TaskEval};
use mtdl_core::{
    cross_validate, encode, lasso_fit, max_pool, predict, ridge_fit, train, FeatureMatrix,
    RegressionMethod, SparseCode, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "mtdl",
    version,
    about = "Multi-task dictionary learning: train shared/individual dictionaries, encode and \
             pool patch features, regress subject targets, evaluate predictions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the config-driven subcommands; each overrides the
/// matching key of `--config` when given.
#[derive(Args, Default)]
struct Overrides {
    /// Configuration file (flat `key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of repeated trials
    #[arg(long)]
    repeats: Option<usize>,
    /// Training fraction of the subject split, e.g. 0.8
    #[arg(long)]
    split: Option<f64>,
    /// Training mode: joint | single
    #[arg(long)]
    mode: Option<String>,
    /// Sparsity weight
    #[arg(long)]
    lambda: Option<f64>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Full CCD passes per sample
    #[arg(long)]
    ccd_full_passes: Option<usize>,
    /// Support-restricted CCD passes per sample
    #[arg(long)]
    ccd_support_passes: Option<usize>,
    /// Shared atoms in the learned dictionaries
    #[arg(long)]
    shared_atoms: Option<usize>,
    /// Individual atoms per task in the learned dictionaries
    #[arg(long)]
    individual_atoms: Option<usize>,
    /// Shuffle sample order each epoch
    #[arg(long)]
    shuffle_samples: Option<bool>,
    /// Pooling mode: absmax | signedmax
    #[arg(long)]
    pool: Option<String>,
    /// Feature assembly: concat | last
    #[arg(long)]
    feature_mode: Option<String>,
    /// Regression method: lasso | ridge
    #[arg(long)]
    regression: Option<String>,
    /// Cross-validation folds
    #[arg(long)]
    cv_folds: Option<usize>,
    /// Output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated task matrix files (omit to use synthetic data)
    #[arg(long)]
    tasks: Option<String>,
    /// Comma-separated grouping files, one per task
    #[arg(long)]
    groupings: Option<String>,
    /// Targets CSV
    #[arg(long)]
    targets: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::parse_file(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($field:ident, $key:literal) => {
                if let Some(v) = &self.$field {
                    config.set($key, &v.to_string())?;
                }
            };
        }
        set!(seed, "seed");
        set!(repeats, "repeats");
        set!(split, "split");
        set!(mode, "mode");
        set!(lambda, "lambda");
        set!(epochs, "epochs");
        set!(ccd_full_passes, "ccd_full_passes");
        set!(ccd_support_passes, "ccd_support_passes");
        set!(shared_atoms, "shared_atoms");
        set!(individual_atoms, "individual_atoms");
        set!(shuffle_samples, "shuffle_samples");
        set!(pool, "pool");
        set!(feature_mode, "feature_mode");
        set!(regression, "regression");
        set!(cv_folds, "cv_folds");
        set!(tasks, "tasks");
        set!(groupings, "groupings");
        if let Some(v) = &self.out_dir {
            config.out_dir = v.clone();
        }
        if let Some(v) = &self.targets {
            config.targets = Some(v.clone());
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic multi-task dataset with planted
    /// dictionaries
    Synth {
        /// Output directory
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        tasks: usize,
        #[arg(long, default_value_t = 32)]
        feature_dim: usize,
        #[arg(long, default_value_t = 8)]
        shared_atoms: usize,
        #[arg(long, default_value_t = 8)]
        individual_atoms: usize,
        #[arg(long, default_value_t = 3)]
        code_sparsity: usize,
        #[arg(long, default_value_t = 2000)]
        patches_per_task: usize,
        #[arg(long, default_value_t = 50)]
        subjects: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 4)]
        target_nnz: usize,
        #[arg(long, default_value_t = 1)]
        target_count: usize,
    },
    /// Train dictionaries on task matrices and save them with the codes and
    /// objective trace
    Train(Overrides),
    /// Encode a patch matrix against a frozen dictionary
    Encode {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        patches: PathBuf,
        /// Output codes matrix (.csv for text, anything else binary)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_sweeps: usize,
    },
    /// Max-pool a codes matrix into one feature vector per subject
    Pool {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        grouping: PathBuf,
        /// Output feature table CSV
        #[arg(long)]
        out: PathBuf,
        /// absmax | signedmax
        #[arg(long, default_value = "absmax")]
        pool: String,
    },
    /// Cross-validate and fit a regression per target column
    Regress {
        /// Feature table CSV (subject,f0,...)
        #[arg(long)]
        features: PathBuf,
        /// Targets CSV (subject,<name>...)
        #[arg(long)]
        targets: PathBuf,
        /// Fit only this target column (default: all)
        #[arg(long)]
        target: Option<String>,
        /// lasso | ridge
        #[arg(long, default_value = "lasso")]
        method: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 1e-3)]
        grid_min: f64,
        #[arg(long, default_value_t = 1e3)]
        grid_max: f64,
        #[arg(long, default_value_t = 13)]
        grid_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature table to predict after fitting
        #[arg(long)]
        predict_features: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score prediction files (CSV subject,truth,pred) with rMSE, nMSE, wR
    Evaluate {
        /// Comma-separated prediction files, one per task
        #[arg(long)]
        pairs: String,
        /// Output metrics CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full protocol: split, train, encode, pool, regress, score,
    /// aggregate over repeats
    Pipeline(Overrides),
    /// Rerun the pipeline over several shared:individual dictionary splits
    SweepDictSplit {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated splits, e.g. 250:1750,1000:1000,1750:250
        #[arg(long, default_value = "250:1750,500:1500,1000:1000,1500:500,1750:250")]
        splits: String,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out_dir,
            seed,
            tasks,
            feature_dim,
            shared_atoms,
            individual_atoms,
            code_sparsity,
            patches_per_task,
            subjects,
            noise,
            target_nnz,
            target_count,
        } => {
            let spec = synth::SynthSpec {
                tasks,
                feature_dim,
                shared_atoms,
                individual_atoms,
                code_sparsity,
                patches_per_task,
                subjects,
                noise,
                target_nnz,
                target_count,
            };
            let data = synth::generate(&spec, seed)?;
            pipeline::write_synthetic(&out_dir, &data)?;
            println!(
                "wrote {} tasks x {} patches for {} subjects to {}",
                spec.tasks,
                spec.patches_per_task,
                spec.subjects,
                out_dir.display()
            );
            Ok(())
        }
        Command::Train(overrides) => cmd_train(&overrides.resolve()?),
        Command::Encode { dict, patches, out, lambda, tol, max_sweeps } => {
            let dict = io::load_dictionary(&dict)?;
            let patches = io::load_matrix(&patches)?;
            let result = encode(&dict, &patches, lambda, tol, max_sweeps)?;
            if !result.unconverged.is_empty() {
                eprintln!(
                    "warning: {} of {} columns hit the sweep cap",
                    result.unconverged.len(),
                    patches.cols()
                );
            }
            let dense: Vec<Vec<f64>> = result.codes.iter().map(|c| c.to_dense()).collect();
            io::save_matrix(&out, &FeatureMatrix::from_columns(&dense)?)?;
            println!("encoded {} patches -> {}", patches.cols(), out.display());
            Ok(())
        }
        Command::Pool { codes, grouping, out, pool } => {
            let codes_matrix = io::load_matrix(&codes)?;
            let grouping = io::load_grouping(&grouping)?;
            let mode = pool.parse()?;
            let codes: Vec<SparseCode> = (0..codes_matrix.cols())
                .map(|j| SparseCode::from_dense(codes_matrix.col(j)))
                .collect::<std::result::Result<_, _>>()?;
            let table = max_pool(&codes, &grouping, mode)?;
            io::save_feature_table(&out, &table)?;
            println!("pooled {} subjects -> {}", table.subjects.len(), out.display());
            Ok(())
        }
        Command::Regress {
            features,
            targets,
            target,
            method,
            folds,
            grid_min,
            grid_max,
            grid_points,
            seed,
            predict_features,
            out_dir,
        } => cmd_regress(RegressArgs {
            features,
            targets,
            target,
            method: method.parse()?,
            folds,
            grid_min,
            grid_max,
            grid_points,
            seed,
            predict_features,
            out_dir,
        }),
        Command::Evaluate { pairs, out } => cmd_evaluate(&pairs, &out),
        Command::Pipeline(overrides) => {
            let config = overrides.resolve()?;
            let report = pipeline::run_pipeline(&config)?;
            for row in &report.summary {
                println!(
                    "{},{},{},{}",
                    row.metric,
                    row.task,
                    io::fmt_f64(row.mean),
                    io::fmt_f64(row.std)
                );
            }
            if report.failed > 0 {
                eprintln!("warning: {} repeats failed (see failures.txt)", report.failed);
            }
            println!("results in {}", config.out_dir.display());
            Ok(())
        }
        Command::SweepDictSplit { overrides, splits } => {
            let config = overrides.resolve()?;
            let splits = pipeline::parse_splits(&splits)?;
            let rows = pipeline::run_sweep(&config, &splits)?;
            for row in &rows {
                println!(
                    "{}:{} rmse {} +/- {}",
                    row.shared,
                    row.individual,
                    io::fmt_f64(row.mean_rmse),
                    io::fmt_f64(row.std_rmse)
                );
            }
            println!("sweep results in {}", config.out_dir.join("sweep.csv").display());
            Ok(())
        }
    }
}

fn cmd_train(config: &ExperimentConfig) -> Result<()> {
    if config.tasks.is_empty() {
        return Err(CliError::config("train needs --tasks (or tasks in the config file)"));
    }
    let mut tasks = Vec::new();
    for path in &config.tasks {
        tasks.push(io::load_matrix(path)?);
    }
    let cfg = TrainConfig {
        lambda: config.lambda,
        epochs: config.epochs,
        ccd_full_passes: config.ccd_full_passes,
        ccd_support_passes: config.ccd_support_passes,
        shared_atoms: config.shared_atoms,
        individual_atoms: vec![config.individual_atoms; tasks.len()],
        rng_seed: config.seed,
        shuffle_samples: config.shuffle_samples,
    };
    let out = train(&tasks, &cfg)?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::io(&config.out_dir, e))?;
    for (t, dict) in out.dictionaries.iter().enumerate() {
        io::save_dictionary(&config.out_dir.join(format!("dict_{t:02}.bin")), dict)?;
        let dense: Vec<Vec<f64>> = out.codes[t].iter().map(|c| c.to_dense()).collect();
        io::save_matrix(
            &config.out_dir.join(format!("codes_{t:02}.bin")),
            &FeatureMatrix::from_columns(&dense)?,
        )?;
    }
    let mut trace = String::from("epoch,objective\n");
    for (k, value) in out.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{},{}\n", k + 1, io::fmt_f64(*value)));
    }
    io::write_text(&config.out_dir.join("objective.csv"), &trace)?;
    io::write_text(&config.out_dir.join("manifest.txt"), &config.to_text())?;
    println!(
        "trained {} tasks for {} epochs; outputs in {}",
        tasks.len(),
        config.epochs,
        config.out_dir.display()
    );
    Ok(())
}

struct RegressArgs {
    features: PathBuf,
    targets: PathBuf,
    target: Option<String>,
    method: RegressionMethod,
    folds: usize,
    grid_min: f64,
    grid_max: f64,
    grid_points: usize,
    seed: u64,
    predict_features: Option<PathBuf>,
    out_dir: PathBuf,
}

fn design_from_table(table: &mtdl_core::SubjectFeatureTable) -> Result<FeatureMatrix> {
    let dim = table.feature_dim();
    let columns: Vec<Vec<f64>> = (0..dim)
        .map(|k| table.features.iter().map(|row| row[k]).collect())
        .collect();
    Ok(FeatureMatrix::from_columns(&columns)?)
}

fn cmd_regress(args: RegressArgs) -> Result<()> {
    let table = io::load_feature_table(&args.features)?;
    let (names, rows) = io::load_targets(&args.targets)?;
    let by_subject: std::collections::HashMap<&str, &Vec<f64>> =
        rows.iter().map(|(s, v)| (s.as_str(), v)).collect();
    let selected: Vec<usize> = match &args.target {
        Some(name) => vec![names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::config(format!("no target column named {name:?}")))?],
        None => (0..names.len()).collect(),
    };
    let x = design_from_table(&table)?;
    let grid: Vec<f64> = if args.grid_points == 1 {
        vec![args.grid_min]
    } else {
        let lo = args.grid_min.log10();
        let step = (args.grid_max.log10() - lo) / (args.grid_points - 1) as f64;
        (0..args.grid_points).map(|k| 10f64.powf(lo + step * k as f64)).collect()
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;

    for &m in &selected {
        let name = &names[m];
        let y: Vec<f64> = table
            .subjects
            .iter()
            .map(|s| {
                by_subject
                    .get(s.as_str())
                    .map(|v| v[m])
                    .ok_or_else(|| CliError::config(format!("no targets for subject {s:?}")))
            })
            .collect::<Result<_>>()?;
        let report = cross_validate(&x, &y, args.method, args.folds, &grid, args.seed)?;
        let model = match args.method {
            RegressionMethod::Lasso => lasso_fit(&x, &y, report.chosen)?,
            RegressionMethod::Ridge => ridge_fit(&x, &y, report.chosen)?,
        };

        let mut cv_text = String::from("lambda,mean_rmse\n");
        for (g, r) in report.grid.iter().zip(&report.mean_rmse) {
            cv_text.push_str(&format!("{},{}\n", io::fmt_f64(*g), io::fmt_f64(*r)));
        }
        io::write_text(&args.out_dir.join(format!("cv_{name}.csv")), &cv_text)?;

        let mut model_text = String::from("term,value\n");
        model_text.push_str(&format!("chosen_lambda,{}\n", io::fmt_f64(report.chosen)));
        model_text.push_str(&format!("intercept,{}\n", io::fmt_f64(model.intercept)));
        for (k, w) in model.weights.iter().enumerate() {
            model_text.push_str(&format!("f{k},{}\n", io::fmt_f64(*w)));
        }
        io::write_text(&args.out_dir.join(format!("model_{name}.csv")), &model_text)?;

        if let Some(path) = &args.predict_features {
            let other = io::load_feature_table(path)?;
            let x_other = design_from_table(&other)?;
            let pred = predict(&model, &x_other)?;
            let mut text = String::from("subject,prediction\n");
            for (s, p) in other.subjects.iter().zip(&pred) {
                text.push_str(&format!("{s},{}\n", io::fmt_f64(*p)));
            }
            io::write_text(&args.out_dir.join(format!("predictions_{name}.csv")), &text)?;
        }
        println!("{name}: chosen lambda {}", io::fmt_f64(report.chosen));
    }
    Ok(())
}

fn cmd_evaluate(pairs: &str, out: &std::path::Path) -> Result<()> {
    let mut evals = Vec::new();
    let mut task_names = Vec::new();
    for path in pairs.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let path = PathBuf::from(path);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "subject,truth,pred" => {}
            _ => {
                return Err(CliError::format(&path, "expected header subject,truth,pred"));
            }
        }
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(CliError::parse(&path, lineno + 1, "expected 3 fields"));
            }
            truth.push(fields[1].trim().parse::<f64>().map_err(|_| {
                CliError::parse(&path, lineno + 1, format!("bad truth {:?}", fields[1]))
            })?);
            pred.push(fields[2].trim().parse::<f64>().map_err(|_| {
                CliError::parse(&path, lineno + 1, format!("bad prediction {:?}", fields[2]))
            })?);
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "task".to_string());
        task_names.push(stem);
        evals.push(TaskEval::new(truth, pred)?);
    }
    if evals.is_empty() {
        return Err(CliError::config("no prediction files given"));
    }
    let mut text = String::from("metric,task,value\n");
    for (name, eval) in task_names.iter().zip(&evals) {
        let value = metrics::rmse(&eval.truth, &eval.pred)?;
        text.push_str(&format!("rmse,{name},{}\n", io::fmt_f64(value)));
    }
    text.push_str(&format!(
        "nmse,all,{}\n",
        io::fmt_f64(metrics::nmse(&evals, StdMode::Population)?)
    ));
    text.push_str(&format!(
        "wr,all,{}\n",
        io::fmt_f64(metrics::weighted_corr(&evals)?)
    ));
    io::write_text(out, &text)?;
    println!("metrics in {}", out.display());
    Ok(())
}
