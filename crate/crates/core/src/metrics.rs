//! Evaluation measures: per-task root mean square error, normalized mean
//! square error and sample-size-weighted correlation across tasks, and
//! mean/std aggregation over repeated trials.

use crate::error::{dim_err, invalid, Error, Result};

/// Which standard deviation normalizes the nMSE denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdMode {
    /// Divide by n (the default, documented so reported numbers compare).
    #[default]
    Population,
    /// Divide by n - 1.
    Sample,
}

/// Ground truth and predictions for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEval {
    pub truth: Vec<f64>,
    pub pred: Vec<f64>,
}

impl TaskEval {
    pub fn new(truth: Vec<f64>, pred: Vec<f64>) -> Result<Self> {
        if truth.len() != pred.len() {
            return dim_err(format!(
                "{} truth values but {} predictions",
                truth.len(),
                pred.len()
            ));
        }
        if truth.is_empty() {
            return invalid("empty task evaluation");
        }
        Ok(Self { truth, pred })
    }
}

/// sqrt(||y - yhat||^2 / n).
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return dim_err(format!("{} vs {} values", y.len(), yhat.len()));
    }
    if y.is_empty() {
        return invalid("rmse of empty vectors");
    }
    let sq: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / y.len() as f64).sqrt())
}

fn std_dev(values: &[f64], mode: StdMode) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    match mode {
        StdMode::Population => (ss / n).sqrt(),
        StdMode::Sample => (ss / (n - 1.0)).sqrt(),
    }
}

/// Normalized mean square error across tasks: the squared error of each
/// task divided by the standard deviation of its truth, summed, divided by
/// the total sample count.
pub fn nmse(tasks: &[TaskEval], mode: StdMode) -> Result<f64> {
    if tasks.is_empty() {
        return invalid("nmse over zero tasks");
    }
    let mut numerator = 0.0;
    let mut total_n = 0usize;
    for (i, task) in tasks.iter().enumerate() {
        if task.truth.len() < 2 {
            return invalid(format!("task {i} needs at least two samples"));
        }
        let sigma = std_dev(&task.truth, mode);
        if sigma == 0.0 {
            return Err(Error::DegenerateInput(format!(
                "task {i} has constant ground truth"
            )));
        }
        let sq: f64 = task
            .truth
            .iter()
            .zip(&task.pred)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        numerator += sq / sigma;
        total_n += task.truth.len();
    }
    Ok(numerator / total_n as f64)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateInput(
            "correlation of a zero-variance vector".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Sample-size-weighted mean of per-task Pearson correlations.
pub fn weighted_corr(tasks: &[TaskEval]) -> Result<f64> {
    if tasks.is_empty() {
        return invalid("weighted correlation over zero tasks");
    }
    let mut weighted = 0.0;
    let mut total_n = 0usize;
    for (i, task) in tasks.iter().enumerate() {
        if task.truth.len() < 2 {
            return invalid(format!("task {i} needs at least two samples"));
        }
        let corr = pearson(&task.truth, &task.pred)?;
        weighted += corr * task.truth.len() as f64;
        total_n += task.truth.len();
    }
    Ok(weighted / total_n as f64)
}

/// Mean and sample standard deviation (n - 1) over repeated trials.
pub fn aggregate(trials: &[f64]) -> Result<(f64, f64)> {
    if trials.len() < 2 {
        return invalid("aggregation needs at least two trials");
    }
    let n = trials.len() as f64;
    let mean = trials.iter().sum::<f64>() / n;
    let ss: f64 = trials.iter().map(|&v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}
