//! k-nearest-neighbor classification under a fixed or learned metric, and
//! the repeated random-split evaluation protocol.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{InnerSolveConfig, MetricModel, TrainConfig, Variant};
use crate::constraints::{generate_triplets, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{pca_fit, SymMatrix};
use crate::multipass::{train_multipass_with, MultipassOptions, DEFAULT_RANK_TOL};
use crate::seeding::substream;

#[derive(Debug, Clone, Copy)]
pub enum Metric<'a> {
    Euclidean,
    Mahalanobis(&'a SymMatrix),
}

impl Metric<'_> {
    fn distance_sq(&self, a: &[f64], b: &[f64], scratch: &mut Vec<f64>) -> Result<f64> {
        match self {
            Metric::Euclidean => Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()),
            Metric::Mahalanobis(x) => {
                scratch.clear();
                scratch.extend(a.iter().zip(b).map(|(x, y)| x - y));
                x.quad_form(scratch)
            }
        }
    }
}

/// Majority vote among the `k` nearest training points.
///
/// Distance ties go to the smaller training index; vote ties go to the
/// tied label whose member ranks nearest.
pub fn knn_classify(train: &Dataset, query: &[f64], k: usize, metric: Metric<'_>) -> Result<usize> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if k == 0 || k > train.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            train.len()
        )));
    }
    if query.len() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: query.len(),
        });
    }
    if let Metric::Mahalanobis(x) = metric {
        if x.dim() != train.dim() {
            return Err(Error::DimensionMismatch {
                expected: train.dim(),
                got: x.dim(),
            });
        }
    }
    let mut scratch = Vec::with_capacity(query.len());
    let mut dists = train
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((metric.distance_sq(query, p, &mut scratch)?, i)))
        .collect::<Result<Vec<(f64, usize)>>>()?;
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nearest = &dists[..k];

    let mut votes = vec![0usize; train.classes().len()];
    for &(_, i) in nearest {
        votes[train.label(i)] += 1;
    }
    let top = *votes.iter().max().unwrap_or(&0);
    let winner = nearest
        .iter()
        .map(|&(_, i)| train.label(i))
        .find(|&l| votes[l] == top)
        .expect("k >= 1");
    Ok(winner)
}

/// Percentage of `test` points misclassified.
pub fn error_rate(train: &Dataset, test: &Dataset, k: usize, metric: Metric<'_>) -> Result<f64> {
    let wrong = test
        .points()
        .iter()
        .zip(test.labels())
        .map(|(q, &y)| Ok(knn_classify(train, q, k, metric)? != y))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&w| w)
        .count();
    Ok(100.0 * wrong as f64 / test.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub runs: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.7,
            val_frac: 0.15,
            test_frac: 0.15,
            runs: 10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must lie in (0, 1), got {fr:?}"
            )));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split fractions must sum to 1, got {fr:?}")));
        }
        if self.runs == 0 {
            return Err(Error::InvalidArgument("at least one run is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Class-stratified random split for run `run`.
pub fn stratified_split(ds: &Dataset, spec: &SplitSpec, run: usize) -> Result<Split> {
    spec.validate()?;
    let mut rng = substream(spec.seed, "split", run as u64);
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for class in 0..ds.classes().len() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = ((n * spec.train_frac).round() as usize).clamp(1, members.len());
        let n_val = ((n * spec.val_frac).round() as usize).min(members.len() - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.validation.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    if split.test.is_empty() || split.train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "dataset of {} points is too small for the split",
            ds.len()
        )));
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub k: usize,
    /// Percent.
    pub mean_error: f64,
    /// Sample standard deviation over runs, percent.
    pub std_error: f64,
    pub per_run_errors: Vec<f64>,
    /// `(run index, message)` for runs that failed and were left out.
    pub failed_runs: Vec<(usize, String)>,
}

impl EvalReport {
    fn from_runs(metric: String, k: usize, runs: &[std::result::Result<f64, String>]) -> Self {
        let per_run_errors: Vec<f64> = runs.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let failed_runs = runs
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e.clone())))
            .collect();
        let n = per_run_errors.len() as f64;
        let mean_error = if n > 0.0 { per_run_errors.iter().sum::<f64>() / n } else { f64::NAN };
        let std_error = if n > 1.0 {
            (per_run_errors.iter().map(|e| (e - mean_error).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        EvalReport {
            metric,
            k,
            mean_error,
            std_error,
            per_run_errors,
            failed_runs,
        }
    }

    pub fn runs(&self) -> usize {
        self.per_run_errors.len()
    }

    pub fn is_partial(&self) -> bool {
        !self.failed_runs.is_empty()
    }
}

pub const REPORT_HEADER: &str = "metric,k,mean_error,std_error,runs";

/// Delimited table with a header line, one row per report.
pub fn reports_to_table(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{}\n",
            r.metric,
            r.k,
            r.mean_error,
            r.std_error,
            r.runs()
        ));
    }
    out
}

pub fn reports_to_json(reports: &[EvalReport]) -> Result<String> {
    serde_json::to_string_pretty(reports).map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Neighbors used by the classifier.
    pub k: usize,
    /// Targets and impostors per point when building triplets.
    pub k_neighbors: usize,
    pub pca_dim: Option<usize>,
    pub variant: Variant,
    pub passes: usize,
    pub inner: InnerSolveConfig,
    /// Worker threads for independent runs.
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: 3,
            k_neighbors: 3,
            pca_dim: None,
            variant: Variant::Stagewise,
            passes: 1,
            inner: InnerSolveConfig::default(),
            jobs: 1,
        }
    }
}

impl EvalOptions {
    pub fn learned_tag(&self, cfg: &TrainConfig) -> String {
        let mut tag = format!("boost-{}", cfg.loss);
        if self.variant == Variant::TotallyCorrective {
            tag.push_str("-tc");
        }
        if self.passes > 1 {
            tag.push_str(&format!("-mp{}", self.passes));
        }
        tag
    }
}

/// Euclidean and learned-metric reports of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub euclidean: EvalReport,
    pub learned: EvalReport,
}

struct RunResult {
    euclidean: f64,
    learned: f64,
}

fn run_once(
    ds: &Dataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    opts: &EvalOptions,
    run: usize,
) -> Result<RunResult> {
    let parts = stratified_split(ds, split, run)?;
    let mut train = ds.subset(&parts.train)?;
    let mut test = ds.subset(&parts.test)?;
    if let Some(dim) = opts.pca_dim {
        let pca = pca_fit(train.points(), dim)?;
        train = train.map_points(|p| pca.transform(p))?;
        test = test.map_points(|p| pca.transform(p))?;
    }
    let euclidean = error_rate(&train, &test, opts.k, Metric::Euclidean)?;

    let run_cfg = TrainConfig {
        seed: cfg.seed.wrapping_add(run as u64),
        ..cfg.clone()
    };
    let triplets = generate_triplets(&train, opts.k_neighbors, run_cfg.seed)?;
    let mp = MultipassOptions {
        passes: opts.passes,
        k_neighbors: opts.k_neighbors,
        variant: opts.variant,
        inner: opts.inner.clone(),
        rank_tol: DEFAULT_RANK_TOL,
        freeze_triplets: false,
    };
    let (model, _) = train_multipass_with(&train, &run_cfg, &mp, &triplets)?;
    let learned = error_rate(&train, &test, opts.k, Metric::Mahalanobis(model.matrix()))?;
    Ok(RunResult { euclidean, learned })
}

/// Repeated stratified splits: per run, optional PCA fit on the training
/// fold, triplets from the training fold, metric training, and k-NN test
/// error under both the Euclidean and the learned metric.
pub fn evaluate(
    ds: &Dataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    opts: &EvalOptions,
) -> Result<EvalSummary> {
    split.validate()?;
    cfg.validate()?;
    if opts.passes == 0 {
        return Err(Error::InvalidArgument("pass count must be at least 1".into()));
    }
    let runs: Vec<Result<RunResult>> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| {
            (0..split.runs)
                .into_par_iter()
                .map(|r| run_once(ds, split, cfg, opts, r))
                .collect()
        })
    } else {
        (0..split.runs).map(|r| run_once(ds, split, cfg, opts, r)).collect()
    };
    let mut euclid = Vec::with_capacity(runs.len());
    let mut learned = Vec::with_capacity(runs.len());
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(rr) => {
                euclid.push(Ok(rr.euclidean));
                learned.push(Ok(rr.learned));
            }
            Err(e) => {
                log::warn!("run {i} failed: {e}");
                euclid.push(Err(e.to_string()));
                learned.push(Err(e.to_string()));
            }
        }
    }
    if euclid.iter().all(|r| r.is_err()) {
        return Err(Error::InvalidArgument("every evaluation run failed".into()));
    }
    Ok(EvalSummary {
        euclidean: EvalReport::from_runs("euclidean".into(), opts.k, &euclid),
        learned: EvalReport::from_runs(opts.learned_tag(cfg), opts.k, &learned),
    })
}

/// Predictions for every query point; used to compare models.
pub fn predict_all(train: &Dataset, queries: &[Vec<f64>], k: usize, model: &MetricModel) -> Result<Vec<usize>> {
    queries
        .iter()
        .map(|q| knn_classify(train, q, k, Metric::Mahalanobis(model.matrix())))
        .collect()
}
