use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use boostmetric::boost::{InnerSolveConfig, Loss, MetricModel, TrainConfig, TrainTrace, Variant};
use boostmetric::constraints::generate_triplets;
use boostmetric::dataio::{self, LabelColumn};
use boostmetric::eval::{self, EvalOptions, EvalReport, SplitSpec};
use boostmetric::multipass::{train_multipass_with, MultipassOptions, DEFAULT_RANK_TOL};
use boostmetric::{Dataset, Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "boostmetric", version, about = "Learn a Mahalanobis metric from triplet constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a metric on a dataset and write the model file.
    Train(TrainCmd),
    /// Compare k-NN error of the learned metric against Euclidean over random splits.
    Eval(EvalCmd),
    /// Train on synthetic concentric circles and report the spectrum of X.
    Toy(ToyCmd),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Delimited text file, one point per row.
    #[arg(long)]
    data: PathBuf,
    /// Label column: zero-based index (negative counts from the end) or header name.
    #[arg(long, default_value = "-1", allow_hyphen_values = true)]
    label_col: String,
    /// Field separator.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let col: LabelColumn = self.label_col.parse().expect("infallible");
        dataio::load_csv(&self.data, &col, self.delimiter)
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Loss: exp or logistic.
    #[arg(long, default_value = "exp")]
    loss: Loss,
    /// Weight update: stage (one weight per step) or tc (totally corrective).
    #[arg(long, default_value = "stage")]
    variant: Variant,
    /// Number of training passes; later passes retrain in the projected space.
    #[arg(long, default_value_t = 1)]
    passes: usize,
    /// Targets and impostors per point when generating triplets.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Trace regularization weight.
    #[arg(long, default_value_t = 1e-7)]
    v: f64,
    /// Maximum boosting iterations per pass.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Bisection interval tolerance for the stage-wise step.
    #[arg(long, default_value_t = 1e-9)]
    bisect_eps: f64,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            v: self.v,
            max_iter: self.max_iter,
            eps_bisect: self.bisect_eps,
            seed,
            ..TrainConfig::default()
        }
    }

    fn multipass(&self) -> MultipassOptions {
        MultipassOptions {
            passes: self.passes,
            k_neighbors: self.k,
            variant: self.variant,
            inner: InnerSolveConfig::default(),
            rank_tol: DEFAULT_RANK_TOL,
            freeze_triplets: false,
        }
    }

    fn fit(&self, ds: &Dataset, seed: u64) -> Result<(MetricModel, TrainTrace)> {
        let cfg = self.config(seed);
        let triplets = generate_triplets(ds, self.k, seed)?;
        log::info!("{} triplets over {} points", triplets.len(), ds.len());
        train_multipass_with(ds, &cfg, &self.multipass(), &triplets)
    }
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Seed recorded in the training configuration.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration trace log path; no log when absent.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Seed for the random splits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Neighbors used by the classifier.
    #[arg(long, default_value_t = 3)]
    knn: usize,
    /// Project onto this many principal components (fit on each training
    /// fold); no projection when absent.
    #[arg(long)]
    pca_dim: Option<usize>,
    /// Number of random splits.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Share of each class used for training.
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    /// Share of each class held out for validation.
    #[arg(long, default_value_t = 0.15)]
    val_frac: f64,
    /// Share of each class used for testing.
    #[arg(long, default_value_t = 0.15)]
    test_frac: f64,
    /// Comma-separated list of v values, one learned row per value; only
    /// --v is used when absent.
    #[arg(long, value_delimiter = ',')]
    v_sweep: Option<Vec<f64>>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write the reports as JSON to this path; table only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ToyCmd {
    #[command(flatten)]
    train: TrainArgs,
    /// Points per circle.
    #[arg(long, default_value_t = 250)]
    n_per_class: usize,
    /// Number of concentric circles, one per class.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Gaussian noise coordinates appended to the two circle coordinates.
    #[arg(long, default_value_t = 8)]
    noise_dims: usize,
    /// Standard deviation of the noise coordinates.
    #[arg(long, default_value_t = TOY_NOISE_SIGMA)]
    noise_sigma: f64,
    /// Dataset seed; repeat the flag to run several seeds.
    #[arg(long = "seed", default_values_t = [0u64])]
    seeds: Vec<u64>,
    /// Worker threads when several seeds are given.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Model output path (suffixed with the seed when several seeds run);
    /// nothing is written when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration trace log path, suffixed like --out.
    #[arg(long)]
    trace: Option<PathBuf>,
}

const TOY_NOISE_SIGMA: f64 = 2.0;

fn write_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    fs::write(path, trace.to_csv())?;
    Ok(())
}

fn cmd_train(cmd: &TrainCmd) -> Result<()> {
    let ds = cmd.data.load()?;
    let (model, trace) = cmd.train.fit(&ds, cmd.seed)?;
    dataio::save_model(&model, &cmd.out)?;
    if let Some(path) = &cmd.trace {
        write_trace(path, &trace)?;
    }
    let m = &model.meta;
    println!(
        "bases={} iterations={} converged={} capped_steps={} trace={:.6e}",
        model.num_bases(),
        m.iterations,
        m.converged,
        m.capped_steps,
        model.weight_sum()
    );
    if let Some(obj) = trace.final_objective() {
        println!("objective={obj:.10e}");
    }
    Ok(())
}

fn cmd_eval(cmd: &EvalCmd) -> Result<()> {
    let ds = cmd.data.load()?;
    let split = SplitSpec {
        train_frac: cmd.train_frac,
        val_frac: cmd.val_frac,
        test_frac: cmd.test_frac,
        runs: cmd.runs,
        seed: cmd.seed,
    };
    let opts = EvalOptions {
        k: cmd.knn,
        k_neighbors: cmd.train.k,
        pca_dim: cmd.pca_dim,
        variant: cmd.train.variant,
        passes: cmd.train.passes,
        inner: InnerSolveConfig::default(),
        jobs: cmd.jobs,
    };
    let vs = cmd.v_sweep.clone().unwrap_or_else(|| vec![cmd.train.v]);
    let mut reports: Vec<EvalReport> = Vec::new();
    for (i, &v) in vs.iter().enumerate() {
        let cfg = TrainConfig { v, ..cmd.train.config(cmd.seed) };
        let summary = eval::evaluate(&ds, &split, &cfg, &opts)?;
        if i == 0 {
            reports.push(summary.euclidean);
        }
        let mut learned = summary.learned;
        if cmd.v_sweep.is_some() {
            learned.metric = format!("{}@v={v:e}", learned.metric);
        }
        reports.push(learned);
    }
    print!("{}", eval::reports_to_table(&reports));
    for r in &reports {
        for (run, msg) in &r.failed_runs {
            eprintln!("warning: {} run {run} failed: {msg}", r.metric);
        }
    }
    if let Some(path) = &cmd.out {
        fs::write(path, eval::reports_to_json(&reports)?)?;
    }
    Ok(())
}

fn suffixed(path: &Path, seed: u64, many: bool) -> PathBuf {
    if !many {
        return path.to_path_buf();
    }
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".{seed}"));
    PathBuf::from(s)
}

fn cmd_toy(cmd: &ToyCmd) -> Result<()> {
    let seeds = &cmd.seeds;
    let many = seeds.len() > 1;
    let run = |&seed: &u64| -> Result<(u64, MetricModel, TrainTrace)> {
        let ds = dataio::make_concentric_circles(cmd.n_per_class, cmd.classes, cmd.noise_dims, cmd.noise_sigma, seed)?;
        let (model, trace) = cmd.train.fit(&ds, seed)?;
        Ok((seed, model, trace))
    };
    let results: Vec<Result<(u64, MetricModel, TrainTrace)>> = if cmd.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cmd.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| seeds.par_iter().map(run).collect())
    } else {
        seeds.iter().map(run).collect()
    };
    for r in results {
        let (seed, model, trace) = r?;
        let (norm, top2) = model.normalized_spectrum()?;
        let shown: Vec<String> = norm.iter().map(|x| format!("{x:.3}")).collect();
        println!("seed={seed} bases={} spectrum=[{}]", model.num_bases(), shown.join(", "));
        println!("seed={seed} top2_mass={top2:.6}");
        if let Some(path) = &cmd.out {
            dataio::save_model(&model, suffixed(path, seed, many))?;
        }
        if let Some(path) = &cmd.trace {
            write_trace(&suffixed(path, seed, many), &trace)?;
        }
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Toy(c) => cmd_toy(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
