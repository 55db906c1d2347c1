//! Rank-one boosting for PSD metric learning.
//!
//! Both trainers share the same column-generation outer loop: the dual
//! weights `u` define `Â = Σ u_r A_r`, whose leading eigenvector is the next
//! base `Z_j = v_j v_jᵀ`; training stops once `λmax(Â) < v`. They differ in
//! how the base weights are chosen (one coordinate at a time, or all at
//! once).

mod corrective;
mod stagewise;

use std::fmt;
use std::str::FromStr;

pub use corrective::{
    inner_solve, objective_and_gradient, train_totally_corrective,
    train_totally_corrective_observed, InnerOutcome, InnerProblem, InnerSolveConfig,
};
pub use stagewise::{
    bisection_weight, train_stagewise, train_stagewise_observed, update_u_exponential,
    update_u_logistic, BisectionOutcome,
};

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, Dataset, TripletSet};
use crate::error::{Error, Result};
use crate::linalg::{self, dense_evd, EigenPair, SymMatrix};

/// Above this dimension `Â` is applied implicitly instead of being assembled.
const DENSE_ASSEMBLY_MAX_DIM: usize = 256;

/// Number of bracket doublings before a step is declared unbounded.
pub const MAX_DOUBLINGS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Exponential,
    Logistic,
}

impl Loss {
    pub fn tag(self) -> &'static str {
        match self {
            Loss::Exponential => "exp",
            Loss::Logistic => "logistic",
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" | "exponential" => Ok(Loss::Exponential),
            "logistic" | "log" => Ok(Loss::Logistic),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Stagewise,
    TotallyCorrective,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Stagewise => "stage",
            Variant::TotallyCorrective => "tc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stage" | "stagewise" => Ok(Variant::Stagewise),
            "tc" | "totally-corrective" => Ok(Variant::TotallyCorrective),
            other => Err(Error::InvalidArgument(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    /// Trace regularization weight `v`.
    pub v: f64,
    /// Iteration cap `J`.
    pub max_iter: usize,
    pub eps_bisect: f64,
    pub w_upper_init: f64,
    pub seed: u64,
    /// Residual tolerance of the leading-eigenvector solve.
    pub eig_tol: f64,
    /// Power-iteration cap; `None` uses `10·D + 1000`.
    pub eig_max_iter: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::Exponential,
            v: 1e-7,
            max_iter: 500,
            eps_bisect: 1e-9,
            w_upper_init: 1.0,
            seed: 0,
            eig_tol: linalg::DEFAULT_EIG_TOL,
            eig_max_iter: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.v >= 0.0) || !self.v.is_finite() {
            return bad(format!("v must be a finite value >= 0, got {}", self.v));
        }
        if self.max_iter == 0 {
            return bad("iteration cap must be at least 1".into());
        }
        if !(self.eps_bisect > 0.0) {
            return bad(format!("bisection tolerance must be > 0, got {}", self.eps_bisect));
        }
        if !(self.w_upper_init > 0.0) || !self.w_upper_init.is_finite() {
            return bad(format!("initial upper bracket must be > 0, got {}", self.w_upper_init));
        }
        if !(self.eig_tol > 0.0) {
            return bad(format!("eigen tolerance must be > 0, got {}", self.eig_tol));
        }
        Ok(())
    }
}

/// Provenance stored alongside a learned metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub variant: Variant,
    /// Accepted boosting iterations (bases added).
    pub iterations: usize,
    /// `λmax(Â) < v` was reached before the iteration cap.
    pub converged: bool,
    /// Steps whose weight hit the doubling cap.
    pub capped_steps: usize,
    pub passes: usize,
    pub v: f64,
}

impl TrainMeta {
    pub fn new(variant: Variant, v: f64) -> Self {
        TrainMeta {
            variant,
            iterations: 0,
            converged: false,
            capped_steps: 0,
            passes: 1,
            v,
        }
    }
}

/// A learned PSD matrix `X = Σ_j w_j v_j v_jᵀ` with `w_j > 0`, `‖v_j‖ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    dim: usize,
    weights: Vec<f64>,
    bases: Vec<Vec<f64>>,
    dense: SymMatrix,
    pub loss: Loss,
    pub meta: TrainMeta,
}

impl MetricModel {
    pub fn empty(dim: usize, loss: Loss, meta: TrainMeta) -> Self {
        MetricModel {
            dim,
            weights: Vec::new(),
            bases: Vec::new(),
            dense: SymMatrix::zeros(dim),
            loss,
            meta,
        }
    }

    /// Validates every term and rebuilds the dense matrix.
    pub fn from_parts(
        dim: usize,
        weights: Vec<f64>,
        bases: Vec<Vec<f64>>,
        loss: Loss,
        meta: TrainMeta,
    ) -> Result<Self> {
        if weights.len() != bases.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                got: bases.len(),
            });
        }
        let mut model = Self::empty(dim, loss, meta);
        for (w, v) in weights.into_iter().zip(bases) {
            model.push(w, v)?;
        }
        Ok(model)
    }

    /// Appends the term `w · v vᵀ`.
    pub fn push(&mut self, w: f64, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidArgument(format!("base weight must be finite and > 0, got {w}")));
        }
        let n = linalg::norm2(&v);
        if (n - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("base vector norm {n} is not 1")));
        }
        self.dense.add_outer(w, &v);
        self.weights.push(w);
        self.bases.push(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bases(&self) -> &[Vec<f64>] {
        &self.bases
    }

    pub fn num_bases(&self) -> usize {
        self.weights.len()
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.dense
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Squared Mahalanobis distance `(a − b)ᵀ X (a − b)`.
    pub fn distance_sq(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.dense.quad_form(&d)
    }

    /// Eigenvalues of `X`, descending.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        Ok(dense_evd(&self.dense)?.into_iter().map(|p| p.value).collect())
    }

    /// Eigenvalues of `X` (negatives clamped to 0) divided by their sum,
    /// and the share of the top two.
    pub fn normalized_spectrum(&self) -> Result<(Vec<f64>, f64)> {
        let spec: Vec<f64> = self.spectrum()?.into_iter().map(|x| x.max(0.0)).collect();
        let total: f64 = spec.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NonFinite("spectrum of a zero metric".into()));
        }
        let norm: Vec<f64> = spec.iter().map(|x| x / total).collect();
        let top2 = norm.iter().take(2).sum();
        Ok((norm, top2))
    }

    /// PSD within `1e-9·max(1, λmax)` and `|Tr X − Σ w| ≤ 1e-8`.
    pub fn check_invariants(&self) -> Result<()> {
        let spectrum = self.spectrum()?;
        let (max_eig, min_eig) = (spectrum[0], spectrum[spectrum.len() - 1]);
        if min_eig < -1e-9 * max_eig.max(1.0) {
            return Err(Error::NotPsd { min_eig, max_eig });
        }
        let gap = (self.dense.trace() - self.weight_sum()).abs();
        if gap > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "trace {} differs from weight sum {} by {gap:.3e}",
                self.dense.trace(),
                self.weight_sum()
            )));
        }
        Ok(())
    }
}

/// One accepted boosting iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub pass: usize,
    pub iteration: usize,
    pub lambda_max: f64,
    pub weight: f64,
    pub objective: f64,
    /// Inner solver iterations (totally-corrective only; 0 otherwise).
    pub inner_iters: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    /// `λmax(Â)` of the iteration that triggered convergence, if any.
    pub final_lambda_max: Option<f64>,
}

pub const TRACE_HEADER: &str = "pass,iteration,lambda_max,w,objective,inner_iters";

impl TrainTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.rows.last().map(|r| r.objective)
    }

    /// Comma-delimited log with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e},{}\n",
                r.pass, r.iteration, r.lambda_max, r.weight, r.objective, r.inner_iters
            ));
        }
        out
    }

    pub fn set_pass(&mut self, pass: usize) {
        self.rows.iter_mut().for_each(|r| r.pass = pass);
    }
}

/// Per-iteration snapshot handed to training observers.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub iteration: usize,
    pub lambda_max: f64,
    pub weight: f64,
    pub objective: f64,
    /// Dual weights as maintained by the trainer.
    pub u: &'a [f64],
    /// Margins `ρ_r = Σ_j w_j H_rj`.
    pub rho: &'a [f64],
    pub model: &'a MetricModel,
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Primal objective: `log Σ exp(−ρ_r) + v·1ᵀw` (exponential) or
/// `Σ log(1 + exp(−ρ_r)) + v·1ᵀw` (logistic).
pub fn primal_objective(rho: &[f64], w: &[f64], v: f64, loss: Loss) -> Result<f64> {
    if rho.is_empty() {
        return Err(Error::EmptyTriplets);
    }
    let reg = v * w.iter().sum::<f64>();
    let data = match loss {
        Loss::Exponential => log_sum_exp(rho.iter().map(|r| -r)),
        Loss::Logistic => rho.iter().map(|&r| softplus(-r)).sum(),
    };
    Ok(data + reg)
}

/// Dual weights from margins at optimality: softmax of `−ρ` (exponential)
/// or sigmoid of `−ρ` (logistic).
pub fn dual_from_margins(rho: &[f64], loss: Loss) -> Vec<f64> {
    match loss {
        Loss::Exponential => {
            let lse = log_sum_exp(rho.iter().map(|r| -r));
            rho.iter().map(|r| (-r - lse).exp()).collect()
        }
        Loss::Logistic => rho.iter().map(|&r| sigmoid(-r)).collect(),
    }
}

/// Leading eigenpair of `Â = Σ u_r A_r`.
pub(crate) fn base_learner(cs: &ConstraintSet, u: &[f64], cfg: &TrainConfig) -> Result<EigenPair> {
    let dim = cs.dim();
    let max_iter = cfg.eig_max_iter.unwrap_or_else(|| linalg::default_max_iter(dim));
    if dim <= DENSE_ASSEMBLY_MAX_DIM {
        let a_hat = cs.weighted_sum(u)?;
        linalg::top_eigenpair(&a_hat, cfg.eig_tol, max_iter)
    } else {
        let op = cs.weighted_operator(u)?;
        match linalg::leading_eigenpair(&op, cfg.eig_tol, max_iter) {
            Err(Error::NotConverged { .. }) => {
                let a_hat = cs.weighted_sum(u)?;
                Ok(dense_evd(&a_hat)?.swap_remove(0))
            }
            other => other,
        }
    }
}

pub(crate) fn prepare(
    triplets: &TripletSet,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<ConstraintSet> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::EmptyTriplets);
    }
    triplets.constraints(ds)
}

/// Trains with the requested variant.
pub fn train(
    triplets: &TripletSet,
    ds: &Dataset,
    cfg: &TrainConfig,
    variant: Variant,
    inner: &InnerSolveConfig,
) -> Result<(MetricModel, TrainTrace)> {
    match variant {
        Variant::Stagewise => train_stagewise(triplets, ds, cfg),
        Variant::TotallyCorrective => train_totally_corrective(triplets, ds, cfg, inner),
    }
}
