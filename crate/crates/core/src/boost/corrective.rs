//! Totally-corrective training: after each new base, every weight is
//! re-optimized over the nonnegative orthant and the dual weights are
//! recomputed from the margins.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::stagewise::warm_start_weight;
use super::{
    base_learner, dual_from_margins, log_sum_exp, prepare, primal_objective, sigmoid,
    IterationView, Loss, MetricModel, TraceRow, TrainConfig, TrainMeta, TrainTrace, Variant,
};
use crate::constraints::{ConstraintSet, Dataset, TripletSet};
use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolveConfig {
    /// Projected-gradient tolerance (infinity norm).
    pub grad_tol: f64,
    pub max_inner_iter: usize,
    /// Number of curvature pairs kept by the quasi-Newton model.
    pub memory: usize,
}

impl Default for InnerSolveConfig {
    fn default() -> Self {
        InnerSolveConfig {
            grad_tol: 1e-8,
            max_inner_iter: 500,
            memory: 10,
        }
    }
}

impl InnerSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gradient tolerance must be > 0, got {}",
                self.grad_tol
            )));
        }
        if self.max_inner_iter == 0 {
            return Err(Error::InvalidArgument("inner iteration cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// `min_{w ≥ 0} loss(ρ) + v·1ᵀw` with `ρ = offset + H w`.
///
/// `columns[t]` holds `H_{:t}`. `offset` shifts every margin and defaults to
/// zero; a nonzero offset encodes a non-uniform starting dual.
#[derive(Debug, Clone, Copy)]
pub struct InnerProblem<'a> {
    pub columns: &'a [Vec<f64>],
    pub offset: Option<&'a [f64]>,
    pub v: f64,
    pub loss: Loss,
}

impl InnerProblem<'_> {
    fn rows(&self) -> usize {
        self.columns
            .first()
            .map(|c| c.len())
            .or(self.offset.map(|o| o.len()))
            .unwrap_or(0)
    }

    fn check(&self) -> Result<()> {
        let rows = self.rows();
        if rows == 0 {
            return Err(Error::EmptyTriplets);
        }
        for col in self.columns {
            if col.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    got: col.len(),
                });
            }
        }
        if let Some(o) = self.offset {
            if o.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    got: o.len(),
                });
            }
        }
        Ok(())
    }

    pub fn margins(&self, w: &[f64]) -> Vec<f64> {
        let mut rho = match self.offset {
            Some(o) => o.to_vec(),
            None => vec![0.0; self.rows()],
        };
        for (col, &wt) in self.columns.iter().zip(w) {
            if wt != 0.0 {
                for (r, h) in rho.iter_mut().zip(col) {
                    *r += wt * h;
                }
            }
        }
        rho
    }
}

/// Objective and gradient `∂f/∂w_t = −Σ_r u_r H_rt + v`, with `u` the
/// softmax (exponential) or sigmoid (logistic) of `−ρ`.
pub fn objective_and_gradient(p: &InnerProblem<'_>, w: &[f64]) -> Result<(f64, Vec<f64>)> {
    p.check()?;
    if w.len() != p.columns.len() {
        return Err(Error::DimensionMismatch {
            expected: p.columns.len(),
            got: w.len(),
        });
    }
    let penalty = vec![p.v; w.len()];
    evaluate(p.columns, p.offset, &penalty, p.loss, p.rows(), w)
}

/// `loss(offset + Σ_t w_t col_t) + Σ_t penalty_t w_t` and its gradient.
fn evaluate(
    columns: &[Vec<f64>],
    offset: Option<&[f64]>,
    penalty: &[f64],
    loss: Loss,
    rows: usize,
    w: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let e = evaluate_full(columns, offset, penalty, loss, rows, w)?;
    Ok((e.f, e.g))
}

struct Evaluation {
    f: f64,
    g: Vec<f64>,
    /// Dual weights `u` at the evaluated point.
    u: Vec<f64>,
}

fn evaluate_full(
    columns: &[Vec<f64>],
    offset: Option<&[f64]>,
    penalty: &[f64],
    loss: Loss,
    rows: usize,
    w: &[f64],
) -> Result<Evaluation> {
    let mut rho = match offset {
        Some(o) => o.to_vec(),
        None => vec![0.0; rows],
    };
    for (col, &wt) in columns.iter().zip(w) {
        if wt != 0.0 {
            rho.iter_mut().zip(col).for_each(|(r, h)| *r += wt * h);
        }
    }
    let f = primal_objective(&rho, &[], 0.0, loss)? + dot(penalty, w);
    let u: Vec<f64> = match loss {
        Loss::Exponential => {
            let lse = log_sum_exp(rho.iter().map(|r| -r));
            rho.iter().map(|r| (-r - lse).exp()).collect()
        }
        Loss::Logistic => rho.iter().map(|&r| sigmoid(-r)).collect(),
    };
    let g = columns.iter().zip(penalty).map(|(col, &pen)| pen - dot(&u, col)).collect();
    Ok(Evaluation { f, g, u })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    pub w: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the projected gradient at `w`, with each entry
    /// multiplied by `1 / s_t`, `s_t` the largest magnitude in column `t`.
    pub projected_grad: f64,
    /// Some weight reached the cap: the objective decreases without bound.
    pub unbounded: bool,
}

/// Upper bound on a scaled weight; it only binds when the objective is
/// unbounded below along some direction (separable triplets with a tiny
/// `v`), and mirrors the stage-wise doubling cap.
const Z_MAX: f64 = (1u64 << 60) as f64;

/// Consecutive round-off-level decreases before the inner solve gives up.
const STALL_LIMIT: usize = 3;

/// Largest free set handled by Newton steps; beyond it the limited-memory
/// quasi-Newton model is used.
const NEWTON_MAX_FREE: usize = 400;

fn project(x: f64) -> f64 {
    x.clamp(0.0, Z_MAX)
}

fn projected_grad_norm(z: &[f64], g: &[f64]) -> f64 {
    z.iter()
        .zip(g)
        .map(|(&zt, &gt)| {
            if zt <= 0.0 {
                (-gt).max(0.0)
            } else if zt >= Z_MAX {
                gt.max(0.0)
            } else {
                gt.abs()
            }
        })
        .fold(0.0, f64::max)
}

struct CurvaturePair {
    s: Vec<f64>,
    y: Vec<f64>,
    inv_sy: f64,
}

/// Two-loop recursion restricted to the free coordinates.
fn quasi_newton_direction(g: &[f64], memory: &VecDeque<CurvaturePair>, free: &[bool]) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(free).map(|(&x, &f)| if f { x } else { 0.0 }).collect()
    };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(memory.len());
    for pair in memory.iter().rev() {
        let s = mask(&pair.s);
        let y = mask(&pair.y);
        let a = pair.inv_sy * dot(&s, &q);
        q.iter_mut().zip(&y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push((a, s, y));
    }
    if let Some(last) = memory.back() {
        let gamma = 1.0 / (last.inv_sy * dot(&last.y, &last.y));
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for (pair, (a, s, y)) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = pair.inv_sy * dot(&y, &q);
        q.iter_mut().zip(&s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    mask(&q)
}

/// The inner problem in the variables `z_t = s_t w_t`, where `s_t` is the
/// largest magnitude in column `t`. Every scaled column lies in `[−1, 1]`,
/// so one gradient tolerance fits all columns whatever the data scale.
struct Scaled<'a> {
    columns: Vec<Vec<f64>>,
    offset: Option<&'a [f64]>,
    penalty: Vec<f64>,
    scale: Vec<f64>,
    loss: Loss,
    rows: usize,
}

impl<'a> Scaled<'a> {
    fn new(p: &InnerProblem<'a>) -> Self {
        let scale: Vec<f64> = p
            .columns
            .iter()
            .map(|c| {
                let m = c.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                if m > 0.0 && m.is_finite() {
                    m
                } else {
                    1.0
                }
            })
            .collect();
        Scaled {
            columns: p
                .columns
                .iter()
                .zip(&scale)
                .map(|(c, s)| c.iter().map(|x| x / s).collect())
                .collect(),
            offset: p.offset,
            penalty: scale.iter().map(|s| p.v / s).collect(),
            scale,
            loss: p.loss,
            rows: p.rows(),
        }
    }

    fn eval(&self, z: &[f64]) -> Result<Evaluation> {
        evaluate_full(&self.columns, self.offset, &self.penalty, self.loss, self.rows, z)
    }

    /// True when `z` certifies that the exponential objective is unbounded
    /// below: every column margin exceeds the penalty, so the objective
    /// falls linearly along the ray through `z`.
    fn certifies_unbounded(&self, z: &[f64]) -> bool {
        if self.loss != Loss::Exponential || self.rows == 0 {
            return false;
        }
        let cost: f64 = z.iter().zip(&self.penalty).map(|(zt, pt)| zt * pt).sum();
        if !(cost > 0.0) {
            return false;
        }
        let mut m = vec![0.0; self.rows];
        for (col, &zt) in self.columns.iter().zip(z) {
            if zt != 0.0 {
                m.iter_mut().zip(col).for_each(|(r, h)| *r += zt * h);
            }
        }
        m.iter().all(|&r| r > cost)
    }

    /// Projected Newton direction: coordinates pinned at a bound with the
    /// gradient pushing outward take a gradient step; the rest solve the
    /// Newton system of the free block.
    fn newton_direction(&self, z: &[f64], e: &Evaluation) -> Option<Vec<f64>> {
        let g = &e.g;
        let gap = z
            .iter()
            .zip(g)
            .map(|(&zt, &gt)| (zt - project(zt - gt)).abs())
            .fold(0.0, f64::max);
        let eps = gap.min(1e-6);
        let free: Vec<usize> = (0..z.len())
            .filter(|&t| !((z[t] <= eps && g[t] > 0.0) || (z[t] >= Z_MAX - eps && g[t] < 0.0)))
            .collect();
        if free.len() > NEWTON_MAX_FREE {
            return None;
        }
        let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
        if free.is_empty() {
            return Some(d);
        }
        let nf = free.len();
        let curv: Vec<f64> = match self.loss {
            Loss::Exponential => e.u.clone(),
            Loss::Logistic => e.u.iter().map(|u| u * (1.0 - u)).collect(),
        };
        let mut hess = DMatrix::<f64>::zeros(nf, nf);
        let weighted: Vec<Vec<f64>> = free
            .iter()
            .map(|&t| self.columns[t].iter().zip(&curv).map(|(c, w)| c * w).collect())
            .collect();
        for a in 0..nf {
            for b in 0..=a {
                let v = dot(&weighted[a], &self.columns[free[b]]);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        if self.loss == Loss::Exponential {
            // minus the outer product of Σ_r u_r c_r = penalty − g
            let q: Vec<f64> = free.iter().map(|&t| self.penalty[t] - g[t]).collect();
            for a in 0..nf {
                for b in 0..nf {
                    hess[(a, b)] -= q[a] * q[b];
                }
            }
        }
        let top = (0..nf).map(|a| hess[(a, a)]).fold(0.0_f64, f64::max);
        let rhs = DVector::from_iterator(nf, free.iter().map(|&t| -g[t]));
        let mut mu = 1e-10 * top.max(1e-300);
        for _ in 0..8 {
            let mut m = hess.clone();
            for a in 0..nf {
                m[(a, a)] += mu;
            }
            if let Some(chol) = m.cholesky() {
                let step = chol.solve(&rhs);
                if step.iter().all(|x| x.is_finite()) {
                    for (k, &t) in free.iter().enumerate() {
                        d[t] = step[k];
                    }
                    return Some(d);
                }
            }
            mu *= 100.0;
        }
        None
    }
}

/// Bound-constrained solve over `w ≥ 0`. Each step is a projected Newton
/// step on the free block when that block is small enough, otherwise a
/// limited-memory quasi-Newton step, with projected steepest descent as the
/// fallback whenever a step fails to make progress. Works on column-scaled
/// variables; see [`InnerOutcome`].
///
/// Stops early, unconverged, when progress falls to round-off level, and
/// with `unbounded` set once the iterate proves that the exponential
/// objective has no minimizer.
///
/// Never returns a point with a higher objective than `w_init`.
pub fn inner_solve(p: &InnerProblem<'_>, w_init: &[f64], cfg: &InnerSolveConfig) -> Result<InnerOutcome> {
    cfg.validate()?;
    p.check()?;
    if w_init.len() != p.columns.len() {
        return Err(Error::DimensionMismatch {
            expected: p.columns.len(),
            got: w_init.len(),
        });
    }
    if let Some(t) = w_init.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "initial weight w[{t}] = {} is not feasible",
            w_init[t]
        )));
    }
    let sp = Scaled::new(p);
    let z_init: Vec<f64> = w_init.iter().zip(&sp.scale).map(|(w, s)| project(w * s)).collect();
    let mut z = z_init.clone();
    let mut cur = sp.eval(&z)?;
    if !cur.f.is_finite() || cur.g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("objective at the initial weights".into()));
    }
    let f_init = cur.f;
    let mut memory: VecDeque<CurvaturePair> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    let mut converged = false;
    let mut unbounded = sp.certifies_unbounded(&z);
    let mut stalled = 0;

    while !unbounded && iterations < cfg.max_inner_iter {
        let pg = projected_grad_norm(&z, &cur.g);
        if pg <= cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let g = &cur.g;
        let free: Vec<bool> = z
            .iter()
            .zip(g)
            .map(|(&zt, &gt)| (zt > 0.0 || gt < 0.0) && (zt < Z_MAX || gt > 0.0))
            .collect();
        let steepest: Vec<f64> = g.iter().zip(&free).map(|(&x, &fr)| if fr { -x } else { 0.0 }).collect();

        let mut candidates: Vec<(Vec<f64>, f64)> = Vec::with_capacity(2);
        match sp.newton_direction(&z, &cur) {
            Some(d) if dot(g, &d) < 0.0 => candidates.push((d, 1.0)),
            _ => {
                if !memory.is_empty() {
                    let d = quasi_newton_direction(g, &memory, &free);
                    if dot(g, &d) < 0.0 {
                        candidates.push((d, 1.0));
                    }
                }
            }
        }
        let unit = 1.0 / steepest.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        candidates.push((steepest, unit));

        let mut accepted = None;
        for (d, step0) in &candidates {
            if let Some(trial) = line_search(&sp, &z, &cur, d, *step0)? {
                accepted = Some(trial);
                break;
            }
        }
        let Some((z_new, next)) = accepted else {
            break;
        };
        // decreases at the level of round-off mean the tolerance is out of reach
        if cur.f - next.f <= 16.0 * f64::EPSILON * cur.f.abs().max(1.0) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if memory.len() == cfg.memory.max(1) {
                memory.pop_front();
            }
            memory.push_back(CurvaturePair { s, y, inv_sy: 1.0 / sy });
        }
        z = z_new;
        cur = next;
        if sp.certifies_unbounded(&z) || z.iter().any(|&zt| zt >= Z_MAX) {
            unbounded = true;
            break;
        }
        if stalled >= STALL_LIMIT {
            break;
        }
    }
    if !converged {
        converged = projected_grad_norm(&z, &cur.g) <= cfg.grad_tol;
    }
    let w: Vec<f64> = if cur.f > f_init || z == z_init {
        // the former only through round-off acceptances
        z = z_init;
        cur = sp.eval(&z)?;
        w_init.to_vec()
    } else {
        z.iter().zip(&sp.scale).map(|(z, s)| z / s).collect()
    };
    let projected_grad = projected_grad_norm(&z, &cur.g);
    let objective = objective_and_gradient(p, &w)?.0;
    Ok(InnerOutcome {
        w,
        objective,
        iterations,
        converged,
        projected_grad,
        unbounded,
    })
}

/// Doubles an accepted step while the objective keeps falling at the
/// linear rate, stopping at the weight cap.
fn extrapolate(
    sp: &Scaled<'_>,
    z: &[f64],
    cur: &Evaluation,
    d: &[f64],
    mut alpha: f64,
    mut best_z: Vec<f64>,
    mut best: Evaluation,
) -> Result<(Vec<f64>, Evaluation)> {
    for _ in 0..64 {
        alpha *= 2.0;
        let z_new: Vec<f64> = z.iter().zip(d).map(|(zi, di)| project(zi + alpha * di)).collect();
        if z_new == best_z {
            break;
        }
        let delta: f64 = z_new.iter().zip(z).zip(&cur.g).map(|((a, b), gi)| (a - b) * gi).sum();
        let next = sp.eval(&z_new)?;
        if !(next.f.is_finite() && next.f < best.f && next.f - cur.f <= 0.9 * delta) {
            break;
        }
        best_z = z_new;
        best = next;
    }
    Ok((best_z, best))
}

/// Backtracking along the projected path `P(z + α d)` with an Armijo test.
/// Near the optimum, where the decrease is below round-off, a step is also
/// taken if it stays level and shrinks the projected gradient.
fn line_search(
    sp: &Scaled<'_>,
    z: &[f64],
    cur: &Evaluation,
    d: &[f64],
    step0: f64,
) -> Result<Option<(Vec<f64>, Evaluation)>> {
    let (f, g) = (cur.f, &cur.g);
    let pg = projected_grad_norm(z, g);
    let mut alpha = step0;
    for _ in 0..60 {
        let z_new: Vec<f64> = z.iter().zip(d).map(|(zi, di)| project(zi + alpha * di)).collect();
        let delta: f64 = z_new.iter().zip(z).zip(g).map(|((a, b), gi)| (a - b) * gi).sum();
        if z_new == z {
            return Ok(None);
        }
        let next = sp.eval(&z_new)?;
        if next.f.is_finite() && delta < 0.0 {
            if next.f <= f + 1e-4 * delta {
                if next.f - f <= 0.9 * delta {
                    // decrease as large as the linear model predicts: the
                    // objective is close to linear along d, so try longer steps
                    return extrapolate(sp, z, cur, d, alpha, z_new, next).map(Some);
                }
                return Ok(Some((z_new, next)));
            }
            let level = next.f - f <= 4.0 * f64::EPSILON * f.abs().max(1.0);
            if level && projected_grad_norm(&z_new, &next.g) < 0.5 * pg {
                return Ok(Some((z_new, next)));
            }
        }
        alpha *= 0.5;
    }
    Ok(None)
}

pub fn train_totally_corrective(
    triplets: &TripletSet,
    ds: &Dataset,
    cfg: &TrainConfig,
    inner: &InnerSolveConfig,
) -> Result<(MetricModel, TrainTrace)> {
    train_totally_corrective_observed(triplets, ds, cfg, inner, |_| {})
}

pub fn train_totally_corrective_observed(
    triplets: &TripletSet,
    ds: &Dataset,
    cfg: &TrainConfig,
    inner: &InnerSolveConfig,
    observer: impl FnMut(&IterationView<'_>),
) -> Result<(MetricModel, TrainTrace)> {
    inner.validate()?;
    let cs = prepare(triplets, ds, cfg)?;
    run_corrective(&cs, cfg, inner, observer)
}

pub(crate) fn run_corrective(
    cs: &ConstraintSet,
    cfg: &TrainConfig,
    inner: &InnerSolveConfig,
    mut observer: impl FnMut(&IterationView<'_>),
) -> Result<(MetricModel, TrainTrace)> {
    let n = cs.len();
    let mut meta = TrainMeta::new(Variant::TotallyCorrective, cfg.v);
    let mut model = MetricModel::empty(cs.dim(), cfg.loss, meta.clone());
    let mut trace = TrainTrace::default();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut bases: Vec<Vec<f64>> = Vec::new();
    let mut w: Vec<f64> = Vec::new();
    let mut rho = vec![0.0; n];
    let mut u = dual_from_margins(&rho, cfg.loss);

    for iteration in 1..=cfg.max_iter {
        let pair = base_learner(cs, &u, cfg)?;
        if pair.value < cfg.v {
            meta.converged = true;
            trace.final_lambda_max = Some(pair.value);
            break;
        }
        let h = cs.rank_one_column(&pair.vector)?;
        let start = warm_start_weight(&rho, &h, cfg)?;
        if start.capped {
            log::warn!(
                "iteration {iteration}: no finite minimizer along the new base; warm start capped at {:e}",
                start.weight
            );
            meta.capped_steps += 1;
        }
        if start.weight <= 0.0 {
            meta.converged = true;
            trace.final_lambda_max = Some(pair.value);
            break;
        }
        columns.push(h);
        bases.push(pair.vector);
        w.push(start.weight);

        let problem = InnerProblem {
            columns: &columns,
            offset: None,
            v: cfg.v,
            loss: cfg.loss,
        };
        let outcome = inner_solve(&problem, &w, inner)?;
        if outcome.unbounded {
            log::warn!(
                "iteration {iteration}: objective is unbounded below (the triplets are separable at v = {:e}); stopping",
                cfg.v
            );
            if !start.capped {
                meta.capped_steps += 1;
            }
            if model.num_bases() == 0 {
                // as in stage-wise training, keep the capped first base so the
                // separating direction is not lost
                let last = &bases[bases.len() - 1..];
                meta.iterations = iteration;
                model = rebuild(cs.dim(), cfg.loss, &meta, &[start.weight], last)?;
                let rho: Vec<f64> = columns[columns.len() - 1].iter().map(|h| start.weight * h).collect();
                trace.rows.push(TraceRow {
                    pass: 1,
                    iteration,
                    lambda_max: pair.value,
                    weight: start.weight,
                    objective: primal_objective(&rho, &[start.weight], cfg.v, cfg.loss)?,
                    inner_iters: outcome.iterations,
                });
            }
            break;
        }
        if !outcome.converged {
            // near-duplicate bases make the inner problem flat; small
            // residual gradients there are expected and harmless
            let level = if outcome.projected_grad > 1e-5 { log::Level::Warn } else { log::Level::Debug };
            log::log!(
                level,
                "iteration {iteration}: inner solve stopped at projected gradient {:.3e} after {} steps",
                outcome.projected_grad,
                outcome.iterations
            );
        }
        w = outcome.w;
        rho = problem.margins(&w);
        u = dual_from_margins(&rho, cfg.loss);

        meta.iterations = iteration;
        model = rebuild(cs.dim(), cfg.loss, &meta, &w, &bases)?;
        trace.rows.push(TraceRow {
            pass: 1,
            iteration,
            lambda_max: pair.value,
            weight: *w.last().unwrap_or(&0.0),
            objective: outcome.objective,
            inner_iters: outcome.iterations,
        });
        observer(&IterationView {
            iteration,
            lambda_max: pair.value,
            weight: *w.last().unwrap_or(&0.0),
            objective: outcome.objective,
            u: &u,
            rho: &rho,
            model: &model,
        });
    }
    model.meta = meta;
    Ok((model, trace))
}

/// Model from the terms with a strictly positive weight.
fn rebuild(
    dim: usize,
    loss: Loss,
    meta: &TrainMeta,
    w: &[f64],
    bases: &[Vec<f64>],
) -> Result<MetricModel> {
    let mut model = MetricModel::empty(dim, loss, meta.clone());
    for (&wt, v) in w.iter().zip(bases) {
        if wt > 0.0 {
            model.push(wt, v.clone())?;
        }
    }
    Ok(model)
}
