//! Stage-wise training: one new base per iteration, weight found by
//! bisection on the coordinate-wise optimality condition, earlier weights
//! frozen.

use super::{
    base_learner, log_sum_exp, prepare, primal_objective, sigmoid,
    IterationView, Loss, MetricModel, TraceRow, TrainConfig, TrainMeta, TrainTrace, Variant,
    MAX_DOUBLINGS,
};
use crate::constraints::{ConstraintSet, Dataset, TripletSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOutcome {
    pub weight: f64,
    /// The derivative never changed sign; `weight` is the last doubled bracket.
    pub capped: bool,
}

/// Dual weights kept in log form: `log u` for the exponential loss,
/// log-odds `log(u / (1 − u))` for the logistic loss.
#[derive(Debug, Clone)]
pub(crate) enum DualState {
    Exponential { log_u: Vec<f64> },
    Logistic { log_odds: Vec<f64> },
}

impl DualState {
    pub(crate) fn initial(n: usize, loss: Loss) -> Self {
        match loss {
            Loss::Exponential => DualState::Exponential {
                log_u: vec![-(n as f64).ln(); n],
            },
            // sigmoid(-0): the logistic KKT point for zero margins
            Loss::Logistic => DualState::Logistic {
                log_odds: vec![0.0; n],
            },
        }
    }

    pub(crate) fn from_weights(u: &[f64], loss: Loss) -> Result<Self> {
        match loss {
            Loss::Exponential => {
                if let Some(r) = u.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(Error::InvalidArgument(format!("u[{r}] = {} is not >= 0", u[r])));
                }
                Ok(DualState::Exponential {
                    log_u: u.iter().map(|x| x.ln()).collect(),
                })
            }
            Loss::Logistic => {
                if let Some(r) = u.iter().position(|&x| !(x > 0.0 && x < 1.0)) {
                    return Err(Error::DualOutOfInterior { index: r, value: u[r] });
                }
                Ok(DualState::Logistic {
                    log_odds: u.iter().map(|&x| x.ln() - (-x).ln_1p()).collect(),
                })
            }
        }
    }

    pub(crate) fn weights(&self) -> Vec<f64> {
        match self {
            DualState::Exponential { log_u } => log_u.iter().map(|l| l.exp()).collect(),
            DualState::Logistic { log_odds } => log_odds.iter().map(|&s| sigmoid(s)).collect(),
        }
    }

    /// Root of the coordinate-wise optimality condition for a new column.
    pub(crate) fn bisect(
        &self,
        h: &[f64],
        v: f64,
        eps: f64,
        w_upper_init: f64,
    ) -> Result<BisectionOutcome> {
        match self {
            DualState::Exponential { log_u } => {
                check_len(log_u.len(), h.len())?;
                // Σ (H_r − v) u_r exp(−w H_r), rescaled by its largest exponent
                let lhs = |w: f64| {
                    let shift = log_u
                        .iter()
                        .zip(h)
                        .map(|(l, hr)| l - w * hr)
                        .fold(f64::NEG_INFINITY, f64::max);
                    log_u
                        .iter()
                        .zip(h)
                        .filter(|(l, _)| l.is_finite())
                        .map(|(l, hr)| (hr - v) * (l - w * hr - shift).exp())
                        .sum::<f64>()
                };
                Ok(bisect_root(lhs, eps, w_upper_init))
            }
            DualState::Logistic { log_odds } => {
                check_len(log_odds.len(), h.len())?;
                // Σ H_r u_r(w) − v with u_r(w) = sigmoid(s_r − w H_r)
                let lhs = |w: f64| {
                    log_odds
                        .iter()
                        .zip(h)
                        .map(|(s, hr)| hr * sigmoid(s - w * hr))
                        .sum::<f64>()
                        - v
                };
                Ok(bisect_root(lhs, eps, w_upper_init))
            }
        }
    }

    /// Multiplicative update after adding `w · H`.
    pub(crate) fn update(&mut self, h: &[f64], w: f64) -> Result<()> {
        match self {
            DualState::Exponential { log_u } => {
                check_len(log_u.len(), h.len())?;
                for (l, hr) in log_u.iter_mut().zip(h) {
                    *l -= hr * w;
                }
                let z = log_sum_exp(log_u.iter().copied());
                if !z.is_finite() {
                    return Err(Error::DualCollapse(format!(
                        "normalizer log z = {z} after step w = {w:e}"
                    )));
                }
                log_u.iter_mut().for_each(|l| *l -= z);
            }
            DualState::Logistic { log_odds } => {
                check_len(log_odds.len(), h.len())?;
                for (s, hr) in log_odds.iter_mut().zip(h) {
                    *s -= hr * w;
                }
            }
        }
        Ok(())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Bisection on a decreasing `lhs` over `w ≥ 0`. The lower end always keeps
/// `lhs > 0`, and is returned, so the step never overshoots the minimizer by
/// more than `eps`.
fn bisect_root(lhs: impl Fn(f64) -> f64, eps: f64, w_upper_init: f64) -> BisectionOutcome {
    if !(lhs(0.0) > 0.0) {
        return BisectionOutcome {
            weight: 0.0,
            capped: false,
        };
    }
    let mut lo = 0.0;
    let mut hi = w_upper_init;
    let mut doublings = 0;
    while lhs(hi) > 0.0 {
        if doublings == MAX_DOUBLINGS {
            return BisectionOutcome {
                weight: hi,
                capped: true,
            };
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }
    while hi - lo >= eps {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lhs(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    BisectionOutcome {
        weight: lo,
        capped: false,
    }
}

/// Optimal weight of a new column `h` given dual weights `u`.
///
/// Exponential: root of `Σ_r (H_r − v) u_r exp(−w H_r)`.
/// Logistic: root of `Σ_r H_r u_r(w) − v` with
/// `u_r(w) = 1 / ((1/u_r − 1) exp(H_r w) + 1)`.
pub fn bisection_weight(
    h: &[f64],
    u: &[f64],
    v: f64,
    loss: Loss,
    eps: f64,
    w_upper_init: f64,
) -> Result<BisectionOutcome> {
    check_len(u.len(), h.len())?;
    if !(eps > 0.0) || !(w_upper_init > 0.0) {
        return Err(Error::InvalidArgument(
            "bisection tolerance and initial bracket must be > 0".into(),
        ));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("column entry".into()));
    }
    DualState::from_weights(u, loss)?.bisect(h, v, eps, w_upper_init)
}

/// `u_r ← u_r exp(−H_r w) / z`, evaluated in log space.
pub fn update_u_exponential(u_prev: &[f64], h: &[f64], w: f64) -> Result<Vec<f64>> {
    if !w.is_finite() {
        return Err(Error::NonFinite("step weight".into()));
    }
    let mut state = DualState::from_weights(u_prev, Loss::Exponential)?;
    state.update(h, w)?;
    Ok(state.weights())
}

/// `u_r ← 1 / ((1/u_r − 1) exp(H_r w) + 1)`; the result stays in `(0, 1)`
/// and is not normalized.
pub fn update_u_logistic(u_prev: &[f64], h: &[f64], w: f64) -> Result<Vec<f64>> {
    if !w.is_finite() {
        return Err(Error::NonFinite("step weight".into()));
    }
    let mut state = DualState::from_weights(u_prev, Loss::Logistic)?;
    state.update(h, w)?;
    Ok(state.weights())
}

pub fn train_stagewise(
    triplets: &TripletSet,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MetricModel, TrainTrace)> {
    train_stagewise_observed(triplets, ds, cfg, |_| {})
}

/// Stage-wise training with a callback after every accepted iteration.
pub fn train_stagewise_observed(
    triplets: &TripletSet,
    ds: &Dataset,
    cfg: &TrainConfig,
    observer: impl FnMut(&IterationView<'_>),
) -> Result<(MetricModel, TrainTrace)> {
    let cs = prepare(triplets, ds, cfg)?;
    run_stagewise(&cs, cfg, observer)
}

pub(crate) fn run_stagewise(
    cs: &ConstraintSet,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&IterationView<'_>),
) -> Result<(MetricModel, TrainTrace)> {
    let n = cs.len();
    let mut dual = DualState::initial(n, cfg.loss);
    let mut rho = vec![0.0; n];
    let mut model = MetricModel::empty(cs.dim(), cfg.loss, TrainMeta::new(Variant::Stagewise, cfg.v));
    let mut trace = TrainTrace::default();

    for iteration in 1..=cfg.max_iter {
        let u = dual.weights();
        let pair = base_learner(cs, &u, cfg)?;
        if pair.value < cfg.v {
            model.meta.converged = true;
            trace.final_lambda_max = Some(pair.value);
            break;
        }
        let h = cs.rank_one_column(&pair.vector)?;
        let step = dual.bisect(&h, cfg.v, cfg.eps_bisect, cfg.w_upper_init)?;
        if step.capped {
            log::warn!(
                "iteration {iteration}: no finite minimizer along the new base; weight capped at {:e}",
                step.weight
            );
            model.meta.capped_steps += 1;
        }
        if step.weight <= 0.0 {
            // λmax sits exactly at v: nothing left to gain
            model.meta.converged = true;
            trace.final_lambda_max = Some(pair.value);
            break;
        }
        dual.update(&h, step.weight)?;
        for (r, hr) in rho.iter_mut().zip(&h) {
            *r += step.weight * hr;
        }
        model.push(step.weight, pair.vector)?;
        model.meta.iterations = iteration;
        let objective = primal_objective(&rho, model.weights(), cfg.v, cfg.loss)?;
        trace.rows.push(TraceRow {
            pass: 1,
            iteration,
            lambda_max: pair.value,
            weight: step.weight,
            objective,
            inner_iters: 0,
        });
        let u = dual.weights();
        observer(&IterationView {
            iteration,
            lambda_max: pair.value,
            weight: step.weight,
            objective,
            u: &u,
            rho: &rho,
            model: &model,
        });
    }
    Ok((model, trace))
}

/// Exposed for the totally-corrective warm start.
pub(crate) fn warm_start_weight(
    rho: &[f64],
    h: &[f64],
    cfg: &TrainConfig,
) -> Result<BisectionOutcome> {
    let state = match cfg.loss {
        Loss::Exponential => {
            let lse = log_sum_exp(rho.iter().map(|r| -r));
            DualState::Exponential {
                log_u: rho.iter().map(|r| -r - lse).collect(),
            }
        }
        Loss::Logistic => DualState::Logistic {
            log_odds: rho.iter().map(|r| -r).collect(),
        },
    };
    state.bisect(h, cfg.v, cfg.eps_bisect, cfg.w_upper_init)
}
