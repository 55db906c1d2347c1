//! Multi-pass refinement: learn `X`, factor it as `L Lᵀ`, regenerate the
//! triplets among the projected points `Lᵀa`, retrain, and compose the
//! projections.

use nalgebra::DMatrix;

use crate::boost::{self, InnerSolveConfig, MetricModel, TrainConfig, TrainMeta, TrainTrace, Variant};
use crate::constraints::{generate_triplets, Dataset, TripletSet};
use crate::error::{Error, Result};
use crate::linalg::{dense_evd, SymMatrix};

pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// `L` (D×d) with `L Lᵀ = X` over the eigenvalues above `rank_tol · λmax`,
/// columns ordered by descending eigenvalue.
pub fn factor_metric(x: &SymMatrix, rank_tol: f64) -> Result<DMatrix<f64>> {
    let pairs = dense_evd(x)?;
    let dim = x.dim();
    let max_eig = pairs[0].value;
    if max_eig <= 0.0 {
        if max_eig < 0.0 {
            return Err(Error::NotPsd {
                min_eig: pairs[dim - 1].value,
                max_eig,
            });
        }
        return Ok(DMatrix::zeros(dim, 0));
    }
    let min_eig = pairs[dim - 1].value;
    if min_eig < -1e-6 * max_eig {
        return Err(Error::NotPsd { min_eig, max_eig });
    }
    let kept: Vec<_> = pairs
        .iter()
        .filter(|p| p.value > rank_tol * max_eig)
        .collect();
    Ok(DMatrix::from_fn(dim, kept.len(), |i, k| {
        kept[k].value.max(0.0).sqrt() * kept[k].vector[i]
    }))
}

/// `L Lᵀ` as a model: one term per column, `w = ‖l‖²`, `v = l / ‖l‖`.
pub fn model_from_projection(
    l: &DMatrix<f64>,
    loss: boost::Loss,
    meta: TrainMeta,
) -> Result<MetricModel> {
    let mut model = MetricModel::empty(l.nrows(), loss, meta);
    for col in l.column_iter() {
        let n2 = col.norm_squared();
        if n2 > 0.0 {
            let n = n2.sqrt();
            model.push(n2, col.iter().map(|x| x / n).collect())?;
        }
    }
    Ok(model)
}

/// Projects every point to `Lᵀa`.
pub fn project_dataset(ds: &Dataset, l: &DMatrix<f64>) -> Result<Dataset> {
    if l.nrows() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            got: l.nrows(),
        });
    }
    ds.map_points(|a| {
        Ok((0..l.ncols())
            .map(|k| l.column(k).iter().zip(a).map(|(x, y)| x * y).sum())
            .collect())
    })
}

#[derive(Debug, Clone)]
pub struct MultipassOptions {
    pub passes: usize,
    pub k_neighbors: usize,
    pub variant: Variant,
    pub inner: InnerSolveConfig,
    pub rank_tol: f64,
    /// Reuse the first pass's triplets instead of regenerating them.
    pub freeze_triplets: bool,
}

impl Default for MultipassOptions {
    fn default() -> Self {
        MultipassOptions {
            passes: 2,
            k_neighbors: 3,
            variant: Variant::Stagewise,
            inner: InnerSolveConfig::default(),
            rank_tol: DEFAULT_RANK_TOL,
            freeze_triplets: false,
        }
    }
}

/// Runs `opts.passes` passes. A single pass returns the underlying
/// trainer's model unchanged; otherwise the result is `L Lᵀ` with `L` the
/// product of the per-pass factors, each normalized so that its own
/// `L_p L_pᵀ` has unit trace.
pub fn train_multipass(
    ds: &Dataset,
    cfg: &TrainConfig,
    opts: &MultipassOptions,
) -> Result<(MetricModel, TrainTrace)> {
    if opts.passes == 0 {
        return Err(Error::InvalidArgument("pass count must be at least 1".into()));
    }
    let first = generate_triplets(ds, opts.k_neighbors, cfg.seed)?;
    train_multipass_with(ds, cfg, opts, &first)
}

/// As [`train_multipass`], with the first pass's triplets supplied.
pub fn train_multipass_with(
    ds: &Dataset,
    cfg: &TrainConfig,
    opts: &MultipassOptions,
    first: &TripletSet,
) -> Result<(MetricModel, TrainTrace)> {
    if opts.passes == 0 {
        return Err(Error::InvalidArgument("pass count must be at least 1".into()));
    }
    let mut projection = DMatrix::<f64>::identity(ds.dim(), ds.dim());
    let mut trace = TrainTrace::default();
    let mut meta = TrainMeta::new(opts.variant, cfg.v);
    meta.passes = 0;

    for pass in 1..=opts.passes {
        let (points, triplets) = if pass == 1 {
            (ds.clone(), first.clone())
        } else {
            let projected = project_dataset(ds, &projection)?;
            let t = if opts.freeze_triplets {
                first.clone()
            } else {
                generate_triplets(&projected, opts.k_neighbors, cfg.seed)?
            };
            (projected, t)
        };
        let (model, mut pass_trace) = boost::train(&triplets, &points, cfg, opts.variant, &opts.inner)?;
        if opts.passes == 1 {
            return Ok((model, pass_trace));
        }
        pass_trace.set_pass(pass);
        trace.rows.extend(pass_trace.rows);
        trace.final_lambda_max = pass_trace.final_lambda_max;

        if model.num_bases() == 0 || model.matrix().frobenius_norm() == 0.0 {
            log::warn!("pass {pass} learned a zero metric; stopping early");
            if pass == 1 {
                let mut m = model;
                m.meta.passes = 1;
                return Ok((m, trace));
            }
            break;
        }
        meta.iterations += model.meta.iterations;
        meta.capped_steps += model.meta.capped_steps;
        meta.converged = model.meta.converged;
        meta.passes = pass;
        // Rescale to unit trace: kNN is scale-free, and separable data can
        // drive the trace of X far enough that the next pass's margins
        // overwhelm the absolute bisection tolerance.
        let factor = factor_metric(model.matrix(), opts.rank_tol)? / model.matrix().trace().sqrt();
        projection = &projection * factor;
    }
    let model = model_from_projection(&projection, cfg.loss, meta)?;
    Ok((model, trace))
}
