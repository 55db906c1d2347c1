//! Shared fixtures and independent oracles for the integration suites.

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use boostmetric::dataio::{load_csv, LabelColumn};
use boostmetric::{Dataset, Loss, Triplet, TripletSet};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn iris() -> Dataset {
    load_csv(data_dir().join("iris.data"), &LabelColumn::Index(-1), ',').unwrap()
}

pub fn wine() -> Dataset {
    load_csv(data_dir().join("wine.data"), &LabelColumn::Index(0), ',').unwrap()
}

pub fn balance() -> Dataset {
    load_csv(data_dir().join("balance-scale.data"), &LabelColumn::Index(0), ',').unwrap()
}

/// Seven points in the plane with three hand-picked triplets; two of the
/// constraints pull in opposite directions, so the optimum is finite.
pub fn hand_instance() -> (Dataset, TripletSet) {
    let points = vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.5, 0.5],
        vec![1.0, -0.2],
    ];
    let labels = ["A", "A", "B", "A", "B", "A", "B"].iter().map(|s| s.to_string()).collect();
    let ds = Dataset::new(points, labels).unwrap();
    let ts = TripletSet::from_vec(
        &ds,
        vec![
            Triplet { i: 0, j: 1, k: 2 },
            Triplet { i: 0, j: 3, k: 4 },
            Triplet { i: 0, j: 5, k: 6 },
        ],
    )
    .unwrap();
    (ds, ts)
}

pub fn naive_loss(rho: &[f64], loss: Loss) -> f64 {
    match loss {
        Loss::Exponential => {
            let m = rho.iter().map(|r| -r).fold(f64::NEG_INFINITY, f64::max);
            m + rho.iter().map(|r| (-r - m).exp()).sum::<f64>().ln()
        }
        Loss::Logistic => rho
            .iter()
            .map(|&r| if r > 0.0 { (-r).exp().ln_1p() } else { -r + r.exp().ln_1p() })
            .sum(),
    }
}

/// Minimizer of a convex `f` on `[0, hi]`: fine grid, then golden-section
/// refinement inside the best cell.
pub fn grid_golden_min(f: impl Fn(f64) -> f64, hi: f64, cells: usize) -> f64 {
    let step = hi / cells as f64;
    let mut best = 0.0;
    let mut best_f = f(0.0);
    for k in 1..=cells {
        let w = k as f64 * step;
        let fw = f(w);
        if fw < best_f {
            best = w;
            best_f = fw;
        }
    }
    let (mut a, mut b) = ((best - step).max(0.0), (best + step).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let m1 = b - phi * (b - a);
        let m2 = a + phi * (b - a);
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let mid = 0.5 * (a + b);
    if f(0.0) <= f(mid) { 0.0 } else { mid }
}

/// Dense `A_r = (a_i − a_k)(a_i − a_k)ᵀ − (a_i − a_j)(a_i − a_j)ᵀ`.
pub fn dense_constraints(ds: &Dataset, ts: &TripletSet) -> Vec<DMatrix<f64>> {
    ts.iter()
        .map(|t| {
            let ai = DVector::from_column_slice(ds.point(t.i));
            let c = &ai - DVector::from_column_slice(ds.point(t.k));
            let b = &ai - DVector::from_column_slice(ds.point(t.j));
            &c * c.transpose() - &b * b.transpose()
        })
        .collect()
}

/// Stage-wise trainer that materializes `A_r`, `Â` and `X` densely,
/// recomputes margins and dual weights from scratch each step, and finds
/// each weight by direct 1-D minimization of the primal. Returns the
/// objective after every step.
pub fn reference_stagewise(ds: &Dataset, ts: &TripletSet, v: f64, loss: Loss, max_iter: usize) -> Vec<f64> {
    let a = dense_constraints(ds, ts);
    let d = ds.dim();
    let mut x = DMatrix::<f64>::zeros(d, d);
    let mut wsum = 0.0;
    let mut objectives = Vec::new();
    for _ in 0..max_iter {
        let rho: Vec<f64> = a.iter().map(|ar| ar.dot(&x)).collect();
        let u: Vec<f64> = match loss {
            Loss::Exponential => {
                let m = rho.iter().map(|r| -r).fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = rho.iter().map(|r| (-r - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|x| x / s).collect()
            }
            Loss::Logistic => rho.iter().map(|r| 1.0 / (1.0 + r.exp())).collect(),
        };
        let mut a_hat = DMatrix::<f64>::zeros(d, d);
        for (ar, ur) in a.iter().zip(&u) {
            a_hat += ar * *ur;
        }
        let eig = SymmetricEigen::new(a_hat);
        let (top, lambda) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        if lambda < v {
            break;
        }
        let z = eig.eigenvectors.column(top).into_owned();
        let zz = &z * z.transpose();
        let h: Vec<f64> = a.iter().map(|ar| ar.dot(&zz)).collect();
        let phi = |w: f64| {
            let r: Vec<f64> = rho.iter().zip(&h).map(|(r, hr)| r + w * hr).collect();
            naive_loss(&r, loss) + v * (wsum + w)
        };
        let mut hi = 1.0;
        while phi(hi) < phi(0.5 * hi) && hi < 1e12 {
            hi *= 2.0;
        }
        let w = grid_golden_min(phi, hi, 2000);
        if w <= 0.0 {
            break;
        }
        x += zz * w;
        wsum += w;
        let rho: Vec<f64> = a.iter().map(|ar| ar.dot(&x)).collect();
        objectives.push(naive_loss(&rho, loss) + v * wsum);
    }
    objectives
}
