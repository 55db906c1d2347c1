//! Labeled datasets, triplet generation and the implicit constraint
//! matrices `A_r = c cᵀ − b bᵀ` with `c = a_i − a_k`, `b = a_i − a_j`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{dot, SymMatrix, SymOperator};

/// Labeled points. Labels are stored as dense class ids into `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from string labels; class ids follow first appearance.
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut classes = Vec::new();
        let ids = labels
            .into_iter()
            .map(|l| {
                *index.entry(l.clone()).or_insert_with(|| {
                    classes.push(l);
                    classes.len() - 1
                })
            })
            .collect();
        Self::with_classes(points, ids, classes)
    }

    pub fn with_classes(
        points: Vec<Vec<f64>>,
        labels: Vec<usize>,
        classes: Vec<String>,
    ) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: labels.len(),
            });
        }
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a dataset needs at least 2 points, got {}",
                points.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("points have no features".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("feature of point {i}")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::InvalidArgument(format!("label id {bad} has no class name")));
        }
        Ok(Dataset {
            points,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_name(&self, id: usize) -> &str {
        &self.classes[id]
    }

    /// Number of classes that actually occur among the points.
    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.classes.len()];
        self.labels.iter().for_each(|&l| seen[l] = true);
        seen.into_iter().filter(|&s| s).count()
    }

    /// Rows `indices`, keeping the class table so ids stay comparable.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::with_classes(
            indices.iter().map(|&i| self.points[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.classes.clone(),
        )
    }

    pub fn map_points(&self, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Dataset> {
        let points = self.points.iter().map(|p| f(p)).collect::<Result<Vec<_>>>()?;
        Dataset::with_classes(points, self.labels.clone(), self.classes.clone())
    }
}

/// Index triple asserting that point `i` is closer to `j` than to `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletSet {
    triplets: Vec<Triplet>,
}

impl TripletSet {
    /// Checks each triple against the dataset labels.
    pub fn from_vec(ds: &Dataset, triplets: Vec<Triplet>) -> Result<Self> {
        for t in &triplets {
            if t.i.max(t.j).max(t.k) >= ds.len() {
                return Err(Error::InvalidArgument(format!("{t:?} indexes past the dataset")));
            }
            if t.i == t.j || t.i == t.k || t.j == t.k {
                return Err(Error::InvalidArgument(format!("{t:?} repeats an index")));
            }
            if ds.label(t.i) != ds.label(t.j) || ds.label(t.i) == ds.label(t.k) {
                return Err(Error::InvalidArgument(format!(
                    "{t:?} does not pair a same-label target with a different-label impostor"
                )));
            }
        }
        Ok(TripletSet { triplets })
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn as_slice(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter()
    }

    /// Materializes the `(c, b)` vectors of every triplet against `ds`.
    pub fn constraints(&self, ds: &Dataset) -> Result<ConstraintSet> {
        ConstraintSet::new(self, ds)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Target/impostor triplets: for every point, its `k_neighbors` nearest
/// same-label points and `k_neighbors` nearest different-label points under
/// the Euclidean metric, combined as a full target × impostor product.
///
/// Distance ties are broken by the smaller index, so the result depends only
/// on the data; `_seed` is accepted for call-site symmetry with the other
/// generators.
pub fn generate_triplets(ds: &Dataset, k_neighbors: usize, _seed: u64) -> Result<TripletSet> {
    if k_neighbors == 0 {
        return Ok(TripletSet::default());
    }
    if ds.distinct_labels() < 2 {
        return Err(Error::NoImpostors);
    }
    let m = ds.len();
    let mut triplets = Vec::with_capacity(m * k_neighbors * k_neighbors);
    let mut clipped = 0usize;
    let mut same: Vec<(f64, usize)> = Vec::with_capacity(m);
    let mut diff: Vec<(f64, usize)> = Vec::with_capacity(m);
    for i in 0..m {
        same.clear();
        diff.clear();
        for j in 0..m {
            if j == i {
                continue;
            }
            let d = sq_dist(ds.point(i), ds.point(j));
            if ds.label(j) == ds.label(i) {
                same.push((d, j));
            } else {
                diff.push((d, j));
            }
        }
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        same.sort_by(by_dist);
        diff.sort_by(by_dist);
        let kt = k_neighbors.min(same.len());
        let ki = k_neighbors.min(diff.len());
        if kt < k_neighbors || ki < k_neighbors {
            clipped += 1;
        }
        for &(_, j) in &same[..kt] {
            for &(_, k) in &diff[..ki] {
                triplets.push(Triplet { i, j, k });
            }
        }
    }
    if clipped > 0 {
        log::warn!("{clipped} point(s) had fewer than {k_neighbors} targets or impostors");
    }
    let before = triplets.len();
    let mut seen = std::collections::HashSet::with_capacity(before);
    triplets.retain(|t| seen.insert(*t));
    if triplets.len() != before {
        log::debug!("dropped {} duplicate triplets", before - triplets.len());
    }
    Ok(TripletSet { triplets })
}

/// `A = c cᵀ − b bᵀ`, held implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    pub c: Vec<f64>,
    pub b: Vec<f64>,
}

impl ConstraintMatrix {
    pub fn from_triplet(ds: &Dataset, t: &Triplet) -> Self {
        let (ai, aj, ak) = (ds.point(t.i), ds.point(t.j), ds.point(t.k));
        ConstraintMatrix {
            c: ai.iter().zip(ak).map(|(x, y)| x - y).collect(),
            b: ai.iter().zip(aj).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn to_dense(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.dim());
        m.add_outer(1.0, &self.c);
        m.add_outer(-1.0, &self.b);
        m
    }
}

/// `⟨A, v vᵀ⟩ = (c·v)² − (b·v)²` for a unit vector `v`.
pub fn inner_with_rank_one(a: &ConstraintMatrix, v: &[f64]) -> Result<f64> {
    if v.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: v.len(),
        });
    }
    let n = dot(v, v).sqrt();
    if (n - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!("vector norm {n} is not 1")));
    }
    Ok(dot(&a.c, v).powi(2) - dot(&a.b, v).powi(2))
}

/// `⟨A, X⟩ = cᵀXc − bᵀXb`, i.e. `dist²(i,k) − dist²(i,j)` under `X`.
pub fn inner_with_metric(a: &ConstraintMatrix, x: &SymMatrix) -> Result<f64> {
    Ok(x.quad_form(&a.c)? - x.quad_form(&a.b)?)
}

/// All constraints of a triplet set, stored as two flat row-major
/// `|I| × D` arrays.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    dim: usize,
    c: Vec<f64>,
    b: Vec<f64>,
}

impl ConstraintSet {
    pub fn new(triplets: &TripletSet, ds: &Dataset) -> Result<Self> {
        let dim = ds.dim();
        let n = triplets.len();
        let mut c = Vec::with_capacity(n * dim);
        let mut b = Vec::with_capacity(n * dim);
        for t in triplets.iter() {
            if t.i.max(t.j).max(t.k) >= ds.len() {
                return Err(Error::InvalidArgument(format!("{t:?} indexes past the dataset")));
            }
            let (ai, aj, ak) = (ds.point(t.i), ds.point(t.j), ds.point(t.k));
            c.extend(ai.iter().zip(ak).map(|(x, y)| x - y));
            b.extend(ai.iter().zip(aj).map(|(x, y)| x - y));
        }
        Ok(ConstraintSet { dim, c, b })
    }

    pub fn from_matrices(dim: usize, mats: &[ConstraintMatrix]) -> Result<Self> {
        let mut c = Vec::with_capacity(mats.len() * dim);
        let mut b = Vec::with_capacity(mats.len() * dim);
        for a in mats {
            if a.c.len() != dim || a.b.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: a.c.len().max(a.b.len()),
                });
            }
            c.extend_from_slice(&a.c);
            b.extend_from_slice(&a.b);
        }
        Ok(ConstraintSet { dim, c, b })
    }

    pub fn len(&self) -> usize {
        self.c.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn c(&self, r: usize) -> &[f64] {
        &self.c[r * self.dim..(r + 1) * self.dim]
    }

    pub fn b(&self, r: usize) -> &[f64] {
        &self.b[r * self.dim..(r + 1) * self.dim]
    }

    pub fn get(&self, r: usize) -> ConstraintMatrix {
        ConstraintMatrix {
            c: self.c(r).to_vec(),
            b: self.b(r).to_vec(),
        }
    }

    fn check_weights(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// `H_r = ⟨A_r, v vᵀ⟩` for every constraint.
    pub fn rank_one_column(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok((0..self.len())
            .map(|r| dot(self.c(r), v).powi(2) - dot(self.b(r), v).powi(2))
            .collect())
    }

    /// `ρ_r = ⟨A_r, X⟩` for every constraint.
    pub fn margins(&self, x: &SymMatrix) -> Result<Vec<f64>> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        (0..self.len())
            .map(|r| Ok(x.quad_form(self.c(r))? - x.quad_form(self.b(r))?))
            .collect()
    }

    /// Dense `Â = Σ_r u_r A_r`.
    pub fn weighted_sum(&self, u: &[f64]) -> Result<SymMatrix> {
        self.check_weights(u)?;
        let mut m = SymMatrix::zeros(self.dim);
        for (r, &ur) in u.iter().enumerate() {
            if ur != 0.0 {
                m.add_outer(ur, self.c(r));
                m.add_outer(-ur, self.b(r));
            }
        }
        Ok(m)
    }

    /// `Â x` without forming `Â`.
    pub fn weighted_matvec(&self, u: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_weights(u)?;
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.dim];
        self.accumulate_matvec(u, x, &mut y);
        Ok(y)
    }

    fn accumulate_matvec(&self, u: &[f64], x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &ur) in u.iter().enumerate() {
            if ur == 0.0 {
                continue;
            }
            let (c, b) = (self.c(r), self.b(r));
            let sc = ur * dot(c, x);
            let sb = ur * dot(b, x);
            for ((yi, ci), bi) in y.iter_mut().zip(c).zip(b) {
                *yi += sc * ci - sb * bi;
            }
        }
    }

    pub fn weighted_operator<'a>(&'a self, u: &'a [f64]) -> Result<WeightedConstraints<'a>> {
        self.check_weights(u)?;
        Ok(WeightedConstraints { set: self, u })
    }
}

/// `Â x = Σ_r u_r (c_r (c_r·x) − b_r (b_r·x))` over a whole triplet set.
pub fn weighted_sum_matvec(set: &ConstraintSet, u: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    set.weighted_matvec(u, x)
}

/// `Â = Σ u_r A_r` as an implicit operator, for dimensions where forming the
/// dense matrix costs more than the eigen-solve.
pub struct WeightedConstraints<'a> {
    set: &'a ConstraintSet,
    u: &'a [f64],
}

impl SymOperator for WeightedConstraints<'_> {
    fn dim(&self) -> usize {
        self.set.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.set.accumulate_matvec(self.u, x, y);
    }

    fn spectral_bound(&self) -> f64 {
        // ‖c cᵀ‖₂ = ‖c‖², so the triangle inequality bounds ‖Â‖₂.
        (0..self.set.len())
            .map(|r| self.u[r].abs() * (dot(self.set.c(r), self.set.c(r)) + dot(self.set.b(r), self.set.b(r))))
            .sum()
    }
}
