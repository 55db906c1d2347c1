//! Dense symmetric linear algebra: packed symmetric storage, a shifted power
//! iteration for the algebraically largest eigenpair, a full symmetric
//! eigendecomposition for small matrices, and PCA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest dimension accepted by [`dense_evd`].
pub const DENSE_EVD_LIMIT: usize = 2048;

pub const DEFAULT_EIG_TOL: f64 = 1e-10;

pub fn default_max_iter(dim: usize) -> usize {
    10 * dim + 1000
}

/// Real symmetric matrix stored as a packed lower triangle, so that
/// `get(i, j)` and `get(j, i)` read the same slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be at least 1");
        SymMatrix {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the lower triangle (`i >= j`).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Accepts a square matrix whose upper and lower triangles agree to a
    /// relative 1e-12; the lower triangle is kept.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        let scale = m.amax().max(1.0);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::from_fn(m.nrows(), |i, j| m[(i, j)]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[packed_index(i, j)] = value;
    }

    /// `self += alpha * x xᵀ`
    pub fn add_outer(&mut self, alpha: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        let mut k = 0;
        for i in 0..self.dim {
            let ax = alpha * x[i];
            for xj in &x[..=i] {
                self.data[k] += ax * xj;
                k += 1;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        let mut y = vec![0.0; self.dim];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut k = 0;
        for i in 0..self.dim {
            for j in 0..i {
                let a = self.data[k];
                y[i] += a * x[j];
                y[j] += a * x[i];
                k += 1;
            }
            y[i] += self.data[k] * x[i];
            k += 1;
        }
    }

    /// `xᵀ M x`
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        check_len(self.dim, x.len())?;
        let mut acc = 0.0;
        let mut k = 0;
        for i in 0..self.dim {
            let mut row = 0.0;
            for xj in &x[..i] {
                row += self.data[k] * xj;
                k += 1;
            }
            acc += x[i] * (2.0 * row + self.data[k] * x[i]);
            k += 1;
        }
        Ok(acc)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..=i {
                let v = self.get(i, j);
                acc += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        acc.sqrt()
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// Frobenius inner product `⟨self, other⟩ = Tr(self · other)`.
    pub fn inner(&self, other: &SymMatrix) -> Result<f64> {
        check_len(self.dim, other.dim)?;
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..=i {
                let p = self.get(i, j) * other.get(i, j);
                acc += if i == j { p } else { 2.0 * p };
            }
        }
        Ok(acc)
    }
}

/// A symmetric linear operator that can be applied to vectors without
/// necessarily being stored densely.
pub trait SymOperator {
    fn dim(&self) -> usize;

    /// `y = A x`
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// An upper bound on the spectral radius.
    fn spectral_bound(&self) -> f64;
}

impl SymOperator for SymMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }

    fn spectral_bound(&self) -> f64 {
        self.inf_norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Flips `v` so that its first non-negligible component is positive.
pub fn normalize_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn start_vector(dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_e16e);
    let mut x: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..1.5)).collect();
    let n = norm2(&x);
    x.iter_mut().for_each(|v| *v /= n);
    x
}

/// Algebraically largest eigenpair by power iteration on `m + σI`, with
/// `σ` the operator's spectral bound so that every shifted eigenvalue is
/// non-negative.
///
/// Stops once `‖m·v − λ·v‖₂ ≤ tol · max(1, |λ|)`.
pub fn leading_eigenpair<M: SymOperator + ?Sized>(
    m: &M,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    let dim = m.dim();
    let sigma = m.spectral_bound();
    if !sigma.is_finite() {
        return Err(Error::NonFinite("operator norm".into()));
    }
    let mut x = start_vector(dim);
    if sigma == 0.0 {
        let mut vector = vec![0.0; dim];
        vector[0] = 1.0;
        return Ok(EigenPair { value: 0.0, vector });
    }

    let mut y = vec![0.0; dim];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        m.apply(&x, &mut y);
        let lambda = dot(&x, &y);
        residual = y
            .iter()
            .zip(&x)
            .map(|(yi, xi)| (yi - lambda * xi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * lambda.abs().max(1.0) {
            normalize_sign(&mut x);
            return Ok(EigenPair {
                value: lambda,
                vector: x,
            });
        }
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += sigma * xi;
        }
        let n = norm2(&y);
        if n == 0.0 || !n.is_finite() {
            // x lies in the eigenspace of -σ; restart away from it.
            let s = start_vector(dim);
            let proj = dot(&s, &x);
            for (xi, si) in x.iter_mut().zip(&s) {
                *xi = si - proj * *xi;
            }
            let n = norm2(&x);
            x.iter_mut().for_each(|v| *v /= n);
            continue;
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / n;
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Power iteration with dense-EVD fallback when it fails to converge.
pub fn top_eigenpair(m: &SymMatrix, tol: f64, max_iter: usize) -> Result<EigenPair> {
    match leading_eigenpair(m, tol, max_iter) {
        Ok(p) => Ok(p),
        Err(Error::NotConverged { residual, .. }) => {
            log::debug!("power iteration stalled (residual {residual:.3e}); using dense EVD");
            let mut pairs = dense_evd(m)?;
            Ok(pairs.swap_remove(0))
        }
        Err(e) => Err(e),
    }
}

/// All eigenpairs of `m`, sorted by descending eigenvalue.
pub fn dense_evd(m: &SymMatrix) -> Result<Vec<EigenPair>> {
    if m.dim() > DENSE_EVD_LIMIT {
        return Err(Error::DimensionTooLarge {
            dim: m.dim(),
            limit: DENSE_EVD_LIMIT,
        });
    }
    let eig = SymmetricEigen::new(m.to_dmatrix());
    let mut pairs: Vec<EigenPair> = (0..m.dim())
        .map(|k| {
            let mut vector: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            normalize_sign(&mut vector);
            EigenPair {
                value: eig.eigenvalues[k],
                vector,
            }
        })
        .collect();
    if pairs.iter().any(|p| !p.value.is_finite()) {
        return Err(Error::NonFinite("eigenvalue".into()));
    }
    pairs.sort_by(|a, b| b.value.total_cmp(&a.value));
    Ok(pairs)
}

/// Fitted principal-component projection.
#[derive(Debug, Clone)]
pub struct Pca {
    /// D×d, column-orthonormal, columns by descending variance.
    pub basis: DMatrix<f64>,
    pub mean: Vec<f64>,
    /// Sample variance captured by each column.
    pub variances: Vec<f64>,
    /// Set when the training points have no spread at all.
    pub degenerate: bool,
}

pub fn pca_fit(points: &[Vec<f64>], out_dim: usize) -> Result<Pca> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 points, got {n}"
        )));
    }
    let dim = points[0].len();
    for p in points {
        check_len(dim, p.len())?;
    }
    if out_dim == 0 || out_dim > dim || out_dim > n {
        return Err(Error::InvalidArgument(format!(
            "PCA output dimension {out_dim} must be in 1..=min({dim}, {n})"
        )));
    }
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = SymMatrix::zeros(dim);
    let mut centered = vec![0.0; dim];
    for p in points {
        for ((c, x), m) in centered.iter_mut().zip(p).zip(&mean) {
            *c = x - m;
        }
        cov.add_outer(1.0, &centered);
    }
    cov.scale(1.0 / (n as f64 - 1.0));

    let pairs = dense_evd(&cov)?;
    let degenerate = pairs[0].value <= f64::EPSILON * cov.trace().abs().max(f64::MIN_POSITIVE);
    if degenerate {
        log::warn!("PCA input has zero variance; returning an arbitrary orthonormal basis");
    }
    let basis = DMatrix::from_fn(dim, out_dim, |i, k| pairs[k].vector[i]);
    let variances = pairs[..out_dim].iter().map(|p| p.value.max(0.0)).collect();
    Ok(Pca {
        basis,
        mean,
        variances,
        degenerate,
    })
}

impl Pca {
    pub fn in_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn transform(&self, point: &[f64]) -> Result<Vec<f64>> {
        pca_transform(&self.basis, &self.mean, point)
    }
}

/// `basisᵀ (point − mean)`
pub fn pca_transform(basis: &DMatrix<f64>, mean: &[f64], point: &[f64]) -> Result<Vec<f64>> {
    check_len(basis.nrows(), mean.len())?;
    check_len(basis.nrows(), point.len())?;
    let centered = DVector::from_iterator(point.len(), point.iter().zip(mean).map(|(p, m)| p - m));
    Ok((basis.transpose() * centered).iter().copied().collect())
}
