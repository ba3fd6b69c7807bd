//! Class prototypes: per-class Gaussian summaries (mean and covariance) fitted
//! from feature vectors, with an SVD-reduced form for rank-deficient classes
//! and Mahalanobis distances against either form.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative size of the always-on diagonal shrinkage.
pub const SHRINKAGE_SCALE: f64 = 1e-6;
/// Smallest eigenvalue allowed before a covariance is considered non-PSD,
/// relative to its trace.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Which covariance representation `fit_prototype` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariancePath {
    /// Full covariance unless it is non-PSD or rank-deficient beyond what
    /// the sample size explains; then the SVD-reduced form.
    #[default]
    Auto,
    /// Always the full (shrunk) covariance.
    Full,
    /// Always the SVD-reduced form (when at least two samples exist).
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtoConfig {
    /// Add `ε·I` with `ε = 1e-6 · trace(Σ)/d` (or `1e-6` for a zero trace).
    pub shrinkage: bool,
    pub path: CovariancePath,
    /// Use only the covariance diagonal in Mahalanobis distances.
    pub diagonal_mahalanobis: bool,
    /// Singular values below `σ_max · rank_tolerance` count as zero.
    pub rank_tolerance: f64,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        Self {
            shrinkage: true,
            path: CovariancePath::Auto,
            diagonal_mahalanobis: false,
            rank_tolerance: 1e-7,
        }
    }
}

/// Low-rank representation: samples are `mean + basis · y` with
/// `y ~ N(reduced_mean, reduced_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedForm {
    /// `d × r`, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ReducedForm {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Coordinates of `x − center` in the basis.
    pub fn project(&self, centered: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(centered)
    }

    pub fn revert(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.basis * coords
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    pub label: u32,
    pub mean: DVector<f64>,
    /// Sample covariance plus the shrinkage term.
    pub cov: DMatrix<f64>,
    pub reduced: Option<ReducedForm>,
    pub sample_count: usize,
    /// The `ε` that was added to the diagonal (0 when disabled).
    pub shrinkage: f64,
}

impl ClassPrototype {
    /// Prototype with the given moments and no shrinkage.
    pub fn from_moments(label: u32, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        Ok(Self {
            label,
            mean,
            cov,
            reduced: None,
            sample_count: 1,
            shrinkage: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced.is_some()
    }

    /// Distance from `x` to the affine span `mean + span(basis)`, relative to
    /// `‖x − mean‖`. Zero for unreduced prototypes.
    pub fn span_residual(&self, x: &[f64]) -> f64 {
        let Some(red) = &self.reduced else {
            return 0.0;
        };
        let centered = DVector::from_column_slice(x) - &self.mean;
        let norm = centered.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let back = red.revert(&red.project(&centered));
        (centered - back).norm() / norm
    }
}

fn check_rows(rows: &[&[f64]]) -> Result<usize> {
    let first = rows
        .first()
        .ok_or_else(|| Error::EmptyInput("no vectors to fit a prototype".into()))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::EmptyInput("zero-dimensional vectors".into()));
    }
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
    }
    Ok(dim)
}

/// Two-pass mean and unbiased covariance. Zero covariance for a single row.
/// Sums run in row order so the result is reproducible bit for bit.
pub fn sample_moments(rows: &[&[f64]]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dim = check_rows(rows)?;
    let n = rows.len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    if n >= 2 {
        let mut centered = vec![0.0; dim];
        for r in rows {
            for k in 0..dim {
                centered[k] = r[k] - mean[k];
            }
            for i in 0..dim {
                let ci = centered[i];
                for j in i..dim {
                    cov[(i, j)] += ci * centered[j];
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..dim {
            for j in i..dim {
                let v = cov[(i, j)] / denom;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
    }
    Ok((DVector::from_vec(mean), cov))
}

fn shrinkage_for(cov: &DMatrix<f64>) -> f64 {
    let d = cov.nrows();
    if d == 0 {
        return 0.0;
    }
    let trace = cov.trace();
    if trace > 0.0 {
        SHRINKAGE_SCALE * trace / d as f64
    } else {
        SHRINKAGE_SCALE
    }
}

fn add_diagonal(mut m: DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        m[(i, i)] += eps;
    }
    m
}

/// True when the smallest eigenvalue is below `-PSD_TOLERANCE · trace`.
pub fn fails_psd(cov: &DMatrix<f64>) -> bool {
    if cov.nrows() == 0 {
        return false;
    }
    let trace = cov.trace().abs();
    let eig = SymmetricEigen::new(cov.clone());
    eig.eigenvalues.min() < -PSD_TOLERANCE * trace
}

struct CenteredSvd {
    /// Descending.
    singular_values: Vec<f64>,
    /// Right singular vectors as columns, same order.
    directions: DMatrix<f64>,
}

fn centered_svd(rows: &[&[f64]], mean: &DVector<f64>) -> CenteredSvd {
    let n = rows.len();
    let d = mean.len();
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut directions = DMatrix::zeros(d, order.len());
    for (col, &i) in order.iter().enumerate() {
        let row = v_t.row(i);
        // sign convention: largest-magnitude entry positive
        let (mut best, mut best_abs) = (0, -1.0);
        for (j, v) in row.iter().enumerate() {
            if v.abs() > best_abs {
                best = j;
                best_abs = v.abs();
            }
        }
        let sign = if row[best] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            directions[(j, col)] = sign * row[j];
        }
    }
    CenteredSvd {
        singular_values,
        directions,
    }
}

fn numerical_rank(singular_values: &[f64], tol: f64) -> usize {
    let Some(&top) = singular_values.first() else {
        return 0;
    };
    if top <= 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > top * tol).count()
}

/// Fits a class prototype from `rows`.
///
/// The covariance is the unbiased sample covariance plus `ε·I`. In
/// [`CovariancePath::Auto`] mode the SVD-reduced form is used when the
/// shrunk covariance is not PSD, or when the centered data has lower rank
/// than `min(n − 1, d)` (the data lies in a proper affine subspace, not just
/// too few samples).
pub fn fit_prototype(label: u32, rows: &[&[f64]], cfg: &ProtoConfig) -> Result<ClassPrototype> {
    let (mean, raw) = sample_moments(rows)?;
    let n = rows.len();
    let d = mean.len();
    let eps = if cfg.shrinkage { shrinkage_for(&raw) } else { 0.0 };

    let reduce = match cfg.path {
        CovariancePath::Full => false,
        CovariancePath::Reduced => n >= 2,
        CovariancePath::Auto if n < 2 => false,
        CovariancePath::Auto => {
            let shrunk = add_diagonal(raw.clone(), eps);
            fails_psd(&shrunk) || {
                let svd = centered_svd(rows, &mean);
                numerical_rank(&svd.singular_values, cfg.rank_tolerance) < (n - 1).min(d)
            }
        }
    };
    if reduce {
        return svd_reduce(label, rows, cfg);
    }
    Ok(ClassPrototype {
        label,
        mean,
        cov: add_diagonal(raw, eps),
        reduced: None,
        sample_count: n,
        shrinkage: eps,
    })
}

/// Fits the reduced form: basis = top-`r` right singular vectors of the
/// centered data, `r` = numerical rank capped at `n − 1`, with mean and
/// covariance re-estimated in those coordinates.
///
/// Identical rows give `r = 0`; sampling then returns the mean.
pub fn svd_reduce(label: u32, rows: &[&[f64]], cfg: &ProtoConfig) -> Result<ClassPrototype> {
    let (mean, raw) = sample_moments(rows)?;
    let n = rows.len();
    if n < 2 {
        return Err(Error::EmptyInput(format!(
            "class {label}: SVD reduction needs at least 2 vectors, got {n}"
        )));
    }
    let d = mean.len();
    let svd = centered_svd(rows, &mean);
    let r = numerical_rank(&svd.singular_values, cfg.rank_tolerance).min(n - 1);
    if r == 0 {
        log::warn!("class {label}: all {n} vectors identical, prototype collapses to its mean");
    }
    let basis = svd.directions.columns(0, r).into_owned();

    let coords: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| {
            let centered = DVector::from_fn(d, |j, _| row[j] - mean[j]);
            basis.tr_mul(&centered).as_slice().to_vec()
        })
        .collect();
    let (red_mean, red_raw) = if r == 0 {
        (DVector::zeros(0), DMatrix::zeros(0, 0))
    } else {
        let refs: Vec<&[f64]> = coords.iter().map(Vec::as_slice).collect();
        sample_moments(&refs)?
    };
    let eps_full = if cfg.shrinkage { shrinkage_for(&raw) } else { 0.0 };
    let eps_red = if cfg.shrinkage && r > 0 {
        shrinkage_for(&red_raw)
    } else {
        0.0
    };
    Ok(ClassPrototype {
        label,
        mean,
        cov: add_diagonal(raw, eps_full),
        reduced: Some(ReducedForm {
            basis,
            mean: red_mean,
            cov: add_diagonal(red_raw, eps_red),
        }),
        sample_count: n,
        shrinkage: eps_full,
    })
}

#[derive(Debug, Clone)]
enum Precision {
    Full(Cholesky<f64, Dyn>),
    Diagonal(DVector<f64>),
}

impl Precision {
    fn new(label: u32, cov: &DMatrix<f64>, diagonal: bool) -> Result<Self> {
        if diagonal {
            let d = cov.diagonal();
            if d.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
                return Err(Error::SingularCovariance { label });
            }
            Ok(Precision::Diagonal(d.map(|v| 1.0 / v)))
        } else {
            Cholesky::new(cov.clone())
                .map(Precision::Full)
                .ok_or(Error::SingularCovariance { label })
        }
    }

    fn quad(&self, x: &DVector<f64>) -> f64 {
        match self {
            Precision::Full(chol) => {
                let y = chol
                    .l_dirty()
                    .solve_lower_triangular(x)
                    .expect("cholesky factor has a positive diagonal");
                y.norm_squared()
            }
            Precision::Diagonal(inv) => x.iter().zip(inv.iter()).map(|(v, w)| v * v * w).sum(),
        }
    }
}

/// Precomputed Mahalanobis metric for one prototype.
///
/// For reduced prototypes the in-span part is measured with the reduced
/// covariance. When shrinkage is active the off-span residual is measured
/// with the shrinkage variance `ε`, so points far outside the class subspace
/// are not reported as close.
#[derive(Debug, Clone)]
pub struct Mahalanobis {
    pub label: u32,
    mean: DVector<f64>,
    precision: Option<Precision>,
    reduced: Option<(DMatrix<f64>, DVector<f64>)>,
    complement_variance: f64,
}

impl Mahalanobis {
    pub fn new(p: &ClassPrototype, diagonal: bool) -> Result<Self> {
        match &p.reduced {
            None => Ok(Self {
                label: p.label,
                mean: p.mean.clone(),
                precision: Some(Precision::new(p.label, &p.cov, diagonal)?),
                reduced: None,
                complement_variance: 0.0,
            }),
            Some(red) => {
                let precision = if red.rank() == 0 {
                    None
                } else {
                    Some(Precision::new(p.label, &red.cov, diagonal)?)
                };
                Ok(Self {
                    label: p.label,
                    mean: p.mean.clone(),
                    precision,
                    reduced: Some((red.basis.clone(), red.mean.clone())),
                    complement_variance: p.shrinkage,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn distance_squared(&self, z: &[f64]) -> f64 {
        let centered = DVector::from_column_slice(z) - &self.mean;
        match &self.reduced {
            None => self
                .precision
                .as_ref()
                .expect("full metrics carry a precision")
                .quad(&centered),
            Some((basis, red_mean)) => {
                let coords = basis.tr_mul(&centered);
                let inner = match &self.precision {
                    Some(prec) => prec.quad(&(&coords - red_mean)),
                    None => 0.0,
                };
                let outer = if self.complement_variance > 0.0 {
                    (&centered - basis * &coords).norm_squared() / self.complement_variance
                } else {
                    0.0
                };
                inner + outer
            }
        }
    }

    pub fn distance(&self, z: &[f64]) -> f64 {
        self.distance_squared(z).max(0.0).sqrt()
    }
}

/// `√((z − μ)ᵀ Σ⁻¹ (z − μ))` using the full covariance (or the reduced one
/// for reduced prototypes).
pub fn mahalanobis(z: &[f64], p: &ClassPrototype) -> Result<f64> {
    if z.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: z.len(),
        });
    }
    Ok(Mahalanobis::new(p, false)?.distance(z))
}

/// Saved prototypes, keyed by label.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeStore {
    dim: usize,
    entries: BTreeMap<u32, ClassPrototype>,
}

impl PrototypeStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds a prototype. Saved prototypes are never replaced.
    pub fn insert(&mut self, p: ClassPrototype) -> Result<()> {
        if p.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: p.dim(),
            });
        }
        if self.entries.contains_key(&p.label) {
            return Err(Error::DuplicateLabel(p.label));
        }
        self.entries.insert(p.label, p);
        Ok(())
    }

    pub fn get(&self, label: u32) -> Option<&ClassPrototype> {
        self.entries.get(&label)
    }

    pub fn contains(&self, label: u32) -> bool {
        self.entries.contains_key(&label)
    }

    pub fn labels(&self) -> Vec<u32> {
        self.entries.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassPrototype> + '_ {
        self.entries.values()
    }

    /// A copy without `label`.
    pub fn without(&self, label: u32) -> PrototypeStore {
        let mut out = self.clone();
        out.entries.remove(&label);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn two_points() {
        let rows = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let p = fit_prototype(0, &refs(&rows), &ProtoConfig::default()).unwrap();
        assert_eq!(p.mean.as_slice(), &[1.0, 1.0]);
        let eps = 1e-6 * 4.0 / 2.0;
        assert_eq!(p.shrinkage, eps);
        assert_eq!(p.cov, DMatrix::from_row_slice(2, 2, &[2.0 + eps, 2.0, 2.0, 2.0 + eps]));
        assert!(!p.is_reduced());
    }

    #[test]
    fn single_vector_gets_floor() {
        let rows = vec![vec![5.0, -3.0]];
        let p = fit_prototype(1, &refs(&rows), &ProtoConfig::default()).unwrap();
        assert_eq!(p.mean.as_slice(), &[5.0, -3.0]);
        assert_eq!(p.cov, DMatrix::identity(2, 2) * 1e-6);
        assert_eq!(p.sample_count, 1);
    }

    #[test]
    fn empty_and_ragged() {
        let cfg = ProtoConfig::default();
        assert!(matches!(fit_prototype(0, &[], &cfg), Err(Error::EmptyInput(_))));
        let a = [1.0, 2.0];
        let b = [1.0];
        assert!(matches!(
            fit_prototype(0, &[&a, &b], &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(svd_reduce(0, &[&a], &cfg), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn identical_rows_reduce_to_mean() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 4];
        let p = svd_reduce(0, &refs(&rows), &ProtoConfig::default()).unwrap();
        assert_eq!(p.reduced.as_ref().unwrap().rank(), 0);
        assert_eq!(p.mean.as_slice(), &[1.0, 2.0, 3.0]);
        // auto path picks the same representation
        let q = fit_prototype(0, &refs(&rows), &ProtoConfig::default()).unwrap();
        assert_eq!(q.reduced.as_ref().unwrap().rank(), 0);
    }

    #[test]
    fn affine_subspace_triggers_auto_reduction() {
        // 10 points on a 2-d plane in 4-d space
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let (a, b) = (i as f64, ((i * 7) % 5) as f64);
                vec![1.0 + a, 2.0 - b, a + b, 0.5]
            })
            .collect();
        let p = fit_prototype(0, &refs(&rows), &ProtoConfig::default()).unwrap();
        let red = p.reduced.as_ref().expect("reduced");
        assert_eq!(red.rank(), 2);
        for r in &rows {
            assert!(p.span_residual(r) < 1e-10);
        }
        let gram = red.basis.tr_mul(&red.basis);
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn full_rank_reduction_is_identity() {
        let rows = vec![
            vec![0.3, 1.0],
            vec![-1.2, 0.4],
            vec![2.0, -0.7],
            vec![0.1, 0.1],
            vec![-0.5, 2.2],
        ];
        let cfg = ProtoConfig::default();
        let p = fit_prototype(0, &refs(&rows), &cfg).unwrap();
        assert!(!p.is_reduced());
        let r = svd_reduce(0, &refs(&rows), &cfg).unwrap();
        let red = r.reduced.as_ref().unwrap();
        assert_eq!(red.rank(), 2);
        let back = &red.basis * &red.cov * red.basis.transpose();
        assert!((back - &p.cov).norm() < 1e-8);
    }

    #[test]
    fn forced_paths() {
        let rows = vec![vec![0.3, 1.0], vec![-1.2, 0.4], vec![2.0, -0.7]];
        let cfg = ProtoConfig {
            path: CovariancePath::Reduced,
            ..Default::default()
        };
        assert!(fit_prototype(0, &refs(&rows), &cfg).unwrap().is_reduced());
        let line = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        let cfg = ProtoConfig {
            path: CovariancePath::Full,
            ..Default::default()
        };
        assert!(!fit_prototype(0, &refs(&line), &cfg).unwrap().is_reduced());
        // n=1 cannot be reduced even when forced
        let cfg = ProtoConfig {
            path: CovariancePath::Reduced,
            ..Default::default()
        };
        assert!(!fit_prototype(0, &refs(&line[..1]), &cfg).unwrap().is_reduced());
    }

    #[test]
    fn mahalanobis_closed_forms() {
        let p = ClassPrototype::from_moments(0, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(mahalanobis(&[0.0, 0.0], &p).unwrap(), 0.0);
        assert!((mahalanobis(&[3.0, 4.0], &p).unwrap() - 5.0).abs() < 1e-12);

        let mean = DVector::from_vec(vec![1.0, -1.0]);
        let q = ClassPrototype::from_moments(0, mean, DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])))
            .unwrap();
        let d = mahalanobis(&[3.0, 0.0], &q).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
        assert!(matches!(mahalanobis(&[0.0], &q), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn singular_without_shrinkage() {
        let p = ClassPrototype::from_moments(3, DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]))
            .unwrap();
        assert!(matches!(mahalanobis(&[1.0, 0.0], &p), Err(Error::SingularCovariance { label: 3 })));
        let z = ClassPrototype::from_moments(3, DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
        assert!(Mahalanobis::new(&z, true).is_err());
    }

    #[test]
    fn diagonal_option_ignores_correlation() {
        let p = ClassPrototype::from_moments(0, DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 1.0]))
            .unwrap();
        let diag = Mahalanobis::new(&p, true).unwrap();
        assert!((diag.distance(&[2.0, 1.0]) - 2f64.sqrt()).abs() < 1e-12);
        let full = Mahalanobis::new(&p, false).unwrap();
        assert!((full.distance(&[2.0, 1.0]) - 2f64.sqrt()).abs() > 1e-3);
    }

    #[test]
    fn reduced_metric_penalises_off_span() {
        let rows = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![3.0, 0.0, 0.0]];
        let p = svd_reduce(0, &refs(&rows), &ProtoConfig::default()).unwrap();
        let m = Mahalanobis::new(&p, false).unwrap();
        let on = m.distance(&[5.0, 0.0, 0.0]);
        let off = m.distance(&[p.mean[0], 0.5, 0.0]);
        assert!(on > 1.0 && on < 10.0);
        assert!(off > 100.0);

        let no_shrink = ProtoConfig {
            shrinkage: false,
            ..Default::default()
        };
        let q = svd_reduce(0, &refs(&rows), &no_shrink).unwrap();
        let mq = Mahalanobis::new(&q, false).unwrap();
        assert!(mq.distance(&[q.mean[0], 0.5, 0.0]) < 1e-12);
    }

    #[test]
    fn store_rejects_duplicates_and_dims() {
        let mut store = PrototypeStore::new(2);
        let p = ClassPrototype::from_moments(1, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        store.insert(p.clone()).unwrap();
        assert!(matches!(store.insert(p), Err(Error::DuplicateLabel(1))));
        let q = ClassPrototype::from_moments(2, DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        assert!(store.insert(q).is_err());
        assert!(store.without(1).is_empty());
    }

    proptest! {
        #[test]
        fn larger_shrinkage_never_lowers_min_eigenvalue(
            entries in prop::collection::vec(-3.0f64..3.0, 12),
            eps in 0.0f64..1.0,
            extra in 0.0f64..1.0,
        ) {
            let a = DMatrix::from_row_slice(3, 4, &entries);
            let cov = &a * a.transpose();
            let lo = SymmetricEigen::new(add_diagonal(cov.clone(), eps)).eigenvalues.min();
            let hi = SymmetricEigen::new(add_diagonal(cov, eps + extra)).eigenvalues.min();
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn reduced_round_trip(
            coeffs in prop::collection::vec(-5.0f64..5.0, 16),
            dir in prop::collection::vec(-1.0f64..1.0, 12),
        ) {
            // 8 points in a 2-d affine subspace of R^6
            let u = &dir[..6];
            let v = &dir[6..];
            prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 0.1);
            prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 0.1);
            let rows: Vec<Vec<f64>> = coeffs
                .chunks(2)
                .map(|c| (0..6).map(|j| 0.5 + c[0] * u[j] + c[1] * v[j]).collect())
                .collect();
            let p = svd_reduce(0, &refs(&rows), &ProtoConfig::default()).unwrap();
            for r in &rows {
                prop_assert!(p.span_residual(r) <= 1e-5);
            }
        }
    }
}
