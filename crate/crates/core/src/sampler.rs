//! Synthetic features drawn from class prototypes, and the two filtered
//! sampling procedures built on them: replay of old classes (filtered by the
//! previous classifier) and augmentation of few-shot new classes (filtered by
//! Mahalanobis distance to every other class, then recalibrated).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::LinearClassifier;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::prototype::{fit_prototype, ClassPrototype, Mahalanobis, PrototypeStore, ProtoConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Synthetic rows kept per class (replay and augmentation).
    pub replay_per_class: usize,
    /// Candidates drawn per sampling round before filtering.
    pub candidate_pool: usize,
    /// Initial minimum Mahalanobis distance to other classes.
    pub beta: f64,
    pub beta_decay: f64,
    pub beta_floor: f64,
    /// Extra sample-and-filter rounds when replay survivors run short.
    pub max_filter_rounds: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            replay_per_class: 100,
            candidate_pool: 300,
            beta: 30.0,
            beta_decay: 0.9,
            beta_floor: 1e-3,
            max_filter_rounds: 50,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replay_per_class == 0 {
            return Err(Error::Config("sampler.replay_per_class must be positive".into()));
        }
        if self.candidate_pool < self.replay_per_class {
            return Err(Error::Config(format!(
                "sampler.candidate_pool ({}) must be at least replay_per_class ({})",
                self.candidate_pool, self.replay_per_class
            )));
        }
        if !(self.beta_decay > 0.0 && self.beta_decay < 1.0) {
            return Err(Error::Config("sampler.beta_decay must lie in (0, 1)".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("sampler.beta must be non-negative".into()));
        }
        if !(self.beta_floor > 0.0) {
            return Err(Error::Config("sampler.beta_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Replay,
    Augment,
}

/// Synthetic rows for one class, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub label: u32,
    pub provenance: Provenance,
    dim: usize,
    data: Vec<f64>,
}

impl SyntheticBatch {
    pub fn new(label: u32, dim: usize, data: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Self {
            label,
            provenance,
            dim,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    fn keep(&self, keep: impl Fn(usize) -> bool) -> SyntheticBatch {
        let data = self
            .rows()
            .enumerate()
            .filter(|&(i, _)| keep(i))
            .flat_map(|(_, r)| r.iter().copied())
            .collect();
        SyntheticBatch {
            data,
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> SyntheticBatch {
        SyntheticBatch {
            label: self.label,
            provenance: self.provenance,
            dim: self.dim,
            data: Vec::new(),
        }
    }

    fn append(&mut self, other: &SyntheticBatch) {
        self.data.extend_from_slice(&other.data);
    }

    pub fn to_feature_set(&self) -> FeatureSet {
        FeatureSet::from_flat(self.dim, self.label, self.data.clone())
            .expect("batch data is a whole number of rows")
    }
}

/// Affine map from standard normal draws to a prototype's distribution,
/// built from a symmetric eigendecomposition (negative eigenvalues clamped).
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    label: u32,
    mean: DVector<f64>,
    /// `k × k` factor applied to a `k`-dimensional normal draw.
    factor: DMatrix<f64>,
    /// Reduced prototypes draw in basis coordinates and map back.
    reduced: Option<(DMatrix<f64>, DVector<f64>)>,
}

fn eigen_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if cov.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(cov.clone());
    let scale = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * DMatrix::from_diagonal(&scale)
}

impl GaussianSampler {
    pub fn new(p: &ClassPrototype) -> Self {
        match &p.reduced {
            None => Self {
                label: p.label,
                mean: p.mean.clone(),
                factor: eigen_factor(&p.cov),
                reduced: None,
            },
            Some(red) => Self {
                label: p.label,
                mean: p.mean.clone(),
                factor: eigen_factor(&red.cov),
                reduced: Some((red.basis.clone(), red.mean.clone())),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn draw_into<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) {
        let k = self.factor.nrows();
        let g = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = match &self.reduced {
            None => &self.mean + &self.factor * g,
            Some((basis, red_mean)) => {
                let y = red_mean + &self.factor * g;
                &self.mean + basis * y
            }
        };
        out.extend(x.iter());
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> SyntheticBatch {
        let mut data = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            self.draw_into(rng, &mut data);
        }
        SyntheticBatch {
            label: self.label,
            provenance: Provenance::Replay,
            dim: self.dim(),
            data,
        }
    }
}

/// `n` i.i.d. draws from `N(μ, Σ)` of the prototype.
pub fn sample_gaussian<R: Rng>(p: &ClassPrototype, n: usize, rng: &mut R) -> Result<SyntheticBatch> {
    if n == 0 {
        return Err(Error::EmptyInput("cannot draw zero samples".into()));
    }
    Ok(GaussianSampler::new(p).sample(n, rng))
}

/// Keeps the rows the classifier assigns to the batch's own label.
pub fn filter_by_classifier(batch: &SyntheticBatch, clf: &LinearClassifier) -> Result<SyntheticBatch> {
    if !clf.contains(batch.label) {
        return Err(Error::UnknownLabel(batch.label));
    }
    if batch.dim != clf.dim() {
        return Err(Error::DimensionMismatch {
            expected: clf.dim(),
            got: batch.dim,
        });
    }
    let preds = clf.predict(batch.rows());
    Ok(batch.keep(|i| preds[i] == batch.label))
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    /// One batch per stored class, in label order.
    pub batches: Vec<SyntheticBatch>,
    /// Rows that had to be filled without passing the classifier filter.
    pub unfiltered_fill: usize,
}

fn uniform_subsample<R: Rng>(batch: &SyntheticBatch, n: usize, rng: &mut R) -> SyntheticBatch {
    let mut idx = rand::seq::index::sample(rng, batch.len(), n).into_vec();
    idx.sort_unstable();
    let mut out = batch.empty_like();
    for i in idx {
        out.data.extend_from_slice(batch.row(i));
    }
    out
}

fn replay_class(
    p: &ClassPrototype,
    prev_clf: &LinearClassifier,
    cfg: &SamplerConfig,
) -> Result<(SyntheticBatch, usize)> {
    let mut rng = seed::rng(cfg.seed, &[seed::tag::REPLAY, u64::from(p.label)]);
    let sampler = GaussianSampler::new(p);
    let target = cfg.replay_per_class;
    let mut survivors = filter_by_classifier(&sampler.sample(cfg.candidate_pool, &mut rng), prev_clf)?;
    let mut rounds = 0;
    while survivors.len() < target && rounds < cfg.max_filter_rounds {
        let more = filter_by_classifier(&sampler.sample(cfg.candidate_pool, &mut rng), prev_clf)?;
        survivors.append(&more);
        rounds += 1;
    }
    if survivors.len() >= target {
        return Ok((uniform_subsample(&survivors, target, &mut rng), 0));
    }
    let short = target - survivors.len();
    log::warn!(
        "class {}: only {} of {target} replay samples passed the classifier, filling {short} unfiltered",
        p.label,
        survivors.len()
    );
    survivors.append(&sampler.sample(short, &mut rng));
    Ok((survivors, short))
}

/// Draws `replay_per_class` classifier-consistent synthetic rows for every
/// stored class. Each class uses its own stream derived from
/// `(cfg.seed, label)`, so classes run in parallel without changing results.
pub fn synthetic_replay(
    store: &PrototypeStore,
    prev_clf: &LinearClassifier,
    cfg: &SamplerConfig,
) -> Result<ReplayOutput> {
    cfg.validate()?;
    if store.is_empty() {
        return Err(Error::EmptyInput("no prototypes to replay".into()));
    }
    let protos: Vec<&ClassPrototype> = store.iter().collect();
    let results: Result<Vec<(SyntheticBatch, usize)>> = protos
        .par_iter()
        .map(|p| replay_class(p, prev_clf, cfg))
        .collect();
    let results = results?;
    let unfiltered_fill = results.iter().map(|(_, w)| w).sum();
    Ok(ReplayOutput {
        batches: results.into_iter().map(|(b, _)| b).collect(),
        unfiltered_fill,
    })
}

fn metrics_for(others: &PrototypeStore, proto_cfg: &ProtoConfig) -> Result<Vec<Mahalanobis>> {
    others
        .iter()
        .map(|p| Mahalanobis::new(p, proto_cfg.diagonal_mahalanobis))
        .collect()
}

fn min_distances(batch: &SyntheticBatch, metrics: &[Mahalanobis]) -> Vec<f64> {
    batch
        .rows()
        .map(|r| {
            metrics
                .iter()
                .map(|m| m.distance(r))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Keeps rows whose Mahalanobis distance to every prototype in `others` is
/// at least `beta`.
pub fn filter_by_mahalanobis(
    batch: &SyntheticBatch,
    others: &PrototypeStore,
    beta: f64,
    proto_cfg: &ProtoConfig,
) -> Result<SyntheticBatch> {
    if others.is_empty() {
        return Ok(batch.clone());
    }
    if others.dim() != batch.dim {
        return Err(Error::DimensionMismatch {
            expected: others.dim(),
            got: batch.dim,
        });
    }
    let metrics = metrics_for(others, proto_cfg)?;
    let dist = min_distances(batch, &metrics);
    Ok(batch.keep(|i| dist[i] >= beta))
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub real: FeatureSet,
    pub synthetic: SyntheticBatch,
    /// Threshold in force when enough candidates survived.
    pub final_beta: f64,
    /// The threshold fell below its floor and every candidate was kept.
    pub accepted_all: bool,
    pub naive: ClassPrototype,
    pub calibrated: ClassPrototype,
}

impl Augmented {
    /// Real rows followed by the synthetic rows.
    pub fn training_pool(&self) -> FeatureSet {
        let mut pool = self.real.clone();
        pool.extend(&self.synthetic.to_feature_set())
            .expect("synthetic rows share the real dimension");
        pool
    }
}

/// Enlarges a few-shot class: fit a naive prototype from `real`, draw
/// candidates, reject those within `β` of any other class (lowering `β`
/// geometrically until `target_n` survive, or accepting everything once it
/// drops below the floor), refit from the survivors, and draw `target_n`
/// fresh rows from that calibrated prototype.
pub fn synthetic_augment(
    label: u32,
    real: &[&[f64]],
    others: &PrototypeStore,
    cfg: &SamplerConfig,
    proto_cfg: &ProtoConfig,
    target_n: usize,
) -> Result<Augmented> {
    cfg.validate()?;
    if real.is_empty() {
        return Err(Error::EmptyInput(format!("class {label}: no real rows to augment")));
    }
    if target_n == 0 {
        return Err(Error::Config("augmentation target must be positive".into()));
    }
    let dim = real[0].len();
    let real_set = FeatureSet::from_rows(dim, real.iter().map(|r| (label, *r)))?;
    let mut rng = seed::rng(cfg.seed, &[seed::tag::AUGMENT, u64::from(label)]);

    let naive = fit_prototype(label, real, proto_cfg)?;
    let candidates = GaussianSampler::new(&naive).sample(cfg.candidate_pool.max(target_n), &mut rng);
    let others = others.without(label);
    let dist = if others.is_empty() {
        vec![f64::INFINITY; candidates.len()]
    } else {
        if others.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: others.dim(),
                got: dim,
            });
        }
        min_distances(&candidates, &metrics_for(&others, proto_cfg)?)
    };

    let mut beta = cfg.beta;
    let mut accepted_all = false;
    loop {
        if dist.iter().filter(|&&d| d >= beta).count() >= target_n {
            break;
        }
        beta *= cfg.beta_decay;
        if beta < cfg.beta_floor {
            log::warn!("class {label}: augmentation threshold fell below its floor, keeping all candidates");
            accepted_all = true;
            beta = 0.0;
            break;
        }
    }
    let survivors = candidates.keep(|i| dist[i] >= beta);
    let rows: Vec<&[f64]> = survivors.rows().collect();
    let calibrated = fit_prototype(label, &rows, proto_cfg)?;
    let mut synthetic = GaussianSampler::new(&calibrated).sample(target_n, &mut rng);
    synthetic.provenance = Provenance::Augment;
    Ok(Augmented {
        real: real_set,
        synthetic,
        final_beta: beta,
        accepted_all,
        naive,
        calibrated,
    })
}
