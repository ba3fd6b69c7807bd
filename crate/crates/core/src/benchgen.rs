//! Seeded synthetic embedding datasets: Gaussian class clusters with a
//! controllable separation and, optionally, degenerate (low-rank) class
//! covariances. Output is an ordinary feature-store directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    write_feature_file, ClassEntry, Dataset, DatasetManifest, FeatureSet, SessionEntry, DTYPE_F32LE,
    MANIFEST_VERSION,
};
use crate::seed::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub dim: usize,
    pub n_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Minimum distance between class means in units of the within-class
    /// standard deviation (which is 1).
    pub separation: f64,
    /// Confine every class to a random `rank`-dimensional coordinate subspace.
    #[serde(default)]
    pub rank: Option<usize>,
    pub base_classes: usize,
    pub increment: usize,
    /// Number of incremental sessions after the base session.
    pub sessions: usize,
    #[serde(default)]
    pub seed: u64,
    /// Student-t degrees of freedom for heavy-tailed classes.
    #[serde(default)]
    pub tail_dof: Option<f64>,
}

impl BenchSpec {
    pub fn used_classes(&self) -> usize {
        self.base_classes + self.increment * self.sessions
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.dim == 0 || self.n_classes == 0 {
            return bad("dim and n_classes must be positive".into());
        }
        if self.train_per_class == 0 {
            return bad("train_per_class must be positive".into());
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!("separation {} must be finite and non-negative", self.separation));
        }
        if let Some(r) = self.rank {
            if r == 0 || r >= self.dim {
                return bad(format!("rank {r} must lie in 1..dim ({})", self.dim));
            }
        }
        if self.base_classes == 0 {
            return bad("base_classes must be positive".into());
        }
        if self.sessions > 0 && self.increment == 0 {
            return bad("increment must be positive when sessions > 0".into());
        }
        if self.used_classes() > self.n_classes {
            return bad(format!(
                "{} base + {}×{} incremental classes exceed n_classes {}",
                self.base_classes, self.sessions, self.increment, self.n_classes
            ));
        }
        if let Some(nu) = self.tail_dof {
            if !(nu > 2.0) {
                return bad("tail_dof must exceed 2".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedClass {
    pub label: u32,
    pub session: usize,
    pub mean: DVector<f64>,
    pub train: FeatureSet,
    pub test: FeatureSet,
}

fn place_means(spec: &BenchSpec, n: usize) -> Result<Vec<DVector<f64>>> {
    let d = spec.dim;
    if spec.separation == 0.0 {
        return Ok(vec![DVector::zeros(d); n]);
    }
    let mut rng = seed::rng(spec.seed, &[tag::BENCH, u64::MAX]);
    // Gaussian points at per-coordinate scale s sit about s·sqrt(2d) apart
    let mut scale = 1.2 * spec.separation / (2.0 * d as f64).sqrt();
    for _ in 0..40 {
        let mut means: Vec<DVector<f64>> = Vec::with_capacity(n);
        'class: for _ in 0..n {
            for _ in 0..500 {
                let cand = DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
                if means.iter().all(|m| (m - &cand).norm() >= spec.separation) {
                    means.push(cand);
                    continue 'class;
                }
            }
            break;
        }
        if means.len() == n {
            return Ok(means);
        }
        scale *= 1.25;
    }
    Err(Error::InfeasibleSpec(format!(
        "could not place {n} means at separation {} in {d} dimensions",
        spec.separation
    )))
}

fn random_orthogonal<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    // fix column signs so the distribution is Haar
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random SPD factor with eigenvalues in [0.1, 1] rescaled to mean 1, so the
/// condition number is at most 10.
fn random_factor<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let mut eig: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..=1.0)).collect();
    let mean = eig.iter().sum::<f64>() / k as f64;
    eig.iter_mut().for_each(|e| *e /= mean);
    let q = random_orthogonal(k, rng);
    q * DMatrix::from_diagonal(&DVector::from_iterator(k, eig.iter().map(|e| e.sqrt())))
}

fn generate_class(spec: &BenchSpec, label: u32, session: usize, mean: DVector<f64>) -> Result<GeneratedClass> {
    let d = spec.dim;
    let mut rng = seed::rng(spec.seed, &[tag::BENCH, u64::from(label)]);
    let coords: Vec<usize> = match spec.rank {
        None => (0..d).collect(),
        Some(r) => {
            let mut idx = rand::seq::index::sample(&mut rng, d, r).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let k = coords.len();
    let factor = random_factor(k, &mut rng);
    let chi = spec.tail_dof.map(|nu| (nu, ChiSquared::new(nu).expect("dof validated")));
    let draw = |n: usize, rng: &mut seed::Rng| -> Vec<f64> {
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let g = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut dev = &factor * g;
            if let Some((nu, chi)) = &chi {
                dev *= (nu / chi.sample(rng)).sqrt();
            }
            let mut x = mean.clone();
            for (a, &c) in coords.iter().enumerate() {
                x[c] += dev[a];
            }
            // store what the f32 file will hold
            data.extend(x.iter().map(|&v| f64::from(v as f32)));
        }
        data
    };
    let train = draw(spec.train_per_class, &mut rng);
    let test = draw(spec.test_per_class, &mut rng);
    Ok(GeneratedClass {
        label,
        session,
        mean,
        train: FeatureSet::from_flat(d, label, train)?,
        test: FeatureSet::from_flat(d, label, test)?,
    })
}

/// Generates every used class in memory. Labels are `0..used_classes`,
/// assigned to sessions in order.
pub fn synthesize(spec: &BenchSpec) -> Result<Vec<GeneratedClass>> {
    spec.validate()?;
    let n = spec.used_classes();
    let means = place_means(spec, n)?;
    let session_of = |i: usize| {
        if i < spec.base_classes {
            0
        } else {
            1 + (i - spec.base_classes) / spec.increment
        }
    };
    means
        .into_par_iter()
        .enumerate()
        .map(|(i, m)| generate_class(spec, i as u32, session_of(i), m))
        .collect()
}

fn manifest_for(spec: &BenchSpec, classes: &[GeneratedClass]) -> DatasetManifest {
    let mut sessions: BTreeMap<usize, Vec<ClassEntry>> = BTreeMap::new();
    for c in classes {
        sessions.entry(c.session).or_default().push(ClassEntry {
            label: c.label,
            train_file: PathBuf::from(format!("train/class_{:04}.f32", c.label)),
            test_file: PathBuf::from(format!("test/class_{:04}.f32", c.label)),
            train_count: c.train.len(),
            test_count: c.test.len(),
        });
    }
    DatasetManifest {
        version: MANIFEST_VERSION,
        dim: spec.dim,
        dtype: DTYPE_F32LE.into(),
        label_names: None,
        sessions: sessions
            .into_iter()
            .map(|(session_id, classes)| SessionEntry { session_id, classes })
            .collect(),
        root: PathBuf::new(),
    }
}

/// Writes the dataset (manifest plus class files) under `out` and returns
/// the validated manifest.
pub fn generate(spec: &BenchSpec, out: &Path) -> Result<DatasetManifest> {
    let classes = synthesize(spec)?;
    let mut manifest = manifest_for(spec, &classes);
    manifest.root = out.to_path_buf();
    for c in &classes {
        let entry = manifest.class(c.label).expect("manifest lists every class");
        write_feature_file(&c.train, &manifest.resolve(&entry.train_file))?;
        write_feature_file(&c.test, &manifest.resolve(&entry.test_file))?;
    }
    manifest.write(out)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Generates straight into a [`Dataset`] without touching disk. The rows
/// equal what [`generate`] writes.
pub fn generate_in_memory(spec: &BenchSpec) -> Result<Dataset> {
    let classes = synthesize(spec)?;
    let manifest = manifest_for(spec, &classes);
    let classes = classes
        .into_iter()
        .map(|c| {
            (
                c.label,
                crate::features::ClassData {
                    session: c.session,
                    train: c.train,
                    test: c.test,
                },
            )
        })
        .collect();
    Ok(Dataset { manifest, classes })
}

/// Accuracy (percent) of classifying every test row by the nearest class
/// training mean, Euclidean, ties to the lowest label.
pub fn nearest_mean_oracle(dataset: &Dataset) -> f64 {
    let means: Vec<(u32, Vec<f64>)> = dataset
        .classes
        .iter()
        .map(|(&l, c)| {
            let n = c.train.len() as f64;
            let mut m = vec![0.0; dataset.dim()];
            for (_, r) in c.train.rows() {
                m.iter_mut().zip(r).for_each(|(a, b)| *a += b / n);
            }
            (l, m)
        })
        .collect();
    let (mut correct, mut total) = (0usize, 0usize);
    for (&label, c) in &dataset.classes {
        for (_, r) in c.test.rows() {
            let mut best = (f64::INFINITY, u32::MAX);
            for (l, m) in &means {
                let d2: f64 = m.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.0 || (d2 == best.0 && *l < best.1) {
                    best = (d2, *l);
                }
            }
            total += 1;
            if best.1 == label {
                correct += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::load_manifest;

    fn spec() -> BenchSpec {
        BenchSpec {
            dim: 8,
            n_classes: 5,
            train_per_class: 20,
            test_per_class: 10,
            separation: 6.0,
            rank: None,
            base_classes: 3,
            increment: 1,
            sessions: 2,
            seed: 4,
            tail_dof: None,
        }
    }

    #[test]
    fn layout_and_separation() {
        let s = spec();
        let classes = synthesize(&s).unwrap();
        assert_eq!(classes.len(), 5);
        assert_eq!(classes.iter().map(|c| c.session).collect::<Vec<_>>(), vec![0, 0, 0, 1, 2]);
        for a in &classes {
            for b in &classes {
                if a.label < b.label {
                    assert!((&a.mean - &b.mean).norm() >= 6.0);
                }
            }
        }
    }

    #[test]
    fn written_dataset_loads_and_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        generate(&spec(), dir.path()).unwrap();
        let loaded = Dataset::load(load_manifest(dir.path()).unwrap()).unwrap();
        let mem = generate_in_memory(&spec()).unwrap();
        for (l, c) in &mem.classes {
            assert_eq!(loaded.classes[l].train, c.train);
            assert_eq!(loaded.classes[l].test, c.test);
        }
    }

    #[test]
    fn rank_confines_to_subspace() {
        let s = BenchSpec {
            dim: 16,
            rank: Some(3),
            ..spec()
        };
        for c in synthesize(&s).unwrap() {
            let varying = (0..16)
                .filter(|&j| c.train.rows().any(|(_, r)| r[j] != c.train.row(0)[j]))
                .count();
            assert_eq!(varying, 3);
        }
    }

    #[test]
    fn invalid_specs() {
        let over = BenchSpec {
            sessions: 5,
            ..spec()
        };
        assert!(matches!(over.validate(), Err(Error::InfeasibleSpec(_))));
        let rank = BenchSpec {
            rank: Some(8),
            ..spec()
        };
        assert!(rank.validate().is_err());
        let neg = BenchSpec {
            separation: -1.0,
            ..spec()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn heavy_tails_generate() {
        let s = BenchSpec {
            tail_dof: Some(3.0),
            ..spec()
        };
        let ds = generate_in_memory(&s).unwrap();
        assert!(ds.classes.values().all(|c| c.train.as_flat().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn oracle_chance_and_single_class() {
        let flat = BenchSpec {
            separation: 0.0,
            n_classes: 2,
            base_classes: 2,
            sessions: 0,
            train_per_class: 500,
            test_per_class: 500,
            ..spec()
        };
        let acc = nearest_mean_oracle(&generate_in_memory(&flat).unwrap());
        assert!((acc - 50.0).abs() < 10.0, "chance-level accuracy was {acc}");

        let one = BenchSpec {
            n_classes: 1,
            base_classes: 1,
            sessions: 0,
            ..spec()
        };
        assert_eq!(nearest_mean_oracle(&generate_in_memory(&one).unwrap()), 100.0);
    }
}
