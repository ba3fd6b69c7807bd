//! Multi-session runs: session plans, the data-free incremental loop (full-
//! and few-shot), evaluation and the G / L / IFM / SAD metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, LinearClassifier, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{Dataset, DatasetManifest, FeatureSet};
use crate::prototype::{fit_prototype, PrototypeStore, ProtoConfig};
use crate::sampler::{synthetic_augment, synthetic_replay, SamplerConfig, SyntheticBatch};
use crate::seed::{self, tag};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Where a run gets its real feature rows from.
///
/// The protocol announces each session before touching its data; training
/// rows of a class are only requested during the session that introduces it.
pub trait FeatureSource: Sync {
    fn dim(&self) -> usize;
    fn train_rows(&self, label: u32) -> Result<FeatureSet>;
    fn test_rows(&self, label: u32) -> Result<FeatureSet>;
    fn session_started(&self, _session: usize, _new_labels: &[u32]) {}
}

impl FeatureSource for Dataset {
    fn dim(&self) -> usize {
        self.manifest.dim
    }

    fn train_rows(&self, label: u32) -> Result<FeatureSet> {
        self.classes
            .get(&label)
            .map(|c| c.train.clone())
            .ok_or_else(|| Error::Validation(format!("label {label} is not in the dataset")))
    }

    fn test_rows(&self, label: u32) -> Result<FeatureSet> {
        self.classes
            .get(&label)
            .map(|c| c.test.clone())
            .ok_or_else(|| Error::Validation(format!("label {label} is not in the dataset")))
    }
}

/// Base/incremental class split plus the trial seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub base_classes: Vec<u32>,
    pub increments: Vec<Vec<u32>>,
    /// Shots per incremental class; `None` uses every training row.
    pub shots: Option<usize>,
    pub trials: Vec<u64>,
    /// When present (one per trial), the incremental classes are shuffled
    /// per trial and re-cut into the same increment sizes.
    pub class_order_seeds: Option<Vec<u64>>,
}

impl SessionPlan {
    /// Session 0 of the manifest is the base; each later session an increment.
    pub fn from_manifest(manifest: &DatasetManifest, trials: Vec<u64>) -> Self {
        Self {
            base_classes: manifest.sessions[0].labels(),
            increments: manifest.sessions[1..].iter().map(|s| s.labels()).collect(),
            shots: None,
            trials,
            class_order_seeds: None,
        }
    }

    pub fn n_sessions(&self) -> usize {
        1 + self.increments.len()
    }

    pub fn all_labels(&self) -> Vec<u32> {
        let mut out = self.base_classes.clone();
        self.increments.iter().for_each(|inc| out.extend(inc));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_classes.is_empty() {
            return Err(Error::Validation("plan has no base classes".into()));
        }
        if let Some(i) = self.increments.iter().position(Vec::is_empty) {
            return Err(Error::Validation(format!("increment {} is empty", i + 1)));
        }
        let mut seen = BTreeSet::new();
        for l in self.all_labels() {
            if !seen.insert(l) {
                return Err(Error::Validation(format!("label {l} appears in more than one session")));
            }
        }
        if self.trials.is_empty() {
            return Err(Error::Validation("plan has no trials".into()));
        }
        if let Some(seeds) = &self.class_order_seeds {
            if seeds.len() != self.trials.len() {
                return Err(Error::Validation(format!(
                    "{} class-order seeds for {} trials",
                    seeds.len(),
                    self.trials.len()
                )));
            }
        }
        if self.shots == Some(0) {
            return Err(Error::Validation("shots must be at least 1".into()));
        }
        Ok(())
    }

    /// Class lists per session for trial `t`.
    pub fn sessions_for_trial(&self, t: usize) -> Vec<Vec<u32>> {
        let mut out = vec![self.base_classes.clone()];
        match &self.class_order_seeds {
            None => out.extend(self.increments.iter().cloned()),
            Some(seeds) => {
                let mut pool: Vec<u32> = self.increments.iter().flatten().copied().collect();
                pool.shuffle(&mut seed::rng(seeds[t], &[tag::CLASS_ORDER]));
                let mut rest = pool.as_slice();
                for inc in &self.increments {
                    let (head, tail) = rest.split_at(inc.len());
                    out.push(head.to_vec());
                    rest = tail;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub label: u32,
    pub novel: bool,
    pub correct: usize,
    pub total: usize,
}

/// Metrics of one session, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub session_id: usize,
    /// Accuracy over every seen class.
    pub g: f64,
    /// Accuracy over the classes introduced this session.
    pub l: f64,
    pub ifm: f64,
    pub counts: Vec<ClassCount>,
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

impl MetricsRecord {
    /// Recomputes G, L and IFM from the per-class table. Session 0 has no
    /// old classes, so its L equals G and its IFM is 0.
    pub fn from_counts(session_id: usize, counts: Vec<ClassCount>) -> Self {
        let (c_all, t_all) = counts
            .iter()
            .fold((0, 0), |(c, t), k| (c + k.correct, t + k.total));
        let (c_new, t_new) = counts
            .iter()
            .filter(|k| k.novel)
            .fold((0, 0), |(c, t), k| (c + k.correct, t + k.total));
        let g = percent(c_all, t_all);
        let l = if session_id == 0 || t_new == 0 {
            g
        } else {
            percent(c_new, t_new)
        };
        Self {
            session_id,
            g,
            l,
            ifm: compute_ifm(l, g),
            counts,
        }
    }
}

/// Instantaneous forgetting measure `100·|L − G| / (L + G)`; 0 when both are 0.
pub fn compute_ifm(l: f64, g: f64) -> f64 {
    if l + g <= 0.0 {
        0.0
    } else {
        100.0 * (l - g).abs() / (l + g)
    }
}

/// Session accuracy delta: G of the first session minus G of the last.
pub fn compute_sad(records: &[MetricsRecord]) -> Result<f64> {
    match records {
        [first, .., last] => Ok(first.g - last.g),
        _ => Err(Error::TooFewSessions(records.len())),
    }
}

/// Scores `clf` on the rows of `test` whose label is in `seen ∪ novel`.
/// Returns the record and the number of rows excluded for belonging to
/// neither set.
pub fn evaluate(
    clf: &LinearClassifier,
    test: &FeatureSet,
    seen: &BTreeSet<u32>,
    novel: &BTreeSet<u32>,
    session_id: usize,
) -> Result<(MetricsRecord, usize)> {
    let mut counts: BTreeMap<u32, ClassCount> = BTreeMap::new();
    let mut excluded = 0;
    for (label, row) in test.rows() {
        let is_novel = novel.contains(&label);
        if !is_novel && !seen.contains(&label) {
            excluded += 1;
            continue;
        }
        let entry = counts.entry(label).or_insert(ClassCount {
            label,
            novel: is_novel,
            correct: 0,
            total: 0,
        });
        entry.total += 1;
        if clf.predict_one(row) == label {
            entry.correct += 1;
        }
    }
    if excluded > 0 {
        log::warn!("evaluation excluded {excluded} test rows of classes not yet seen");
    }
    if counts.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    Ok((
        MetricsRecord::from_counts(session_id, counts.into_values().collect()),
        excluded,
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunWarnings {
    /// Replay rows filled without passing the classifier filter.
    pub unfiltered_replay_fill: usize,
    /// Classes whose prototype had to be fitted from unfiltered rows because
    /// the classifier rejected all of them.
    pub unfiltered_prototypes: usize,
    /// Prototypes stored in SVD-reduced form.
    pub reduced_prototypes: usize,
    /// Augmented classes where the β threshold hit its floor.
    pub augment_floor_reached: usize,
    pub excluded_test_rows: usize,
}

impl std::ops::AddAssign for RunWarnings {
    fn add_assign(&mut self, o: Self) {
        self.unfiltered_replay_fill += o.unfiltered_replay_fill;
        self.unfiltered_prototypes += o.unfiltered_prototypes;
        self.reduced_prototypes += o.reduced_prototypes;
        self.augment_floor_reached += o.augment_floor_reached;
        self.excluded_test_rows += o.excluded_test_rows;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation across trials (0 for a single trial).
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub session_classes: Vec<Vec<u32>>,
    pub sessions: Vec<MetricsRecord>,
    /// Mean G over sessions 1..N-1 (session 0 alone for single-session runs).
    pub mean_g: f64,
    /// Mean IFM over sessions 1..N-1.
    pub mean_ifm: f64,
    pub sad: Option<f64>,
    pub warnings: RunWarnings,
}

impl TrialReport {
    fn new(seed: u64, session_classes: Vec<Vec<u32>>, sessions: Vec<MetricsRecord>, warnings: RunWarnings) -> Self {
        let (mean_g, mean_ifm) = incremental_means(&sessions);
        let sad = compute_sad(&sessions).ok();
        Self {
            seed,
            session_classes,
            sessions,
            mean_g,
            mean_ifm,
            sad,
            warnings,
        }
    }

    pub fn final_g(&self) -> f64 {
        self.sessions.last().map_or(0.0, |s| s.g)
    }
}

fn incremental_means(sessions: &[MetricsRecord]) -> (f64, f64) {
    let tail = if sessions.len() > 1 { &sessions[1..] } else { sessions };
    let n = tail.len().max(1) as f64;
    (
        tail.iter().map(|s| s.g).sum::<f64>() / n,
        tail.iter().map(|s| s.ifm).sum::<f64>() / n,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAggregate {
    pub session_id: usize,
    pub g: Stat,
    pub l: Stat,
    pub ifm: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub per_session: Vec<SessionAggregate>,
    pub mean_g: Stat,
    pub mean_ifm: Stat,
    pub final_g: Stat,
    pub sad: Option<Stat>,
}

impl Aggregate {
    pub fn of(trials: &[TrialReport]) -> Self {
        let n_sessions = trials.iter().map(|t| t.sessions.len()).min().unwrap_or(0);
        let per_session = (0..n_sessions)
            .map(|s| {
                let col = |f: fn(&MetricsRecord) -> f64| {
                    Stat::of(&trials.iter().map(|t| f(&t.sessions[s])).collect::<Vec<_>>())
                };
                SessionAggregate {
                    session_id: s,
                    g: col(|r| r.g),
                    l: col(|r| r.l),
                    ifm: col(|r| r.ifm),
                }
            })
            .collect();
        let sads: Option<Vec<f64>> = trials.iter().map(|t| t.sad).collect();
        Self {
            per_session,
            mean_g: Stat::of(&trials.iter().map(|t| t.mean_g).collect::<Vec<_>>()),
            mean_ifm: Stat::of(&trials.iter().map(|t| t.mean_ifm).collect::<Vec<_>>()),
            final_g: Stat::of(&trials.iter().map(TrialReport::final_g).collect::<Vec<_>>()),
            sad: sads.filter(|s| !s.is_empty()).map(|s| Stat::of(&s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Dfcil,
    Fscil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: RunMode,
    pub shots: Option<usize>,
    pub augment: bool,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub proto: ProtoConfig,
    pub trials: Vec<TrialReport>,
    pub aggregate: Aggregate,
}

impl RunReport {
    pub fn n_sessions(&self) -> usize {
        self.trials.first().map_or(0, |t| t.sessions.len())
    }

    pub fn total_warnings(&self) -> RunWarnings {
        let mut w = RunWarnings::default();
        self.trials.iter().for_each(|t| w += t.warnings);
        w
    }
}

/// Everything a run needs besides the data and the plan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub proto: ProtoConfig,
}

fn check_plan_against(source: &dyn FeatureSource, plan: &SessionPlan) -> Result<()> {
    plan.validate()?;
    for l in plan.all_labels() {
        source.train_rows(l).map(|_| ())?;
    }
    Ok(())
}

struct TrialRun<'a> {
    source: &'a dyn FeatureSource,
    settings: &'a RunSettings,
    shots: Option<usize>,
    augment: bool,
}

impl TrialRun<'_> {
    fn select_shots(&self, label: u32, rows: FeatureSet, trial_seed: u64) -> Result<FeatureSet> {
        let Some(k) = self.shots else {
            return Ok(rows);
        };
        if rows.len() < k {
            return Err(Error::InsufficientShots {
                label,
                available: rows.len(),
                requested: k,
            });
        }
        let mut rng = seed::rng(trial_seed, &[tag::SHOTS, u64::from(label)]);
        let mut idx = rand::seq::index::sample(&mut rng, rows.len(), k).into_vec();
        idx.sort_unstable();
        Ok(rows.select(&idx))
    }

    fn run(&self, trial_seed: u64, sessions: Vec<Vec<u32>>) -> Result<TrialReport> {
        let dim = self.source.dim();
        let s = self.settings;
        let mut warnings = RunWarnings::default();
        let mut store = PrototypeStore::new(dim);
        let mut clf: Option<LinearClassifier> = None;
        let mut seen: BTreeSet<u32> = BTreeSet::new();
        let mut records = Vec::with_capacity(sessions.len());

        for (i, new_labels) in sessions.iter().enumerate() {
            self.source.session_started(i, new_labels);
            let session_seed = seed::derive(trial_seed, &[tag::SESSION, i as u64]);

            let mut real: BTreeMap<u32, FeatureSet> = BTreeMap::new();
            for &l in new_labels {
                let rows = self.source.train_rows(l)?;
                let rows = if i == 0 {
                    rows
                } else {
                    self.select_shots(l, rows, trial_seed)?
                };
                real.insert(l, rows);
            }

            let replay: Vec<SyntheticBatch> = match &clf {
                Some(prev) if !store.is_empty() => {
                    let cfg = SamplerConfig {
                        seed: seed::derive(session_seed, &[tag::REPLAY]),
                        ..s.sampler.clone()
                    };
                    let out = synthetic_replay(&store, prev, &cfg)?;
                    warnings.unfiltered_replay_fill += out.unfiltered_fill;
                    out.batches
                }
                _ => Vec::new(),
            };

            let mut training = FeatureSet::new(dim);
            if self.augment && i > 0 {
                let cfg = SamplerConfig {
                    seed: seed::derive(session_seed, &[tag::AUGMENT]),
                    ..s.sampler.clone()
                };
                // other classes: every saved prototype plus naive prototypes of siblings
                let mut others = store.clone();
                for (&l, rows) in &real {
                    others.insert(fit_prototype(l, &rows.rows_of(l), &s.proto)?)?;
                }
                for (&l, rows) in &real {
                    let aug = synthetic_augment(
                        l,
                        &rows.rows_of(l),
                        &others,
                        &cfg,
                        &s.proto,
                        s.sampler.replay_per_class,
                    )?;
                    if aug.accepted_all {
                        warnings.augment_floor_reached += 1;
                    }
                    training.extend(&aug.training_pool())?;
                }
            } else {
                for rows in real.values() {
                    training.extend(rows)?;
                }
            }

            let head = match &clf {
                None => LinearClassifier::new(dim, new_labels)?,
                Some(prev) => prev.expand_head(new_labels)?,
            };
            let tcfg = TrainConfig {
                seed: seed::derive(session_seed, &[tag::TRAIN]),
                ..s.train.clone()
            };
            let trained = train(&head, &training, &replay, &tcfg)?.classifier;

            let old = seen.clone();
            let novel: BTreeSet<u32> = new_labels.iter().copied().collect();
            seen.extend(new_labels.iter().copied());
            let mut test = FeatureSet::new(dim);
            for &l in &seen {
                test.extend(&self.source.test_rows(l)?)?;
            }
            let (record, excluded) = evaluate(&trained, &test, &old, &novel, i)?;
            warnings.excluded_test_rows += excluded;
            records.push(record);

            for (&l, rows) in &real {
                let all = rows.rows_of(l);
                let mut kept: Vec<&[f64]> = all
                    .iter()
                    .copied()
                    .filter(|r| trained.predict_one(r) == l)
                    .collect();
                if kept.is_empty() {
                    log::warn!("class {l}: classifier rejects every training row, prototype fitted unfiltered");
                    warnings.unfiltered_prototypes += 1;
                    kept = all;
                }
                let proto = fit_prototype(l, &kept, &s.proto)?;
                if proto.is_reduced() {
                    warnings.reduced_prototypes += 1;
                }
                store.insert(proto)?;
            }
            clf = Some(trained);
        }
        Ok(TrialReport::new(trial_seed, sessions, records, warnings))
    }
}

fn run_protocol(
    source: &dyn FeatureSource,
    plan: &SessionPlan,
    settings: &RunSettings,
    mode: RunMode,
    augment: bool,
) -> Result<RunReport> {
    check_plan_against(source, plan)?;
    settings.sampler.validate()?;
    settings.train.validate()?;
    let runner = TrialRun {
        source,
        settings,
        shots: plan.shots,
        augment,
    };
    let trials: Result<Vec<TrialReport>> = plan
        .trials
        .par_iter()
        .enumerate()
        .map(|(t, &trial_seed)| runner.run(trial_seed, plan.sessions_for_trial(t)))
        .collect();
    let trials = trials?;
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        mode,
        shots: plan.shots,
        augment,
        sampler: settings.sampler.clone(),
        train: settings.train.clone(),
        proto: settings.proto.clone(),
        aggregate: Aggregate::of(&trials),
        trials,
    })
}

/// Data-free class-incremental run. Only the prototype store and the
/// classifier carry over from one session to the next.
pub fn run_dfcil(source: &dyn FeatureSource, plan: &SessionPlan, settings: &RunSettings) -> Result<RunReport> {
    let plan = SessionPlan {
        shots: None,
        ..plan.clone()
    };
    run_protocol(source, &plan, settings, RunMode::Dfcil, false)
}

/// Few-shot run: `plan.shots` rows are drawn per incremental class and
/// trial; with `augment`, each new class is enlarged by synthetic
/// augmentation before training.
pub fn run_fscil(
    source: &dyn FeatureSource,
    plan: &SessionPlan,
    settings: &RunSettings,
    augment: bool,
) -> Result<RunReport> {
    if plan.shots.is_none() {
        return Err(Error::Config("few-shot runs need a shot count".into()));
    }
    run_protocol(source, plan, settings, RunMode::Fscil, augment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub replay_per_class: usize,
    pub report: RunReport,
}

/// Runs [`run_dfcil`] once per replay-buffer size.
pub fn replay_size_sweep(
    source: &dyn FeatureSource,
    plan: &SessionPlan,
    sizes: &[usize],
    settings: &RunSettings,
) -> Result<Vec<SweepPoint>> {
    if sizes.is_empty() {
        return Err(Error::Config("sweep needs at least one size".into()));
    }
    sizes
        .iter()
        .map(|&size| {
            let mut s = settings.clone();
            s.sampler.replay_per_class = size;
            s.sampler.candidate_pool = s.sampler.candidate_pool.max(size);
            Ok(SweepPoint {
                replay_per_class: size,
                report: run_dfcil(source, plan, &s)?,
            })
        })
        .collect()
}

/// Upper reference: one head trained on all real training rows of `labels`
/// at once, scored (G, percent) on all their test rows.
pub fn joint_oracle(source: &dyn FeatureSource, labels: &[u32], cfg: &TrainConfig) -> Result<f64> {
    let dim = source.dim();
    let mut train_set = FeatureSet::new(dim);
    let mut test = FeatureSet::new(dim);
    for &l in labels {
        train_set.extend(&source.train_rows(l)?)?;
        test.extend(&source.test_rows(l)?)?;
    }
    let clf = train(&LinearClassifier::new(dim, labels)?, &train_set, &[], cfg)?.classifier;
    let all: BTreeSet<u32> = labels.iter().copied().collect();
    Ok(evaluate(&clf, &test, &BTreeSet::new(), &all, 0)?.0.g)
}

/// JSON run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// Dataset directory or manifest, relative to the config file.
    pub dataset: PathBuf,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Shuffle the incremental class order per trial (full-shot runs only).
    #[serde(default = "default_true")]
    pub permute_class_order: bool,
    /// Overrides the manifest's session layout.
    #[serde(default)]
    pub base_classes: Option<Vec<u32>>,
    #[serde(default)]
    pub increments: Option<Vec<Vec<u32>>>,
    #[serde(default)]
    pub shots: Option<usize>,
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub proto: ProtoConfig,
}

fn default_schema() -> u32 {
    REPORT_SCHEMA_VERSION
}
fn default_trials() -> usize {
    3
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({ "dataset": dataset.into() }))
            .expect("defaults deserialize")
    }

    /// Reads a config; a relative `dataset` is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        if cfg.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset = dir.join(&cfg.dataset);
            }
        }
        if cfg.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            sampler: self.sampler.clone(),
            train: self.train.clone(),
            proto: self.proto.clone(),
        }
    }

    /// Trial seeds are `derive(seed, [TRIAL, t])`; class-order seeds
    /// `derive(seed, [CLASS_ORDER, t])`.
    pub fn plan(&self, manifest: &DatasetManifest) -> Result<SessionPlan> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let trials: Vec<u64> = (0..self.trials as u64)
            .map(|t| seed::derive(self.seed, &[tag::TRIAL, t]))
            .collect();
        let mut plan = SessionPlan::from_manifest(manifest, trials);
        if let Some(base) = &self.base_classes {
            plan.base_classes = base.clone();
        }
        if let Some(inc) = &self.increments {
            plan.increments = inc.clone();
        }
        plan.shots = self.shots;
        if self.permute_class_order && self.shots.is_none() {
            plan.class_order_seeds = Some(
                (0..self.trials as u64)
                    .map(|t| seed::derive(self.seed, &[tag::CLASS_ORDER, t]))
                    .collect(),
            );
        }
        plan.validate()?;
        Ok(plan)
    }
}
