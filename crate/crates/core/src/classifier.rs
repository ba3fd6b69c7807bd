//! Linear softmax head trained with Adam on mixed real and synthetic rows.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::sampler::SyntheticBatch;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    dim: usize,
    labels: Vec<u32>,
    /// `labels.len() × dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    /// Zero-initialised head over `labels`.
    pub fn new(dim: usize, labels: &[u32]) -> Result<Self> {
        Self {
            dim,
            labels: Vec::new(),
            weights: Vec::new(),
            bias: Vec::new(),
        }
        .expand_head(labels)
    }

    pub fn from_parts(dim: usize, labels: Vec<u32>, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: weights.len(),
            });
        }
        if bias.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Validation("classifier parameters must be finite".into()));
        }
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateLabel(w[0]));
        }
        Ok(Self {
            dim,
            labels,
            weights,
            bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn contains(&self, label: u32) -> bool {
        self.labels.contains(&label)
    }

    fn index(&self) -> HashMap<u32, usize> {
        self.labels.iter().enumerate().map(|(i, &l)| (l, i)).collect()
    }

    /// Appends zero rows for `new_labels`; existing rows are untouched.
    pub fn expand_head(&self, new_labels: &[u32]) -> Result<Self> {
        let mut out = self.clone();
        for &l in new_labels {
            if out.labels.contains(&l) {
                return Err(Error::DuplicateLabel(l));
            }
            out.labels.push(l);
            out.weights.extend(std::iter::repeat_n(0.0, self.dim));
            out.bias.push(0.0);
        }
        Ok(out)
    }

    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Argmax label; ties go to the smallest label id.
    pub fn predict_one(&self, x: &[f64]) -> u32 {
        let mut logits = vec![0.0; self.labels.len()];
        self.logits_into(x, &mut logits);
        let mut best = 0;
        for c in 1..logits.len() {
            if logits[c] > logits[best] || (logits[c] == logits[best] && self.labels[c] < self.labels[best]) {
                best = c;
            }
        }
        self.labels[best]
    }

    pub fn predict<'a>(&self, rows: impl IntoIterator<Item = &'a [f64]>) -> Vec<u32> {
        rows.into_iter().map(|x| self.predict_one(x)).collect()
    }
}

/// Mean softmax cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad(clf: &LinearClassifier, rows: &[&[f64]], labels: &[u32]) -> Result<(f64, Gradient)> {
    assert_eq!(rows.len(), labels.len(), "rows and labels differ in length");
    let index = clf.index();
    let classes = clf.labels.len();
    let dim = clf.dim;
    let mut grad = Gradient {
        weights: vec![0.0; classes * dim],
        bias: vec![0.0; classes],
    };
    if rows.is_empty() {
        return Ok((0.0, grad));
    }
    let mut logits = vec![0.0; classes];
    let mut loss = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        let target = *index.get(&y).ok_or(Error::UnknownLabel(y))?;
        clf.logits_into(x, &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        let log_sum = sum.ln() + max;
        let mut target_logit = 0.0;
        for (c, p) in logits.iter_mut().enumerate() {
            if c == target {
                target_logit = p.ln() + max;
            }
            *p /= sum;
        }
        loss += log_sum - target_logit;
        for (c, &p) in logits.iter().enumerate() {
            let coef = if c == target { p - 1.0 } else { p };
            if coef == 0.0 {
                continue;
            }
            grad.bias[c] += coef;
            let g = &mut grad.weights[c * dim..(c + 1) * dim];
            for (gj, xj) in g.iter_mut().zip(x.iter()) {
                *gj += coef * xj;
            }
        }
    }
    let n = rows.len() as f64;
    grad.weights.iter_mut().chain(grad.bias.iter_mut()).for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Replay rows per new-data row in each step.
    pub alpha: usize,
    pub use_bias: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            batch_size: 64,
            alpha: 8,
            use_bias: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("train.beta1 and train.beta2 must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        Ok(())
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(cfg: &TrainConfig, params: usize) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            t: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grads: impl Iterator<Item = f64>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Endless stream over the replay rows: a shuffled pass over the pool,
/// reshuffled every time it is exhausted. The pool is put in label order
/// first, so the stream does not depend on how the batches were stored.
pub struct RollingMixer<'a> {
    rows: Vec<(u32, &'a [f64])>,
    order: Vec<usize>,
    pos: usize,
    rng: seed::Rng,
}

impl<'a> RollingMixer<'a> {
    pub fn new(batches: &'a [SyntheticBatch], seed: u64) -> Self {
        let mut sorted: Vec<&SyntheticBatch> = batches.iter().collect();
        sorted.sort_by_key(|b| b.label);
        let rows: Vec<(u32, &[f64])> = sorted
            .into_iter()
            .flat_map(|b| b.rows().map(move |r| (b.label, r)))
            .collect();
        let mut rng = seed::rng(seed, &[seed::tag::REPLAY]);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng);
        Self { rows, order, pos: 0, rng }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn next_row(&mut self) -> Option<(u32, &'a [f64])> {
        if self.rows.is_empty() {
            return None;
        }
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        Some(self.rows[i])
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub classifier: LinearClassifier,
    /// Mean step loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains `clf` on `new_data` mixed with `replay`.
///
/// Each step takes one shuffled mini-batch of `new_data` (at most
/// `batch_size` rows) plus `alpha` replay rows per new row from the rolling
/// mixer. An epoch is one pass over `new_data`; with no new data, one pass
/// over the replay pool. The final-epoch model is returned.
pub fn train(
    clf: &LinearClassifier,
    new_data: &FeatureSet,
    replay: &[SyntheticBatch],
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let replay_rows: usize = replay.iter().map(SyntheticBatch::len).sum();
    if new_data.is_empty() && replay_rows == 0 {
        return Err(Error::EmptyInput("no new data and no replay rows to train on".into()));
    }
    if !new_data.is_empty() && new_data.dim() != clf.dim {
        return Err(Error::DimensionMismatch {
            expected: clf.dim,
            got: new_data.dim(),
        });
    }
    for &l in new_data.labels().iter().chain(replay.iter().map(|b| &b.label)) {
        if !clf.contains(l) {
            return Err(Error::UnknownLabel(l));
        }
    }

    let mut model = clf.clone();
    let params = model.weights.len() + model.bias.len();
    let mut adam = Adam::new(cfg, params);
    let mut shuffle_rng = seed::rng(cfg.seed, &[seed::tag::TRAIN]);
    let mut mixer = RollingMixer::new(replay, cfg.seed);
    let replay_only = new_data.is_empty();
    let mut order: Vec<usize> = (0..new_data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();

    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        let mut steps = 0usize;
        let batches: Vec<Vec<usize>> = if replay_only {
            let n = mixer.len();
            (0..n.div_ceil(cfg.batch_size))
                .map(|b| vec![0; cfg.batch_size.min(n - b * cfg.batch_size)])
                .collect()
        } else {
            order.shuffle(&mut shuffle_rng);
            order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
        };
        for batch in batches {
            rows.clear();
            labels.clear();
            if replay_only {
                for _ in 0..batch.len() {
                    let (l, r) = mixer.next_row().expect("replay pool is non-empty");
                    rows.push(r);
                    labels.push(l);
                }
            } else {
                for &i in &batch {
                    rows.push(new_data.row(i));
                    labels.push(new_data.labels()[i]);
                }
                if !mixer.is_empty() {
                    for _ in 0..cfg.alpha * batch.len() {
                        let (l, r) = mixer.next_row().expect("replay pool is non-empty");
                        rows.push(r);
                        labels.push(l);
                    }
                }
            }
            let (loss, grad) = loss_and_grad(&model, &rows, &labels)?;
            total += loss;
            steps += 1;
            let bias_grad: Box<dyn Iterator<Item = f64>> = if cfg.use_bias {
                Box::new(grad.bias.into_iter())
            } else {
                Box::new(std::iter::repeat_n(0.0, model.bias.len()))
            };
            adam.step(
                model.weights.iter_mut().chain(model.bias.iter_mut()),
                grad.weights.into_iter().chain(bias_grad),
            );
        }
        epoch_losses.push(total / steps.max(1) as f64);
    }
    Ok(TrainOutput {
        classifier: model,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Provenance;

    #[test]
    fn expand_preserves_rows() {
        let mut clf = LinearClassifier::new(3, &(0..8).collect::<Vec<_>>()).unwrap();
        for (i, w) in clf.weights_mut().iter_mut().enumerate() {
            *w = i as f64 * 0.25 - 1.0;
        }
        let bigger = clf.expand_head(&[8]).unwrap();
        assert_eq!(bigger.labels().len(), 9);
        assert_eq!(&bigger.weights()[..24], clf.weights());
        assert!(bigger.weights()[24..].iter().all(|&w| w == 0.0));
        assert_eq!(clf.expand_head(&[]).unwrap(), clf);
        assert!(matches!(clf.expand_head(&[3]), Err(Error::DuplicateLabel(3))));
        assert!(matches!(clf.expand_head(&[9, 9]), Err(Error::DuplicateLabel(9))));
    }

    #[test]
    fn uniform_loss_is_ln_c() {
        let clf = LinearClassifier::new(4, &[0, 1, 2, 3, 4]).unwrap();
        let x = [1.0, -2.0, 0.5, 3.0];
        let (loss, _) = loss_and_grad(&clf, &[&x], &[2]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!(matches!(loss_and_grad(&clf, &[&x], &[9]), Err(Error::UnknownLabel(9))));
    }

    #[test]
    fn saturated_logit_has_tiny_loss() {
        let mut clf = LinearClassifier::new(1, &[0, 1]).unwrap();
        clf.bias_mut()[1] = 50.0;
        let (loss, _) = loss_and_grad(&clf, &[&[0.0]], &[1]).unwrap();
        assert!(loss < 1e-6);
        // and stays finite when the wrong class saturates
        let (loss, _) = loss_and_grad(&clf, &[&[0.0]], &[0]).unwrap();
        assert!((loss - 50.0).abs() < 1e-9);
    }

    #[test]
    fn predict_tie_breaks_on_lowest_label() {
        let clf = LinearClassifier::new(2, &[5, 3, 7]).unwrap();
        assert_eq!(clf.predict([&[1.0, 2.0][..], &[0.0, 0.0][..]]), vec![3, 3]);
        let single = LinearClassifier::new(2, &[4]).unwrap();
        assert_eq!(single.predict_one(&[9.0, -9.0]), 4);
        let mut hand = LinearClassifier::new(2, &[0, 1, 2]).unwrap();
        hand.weights_mut()[4] = 1.0;
        assert_eq!(hand.predict_one(&[3.0, 1.0]), 2);
    }

    fn toy_separable() -> FeatureSet {
        let mut set = FeatureSet::new(2);
        for i in 0..10 {
            let t = i as f64 * 0.3;
            set.push(0, &[-1.5 - t, 0.5 * t]).unwrap();
            set.push(1, &[1.5 + t, -0.5 * t]).unwrap();
        }
        set
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let data = toy_separable();
        // margin by construction: x0 ≤ -1.5 for class 0, ≥ 1.5 for class 1
        let clf = LinearClassifier::new(2, &[0, 1]).unwrap();
        let out = train(&clf, &data, &[], &TrainConfig::default()).unwrap();
        let pred = out.classifier.predict(data.rows().map(|(_, r)| r));
        assert_eq!(pred, data.labels());
        assert_eq!(out.epoch_losses.len(), 50);
        assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
    }

    #[test]
    fn alpha_zero_ignores_replay() {
        let data = toy_separable();
        let clf = LinearClassifier::new(2, &[0, 1, 2]).unwrap();
        let replay = vec![SyntheticBatch::new(2, 2, vec![9.0, 9.0, 8.0, 8.0], Provenance::Replay).unwrap()];
        let cfg = TrainConfig {
            alpha: 0,
            epochs: 5,
            ..Default::default()
        };
        let with = train(&clf, &data, &replay, &cfg).unwrap();
        let without = train(&clf, &data, &[], &cfg).unwrap();
        assert_eq!(with.classifier, without.classifier);
    }

    #[test]
    fn replay_storage_order_does_not_matter() {
        let data = toy_separable();
        let clf = LinearClassifier::new(2, &[0, 1, 2, 3]).unwrap();
        let a = SyntheticBatch::new(2, 2, vec![5.0, 5.0, 6.0, 5.5], Provenance::Replay).unwrap();
        let b = SyntheticBatch::new(3, 2, vec![-5.0, 5.0, -6.0, 4.0, -5.5, 6.0], Provenance::Replay).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let ab = train(&clf, &data, &[a.clone(), b.clone()], &cfg).unwrap();
        let ba = train(&clf, &data, &[b, a], &cfg).unwrap();
        assert_eq!(ab.classifier, ba.classifier);
    }

    #[test]
    fn mixer_cycles_through_whole_pool() {
        let a = SyntheticBatch::new(0, 1, vec![1.0, 2.0, 3.0], Provenance::Replay).unwrap();
        let b = SyntheticBatch::new(1, 1, vec![4.0, 5.0], Provenance::Replay).unwrap();
        let batches = [b, a];
        let mut mixer = RollingMixer::new(&batches, 3);
        for _ in 0..3 {
            let mut pass: Vec<f64> = (0..5).map(|_| mixer.next_row().unwrap().1[0]).collect();
            pass.sort_by(f64::total_cmp);
            assert_eq!(pass, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        }
    }

    #[test]
    fn empty_training_input() {
        let clf = LinearClassifier::new(2, &[0]).unwrap();
        assert!(matches!(
            train(&clf, &FeatureSet::new(2), &[], &TrainConfig::default()),
            Err(Error::EmptyInput(_))
        ));
        let data = FeatureSet::from_rows(2, [(4, [0.0, 0.0])]).unwrap();
        assert!(matches!(
            train(&clf, &data, &[], &TrainConfig::default()),
            Err(Error::UnknownLabel(4))
        ));
    }

    #[test]
    fn replay_only_training_runs() {
        let clf = LinearClassifier::new(1, &[0, 1]).unwrap();
        let a = SyntheticBatch::new(0, 1, vec![-2.0, -3.0, -1.0], Provenance::Replay).unwrap();
        let b = SyntheticBatch::new(1, 1, vec![2.0, 3.0, 1.0], Provenance::Replay).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 2,
            ..Default::default()
        };
        let out = train(&clf, &FeatureSet::new(1), &[a, b], &cfg).unwrap();
        assert_eq!(out.classifier.predict([&[-2.0][..], &[2.0][..]]), vec![0, 1]);
    }

    #[test]
    fn bias_switch_keeps_bias_zero() {
        let data = toy_separable();
        let clf = LinearClassifier::new(2, &[0, 1]).unwrap();
        let cfg = TrainConfig {
            use_bias: false,
            epochs: 3,
            ..Default::default()
        };
        let out = train(&clf, &data, &[], &cfg).unwrap();
        assert!(out.classifier.bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn scaling_parameters_keeps_argmax() {
        let mut clf = LinearClassifier::new(3, &[0, 1, 2, 3]).unwrap();
        for (i, w) in clf.weights_mut().iter_mut().enumerate() {
            *w = ((i * 37) % 11) as f64 - 5.0;
        }
        clf.bias_mut().copy_from_slice(&[0.5, -1.0, 2.0, 0.0]);
        let mut scaled = clf.clone();
        scaled.weights_mut().iter_mut().for_each(|w| *w *= 3.5);
        scaled.bias_mut().iter_mut().for_each(|b| *b *= 3.5);
        for x in [[1.0, 0.0, -1.0], [0.2, 0.3, 0.4], [-3.0, 2.0, 1.0]] {
            assert_eq!(clf.predict_one(&x), scaled.predict_one(&x));
        }
    }
}
