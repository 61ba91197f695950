//! Model substrate, augmentations and the supervised / semi-supervised
//! update rules.

mod augment;
mod model;

pub use augment::{
    cutmix, cutmix_with_ratio, strong_augment, weak_augment, CutMixed, GridShape, StrongPolicy,
    WeakDraw,
};
pub use model::{argmax, one_hot, softmax, Architecture, Example, Sgd};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::domain::ModelVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid beta parameter {0}")]
    BetaParameter(f64),
    #[error("sample is unlabeled")]
    Unlabeled,
}

/// One grid sample. Satellites hold unlabeled samples only.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f32>,
    pub label: Option<u8>,
}

/// Confidently pseudo-labeled sample.
/// Everything a federation trains and evaluates on.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedData {
    pub shape: GridShape,
    pub num_classes: usize,
    /// Labeled set held by the ground station.
    pub labeled: Vec<Sample>,
    /// Held-out labeled set used only for evaluation.
    pub eval: Vec<Sample>,
    /// One unlabeled shard per client.
    pub shards: Vec<Vec<Sample>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeled {
    pub features: Vec<f32>,
    pub soft_label: Vec<f64>,
    pub hard_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSet {
    pub entries: Vec<PseudoLabeled>,
    pub threshold: f64,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `f(alpha(x), w)`.
pub fn pseudo_label<R: Rng + ?Sized>(
    arch: &Architecture,
    shape: GridShape,
    w: &ModelVector,
    x: &[f32],
    rng: &mut R,
) -> Vec<f64> {
    arch.predict(w, &weak_augment(shape, x, rng))
}

/// Keeps samples whose top soft-label probability reaches `threshold`.
pub fn fixmatch_filter(
    samples: &[Sample],
    soft_labels: Vec<Vec<f64>>,
    threshold: f64,
) -> PseudoLabeledSet {
    let entries = samples
        .iter()
        .zip(soft_labels)
        .filter_map(|(s, y)| {
            let hard = argmax(&y);
            (y[hard] >= threshold).then(|| PseudoLabeled {
                features: s.features.clone(),
                soft_label: y,
                hard_label: hard,
            })
        })
        .collect();
    PseudoLabeledSet { entries, threshold }
}

/// One momentum-SGD step on the cross-entropy of a weakly augmented
/// labeled batch. Returns the batch loss before the step.
pub fn supervised_step<R: Rng + ?Sized>(
    arch: &Architecture,
    shape: GridShape,
    w: &mut ModelVector,
    batch: &[&Sample],
    opt: &mut Sgd,
    rng: &mut R,
) -> Result<f64, LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let mut inputs = Vec::with_capacity(batch.len());
    for s in batch {
        let label = s.label.ok_or(LearnerError::Unlabeled)?;
        inputs.push((
            weak_augment(shape, &s.features, rng),
            one_hot(label.into(), arch.classes),
        ));
    }
    let examples: Vec<Example<'_>> = inputs
        .iter()
        .map(|(x, y)| (x.as_slice(), y.as_slice()))
        .collect();
    let (loss, grad) = arch.loss_and_grad(w, &examples);
    opt.step(w, &grad);
    Ok(loss)
}

/// Hyper-parameters of one training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: u32,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

/// Supervised epochs over a labeled set, as run at the ground station.
/// Returns the mean batch loss of every epoch.
pub fn supervised_train<R: Rng + ?Sized>(
    arch: &Architecture,
    shape: GridShape,
    w: &mut ModelVector,
    data: &[Sample],
    settings: &TrainSettings,
    rng: &mut R,
) -> Result<Vec<f64>, LearnerError> {
    if data.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let mut opt = Sgd::new(settings.learning_rate, settings.momentum, w.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(settings.epochs as usize);
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(settings.batch_size.max(1)) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            total += supervised_step(arch, shape, w, &batch, &mut opt, rng)? * batch.len() as f64;
        }
        losses.push(total / data.len() as f64);
    }
    Ok(losses)
}

/// An input with its target distribution.
pub type Target = (Vec<f32>, Vec<f64>);

/// `lw * CE(f(A(x_fix)), y_fix) + (1 - lw) * CE(f(x_cut), y_cut)` and its
/// gradient. `fix` must already be strongly augmented.
pub fn semi_loss_and_grad(
    arch: &Architecture,
    w: &ModelVector,
    fix: &[Target],
    cut: &[Target],
    loss_weight: f64,
) -> Result<(f64, Vec<f64>), LearnerError> {
    if fix.is_empty() || cut.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let fe: Vec<Example<'_>> = fix
        .iter()
        .map(|(x, y)| (x.as_slice(), y.as_slice()))
        .collect();
    let ce: Vec<Example<'_>> = cut
        .iter()
        .map(|(x, y)| (x.as_slice(), y.as_slice()))
        .collect();
    let (lf, gf) = arch.loss_and_grad(w, &fe);
    let (lc, gc) = arch.loss_and_grad(w, &ce);
    let grad = gf
        .iter()
        .zip(&gc)
        .map(|(a, b)| loss_weight * a + (1.0 - loss_weight) * b)
        .collect();
    Ok((loss_weight * lf + (1.0 - loss_weight) * lc, grad))
}

/// Value-only counterpart of [`semi_loss_and_grad`].
pub fn semi_loss(
    arch: &Architecture,
    w: &ModelVector,
    fix: &[Target],
    cut: &[Target],
    loss_weight: f64,
) -> Result<f64, LearnerError> {
    if fix.is_empty() || cut.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let fe: Vec<Example<'_>> = fix
        .iter()
        .map(|(x, y)| (x.as_slice(), y.as_slice()))
        .collect();
    let ce: Vec<Example<'_>> = cut
        .iter()
        .map(|(x, y)| (x.as_slice(), y.as_slice()))
        .collect();
    Ok(loss_weight * arch.loss(w, &fe) + (1.0 - loss_weight) * arch.loss(w, &ce))
}

/// Settings of a client's semi-supervised round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiSettings {
    pub train: TrainSettings,
    pub confidence: f64,
    pub beta_param: f64,
    pub loss_weight: f64,
    pub strong: StrongPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedUpdate {
    /// `w_final - w_start`.
    pub delta: ModelVector,
    pub epoch_losses: Vec<f64>,
    pub fix_count: usize,
    /// Forward/backward sample passes, including the pseudo-label pass.
    pub samples_processed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalOutcome {
    /// No pseudo-label cleared the threshold; only the labeling pass ran.
    Skipped {
        samples_processed: usize,
    },
    Trained(TrainedUpdate),
}

/// A client's round: pseudo-label the shard once, keep confident samples,
/// build an equal-size CutMix set by sampling with replacement, then run
/// `epochs` of mini-batch momentum SGD on the semi-supervised loss.
pub fn local_train<R: Rng + ?Sized>(
    arch: &Architecture,
    shape: GridShape,
    shard: &[Sample],
    start: &ModelVector,
    settings: &SemiSettings,
    rng: &mut R,
) -> Result<LocalOutcome, LearnerError> {
    let soft: Vec<Vec<f64>> = shard
        .iter()
        .map(|s| pseudo_label(arch, shape, start, &s.features, rng))
        .collect();
    let fix = fixmatch_filter(shard, soft, settings.confidence);
    if fix.is_empty() {
        return Ok(LocalOutcome::Skipped {
            samples_processed: shard.len(),
        });
    }
    let n = fix.len();
    let mut mix = Vec::with_capacity(n);
    for _ in 0..n {
        let a = &fix.entries[rng.random_range(0..n)];
        let b = &fix.entries[rng.random_range(0..n)];
        let m = cutmix(
            shape,
            (&a.features, &a.soft_label),
            (&b.features, &b.soft_label),
            settings.beta_param,
            rng,
        )?;
        mix.push((m.features, m.soft_label));
    }

    let mut w = start.clone();
    let mut opt = Sgd::new(
        settings.train.learning_rate,
        settings.train.momentum,
        w.len(),
    );
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(settings.train.epochs as usize);
    for _ in 0..settings.train.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(settings.train.batch_size.max(1)) {
            let fix_batch: Vec<Target> = chunk
                .iter()
                .map(|&i| {
                    let e = &fix.entries[i];
                    (
                        strong_augment(shape, &e.features, &settings.strong, rng),
                        one_hot(e.hard_label, arch.classes),
                    )
                })
                .collect();
            let cut_batch: Vec<Target> = chunk.iter().map(|&i| mix[i].clone()).collect();
            let (loss, grad) =
                semi_loss_and_grad(arch, &w, &fix_batch, &cut_batch, settings.loss_weight)?;
            opt.step(&mut w, &grad);
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(LocalOutcome::Trained(TrainedUpdate {
        delta: w.sub(start),
        epoch_losses,
        fix_count: n,
        samples_processed: shard.len() + settings.train.epochs as usize * 2 * n,
    }))
}

/// Accuracy and mean cross-entropy on labeled data.
pub fn evaluate(arch: &Architecture, w: &ModelVector, data: &[Sample]) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for s in data {
        let Some(label) = s.label else { continue };
        let p = arch.predict(w, &s.features);
        if argmax(&p) == usize::from(label) {
            correct += 1;
        }
        loss -= p[usize::from(label)].max(f64::MIN_POSITIVE).ln();
    }
    let n = data.len() as f64;
    (correct as f64 / n, loss / n)
}

#[cfg(test)]
mod tests {
    use super::model::tests::{assert_grad_close, finite_difference};
    use super::*;
    use crate::domain::{SeededRng, StreamId};

    const SHAPE: GridShape = GridShape {
        height: 2,
        width: 2,
        channels: 1,
    };

    fn constant(v: f32, label: Option<u8>) -> Sample {
        Sample {
            features: vec![v; 4],
            label,
        }
    }

    #[test]
    fn uniform_model_pseudo_labels() {
        let arch = Architecture::logistic(4, 4);
        let w = ModelVector::zeros(arch.param_count());
        let mut rng = SeededRng::new(0, StreamId::Client(0));
        let p = pseudo_label(&arch, SHAPE, &w, &[1.0, 2.0, 3.0, 4.0], &mut rng);
        assert!(p.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn pseudo_label_argmax_stable_for_identity_draw() {
        let arch = Architecture::mlp(4, 3, 3);
        let mut rng = SeededRng::new(2, StreamId::ModelInit);
        let w = arch.init(&mut rng);
        let x = [0.5, -1.0, 2.0, 0.1];
        let direct = arch.predict(&w, &WeakDraw::IDENTITY.apply(SHAPE, &x));
        assert_eq!(argmax(&direct), argmax(&arch.predict(&w, &x)));
        assert!((direct.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fixmatch_keeps_confident_only() {
        let samples = vec![constant(0.0, None), constant(1.0, None)];
        let kept = fixmatch_filter(&samples, vec![vec![0.99, 0.01], vec![0.5, 0.5]], 0.95);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.entries[0].features, samples[0].features);
        assert_eq!(kept.entries[0].hard_label, 0);
        let none = fixmatch_filter(&samples, vec![vec![0.999, 0.001], vec![0.5, 0.5]], 1.0);
        assert!(none.is_empty());
    }

    #[test]
    fn supervised_zero_lr_is_noop() {
        let arch = Architecture::logistic(4, 2);
        let mut rng = SeededRng::new(0, StreamId::GroundStation);
        let w0 = arch.init(&mut rng);
        let mut w = w0.clone();
        let data = [constant(1.0, Some(0)), constant(-1.0, Some(1))];
        let batch: Vec<&Sample> = data.iter().collect();
        let mut opt = Sgd::new(0.0, 0.9, w.len());
        supervised_step(&arch, SHAPE, &mut w, &batch, &mut opt, &mut rng).unwrap();
        assert_eq!(w, w0);
        assert_eq!(
            supervised_step(&arch, SHAPE, &mut w, &[], &mut opt, &mut rng),
            Err(LearnerError::EmptyBatch)
        );
    }

    #[test]
    fn supervised_step_reduces_convex_loss() {
        let arch = Architecture::logistic(4, 2);
        let mut rng = SeededRng::new(4, StreamId::GroundStation);
        let mut w = arch.init(&mut rng);
        // Constant grids are fixed points of flips and edge-padded shifts.
        let data = [
            constant(1.0, Some(0)),
            constant(-1.0, Some(1)),
            constant(0.5, Some(0)),
        ];
        let targets: Vec<(Vec<f32>, Vec<f64>)> = data
            .iter()
            .map(|s| (s.features.clone(), one_hot(s.label.unwrap().into(), 2)))
            .collect();
        let ex: Vec<Example<'_>> = targets
            .iter()
            .map(|(x, y)| (x.as_slice(), y.as_slice()))
            .collect();
        let before = arch.loss(&w, &ex);
        let batch: Vec<&Sample> = data.iter().collect();
        let mut opt = Sgd::new(0.01, 0.9, w.len());
        let reported = supervised_step(&arch, SHAPE, &mut w, &batch, &mut opt, &mut rng).unwrap();
        assert!((reported - before).abs() < 1e-12);
        assert!(arch.loss(&w, &ex) < before);
    }

    fn semi_batches(rng: &mut SeededRng) -> (Vec<Target>, Vec<Target>) {
        let mk = |rng: &mut SeededRng, soft: bool| -> Target {
            let x: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = if soft {
                let a: f64 = rng.random();
                vec![a, 1.0 - a]
            } else {
                one_hot(rng.random_range(0..2), 2)
            };
            (x, y)
        };
        let fix = (0..4).map(|_| mk(rng, false)).collect();
        let cut = (0..4).map(|_| mk(rng, true)).collect();
        (fix, cut)
    }

    #[test]
    fn semi_loss_gradient_matches_finite_differences() {
        let arch = Architecture::logistic(4, 2);
        for seed in 0..10 {
            let mut rng = SeededRng::new(seed, StreamId::Client(0));
            let w = arch.init(&mut rng);
            let (fix, cut) = semi_batches(&mut rng);
            let lw: f64 = rng.random();
            let (loss, g) = semi_loss_and_grad(&arch, &w, &fix, &cut, lw).unwrap();
            assert!((loss - semi_loss(&arch, &w, &fix, &cut, lw).unwrap()).abs() < 1e-12);
            let fd = finite_difference(&w, |w| semi_loss(&arch, w, &fix, &cut, lw).unwrap());
            assert_grad_close(&g, &fd);
        }
    }

    #[test]
    fn semi_loss_weight_extremes() {
        let arch = Architecture::logistic(4, 2);
        let mut rng = SeededRng::new(3, StreamId::Client(0));
        let w = arch.init(&mut rng);
        let (fix, cut) = semi_batches(&mut rng);
        let ce = |b: &[Target]| {
            let ex: Vec<Example<'_>> = b
                .iter()
                .map(|(x, y)| (x.as_slice(), y.as_slice()))
                .collect();
            arch.loss(&w, &ex)
        };
        assert_eq!(semi_loss(&arch, &w, &fix, &cut, 1.0).unwrap(), ce(&fix));
        assert_eq!(semi_loss(&arch, &w, &fix, &cut, 0.0).unwrap(), ce(&cut));
        let half = semi_loss(&arch, &w, &fix, &cut, 0.5).unwrap();
        assert!((half - 0.5 * (ce(&fix) + ce(&cut))).abs() < 1e-12);
        assert_eq!(
            semi_loss(&arch, &w, &[], &cut, 0.5),
            Err(LearnerError::EmptyBatch)
        );
    }

    fn settings(epochs: u32, confidence: f64) -> SemiSettings {
        SemiSettings {
            train: TrainSettings {
                epochs,
                learning_rate: 0.05,
                momentum: 0.0,
                batch_size: 64,
            },
            confidence,
            beta_param: 1.0,
            loss_weight: 0.5,
            strong: StrongPolicy {
                noise_scale: 0.0,
                cutout_fraction: 0.0,
            },
        }
    }

    fn confident_setup() -> (Architecture, ModelVector, Vec<Sample>) {
        let arch = Architecture::logistic(4, 2);
        // Class 0 for positive grids, class 1 for negative, with margin.
        let mut w = ModelVector::zeros(arch.param_count());
        for i in 0..4 {
            w[i] = 1.0;
            w[4 + i] = -1.0;
        }
        let shard: Vec<Sample> = (0..12)
            .map(|i| constant(if i % 2 == 0 { 0.8 } else { -0.6 } + 0.01 * i as f32, None))
            .collect();
        (arch, w, shard)
    }

    #[test]
    fn zero_epochs_give_zero_delta() {
        let (arch, w, shard) = confident_setup();
        let mut rng = SeededRng::new(0, StreamId::Client(0));
        match local_train(&arch, SHAPE, &shard, &w, &settings(0, 0.5), &mut rng).unwrap() {
            LocalOutcome::Trained(t) => assert!(t.delta.iter().all(|&v| v == 0.0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn low_confidence_skips() {
        let (arch, _, shard) = confident_setup();
        let w = ModelVector::zeros(arch.param_count());
        let mut rng = SeededRng::new(0, StreamId::Client(0));
        let out = local_train(&arch, SHAPE, &shard, &w, &settings(3, 0.95), &mut rng).unwrap();
        assert_eq!(
            out,
            LocalOutcome::Skipped {
                samples_processed: 12
            }
        );
    }

    #[test]
    fn convex_local_training_descends() {
        let (arch, w, shard) = confident_setup();
        let mut rng = SeededRng::new(0, StreamId::Client(0));
        let out = local_train(&arch, SHAPE, &shard, &w, &settings(8, 0.6), &mut rng).unwrap();
        let LocalOutcome::Trained(t) = out else {
            panic!("skipped")
        };
        assert!(t.delta.norm() > 0.0);
        assert_eq!(t.fix_count, 12);
        assert_eq!(t.samples_processed, 12 + 8 * 24);
        for pair in t.epoch_losses.windows(2) {
            assert!(pair[1] < pair[0], "{:?}", t.epoch_losses);
        }
    }
}
