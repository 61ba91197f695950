//! Synthetic class-conditional grids and the non-IID client partition.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::learner::{FederatedData, GridShape, Sample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("{have} samples cannot feed {clients} clients (need at least {need})")]
    TooSmall {
        have: usize,
        clients: usize,
        need: usize,
    },
    #[error("fewer than two classes")]
    Classes,
    #[error("sample without a label")]
    Unlabeled,
}

/// One smooth, left-right symmetric prototype per class, scaled to RMS
/// `separation`. Symmetry keeps class identity under horizontal flips.
pub fn class_prototypes<R: Rng + ?Sized>(
    num_classes: usize,
    shape: GridShape,
    separation: f64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let (h, w, ch) = (shape.height, shape.width, shape.channels);
    (0..num_classes)
        .map(|_| {
            let raw: Vec<f64> = (0..shape.len())
                .map(|_| StandardNormal.sample(rng))
                .collect();
            let at = |r: usize, c: usize, k: usize| (r * w + c) * ch + k;
            let mut smooth = vec![0.0; shape.len()];
            for r in 0..h {
                for c in 0..w {
                    for k in 0..ch {
                        let mut sum = 0.0;
                        let mut n = 0.0;
                        for rr in r.saturating_sub(1)..(r + 2).min(h) {
                            for cc in c.saturating_sub(1)..(c + 2).min(w) {
                                sum += raw[at(rr, cc, k)];
                                n += 1.0;
                            }
                        }
                        smooth[at(r, c, k)] = sum / n;
                    }
                }
            }
            let mut sym = vec![0.0; shape.len()];
            for r in 0..h {
                for c in 0..w {
                    for k in 0..ch {
                        sym[at(r, c, k)] =
                            0.5 * (smooth[at(r, c, k)] + smooth[at(r, w - 1 - c, k)]);
                    }
                }
            }
            let mean = sym.iter().sum::<f64>() / sym.len() as f64;
            sym.iter_mut().for_each(|v| *v -= mean);
            let rms = (sym.iter().map(|v| v * v).sum::<f64>() / sym.len() as f64).sqrt();
            let scale = if rms > 0.0 { separation / rms } else { 0.0 };
            sym.iter().map(|v| v * scale).collect()
        })
        .collect()
}

/// Class-conditional Gaussian blobs: prototype plus unit noise per
/// feature, shuffled.
pub fn synth_dataset<R: Rng + ?Sized>(
    num_classes: usize,
    per_class: usize,
    shape: GridShape,
    separation: f64,
    rng: &mut R,
) -> Vec<Sample> {
    let protos = class_prototypes(num_classes, shape, separation, rng);
    let mut out = Vec::with_capacity(num_classes * per_class);
    for (class, proto) in protos.iter().enumerate() {
        for _ in 0..per_class {
            let features = proto
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(rng);
                    (m + z) as f32
                })
                .collect();
            out.push(Sample {
                features,
                label: Some(class as u8),
            });
        }
    }
    out.shuffle(rng);
    out
}

/// Fractions steering [`partition_noniid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionPlan {
    pub clients: usize,
    pub eval_fraction: f64,
    pub labeled_fraction: f64,
    /// Share of every client shard drawn from its designated class.
    pub designated_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub data: FederatedData,
    /// True classes of every client shard, kept for audits only.
    pub hidden_labels: Vec<Vec<u8>>,
}

/// Splits a labeled dataset into a stratified evaluation set, a stratified
/// labeled ground-station set and unlabeled client shards of equal size.
/// Client `i` gets the designated share of its shard from class
/// `i mod classes` and the rest spread evenly over the other classes.
pub fn partition_noniid<R: Rng + ?Sized>(
    dataset: Vec<Sample>,
    num_classes: usize,
    shape: GridShape,
    plan: &PartitionPlan,
    rng: &mut R,
) -> Result<Partition, PartitionError> {
    if num_classes < 2 {
        return Err(PartitionError::Classes);
    }
    let need = plan.clients * 10;
    if dataset.len() < need || plan.clients == 0 {
        return Err(PartitionError::TooSmall {
            have: dataset.len(),
            clients: plan.clients,
            need,
        });
    }
    let mut by_class: Vec<Vec<Sample>> = vec![Vec::new(); num_classes];
    for s in dataset {
        let label = s.label.ok_or(PartitionError::Unlabeled)? as usize;
        by_class[label.min(num_classes - 1)].push(s);
    }
    let mut eval = Vec::new();
    let mut labeled = Vec::new();
    for pool in &mut by_class {
        pool.shuffle(rng);
        let n = pool.len() as f64;
        let n_eval = (plan.eval_fraction * n).round() as usize;
        let n_lab = (plan.labeled_fraction * n).round() as usize;
        eval.extend(pool.drain(..n_eval.min(pool.len())));
        labeled.extend(pool.drain(..n_lab.min(pool.len())));
    }

    let remaining: usize = by_class.iter().map(Vec::len).sum();
    let shard = remaining / plan.clients;
    let others = num_classes - 1;
    let mut shards = Vec::with_capacity(plan.clients);
    let mut hidden_labels = Vec::with_capacity(plan.clients);
    for i in 0..plan.clients {
        let designated = i % num_classes;
        let own = ((plan.designated_fraction * shard as f64).round() as usize).min(shard);
        let rest = shard - own;
        let mut quota = vec![0usize; num_classes];
        quota[designated] = own;
        for (c, q) in quota.iter_mut().enumerate() {
            if c == designated {
                continue;
            }
            // Spread the remainder starting at the class after the designated one.
            let offset = (c + num_classes - designated - 1) % num_classes;
            *q = rest / others + usize::from(offset < rest % others);
        }
        let mut samples = Vec::with_capacity(shard);
        for (c, &q) in quota.iter().enumerate() {
            for _ in 0..q {
                let from = if by_class[c].is_empty() {
                    (0..num_classes)
                        .max_by_key(|&k| (by_class[k].len(), usize::MAX - k))
                        .unwrap()
                } else {
                    c
                };
                if let Some(mut s) = by_class[from].pop() {
                    let label = s.label.take().ok_or(PartitionError::Unlabeled)?;
                    samples.push((s, label));
                }
            }
        }
        samples.shuffle(rng);
        let (shard_samples, labels): (Vec<Sample>, Vec<u8>) = samples.into_iter().unzip();
        shards.push(shard_samples);
        hidden_labels.push(labels);
    }
    eval.shuffle(rng);
    labeled.shuffle(rng);
    Ok(Partition {
        data: FederatedData {
            shape,
            num_classes,
            labeled,
            eval,
            shards,
        },
        hidden_labels,
    })
}
