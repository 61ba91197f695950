use rand::Rng;

use crate::domain::ModelVector;

/// Fully connected classifier over a flattened grid. `hidden == 0` gives
/// softmax regression; otherwise one ReLU hidden layer.
///
/// Parameter layout: `[W1 (hidden x inputs), b1, W2 (classes x hidden), b2]`,
/// or `[W (classes x inputs), b]` without a hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// A batch element: input features and a target distribution.
pub type Example<'a> = (&'a [f32], &'a [f64]);

impl Architecture {
    pub fn logistic(inputs: usize, classes: usize) -> Self {
        Self {
            inputs,
            hidden: 0,
            classes,
        }
    }

    pub fn mlp(inputs: usize, hidden: usize, classes: usize) -> Self {
        Self {
            inputs,
            hidden,
            classes,
        }
    }

    pub fn param_count(&self) -> usize {
        if self.hidden == 0 {
            self.classes * (self.inputs + 1)
        } else {
            self.hidden * (self.inputs + 1) + self.classes * (self.hidden + 1)
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelVector {
        let mut w = vec![0.0; self.param_count()];
        let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            slice.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        };
        if self.hidden == 0 {
            fill(
                &mut w[..self.classes * self.inputs],
                self.inputs,
                self.classes,
            );
        } else {
            let w1 = self.hidden * self.inputs;
            fill(&mut w[..w1], self.inputs, self.hidden);
            let w2_start = w1 + self.hidden;
            fill(
                &mut w[w2_start..w2_start + self.classes * self.hidden],
                self.hidden,
                self.classes,
            );
        }
        ModelVector::new(w)
    }

    fn dense(weights: &[f64], bias: &[f64], x: impl Fn(usize) -> f64, n_in: usize) -> Vec<f64> {
        bias.iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &weights[o * n_in..(o + 1) * n_in];
                b + row.iter().enumerate().map(|(i, w)| w * x(i)).sum::<f64>()
            })
            .collect()
    }

    /// Returns hidden activations (empty for softmax regression) and logits.
    fn forward_raw(&self, w: &[f64], x: &[f32]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.inputs);
        debug_assert_eq!(w.len(), self.param_count());
        let input = |i: usize| f64::from(x[i]);
        if self.hidden == 0 {
            let (wt, b) = w.split_at(self.classes * self.inputs);
            return (Vec::new(), Self::dense(wt, b, input, self.inputs));
        }
        let w1_end = self.hidden * self.inputs;
        let b1_end = w1_end + self.hidden;
        let w2_end = b1_end + self.classes * self.hidden;
        let mut h = Self::dense(&w[..w1_end], &w[w1_end..b1_end], input, self.inputs);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let logits = Self::dense(&w[b1_end..w2_end], &w[w2_end..], |i| h[i], self.hidden);
        (h, logits)
    }

    /// Class probabilities.
    pub fn predict(&self, w: &ModelVector, x: &[f32]) -> Vec<f64> {
        softmax(&self.forward_raw(w.as_slice(), x).1)
    }

    /// Mean cross-entropy of the batch against its target distributions.
    pub fn loss(&self, w: &ModelVector, batch: &[Example<'_>]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|(x, y)| cross_entropy(&self.forward_raw(w.as_slice(), x).1, y))
            .sum();
        total / batch.len() as f64
    }

    /// Mean cross-entropy and its gradient.
    pub fn loss_and_grad(&self, w: &ModelVector, batch: &[Example<'_>]) -> (f64, Vec<f64>) {
        let w = w.as_slice();
        let mut grad = vec![0.0; w.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (x, y) in batch {
            let (h, logits) = self.forward_raw(w, x);
            loss += cross_entropy(&logits, y);
            let p = softmax(&logits);
            let mass: f64 = y.iter().sum();
            let dz: Vec<f64> = p
                .iter()
                .zip(y.iter())
                .map(|(p, y)| (p * mass - y) * scale)
                .collect();
            if self.hidden == 0 {
                let (gw, gb) = grad.split_at_mut(self.classes * self.inputs);
                for (c, d) in dz.iter().enumerate() {
                    gb[c] += d;
                    let row = &mut gw[c * self.inputs..(c + 1) * self.inputs];
                    for (g, xi) in row.iter_mut().zip(x.iter()) {
                        *g += d * f64::from(*xi);
                    }
                }
                continue;
            }
            let w1_end = self.hidden * self.inputs;
            let b1_end = w1_end + self.hidden;
            let w2_end = b1_end + self.classes * self.hidden;
            let mut dh = vec![0.0; self.hidden];
            for (c, d) in dz.iter().enumerate() {
                grad[w2_end + c] += d;
                let row_start = b1_end + c * self.hidden;
                for j in 0..self.hidden {
                    grad[row_start + j] += d * h[j];
                    dh[j] += d * w[row_start + j];
                }
            }
            for j in 0..self.hidden {
                if h[j] <= 0.0 {
                    continue;
                }
                grad[w1_end + j] += dh[j];
                let row = &mut grad[j * self.inputs..(j + 1) * self.inputs];
                for (g, xi) in row.iter_mut().zip(x.iter()) {
                    *g += dh[j] * f64::from(*xi);
                }
            }
        }
        (loss * scale, grad)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    target
        .iter()
        .zip(logits)
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, z)| -y * (z - lse))
        .sum()
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

pub fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[class] = 1.0;
    v
}

/// SGD with heavy-ball momentum: `v = m v + g; w -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, dim: usize) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, w: &mut ModelVector, grad: &[f64]) {
        for ((wi, vi), g) in w
            .as_mut_slice()
            .iter_mut()
            .zip(&mut self.velocity)
            .zip(grad)
        {
            *vi = self.momentum * *vi + g;
            *wi -= self.learning_rate * *vi;
        }
    }
}
