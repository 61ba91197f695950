use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::LearnerError;

/// Row-major `height x width x channels` layout of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn at(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    /// Largest shift of the weak augmentation: 12.5% of each side.
    fn max_shift(&self) -> (i64, i64) {
        (
            (0.125 * self.height as f64).round() as i64,
            (0.125 * self.width as f64).round() as i64,
        )
    }
}

/// One realisation of the weak augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeakDraw {
    pub flip: bool,
    pub shift_rows: i64,
    pub shift_cols: i64,
}

impl WeakDraw {
    pub const IDENTITY: WeakDraw = WeakDraw {
        flip: false,
        shift_rows: 0,
        shift_cols: 0,
    };

    pub fn sample<R: Rng + ?Sized>(shape: GridShape, rng: &mut R) -> Self {
        let (sr, sc) = shape.max_shift();
        Self {
            flip: rng.random_bool(0.5),
            shift_rows: rng.random_range(-sr..=sr),
            shift_cols: rng.random_range(-sc..=sc),
        }
    }

    /// Mirrors columns if requested, then translates with edge padding.
    pub fn apply(&self, shape: GridShape, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; x.len()];
        let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
        for r in 0..shape.height {
            let src_r = clamp(r as i64 - self.shift_rows, shape.height);
            for c in 0..shape.width {
                let shifted = clamp(c as i64 - self.shift_cols, shape.width);
                let src_c = if self.flip {
                    shape.width - 1 - shifted
                } else {
                    shifted
                };
                for ch in 0..shape.channels {
                    out[shape.at(r, c, ch)] = x[shape.at(src_r, src_c, ch)];
                }
            }
        }
        out
    }
}

/// Random horizontal flip and shift.
pub fn weak_augment<R: Rng + ?Sized>(shape: GridShape, x: &[f32], rng: &mut R) -> Vec<f32> {
    WeakDraw::sample(shape, rng).apply(shape, x)
}

/// Stand-in for a RandAugment-style policy: weak augmentation, additive
/// Gaussian noise scaled to the sample's feature spread, then a zeroed
/// square patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongPolicy {
    /// Noise std as a multiple of the sample's feature std.
    pub noise_scale: f64,
    /// Area fraction of the cutout patch; 0 disables it.
    pub cutout_fraction: f64,
}

impl Default for StrongPolicy {
    fn default() -> Self {
        Self {
            noise_scale: 0.1,
            cutout_fraction: 0.25,
        }
    }
}

pub fn strong_augment<R: Rng + ?Sized>(
    shape: GridShape,
    x: &[f32],
    policy: &StrongPolicy,
    rng: &mut R,
) -> Vec<f32> {
    let mut out = weak_augment(shape, x, rng);
    if policy.noise_scale > 0.0 && !out.is_empty() {
        let n = out.len() as f64;
        let mean = out.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = out
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        let sigma = policy.noise_scale * var.sqrt();
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = (f64::from(*v) + sigma * z) as f32;
        }
    }
    if policy.cutout_fraction > 0.0 {
        let side = policy.cutout_fraction.sqrt();
        let h = ((shape.height as f64 * side).round() as usize).min(shape.height);
        let w = ((shape.width as f64 * side).round() as usize).min(shape.width);
        let top = rng.random_range(0..=shape.height - h);
        let left = rng.random_range(0..=shape.width - w);
        for r in top..top + h {
            for c in left..left + w {
                for ch in 0..shape.channels {
                    out[shape.at(r, c, ch)] = 0.0;
                }
            }
        }
    }
    out
}

/// Output of one CutMix draw.
#[derive(Debug, Clone, PartialEq)]
pub struct CutMixed {
    pub features: Vec<f32>,
    pub soft_label: Vec<f64>,
    /// Fraction of the grid taken from the first sample.
    pub area_fraction: f64,
}

/// Pastes a rectangle of `x1` covering about `lambda` of the grid into
/// `x2` and mixes the labels by the realised area.
pub fn cutmix_with_ratio<R: Rng + ?Sized>(
    shape: GridShape,
    first: (&[f32], &[f64]),
    second: (&[f32], &[f64]),
    lambda: f64,
    rng: &mut R,
) -> Result<CutMixed, LearnerError> {
    let (x1, y1) = first;
    let (x2, y2) = second;
    if x1.len() != shape.len() || x2.len() != shape.len() {
        return Err(LearnerError::ShapeMismatch {
            expected: shape.len(),
            got: if x1.len() != shape.len() {
                x1.len()
            } else {
                x2.len()
            },
        });
    }
    if y1.len() != y2.len() {
        return Err(LearnerError::ShapeMismatch {
            expected: y1.len(),
            got: y2.len(),
        });
    }
    let side = lambda.clamp(0.0, 1.0).sqrt();
    let h = ((shape.height as f64 * side).round() as usize).min(shape.height);
    let w = ((shape.width as f64 * side).round() as usize).min(shape.width);
    let top = rng.random_range(0..=shape.height - h);
    let left = rng.random_range(0..=shape.width - w);
    let mut features = x2.to_vec();
    for r in top..top + h {
        for c in left..left + w {
            for ch in 0..shape.channels {
                let i = shape.at(r, c, ch);
                features[i] = x1[i];
            }
        }
    }
    let area_fraction = (h * w) as f64 / (shape.height * shape.width) as f64;
    let soft_label = y1
        .iter()
        .zip(y2)
        .map(|(a, b)| area_fraction * a + (1.0 - area_fraction) * b)
        .collect();
    Ok(CutMixed {
        features,
        soft_label,
        area_fraction,
    })
}

/// CutMix with the ratio drawn from `Beta(mu, mu)`.
pub fn cutmix<R: Rng + ?Sized>(
    shape: GridShape,
    first: (&[f32], &[f64]),
    second: (&[f32], &[f64]),
    mu: f64,
    rng: &mut R,
) -> Result<CutMixed, LearnerError> {
    let beta = Beta::new(mu, mu).map_err(|_| LearnerError::BetaParameter(mu))?;
    let lambda = beta.sample(rng);
    cutmix_with_ratio(shape, first, second, lambda, rng)
}
