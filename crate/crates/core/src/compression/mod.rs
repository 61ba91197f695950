//! Random-k sparsification followed by unbiased stochastic quantization
//! with an adaptive 4/8-bit width.

mod wire;

pub use wire::{decode_wire, encode_wire, encoded_len, HEADER_LEN, MAGIC, VERSION};

use rand::Rng;
use thiserror::Error;

use crate::domain::ModelVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("kept count {k} out of [1, {dim}]")]
    KeptCount { k: usize, dim: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unsupported bit width {0}")]
    BitWidth(u8),
    #[error("truncated stream: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("non-zero padding bits")]
    Padding,
    #[error("index {index} invalid (dimension {dim}, previous {prev:?})")]
    Index {
        index: u32,
        dim: u32,
        prev: Option<u32>,
    },
    #[error("level code {code} exceeds {max}")]
    Code { code: u32, max: u32 },
    #[error("kept count {k} exceeds dimension {dim}")]
    KeptExceedsDim { k: u32, dim: u32 },
    #[error("invalid norm {0}")]
    Norm(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitWidth {
    Four,
    Eight,
}

impl BitWidth {
    pub fn bits(self) -> u8 {
        match self {
            BitWidth::Four => 4,
            BitWidth::Eight => 8,
        }
    }

    /// Number of quantization intervals, `2^(b-1) - 1`; one bit is the sign.
    pub fn levels(self) -> u32 {
        (1u32 << (self.bits() - 1)) - 1
    }

    pub fn from_bits(bits: u8) -> Result<Self, CodecError> {
        match bits {
            4 => Ok(BitWidth::Four),
            8 => Ok(BitWidth::Eight),
            other => Err(CodecError::BitWidth(other)),
        }
    }
}

/// Sparse update; values already carry the `d / k` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn to_dense(&self) -> ModelVector {
        let mut out = ModelVector::zeros(self.dim);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }
}

/// Keeps `k` coordinates chosen uniformly without replacement and scales
/// them by `d / k`.
pub fn sparsify<R: Rng + ?Sized>(
    delta: &ModelVector,
    k: usize,
    rng: &mut R,
) -> Result<SparseVector, CodecError> {
    let dim = delta.len();
    if k == 0 || k > dim {
        return Err(CodecError::KeptCount { k, dim });
    }
    let scale = dim as f64 / k as f64;
    let mut indices: Vec<u32> = rand::seq::index::sample(rng, dim, k)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    indices.sort_unstable();
    let values = indices.iter().map(|&i| delta[i as usize] * scale).collect();
    Ok(SparseVector {
        dim,
        indices,
        values,
    })
}

/// 8 bits when any coordinate moved by more than `threshold` since the
/// previous round, 4 bits otherwise.
pub fn select_bitwidth(current: &ModelVector, previous: &ModelVector, threshold: f64) -> BitWidth {
    if current.max_abs_diff(previous) > threshold {
        BitWidth::Eight
    } else {
        BitWidth::Four
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantEntry {
    pub index: u32,
    pub negative: bool,
    /// Level in `0..=levels`.
    pub code: u32,
}

/// A quantized sparse update as it travels on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedUpdate {
    pub client_id: u32,
    pub round: u32,
    pub bit_width: BitWidth,
    pub dim: u32,
    /// l2 norm of the sparse update.
    pub norm: f32,
    pub entries: Vec<QuantEntry>,
}

impl CompressedUpdate {
    pub fn kept(&self) -> usize {
        self.entries.len()
    }

    pub fn wire_len(&self) -> usize {
        encoded_len(self.kept(), self.bit_width)
    }
}

/// Stochastic rounding of every magnitude `|v| / S` onto the uniform grid
/// `{0, 1/s, ..., 1}`, rounding up with probability equal to the
/// fractional position. An all-zero input encodes to zero entries.
pub fn quantize<R: Rng + ?Sized>(
    sparse: &SparseVector,
    bit_width: BitWidth,
    client_id: u32,
    round: u32,
    rng: &mut R,
) -> CompressedUpdate {
    let levels = bit_width.levels();
    let norm64 = sparse.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm = norm64 as f32;
    let s = f64::from(norm);
    let mut entries = Vec::new();
    if s > 0.0 && s.is_finite() {
        entries.reserve(sparse.values.len());
        let lf = f64::from(levels);
        for (&index, &v) in sparse.indices.iter().zip(&sparse.values) {
            let scaled = (v.abs() * lf / s).min(lf);
            let lower = scaled.floor();
            let up = rng.random::<f64>() < scaled - lower;
            entries.push(QuantEntry {
                index,
                negative: v < 0.0,
                code: (lower as u32 + u32::from(up)).min(levels),
            });
        }
    }
    CompressedUpdate {
        client_id,
        round,
        bit_width,
        dim: sparse.dim as u32,
        norm: if entries.is_empty() { 0.0 } else { norm },
        entries,
    }
}

/// Dense reconstruction `S * sign * code / levels`.
pub fn decode(cu: &CompressedUpdate) -> Result<ModelVector, CodecError> {
    let levels = cu.bit_width.levels();
    let mut out = ModelVector::zeros(cu.dim as usize);
    let s = f64::from(cu.norm);
    let mut prev: Option<u32> = None;
    for e in &cu.entries {
        if e.index >= cu.dim || prev.is_some_and(|p| e.index <= p) {
            return Err(CodecError::Index {
                index: e.index,
                dim: cu.dim,
                prev,
            });
        }
        if e.code > levels {
            return Err(CodecError::Code {
                code: e.code,
                max: levels,
            });
        }
        prev = Some(e.index);
        let mag = s * f64::from(e.code) / f64::from(levels);
        out[e.index as usize] = if e.negative { -mag } else { mag };
    }
    Ok(out)
}

/// Number of coordinates kept for a keep ratio, at least one.
pub fn kept_count(dim: usize, keep_ratio: f64) -> usize {
    ((dim as f64 * keep_ratio).round() as usize).clamp(1, dim.max(1))
}

/// Bytes of an uncompressed 32-bit dense upload.
pub fn dense_len(dim: usize) -> usize {
    4 * dim
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SeededRng, StreamId};
    use proptest::prelude::*;

    fn rng(seed: u64) -> SeededRng {
        SeededRng::new(seed, StreamId::Codec(0))
    }

    #[test]
    fn full_keep_is_identity() {
        let v = ModelVector::new(vec![1.0, -2.0, 3.5]);
        let s = sparsify(&v, 3, &mut rng(0)).unwrap();
        assert_eq!(s.to_dense(), v);
    }

    #[test]
    fn scale_is_dim_over_k() {
        let v = ModelVector::new(vec![1.0; 1000]);
        let s = sparsify(&v, 100, &mut rng(0)).unwrap();
        assert_eq!(s.indices.len(), 100);
        assert!(s.values.iter().all(|&x| x == 10.0));
        assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_input_stays_zero() {
        let v = ModelVector::zeros(50);
        for k in [1, 7, 50] {
            let s = sparsify(&v, k, &mut rng(k as u64)).unwrap();
            assert_eq!(s.to_dense(), v);
            let cu = quantize(&s, BitWidth::Eight, 0, 0, &mut rng(1));
            assert_eq!(cu.kept(), 0);
            assert_eq!(cu.norm, 0.0);
            assert_eq!(decode(&cu).unwrap(), v);
        }
    }

    #[test]
    fn kept_count_range_checked() {
        let v = ModelVector::zeros(4);
        assert!(sparsify(&v, 0, &mut rng(0)).is_err());
        assert!(sparsify(&v, 5, &mut rng(0)).is_err());
    }

    #[test]
    fn bitwidth_rule() {
        let prev = ModelVector::zeros(3);
        let with = |d: f64| ModelVector::new(vec![0.0, d, 0.0]);
        assert_eq!(select_bitwidth(&with(0.02), &prev, 0.01), BitWidth::Eight);
        assert_eq!(select_bitwidth(&with(0.005), &prev, 0.01), BitWidth::Four);
        assert_eq!(select_bitwidth(&with(0.01), &prev, 0.01), BitWidth::Four);
        assert_eq!(select_bitwidth(&with(-0.02), &prev, 0.01), BitWidth::Eight);
    }

    #[test]
    fn level_counts() {
        assert_eq!(BitWidth::Four.levels(), 7);
        assert_eq!(BitWidth::Eight.levels(), 127);
    }

    #[test]
    fn grid_points_round_deterministically() {
        // |v| / S lands on k/7 exactly: (2, 3, 6) has norm 7.
        let sparse = SparseVector {
            dim: 4,
            indices: vec![0, 1, 3],
            values: vec![2.0, -3.0, 6.0],
        };
        for seed in 0..50 {
            let cu = quantize(&sparse, BitWidth::Four, 0, 0, &mut rng(seed));
            let codes: Vec<u32> = cu.entries.iter().map(|e| e.code).collect();
            assert_eq!(codes, vec![2, 3, 6]);
            assert_eq!(decode(&cu).unwrap().as_slice(), &[2.0, -3.0, 0.0, 6.0]);
        }
    }

    #[test]
    fn single_entry_is_exact() {
        let sparse = SparseVector {
            dim: 1,
            indices: vec![0],
            values: vec![5.0],
        };
        for bw in [BitWidth::Four, BitWidth::Eight] {
            let cu = quantize(&sparse, bw, 0, 0, &mut rng(0));
            assert_eq!(cu.norm, 5.0);
            assert_eq!(cu.entries[0].code, bw.levels());
            assert_eq!(decode(&cu).unwrap().as_slice(), &[5.0]);
        }
    }

    #[test]
    fn malformed_indices_rejected() {
        let cu = CompressedUpdate {
            client_id: 0,
            round: 0,
            bit_width: BitWidth::Four,
            dim: 4,
            norm: 1.0,
            entries: vec![
                QuantEntry {
                    index: 2,
                    negative: false,
                    code: 1,
                },
                QuantEntry {
                    index: 2,
                    negative: false,
                    code: 1,
                },
            ],
        };
        assert!(matches!(decode(&cu), Err(CodecError::Index { .. })));
        let out_of_range = CompressedUpdate {
            entries: vec![QuantEntry {
                index: 4,
                negative: false,
                code: 1,
            }],
            ..cu
        };
        assert!(matches!(
            decode(&out_of_range),
            Err(CodecError::Index { .. })
        ));
    }

    #[test]
    fn monte_carlo_mean_is_unbiased() {
        let v = ModelVector::new((0..32).map(|i| ((i as f64) * 0.7).sin()).collect());
        let n = 20_000;
        let mut sum = vec![0.0; 32];
        let mut sum_sq = vec![0.0; 32];
        let mut r = rng(99);
        for _ in 0..n {
            let s = sparsify(&v, 8, &mut r).unwrap();
            let d = decode(&quantize(&s, BitWidth::Four, 0, 0, &mut r)).unwrap();
            for j in 0..32 {
                sum[j] += d[j];
                sum_sq[j] += d[j] * d[j];
            }
        }
        for j in 0..32 {
            let mean = sum[j] / n as f64;
            let sd = (sum_sq[j] / n as f64 - mean * mean).sqrt();
            assert!(
                (mean - v[j]).abs() <= 5.0 * sd / (n as f64).sqrt() + 1e-12,
                "coordinate {j}"
            );
        }
    }

    proptest! {
        #[test]
        fn sign_never_flips(values in proptest::collection::vec(-100.0f64..100.0, 1..64), seed in any::<u64>()) {
            let v = ModelVector::new(values);
            let k = v.len().div_ceil(2);
            let mut r = rng(seed);
            let s = sparsify(&v, k, &mut r).unwrap();
            let d = decode(&quantize(&s, BitWidth::Eight, 0, 0, &mut r)).unwrap();
            for (i, &x) in s.indices.iter().zip(&s.values) {
                let y = d[*i as usize];
                prop_assert!(y == 0.0 || y.signum() == x.signum());
            }
        }

        #[test]
        fn sparsifier_marginals_are_uniform(seed in any::<u64>()) {
            let v = ModelVector::new(vec![1.0; 16]);
            let mut counts = [0u32; 16];
            let mut r = rng(seed);
            for _ in 0..4000 {
                for i in sparsify(&v, 4, &mut r).unwrap().indices {
                    counts[i as usize] += 1;
                }
            }
            // Each coordinate is kept with probability 1/4: mean 1000, sd ~27.
            prop_assert!(counts.iter().all(|&c| (c as f64 - 1000.0).abs() < 6.0 * 27.4));
        }
    }
}
