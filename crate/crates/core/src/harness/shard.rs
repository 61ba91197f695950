//! Binary shard files.
//!
//! ```text
//! magic "SFSD" | version u8 | count u32 | height u8 | width u8 |
//! channels u8 | classes u8 | count x (features f32 LE..., label u8)
//! ```
//!
//! Label byte 255 marks an unlabeled sample.

use std::path::Path;

use thiserror::Error;

use crate::learner::{FederatedData, GridShape, Sample};

pub const SHARD_MAGIC: &[u8; 4] = b"SFSD";
pub const SHARD_VERSION: u8 = 1;
const UNLABELED: u8 = 255;
const HEADER: usize = 4 + 1 + 4 + 4;

#[derive(Debug, Error)]
pub enum ShardError {
    #[error("bad shard magic")]
    Magic,
    #[error("unsupported shard version {0}")]
    Version(u8),
    #[error("shard truncated or padded: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("grid dimension {0} does not fit the header")]
    Shape(usize),
    #[error("sample has {got} features, expected {expected}")]
    Features { got: usize, expected: usize },
    #[error("label {0} out of range")]
    Label(u8),
    #[error("shards disagree on grid shape or class count")]
    Mismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serialises samples that share one grid shape.
pub fn encode_shard(
    samples: &[Sample],
    shape: GridShape,
    classes: usize,
) -> Result<Vec<u8>, ShardError> {
    let byte = |v: usize| u8::try_from(v).map_err(|_| ShardError::Shape(v));
    let mut out = Vec::with_capacity(HEADER + samples.len() * (4 * shape.len() + 1));
    out.extend_from_slice(SHARD_MAGIC);
    out.push(SHARD_VERSION);
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    out.push(byte(shape.height)?);
    out.push(byte(shape.width)?);
    out.push(byte(shape.channels)?);
    out.push(byte(classes)?);
    for s in samples {
        if s.features.len() != shape.len() {
            return Err(ShardError::Features {
                got: s.features.len(),
                expected: shape.len(),
            });
        }
        for f in &s.features {
            out.extend_from_slice(&f.to_le_bytes());
        }
        match s.label {
            Some(l) if usize::from(l) >= classes => return Err(ShardError::Label(l)),
            Some(l) => out.push(l),
            None => out.push(UNLABELED),
        }
    }
    Ok(out)
}

pub fn decode_shard(bytes: &[u8]) -> Result<(Vec<Sample>, GridShape, usize), ShardError> {
    if bytes.len() < HEADER {
        return Err(ShardError::Length {
            expected: HEADER,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != SHARD_MAGIC {
        return Err(ShardError::Magic);
    }
    if bytes[4] != SHARD_VERSION {
        return Err(ShardError::Version(bytes[4]));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let shape = GridShape::new(bytes[9].into(), bytes[10].into(), bytes[11].into());
    let classes = usize::from(bytes[12]);
    let record = 4 * shape.len() + 1;
    let expected = HEADER + count * record;
    if bytes.len() != expected {
        return Err(ShardError::Length {
            expected,
            found: bytes.len(),
        });
    }
    let samples = bytes[HEADER..]
        .chunks_exact(record)
        .map(|rec| {
            let features = rec[..record - 1]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let label = match rec[record - 1] {
                UNLABELED => None,
                l if usize::from(l) < classes => Some(l),
                l => return Err(ShardError::Label(l)),
            };
            Ok(Sample { features, label })
        })
        .collect::<Result<_, _>>()?;
    Ok((samples, shape, classes))
}

pub fn client_file_name(i: usize) -> String {
    format!("client_{i:04}.bin")
}

pub const LABELED_FILE: &str = "labeled.bin";
pub const EVAL_FILE: &str = "eval.bin";

/// `(file name, bytes)` of every shard of a federation.
pub fn federation_files(data: &FederatedData) -> Result<Vec<(String, Vec<u8>)>, ShardError> {
    let mut files = vec![
        (
            LABELED_FILE.to_string(),
            encode_shard(&data.labeled, data.shape, data.num_classes)?,
        ),
        (
            EVAL_FILE.to_string(),
            encode_shard(&data.eval, data.shape, data.num_classes)?,
        ),
    ];
    for (i, shard) in data.shards.iter().enumerate() {
        files.push((
            client_file_name(i),
            encode_shard(shard, data.shape, data.num_classes)?,
        ));
    }
    Ok(files)
}

/// Loads a directory written by [`federation_files`].
pub fn load_federation(dir: &Path, clients: usize) -> Result<FederatedData, ShardError> {
    let read = |name: &str| -> Result<(Vec<Sample>, GridShape, usize), ShardError> {
        decode_shard(&std::fs::read(dir.join(name))?)
    };
    let (labeled, shape, num_classes) = read(LABELED_FILE)?;
    let (eval, s2, c2) = read(EVAL_FILE)?;
    if (s2, c2) != (shape, num_classes) {
        return Err(ShardError::Mismatch);
    }
    let mut shards = Vec::with_capacity(clients);
    for i in 0..clients {
        let (shard, s, c) = read(&client_file_name(i))?;
        if (s, c) != (shape, num_classes) {
            return Err(ShardError::Mismatch);
        }
        shards.push(shard);
    }
    Ok(FederatedData {
        shape,
        num_classes,
        labeled,
        eval,
        shards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(
            rows in proptest::collection::vec(
                (proptest::collection::vec(-1e6f32..1e6, 6), proptest::option::of(0u8..3)),
                0..20,
            )
        ) {
            let shape = GridShape::new(2, 3, 1);
            let samples: Vec<Sample> = rows
                .into_iter()
                .map(|(features, label)| Sample { features, label })
                .collect();
            let bytes = encode_shard(&samples, shape, 3).unwrap();
            prop_assert_eq!(bytes.len(), 13 + samples.len() * 25);
            let (back, s, c) = decode_shard(&bytes).unwrap();
            prop_assert_eq!(back, samples);
            prop_assert_eq!(s, shape);
            prop_assert_eq!(c, 3);
        }
    }

    #[test]
    fn corrupt_rejected() {
        let shape = GridShape::new(1, 1, 1);
        let s = [Sample {
            features: vec![1.0],
            label: Some(0),
        }];
        let good = encode_shard(&s, shape, 2).unwrap();
        assert!(matches!(
            decode_shard(&good[..good.len() - 1]),
            Err(ShardError::Length { .. })
        ));
        let mut bad = good.clone();
        bad[0] = 0;
        assert!(matches!(decode_shard(&bad), Err(ShardError::Magic)));
        let mut bad = good;
        *bad.last_mut().unwrap() = 7;
        assert!(matches!(decode_shard(&bad), Err(ShardError::Label(7))));
    }
}
