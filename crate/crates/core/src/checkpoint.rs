//! Versioned model container.
//!
//! Layout: the 8-byte magic `UNERCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` byte length followed by JSON metadata
//! (vocabulary, tag spaces, shapes, training echo), then every tensor as
//! row-major little-endian `f64` in metadata order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderDims, EncoderParams, HeadParams, Tensor, Vocab};
use crate::error::{Error, Result};
use crate::model::{Head, Model, ModelKind};
use crate::tagspace::{EntityType, TagSpace};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"UNERCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    /// Epoch the parameters come from (0 = initial).
    pub epoch: usize,
    pub dev_f1: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    name: String,
    types: Vec<EntityType>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: ModelKind,
    dims: EncoderDims,
    vocab: Vocab,
    heads: Vec<HeadMeta>,
    tensors: Vec<TensorMeta>,
    config: TrainConfig,
    epoch: usize,
    dev_f1: Option<f64>,
}

fn named_tensors(model: &Model) -> Vec<(String, &Tensor)> {
    let mut out: Vec<(String, &Tensor)> = model
        .encoder
        .tensors()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t))
        .collect();
    for (i, h) in model.heads.iter().enumerate() {
        for (n, t) in h.params.tensors() {
            out.push((format!("head{i}.{n}"), t));
        }
    }
    out
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let tensors = named_tensors(&self.model);
        let meta = Metadata {
            kind: self.model.kind,
            dims: self.model.encoder.dims,
            vocab: self.model.vocab.clone(),
            heads: self
                .model
                .heads
                .iter()
                .map(|h| HeadMeta {
                    name: h.name.clone(),
                    types: h.space.types().to_vec(),
                })
                .collect(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    rows: t.rows,
                    cols: t.cols,
                })
                .collect(),
            config: self.config.clone(),
            epoch: self.epoch,
            dev_f1: self.dev_f1,
        };
        let json = serde_json::to_vec(&meta)?;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in tensors {
            for x in &t.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut json).map_err(|_| bad("truncated metadata".into()))?;
        let meta: Metadata = serde_json::from_slice(&json)?;
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;

        let vocab = meta.vocab.reindex();
        let dims = meta.dims;
        let mut encoder = EncoderParams::zeros(dims, vocab.num_words(), vocab.num_chars());
        let mut heads: Vec<Head> = meta
            .heads
            .into_iter()
            .map(|h| {
                let space = TagSpace::new(h.types);
                let params = HeadParams::zeros(dims.output_dim(), space.num_labels());
                Head {
                    name: h.name,
                    space,
                    params,
                }
            })
            .collect();
        let expected = {
            let probe = Model {
                kind: meta.kind,
                vocab: vocab.clone(),
                encoder: encoder.clone(),
                heads: heads.clone(),
            };
            named_tensors(&probe)
                .into_iter()
                .map(|(n, t)| (n, t.rows, t.cols))
                .collect::<Vec<_>>()
        };
        if expected.len() != meta.tensors.len() {
            return Err(bad(format!("expected {} tensors, found {}", expected.len(), meta.tensors.len())));
        }
        for ((name, rows, cols), m) in expected.iter().zip(&meta.tensors) {
            if name != &m.name || *rows != m.rows || *cols != m.cols {
                return Err(bad(format!(
                    "tensor {} is {}x{}, metadata says {} {}x{}",
                    name, rows, cols, m.name, m.rows, m.cols
                )));
            }
        }
        let total: usize = expected.iter().map(|(_, r, c)| r * c).sum();
        if rest.len() != total * 8 {
            return Err(bad(format!("expected {} tensor bytes, found {}", total * 8, rest.len())));
        }
        let mut values = rest
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
        let mut fill = |t: &mut Tensor| {
            for x in t.data.iter_mut() {
                *x = values.next().expect("length checked");
            }
        };
        for t in encoder.tensors_mut() {
            fill(t);
        }
        for h in &mut heads {
            for t in h.params.tensors_mut() {
                fill(t);
            }
        }
        Ok(Checkpoint {
            model: Model {
                kind: meta.kind,
                vocab,
                encoder,
                heads,
            },
            config: meta.config,
            epoch: meta.epoch,
            dev_f1: meta.dev_f1,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::read_from(fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let space = |ts: &[&str]| TagSpace::new(ts.iter().map(|t| EntityType::new(*t).unwrap()));
        let model = Model::multi_head(
            Vocab::build(["Alpha", "beta"]),
            vec![("a".into(), space(&["PER"])), ("b".into(), space(&["LOC", "ORG"]))],
            EncoderDims::default(),
            &mut rng,
        );
        Checkpoint {
            model,
            config: TrainConfig::default(),
            epoch: 4,
            dev_f1: Some(0.5),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::read_from(wrong.as_slice()).is_err());
        let mut version = bytes.clone();
        version[8] = 9;
        assert!(Checkpoint::read_from(version.as_slice()).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut c = sample();
        c.model.heads[0].params.weight = Tensor::zeros(2, 4);
        let bytes = c.to_bytes().unwrap();
        let err = Checkpoint::read_from(bytes.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
}
