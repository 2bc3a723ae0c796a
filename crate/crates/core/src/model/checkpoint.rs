//! Checkpoint file: one line of JSON manifest, then every parameter as raw
//! little-endian `f64`s in manifest order.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroundedModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::text::{hex_digest, Vocabulary};

pub const CHECKPOINT_FORMAT: &str = "groundchat-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Free-form facts about how a checkpoint was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dev_perplexity: Option<f64>,
    /// Set on reverse (response → source) models.
    #[serde(default)]
    pub reverse: bool,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab_hash: String,
    meta: CheckpointMeta,
    params: Vec<ParamEntry>,
}

impl GroundedModel {
    pub fn write_checkpoint(&self, mut w: impl Write, vocab: &Vocabulary, meta: &CheckpointMeta) -> Result<()> {
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab_hash: vocab.hash(),
            meta: meta.clone(),
            params: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(n, p)| ParamEntry {
                    name: n.clone(),
                    shape: p.shape().to_vec(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &manifest)?;
        w.write_all(b"\n")?;
        for p in &self.params {
            for x in p.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read a checkpoint and check it was trained with `vocab`.
    pub fn read_checkpoint(mut r: impl BufRead, vocab: &Vocabulary) -> Result<(Self, CheckpointMeta)> {
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        let manifest: Manifest = serde_json::from_slice(&line)
            .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
        if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let expected = vocab.hash();
        if manifest.vocab_hash != expected {
            return Err(Error::VocabMismatch(format!(
                "checkpoint vocabulary {} differs from loaded vocabulary {expected}",
                manifest.vocab_hash
            )));
        }
        if manifest.config.vocab_size != vocab.len() {
            return Err(Error::VocabMismatch(format!(
                "model vocabulary size {} vs {}",
                manifest.config.vocab_size,
                vocab.len()
            )));
        }
        let mut params = Vec::with_capacity(manifest.params.len());
        let mut buf = [0u8; 8];
        for entry in &manifest.params {
            let n: usize = entry.shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
                data.push(f64::from_le_bytes(buf));
            }
            params.push(Tensor::new(entry.shape.clone(), data)?);
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let model = GroundedModel::from_params(manifest.config, params)?;
        for (entry, name) in manifest.params.iter().zip(model.names()) {
            if &entry.name != name {
                return Err(Error::Checkpoint(format!(
                    "parameter {} where {name} was expected",
                    entry.name
                )));
            }
        }
        Ok((model, manifest.meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocabulary, meta: &CheckpointMeta) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(f), vocab, meta)
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<(Self, CheckpointMeta)> {
        let f = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(f), vocab)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self, vocab: &Vocabulary, meta: &CheckpointMeta) -> String {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf, vocab, meta).expect("in-memory write");
        hex_digest(&buf)
    }
}
