//! Checkpoint files: a little-endian `u64` header length, a UTF-8 JSON
//! header, then every tensor as raw little-endian `f32` in header order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use msn_core::data::Corpus;
use msn_core::model::{ModelConfig, TransformerWeights};
use msn_core::msn::NoiseConfig;
use msn_core::numerics::Matrix;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

/// Where the training data came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDescriptor {
    pub name: String,
    pub source: String,
    pub samples: usize,
}

impl CorpusDescriptor {
    pub fn of(corpus: &Corpus) -> Self {
        Self {
            name: corpus.name.clone(),
            source: corpus.source.clone(),
            samples: corpus.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub noise_config: NoiseConfig,
    pub corpus: CorpusDescriptor,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Noise used in training; `segment_len == 0` marks a plain SFT model.
    pub noise: NoiseConfig,
    pub corpus: CorpusDescriptor,
    pub weights: TransformerWeights,
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            model_config: self.weights.config.clone(),
            noise_config: self.noise.clone(),
            corpus: self.corpus.clone(),
            tensors: self
                .weights
                .named_tensors()
                .into_iter()
                .map(|(name, m)| TensorInfo {
                    name,
                    shape: [m.rows(), m.cols()],
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.weights.num_params());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, m) in self.weights.named_tensors() {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 8, "truncated checkpoint: no header length");
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[8..];
        ensure!(
            body.len() >= header_len,
            "truncated checkpoint: header claims {header_len} bytes"
        );
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..header_len]).context("malformed checkpoint header")?;
        if header.format_version != FORMAT_VERSION {
            bail!(
                "unsupported checkpoint format version {} (expected {FORMAT_VERSION})",
                header.format_version
            );
        }
        let mut data = &body[header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in &header.tensors {
            let [rows, cols] = info.shape;
            let n = rows * cols * 4;
            ensure!(data.len() >= n, "truncated checkpoint in tensor `{}`", info.name);
            let values = data[..n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            data = &data[n..];
            tensors.push((info.name.clone(), Matrix::from_vec(rows, cols, values)?));
        }
        ensure!(data.is_empty(), "{} trailing bytes after the last tensor", data.len());
        let weights = TransformerWeights::from_named(&header.model_config, tensors)?;
        Ok(Self {
            noise: header.noise_config,
            corpus: header.corpus,
            weights,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let tmp = temp_sibling(path);
        let write = || -> Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
            fs::rename(&tmp, path)?;
            Ok(())
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            e.context(format!("writing checkpoint {}", path.display()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}
