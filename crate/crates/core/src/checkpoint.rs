//! Single-file model checkpoints.
//!
//! Layout:
//!
//! ```text
//! IRVULN-CHECKPOINT 1\n
//! <manifest length in bytes, decimal>\n
//! <manifest: pretty-printed JSON>
//! <payload: little-endian IEEE-754 values, tensors in manifest order>
//! ```
//!
//! Each manifest tensor entry records its name, shape, dtype and byte offset
//! into the payload. Loading reproduces the saved weights bit for bit.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Params, TransformerModel};
use crate::preprocess::PreprocessConfig;
use crate::scalar::{DType, Scalar};
use crate::tokenizer::Vocabulary;

const MAGIC: &str = "IRVULN-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dtype: DType,
    pub config: ModelConfig,
    /// Preprocessing applied to programs before encoding.
    pub preprocess: PreprocessConfig,
    /// Regular vocabulary tokens in ID order (specials implied).
    pub vocab: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: usize,
}

/// A model bundled with the vocabulary and preprocessing it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: TransformerModel<T>,
    pub vocab: Vocabulary,
    pub preprocess: PreprocessConfig,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in self.model.params.named_tensors() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                dtype: T::DTYPE,
                offset: payload.len(),
            });
            // Logical (row-major) order regardless of memory layout.
            for &v in t.iter() {
                v.extend_le_bytes(&mut payload);
            }
        }
        let manifest = Manifest {
            dtype: T::DTYPE,
            config: self.model.config.clone(),
            preprocess: self.preprocess.clone(),
            vocab: self.vocab.regular_tokens().to_vec(),
            tensors,
            payload_bytes: payload.len(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "{}", text.len())?;
        w.write_all(text.as_bytes())?;
        w.write_all(&payload)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let manifest = read_manifest(&mut r)?;
        if manifest.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} weights, requested {}",
                manifest.dtype,
                T::DTYPE
            )));
        }
        let mut payload = vec![0u8; manifest.payload_bytes];
        r.read_exact(&mut payload)
            .map_err(|e| Error::Checkpoint(format!("truncated payload: {e}")))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after payload",
                rest.len()
            )));
        }

        let mut params = Params::<T>::zeros(&manifest.config);
        {
            let mut slots = params.named_tensors_mut();
            if slots.len() != manifest.tensors.len() {
                return Err(Error::Checkpoint(format!(
                    "{} tensors in manifest, model needs {}",
                    manifest.tensors.len(),
                    slots.len()
                )));
            }
            let width = T::DTYPE.size_of();
            for ((name, slot), entry) in slots.iter_mut().zip(&manifest.tensors) {
                if *name != entry.name || slot.shape() != entry.shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} {:?} does not match expected {name} {:?}",
                        entry.name,
                        entry.shape,
                        slot.shape()
                    )));
                }
                if entry.dtype != manifest.dtype {
                    return Err(Error::Checkpoint(format!("{name}: mixed dtypes")));
                }
                let n: usize = entry.shape.iter().product();
                let end = entry.offset + n * width;
                let bytes = payload.get(entry.offset..end).ok_or_else(|| {
                    Error::Checkpoint(format!("{name}: byte range beyond payload"))
                })?;
                let values: Vec<T> = bytes.chunks_exact(width).map(T::from_le_slice).collect();
                let arr = ndarray::ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                slot.assign(&arr);
            }
        }
        let model = TransformerModel::from_params(manifest.config, params)?;
        let vocab = Vocabulary::from_regular_tokens(manifest.vocab)?;
        Ok(Checkpoint {
            model,
            vocab,
            preprocess: manifest.preprocess,
        })
    }

    /// Writes to a sibling temp file, then renames into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let f = std::fs::File::create(&tmp)?;
            self.write_to(std::io::BufWriter::new(f))?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_manifest<R: BufRead>(r: &mut R) -> Result<Manifest> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end_matches('\n') != MAGIC {
        return Err(Error::Checkpoint("missing checkpoint header".into()));
    }
    line.clear();
    r.read_line(&mut line)?;
    let len: usize = line
        .trim_end_matches('\n')
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad manifest length {line:?}")))?;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)
        .map_err(|e| Error::Checkpoint(format!("truncated manifest: {e}")))?;
    serde_json::from_slice(&text).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))
}

/// Reads only the manifest, e.g. to choose the scalar type before loading.
pub fn peek_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let f = std::fs::File::open(path)?;
    read_manifest(&mut std::io::BufReader::new(f))
}
