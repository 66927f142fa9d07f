//! Single-file tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"EPCKPT\0\0"  u32 format_version  u64 manifest_len  manifest JSON
//! u64 payload_len  payload (f32 LE, row-major, tensors back to back)
//! ```
//!
//! The manifest lists every tensor with its byte offset into the payload.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autograd::ParamStore;
use crate::diseasehead::{DiseaseModel, DiseaseModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::viewnet::{ViewNet, ViewNetConfig};

pub const MAGIC: &[u8; 8] = b"EPCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub trainable: bool,
}

/// Everything in the manifest besides the tensor directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `viewnet` or `disease`.
    pub module: String,
    pub preset: String,
    /// Model configuration needed to rebuild the network.
    pub model_config: Value,
    pub train_config: Value,
    pub metrics: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// Writes the archive next to `path` and renames it into place.
pub fn save_checkpoint(params: &ParamStore<f32>, meta: &CheckpointMeta, path: &Path) -> Result<PathBuf> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut payload = Vec::with_capacity(params.num_scalars() * 4);
    for e in params.entries() {
        tensors.push(TensorEntry {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            dtype: "f32".into(),
            offset: payload.len() as u64,
            trainable: e.trainable,
        });
        for v in e.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest { format_version: FORMAT_VERSION, meta: meta.clone(), tensors })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("ckpt"),
        std::process::id()
    ));
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(manifest.len() as u64).to_le_bytes())?;
        f.write_all(&manifest)?;
        f.write_all(&(payload.len() as u64).to_le_bytes())?;
        f.write_all(&payload)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(path.to_path_buf())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "{what}: payload length {n} exceeds the {} bytes left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses an archive held in memory.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore<f32>, CheckpointMeta)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "header")? != MAGIC {
        return Err(Error::Checkpoint("not an echopipe checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "header")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let mlen = r.u64("manifest length")? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(mlen, "manifest")?)
        .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(Error::Checkpoint("manifest and header disagree on format_version".into()));
    }
    let plen = r.u64("payload length")? as usize;
    let payload = r.take(plen, "payload")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("payload length {plen} leaves {} trailing bytes", bytes.len() - r.pos)));
    }
    let mut store = ParamStore::new();
    for t in &manifest.tensors {
        if t.dtype != "f32" {
            return Err(Error::Checkpoint(format!("tensor {}: unsupported dtype {}", t.name, t.dtype)));
        }
        let n: usize = t.shape.iter().product();
        let start = t.offset as usize;
        let end = start.checked_add(n * 4).filter(|&e| e <= payload.len()).ok_or_else(|| {
            Error::Checkpoint(format!("tensor {} is absent from the payload ({} bytes at offset {start})", t.name, n * 4))
        })?;
        let data = payload[start..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if store.id(&t.name).is_some() {
            return Err(Error::Checkpoint(format!("tensor {} listed twice", t.name)));
        }
        store.add(t.name.clone(), Tensor::from_vec(&t.shape, data)?, t.trainable);
    }
    Ok((store, manifest.meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

fn expect_module(meta: &CheckpointMeta, module: &str) -> Result<()> {
    if meta.module != module {
        return Err(Error::Checkpoint(format!("expected a {module} checkpoint, found {}", meta.module)));
    }
    Ok(())
}

pub fn load_view_model(path: &Path) -> Result<(ViewNet, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(path)?;
    expect_module(&meta, "viewnet")?;
    let cfg: ViewNetConfig =
        serde_json::from_value(meta.model_config.clone()).map_err(|e| Error::Checkpoint(format!("model_config: {e}")))?;
    Ok((ViewNet::from_params(cfg, params)?, meta))
}

pub fn load_disease_model(path: &Path) -> Result<(DiseaseModel, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(path)?;
    expect_module(&meta, "disease")?;
    let cfg: DiseaseModelConfig =
        serde_json::from_value(meta.model_config.clone()).map_err(|e| Error::Checkpoint(format!("model_config: {e}")))?;
    Ok((DiseaseModel::from_params(cfg, params)?, meta))
}

pub fn save_view_model(net: &ViewNet, preset: &str, train_config: Value, metrics: Value, path: &Path) -> Result<PathBuf> {
    let meta = CheckpointMeta {
        module: "viewnet".into(),
        preset: preset.into(),
        model_config: serde_json::to_value(&net.config)?,
        train_config,
        metrics,
    };
    save_checkpoint(&net.params, &meta, path)
}

pub fn save_disease_model(
    model: &DiseaseModel,
    preset: &str,
    train_config: Value,
    metrics: Value,
    path: &Path,
) -> Result<PathBuf> {
    let meta = CheckpointMeta {
        module: "disease".into(),
        preset: preset.into(),
        model_config: serde_json::to_value(&model.config)?,
        train_config,
        metrics,
    };
    save_checkpoint(&model.params, &meta, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, f32::MIN_POSITIVE, 7.0]).unwrap(), true);
        s.add("b.running_var", Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap(), false);
        s
    }

    #[test]
    fn round_trip_and_truncation() {
        let dir = std::env::temp_dir().join(format!("ep-ckpt-{}", std::process::id()));
        let path = dir.join("m.ckpt");
        save_checkpoint(&store(), &CheckpointMeta::default(), &path).unwrap();
        let (back, _) = load_checkpoint(&path).unwrap();
        assert_eq!(back, store());
        let bytes = std::fs::read(&path).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("payload length"), "{err}");
        std::fs::remove_dir_all(dir).ok();
    }
}
