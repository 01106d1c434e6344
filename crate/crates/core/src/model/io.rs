//! Binary model format (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "PHOCNET1"
//! version   u32
//! meta_len  u32, then meta_len bytes of UTF-8 JSON
//! layers    u32
//! per layer:
//!   kind    u32      1 = conv, 2 = fully connected
//!   blobs   weights, biases, weight velocity, bias velocity; each as
//!           rank u32, rank × dim u32, then product(dims) f32 values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_network, ArchitectureSpec, Blob, ModelError, ModelMetadata, NetworkModel, ParamKind};

pub const MAGIC: &[u8; 8] = b"PHOCNET1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ArchitectureSpec,
    label_dim: usize,
    metadata: ModelMetadata,
}

fn kind_tag(kind: ParamKind) -> u32 {
    match kind {
        ParamKind::Conv => 1,
        ParamKind::Fc => 2,
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blob(out: &mut Vec<u8>, blob: &Blob<f32>) {
    put_u32(out, blob.shape.len() as u32);
    for &d in &blob.shape {
        put_u32(out, d as u32);
    }
    for v in &blob.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn model_to_bytes(model: &NetworkModel<f32>) -> Vec<u8> {
    let header = Header {
        spec: model.spec.clone(),
        label_dim: model.label_dim,
        metadata: model.metadata.clone(),
    };
    let meta = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(64 + meta.len() + 8 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    put_u32(&mut out, model.params.len() as u32);
    for layer in &model.params {
        put_u32(&mut out, kind_tag(layer.kind));
        for blob in [&layer.weights, &layer.biases, &layer.weight_velocity, &layer.bias_velocity] {
            put_blob(&mut out, blob);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() < n {
            return Err(ModelError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads a blob and checks it against the expected shape.
    fn blob_into(&mut self, expected: &mut Blob<f32>, what: &str) -> Result<(), ModelError> {
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        if shape != expected.shape {
            return Err(ModelError::ShapeMismatch(format!(
                "{what}: file has {shape:?}, architecture needs {:?}",
                expected.shape
            )));
        }
        let n = expected.data.len();
        let raw = self.take(n.checked_mul(4).ok_or(ModelError::Truncated)?)?;
        for (dst, chunk) in expected.data.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Ok(())
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<NetworkModel<f32>, ModelError> {
    let mut r = Reader { bytes };
    let magic = r.take(MAGIC.len()).map_err(|_| ModelError::BadMagic)?;
    if magic != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let meta_len = r.u32()? as usize;
    let meta = r.take(meta_len)?;
    let header: Header = serde_json::from_slice(meta).map_err(|e| ModelError::BadMetadata(e.to_string()))?;
    let mut model: NetworkModel<f32> = build_network(&header.spec, header.label_dim)
        .map_err(|e| ModelError::BadMetadata(e.to_string()))?;
    model.metadata = header.metadata;

    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "file has {count} parameter layers, architecture needs {}",
            model.params.len()
        )));
    }
    for (i, layer) in model.params.iter_mut().enumerate() {
        let tag = r.u32()?;
        if tag != kind_tag(layer.kind) {
            return Err(ModelError::ShapeMismatch(format!("layer {i} has kind tag {tag}")));
        }
        r.blob_into(&mut layer.weights, &format!("layer {i} weights"))?;
        r.blob_into(&mut layer.biases, &format!("layer {i} biases"))?;
        r.blob_into(&mut layer.weight_velocity, &format!("layer {i} weight velocity"))?;
        r.blob_into(&mut layer.bias_velocity, &format!("layer {i} bias velocity"))?;
    }
    if !r.bytes.is_empty() {
        return Err(ModelError::ShapeMismatch(format!("{} trailing bytes", r.bytes.len())));
    }
    Ok(model)
}

pub fn save_model(model: &NetworkModel<f32>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(model)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel<f32>, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_bytes(&bytes)
}
