//! Versioned checkpoint container.
//!
//! Layout: the 8-byte magic `TXCTCKPT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header, then one blob holding
//! every tensor as little-endian values of the header's dtype. The header
//! records the run configuration, the completed step count, the tensor table
//! (name, group, shape, offset) and a SHA-256 digest of the blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{build_model, Network};
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::scalar::Scalar;
use crate::training::RunConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TXCTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: String,
    pub shape: [usize; 4],
    /// Element offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub t: u64,
    /// Element offsets of the first and second moment sections.
    pub m_offset: usize,
    pub v_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub dtype: String,
    pub config: RunConfig,
    /// Optimizer steps completed when the checkpoint was written.
    pub step: u64,
    pub stop_contour_grad: bool,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerState>,
    pub blob_elements: usize,
    pub blob_sha256: String,
}

/// A restored network plus the state needed to resume training.
pub struct Checkpoint<F> {
    pub header: Header,
    pub network: Network<F>,
    pub optimizer: Option<Adam<F>>,
}

fn ck_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    config: &RunConfig,
    step: u64,
    net: &Network<F>,
    optimizer: Option<&Adam<F>>,
) -> Result<()> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for e in net.params.entries() {
        tensors.push(TensorEntry {
            name: e.name.clone(),
            group: e.group.clone(),
            shape: e.value.shape,
            offset,
        });
        e.value.data.iter().for_each(|v| v.write_le(&mut blob));
        offset += e.value.len();
    }
    let optimizer = optimizer.map(|opt| {
        let m_offset = offset;
        for t in &opt.m {
            t.data.iter().for_each(|v| v.write_le(&mut blob));
            offset += t.len();
        }
        let v_offset = offset;
        for t in &opt.v {
            t.data.iter().for_each(|v| v.write_le(&mut blob));
            offset += t.len();
        }
        OptimizerState {
            config: opt.cfg,
            t: opt.t,
            m_offset,
            v_offset,
        }
    });
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: F::DTYPE.to_string(),
        config: config.clone(),
        step,
        stop_contour_grad: net.stop_contour_grad,
        tensors,
        optimizer,
        blob_elements: offset,
        blob_sha256: hex_digest(&blob),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ck_err(path, e))?;
    let mut bytes = Vec::with_capacity(20 + json.len() + blob.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&blob);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Decodes `n` values at element `offset` of a blob stored as `dtype`.
fn read_values<F: Scalar>(blob: &[u8], dtype: &str, offset: usize, n: usize) -> Option<Vec<F>> {
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        _ => return None,
    };
    let bytes = blob.get(offset * width..(offset + n) * width)?;
    Some(
        bytes
            .chunks_exact(width)
            .map(|c| match dtype {
                "f32" => F::lit(f32::read_le(c) as f64),
                _ => F::lit(f64::read_le(c)),
            })
            .collect(),
    )
}

pub fn read_header(path: &Path) -> Result<(Header, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(ck_err(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ck_err(
            path,
            format!("unsupported format version {version}"),
        ));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(20..20 + hlen)
        .ok_or_else(|| ck_err(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| ck_err(path, e))?;
    let blob = bytes[20 + hlen..].to_vec();
    if hex_digest(&blob) != header.blob_sha256 {
        return Err(ck_err(path, "blob digest mismatch (file corrupted)"));
    }
    Ok((header, blob))
}

/// Rebuilds the recorded network and fills in the stored weights (converting precision if needed).
pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let (header, blob) = read_header(path)?;
    let cfg = &header.config;
    let mut network = build_model::<F>(cfg.variant, &cfg.backbone, cfg.seed)?;
    network.stop_contour_grad = header.stop_contour_grad;
    if network.params.len() != header.tensors.len() {
        return Err(ck_err(
            path,
            format!(
                "expected {} tensors, found {}",
                network.params.len(),
                header.tensors.len()
            ),
        ));
    }
    for (entry, rec) in network.params.entries_mut().iter_mut().zip(&header.tensors) {
        if entry.name != rec.name || entry.value.shape != rec.shape {
            return Err(ck_err(
                path,
                format!(
                    "tensor `{}` {:?} does not match model `{}` {:?}",
                    rec.name, rec.shape, entry.name, entry.value.shape
                ),
            ));
        }
        entry.value.data = read_values(&blob, &header.dtype, rec.offset, entry.value.len())
            .ok_or_else(|| {
                ck_err(
                    path,
                    format!(
                        "tensor `{}` out of range or unknown dtype `{}`",
                        rec.name, header.dtype
                    ),
                )
            })?;
    }
    let optimizer = match &header.optimizer {
        None => None,
        Some(st) => {
            let mut opt = Adam::new(&network.params, st.config);
            opt.t = st.t;
            let (mut mo, mut vo) = (st.m_offset, st.v_offset);
            for (m, v) in opt.m.iter_mut().zip(opt.v.iter_mut()) {
                let n = m.len();
                let read = |o| {
                    read_values(&blob, &header.dtype, o, n)
                        .ok_or_else(|| ck_err(path, "optimizer state out of range"))
                };
                *m = Tensor::from_vec(m.shape, read(mo)?);
                *v = Tensor::from_vec(v.shape, read(vo)?);
                mo += n;
                vo += n;
            }
            Some(opt)
        }
    };
    Ok(Checkpoint {
        header,
        network,
        optimizer,
    })
}
