//! Single-file checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "CBCK" | u32 version
//! u64 manifest_len | manifest JSON
//! u64 n_blobs
//! per blob: u64 name_len | name utf8 | u8 frozen
//!           u32 ndim | ndim x u64 dims
//!           u64 byte_len | byte_len bytes of f32 LE values
//! ```
//!
//! Parameters are f32-representable by construction (the store quantizes on
//! every mutation), so the f32 blobs round-trip bitwise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{ArchConfig, SplitConfig};
use crate::train::{AblationMode, Models, Stage};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CBCK";

/// Branch-aware manifest stored as JSON inside the archive.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub arch: ArchConfig,
    pub split: SplitConfig,
    pub group_ids: Vec<usize>,
    pub weights: LossWeights,
    pub seed: u64,
    pub stage: Stage,
    pub ablation: AblationMode,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Writes the archive atomically (temp file + rename). Refuses to replace an
/// existing file unless `force`.
pub fn save(path: &Path, models: &Models, meta: &CheckpointMeta, force: bool) -> Result<()> {
    if meta.group_ids != (0..models.n_groups()).collect::<Vec<_>>() {
        return Err(corrupt(format!(
            "manifest group ids {:?} do not match the model's {} branches",
            meta.group_ids,
            models.n_groups()
        )));
    }
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let manifest = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    buf.extend_from_slice(&manifest);
    buf.extend_from_slice(&(models.store.len() as u64).to_le_bytes());
    for (_, p) in models.store.iter() {
        buf.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(p.frozen as u8);
        buf.extend_from_slice(&(p.value.shape.len() as u32).to_le_bytes());
        for d in &p.value.shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(p.value.numel() as u64 * 4).to_le_bytes());
        for v in &p.value.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    src: &'a [u8],
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        if self.src.len() < n {
            return Err(corrupt("truncated checkpoint file"));
        }
        let (head, rest) = self.src.split_at(n);
        self.src = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
}

/// Rebuilds the model from the manifest's architecture and overwrites every
/// parameter from its named blob. Either the whole archive loads or nothing
/// does: the models value is only returned on full success.
pub fn load(path: &Path) -> Result<(Models, CheckpointMeta)> {
    let data = std::fs::read(path)?;
    let mut r = Reader { src: &data };
    if r.bytes(4)? != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "unsupported checkpoint version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let mlen = r.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.bytes(mlen)?)?;
    if meta.group_ids.is_empty() || meta.group_ids != (0..meta.group_ids.len()).collect::<Vec<_>>()
    {
        return Err(corrupt(format!(
            "manifest group ids {:?} are not dense from 0",
            meta.group_ids
        )));
    }

    let mut models = Models::build(
        &meta.arch,
        &meta.split,
        meta.group_ids.len(),
        0.02,
        meta.seed,
    )?;
    let n_blobs = r.u64()? as usize;
    if n_blobs != models.store.len() {
        return Err(corrupt(format!(
            "archive holds {n_blobs} parameters, architecture needs {}",
            models.store.len()
        )));
    }
    for _ in 0..n_blobs {
        let nlen = r.u64()? as usize;
        let name = std::str::from_utf8(r.bytes(nlen)?)
            .map_err(|_| corrupt("parameter name is not UTF-8"))?
            .to_string();
        let _frozen = r.bytes(1)?[0];
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let byte_len = r.u64()? as usize;
        if byte_len != numel * 4 {
            return Err(corrupt(format!(
                "blob '{name}': length header {byte_len} does not match shape {shape:?}"
            )));
        }
        let raw = r.bytes(byte_len)?;
        let id = models
            .store
            .id(&name)
            .ok_or_else(|| corrupt(format!("archive parameter '{name}' unknown to this architecture")))?;
        if models.store.value(id).shape != shape {
            return Err(Error::shape(
                format!("{:?}", models.store.value(id).shape),
                format!("{shape:?}"),
                format!("checkpoint blob '{name}'"),
            ));
        }
        let vals = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        *models.store.value_mut(id) = Array::new(shape, vals);
    }
    if !r.src.is_empty() {
        return Err(corrupt("trailing bytes after last blob"));
    }
    Ok((models, meta))
}
