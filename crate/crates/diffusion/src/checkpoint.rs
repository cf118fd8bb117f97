//! Checkpoint files: `WCKP` magic, format version, a JSON header
//! (architecture, grid, schedule and training-config fingerprints) and the
//! parameter vector as little-endian f32. The training log goes to a JSON
//! sidecar next to the checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use wavefill_core::field::GridSpec;

use crate::error::{Error, Result};
use crate::model::{ArchDescriptor, DenoiserModel, MaskConditioning};
use crate::schedule::NoiseSchedule;
use crate::train::TrainLog;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WCKP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: ArchDescriptor,
    pub grid: GridSpec,
    pub conditioning: MaskConditioning,
    pub schedule_hash: String,
    /// empty when the model was not produced by `train`
    pub train_config_hash: String,
    pub param_count: usize,
}

/// `model.ckpt` → `model.ckpt.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn save_checkpoint(
    path: &Path,
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    log: Option<&TrainLog>,
) -> Result<()> {
    let header = CheckpointHeader {
        arch: model.arch().clone(),
        grid: *model.grid(),
        conditioning: model.conditioning,
        schedule_hash: sched.fingerprint(),
        train_config_hash: log.map(|l| l.config.fingerprint()).unwrap_or_default(),
        param_count: model.param_count(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + 4 * model.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.parameters() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf)?;
    if let Some(log) = log {
        fs::write(sidecar_path(path), serde_json::to_vec_pretty(log)?)?;
    }
    Ok(())
}

/// Reads a checkpoint; with `sched` given, refuses checkpoints trained
/// under a different noise schedule.
pub fn load_checkpoint(
    path: &Path,
    sched: Option<&NoiseSchedule>,
) -> Result<(DenoiserModel, CheckpointHeader)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(format_err(path, "not a checkpoint (bad magic)"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| format_err(path, "truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| format_err(path, format!("bad header: {e}")))?;
    let payload = &bytes[12 + hlen..];
    if payload.len() != 4 * header.param_count {
        return Err(format_err(
            path,
            format!(
                "expected {} parameters, found {} bytes",
                header.param_count,
                payload.len()
            ),
        ));
    }
    if let Some(s) = sched {
        if s.fingerprint() != header.schedule_hash {
            return Err(format_err(path, "trained under a different noise schedule"));
        }
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut model = DenoiserModel::from_parameters(header.arch.clone(), header.grid, params)
        .map_err(|e| format_err(path, e.to_string()))?;
    model.conditioning = header.conditioning;
    Ok((model, header))
}

/// The training log stored beside `path`, if any.
pub fn load_train_log(path: &Path) -> Result<Option<TrainLog>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(side)?)?))
}
