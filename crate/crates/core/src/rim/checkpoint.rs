//! Model checkpoints.
//!
//! Binary layout (little endian): `b"RIMC"`, version `u8`, cell kind `u8`
//! (0 GRU, 1 MGU, 2 IndRNN), features `u32`, time steps `u32`, the three
//! kernel sides as `u32`, parameter count `u64`, then every parameter tensor
//! in declared order as `f64`. Training provenance goes to a key-value TOML
//! sidecar next to the checkpoint (`<file>.toml`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{param_count, CellKind, RimConfig, RimModel, KERNEL_SIZES};
use crate::error::{Result, RimError};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"RIMC";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4 + 12 + 8;

/// Free-form provenance recorded beside a checkpoint.
pub type Metadata = BTreeMap<String, String>;

pub fn encode_checkpoint(model: &RimModel) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(c.cell_kind.code());
    out.extend_from_slice(&(c.features as u32).to_le_bytes());
    out.extend_from_slice(&(c.time_steps as u32).to_le_bytes());
    for k in KERNEL_SIZES {
        out.extend_from_slice(&(k as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for p in &model.params {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<RimModel> {
    if bytes.len() < HEADER_LEN {
        return Err(RimError::parse(bytes.len(), "checkpoint header truncated"));
    }
    if &bytes[..4] != MAGIC {
        return Err(RimError::parse(0, "not a checkpoint (bad magic)"));
    }
    if bytes[4] != VERSION {
        return Err(RimError::parse(4, format!("unsupported checkpoint version {}", bytes[4])));
    }
    let kind = CellKind::from_code(bytes[5])
        .ok_or_else(|| RimError::parse(5, format!("unknown cell kind code {}", bytes[5])))?;
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (features, time_steps) = (u32_at(6), u32_at(10));
    let kernels = [u32_at(14), u32_at(18), u32_at(22)];
    if kernels != KERNEL_SIZES {
        return Err(RimError::parse(14, format!("kernel sizes {kernels:?} are not supported")));
    }
    let declared = u64::from_le_bytes(bytes[26..34].try_into().unwrap()) as usize;
    let config = RimConfig::new(kind, features, time_steps)
        .map_err(|e| RimError::parse(6, e.to_string()))?;
    let expected = param_count(&config);
    if declared != expected {
        return Err(RimError::parse(
            26,
            format!("header declares {declared} parameters, configuration implies {expected}"),
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 8 * expected {
        let at = HEADER_LEN + payload.len().min(8 * expected);
        return Err(RimError::parse(
            at,
            format!("payload is {} bytes, expected {}", payload.len(), 8 * expected),
        ));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let params = config
        .layout()
        .into_iter()
        .map(|(_, shape)| {
            let n = shape.iter().product();
            Tensor::from_vec(&shape, values.by_ref().take(n).collect())
        })
        .collect::<Result<_>>()?;
    Ok(RimModel { config, params })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

/// Writes the checkpoint and its provenance sidecar.
pub fn save(path: impl AsRef<Path>, model: &RimModel, metadata: &Metadata) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model))?;
    let text = toml::to_string(metadata).map_err(|e| RimError::Config(e.to_string()))?;
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<RimModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        RimError::Config(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    decode_checkpoint(&bytes)
}

/// Reads a sidecar; a missing sidecar yields empty metadata.
pub fn load_metadata(path: impl AsRef<Path>) -> Result<Metadata> {
    let side = sidecar_path(path.as_ref());
    match fs::read_to_string(&side) {
        Ok(text) => toml::from_str(&text).map_err(|e| RimError::Config(format!("{}: {e}", side.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Metadata::new()),
        Err(e) => Err(e.into()),
    }
}
