//! Parameter files: one JSON header line, then the parameter values as
//! little-endian f64 in partition order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{ArchConfig, ParamInfo, RunningStats, TogNetParams};
use crate::rng::fnv_1a;
use crate::{Error, Result};

const MAGIC: &str = "togsim-params";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    arch: ArchConfig,
    arch_hash: String,
    partition: Vec<ParamInfo>,
    bn_small: Vec<RunningStats>,
    bn_large: Vec<RunningStats>,
    payload_values: usize,
}

/// Hash over the architecture and the parameter names, groups and shapes.
pub fn arch_hash(arch: &ArchConfig, infos: &[ParamInfo]) -> String {
    let text = serde_json::to_string(&(arch, infos)).expect("serializable");
    format!("{:016x}", fnv_1a(text.as_bytes()))
}

pub fn params_hash(params: &TogNetParams) -> String {
    arch_hash(params.arch(), params.infos())
}

pub fn save_params(params: &TogNetParams, path: &Path) -> Result<()> {
    use super::net::TrunkPath;
    let header = Header {
        format: MAGIC.into(),
        version: VERSION,
        arch: params.arch().clone(),
        arch_hash: params_hash(params),
        partition: params.infos().to_vec(),
        bn_small: params.bn_stats(TrunkPath::Small).to_vec(),
        bn_large: params.bn_stats(TrunkPath::Large).to_vec(),
        payload_values: params.param_count(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("serializable");
    bytes.push(b'\n');
    bytes.reserve(8 * header.payload_values);
    for v in params.values().iter().flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<TogNetParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header line"))?;
    let header: Header = serde_json::from_slice(&bytes[..split]).map_err(|e| Error::format(path, format!("header: {e}")))?;
    if header.format != MAGIC || header.version != VERSION {
        return Err(Error::format(path, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let expected = arch_hash(&header.arch, &header.partition);
    if expected != header.arch_hash {
        return Err(Error::HashMismatch {
            what: "architecture".into(),
            expected,
            found: header.arch_hash,
        });
    }
    let payload = &bytes[split + 1..];
    if payload.len() != 8 * header.payload_values {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header declares {} values", payload.len(), header.payload_values),
        ));
    }
    let mut floats = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let values: Vec<Vec<f64>> = header.partition.iter().map(|p| floats.by_ref().take(p.len()).collect()).collect();
    let params = TogNetParams::from_parts(header.arch, values, [header.bn_small, header.bn_large])?;
    if params.infos() != header.partition.as_slice() {
        return Err(Error::format(path, "partition does not match the architecture"));
    }
    Ok(params)
}

/// Loads a file and checks that it was saved from `arch`.
pub fn load_params_for(path: &Path, arch: &ArchConfig) -> Result<TogNetParams> {
    let params = load_params(path)?;
    if params.arch() != arch {
        let want = TogNetParams::new(arch.clone(), &mut crate::rng::rng_from(&[0]))?;
        return Err(Error::HashMismatch {
            what: "architecture".into(),
            expected: params_hash(&want),
            found: params_hash(&params),
        });
    }
    Ok(params)
}
