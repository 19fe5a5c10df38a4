//! Versioned parameter file.
//!
//! ```text
//! "PBCPARAM"  u32 version
//! u32 len, config JSON
//! u32 len, config hash (hex, ASCII)
//! u32 len, JSON {dtype, obs_norm, act_norm}
//! u32 n_tensors
//! per tensor: u32 len, name; u32 rows; u32 cols; rows*cols little-endian values
//! ```

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{Policy, PolicyConfig};
use super::obs::Normalizer;
use super::scalar::Scalar;
use crate::error::{FormatError, PolicyError};
use crate::sim::container::{put_json, put_u32, Cursor};

pub const PARAMS_MAGIC: &[u8; 8] = b"PBCPARAM";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Stats {
    dtype: String,
    obs_norm: Normalizer,
    act_norm: Normalizer,
}

fn fmt(e: FormatError) -> PolicyError {
    PolicyError::Format(e.to_string())
}

pub fn encode<T: Scalar>(policy: &Policy<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    put_u32(&mut out, PARAMS_VERSION);
    put_json(&mut out, &policy.config);
    let hash = policy.config.hash();
    put_u32(&mut out, hash.len() as u32);
    out.extend_from_slice(hash.as_bytes());
    put_json(
        &mut out,
        &Stats {
            dtype: T::DTYPE.to_string(),
            obs_norm: policy.obs_norm.clone(),
            act_norm: policy.act_norm.clone(),
        },
    );
    put_u32(&mut out, policy.params.len() as u32);
    for (name, p) in policy.names.iter().zip(&policy.params) {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, p.nrows() as u32);
        put_u32(&mut out, p.ncols() as u32);
        for &v in p.iter() {
            v.write_le(&mut out);
        }
    }
    out
}

/// Decodes a parameter file. When `expected` is given, a file written
/// for a different configuration is refused with `HashMismatch`.
pub fn decode<T: Scalar>(bytes: &[u8], expected: Option<&PolicyConfig>) -> Result<Policy<T>, PolicyError> {
    let mut c = Cursor::new(bytes);
    if c.bytes(8).map_err(fmt)? != PARAMS_MAGIC {
        return Err(PolicyError::Format("not a parameter file".into()));
    }
    let version = c.u32().map_err(fmt)?;
    if version != PARAMS_VERSION {
        return Err(PolicyError::Format(format!("unsupported version {version}")));
    }
    let config: PolicyConfig = c.json().map_err(fmt)?;
    let n = c.u32().map_err(fmt)? as usize;
    let stored = String::from_utf8_lossy(c.bytes(n).map_err(fmt)?).into_owned();
    if stored != config.hash() {
        return Err(PolicyError::HashMismatch {
            expected: config.hash(),
            found: stored,
        });
    }
    if let Some(exp) = expected {
        if exp.hash() != stored {
            return Err(PolicyError::HashMismatch {
                expected: exp.hash(),
                found: stored,
            });
        }
    }
    let stats: Stats = c.json().map_err(fmt)?;
    if stats.dtype != T::DTYPE {
        return Err(PolicyError::Format(format!("file holds {} tensors, requested {}", stats.dtype, T::DTYPE)));
    }
    let count = c.u32().map_err(fmt)? as usize;
    let mut names = Vec::with_capacity(count);
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32().map_err(fmt)? as usize;
        names.push(String::from_utf8_lossy(c.bytes(len).map_err(fmt)?).into_owned());
        let rows = c.u32().map_err(fmt)? as usize;
        let cols = c.u32().map_err(fmt)? as usize;
        let raw = c.bytes(rows * cols * T::BYTES).map_err(fmt)?;
        let values: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        params.push(Array2::from_shape_vec((rows, cols), values).map_err(|e| PolicyError::Format(e.to_string()))?);
    }
    if c.remaining() != 0 {
        return Err(PolicyError::Format(format!("{} trailing bytes", c.remaining())));
    }
    Policy::from_parts(config, names, params, stats.obs_norm, stats.act_norm)
}

pub fn save<T: Scalar>(policy: &Policy<T>, path: &Path) -> Result<(), PolicyError> {
    std::fs::write(path, encode(policy))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path, expected: Option<&PolicyConfig>) -> Result<Policy<T>, PolicyError> {
    decode(&std::fs::read(path)?, expected)
}
