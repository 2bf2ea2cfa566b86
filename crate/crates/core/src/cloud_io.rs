//! Binary cloud files: 8-byte magic `GSLIFT01`, little-endian u32 count, then
//! 14 little-endian f32 per primitive.

use std::fs;
use std::path::Path;

use crate::error::{CloudFormatError, Error, Result};
use crate::gaussian::{GaussianCloud, GaussianPrimitive, PARAMS_PER_PRIMITIVE};

pub const MAGIC: &[u8; 8] = b"GSLIFT01";
const MAGIC_PREFIX: &[u8; 6] = b"GSLIFT";
const HEADER_LEN: usize = 12;
const RECORD_LEN: usize = PARAMS_PER_PRIMITIVE * 4;

pub fn encode_cloud(cloud: &GaussianCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + cloud.len() * RECORD_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.primitives() {
        for v in p.to_params() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<GaussianCloud, CloudFormatError> {
    if bytes.len() < 8 || &bytes[..6] != MAGIC_PREFIX {
        return Err(CloudFormatError::BadMagic {
            found: bytes[..bytes.len().min(8)].to_vec(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(CloudFormatError::VersionMismatch {
            found: String::from_utf8_lossy(&bytes[6..8]).into_owned(),
            expected: "01".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(CloudFormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + count * RECORD_LEN;
    if bytes.len() < expected {
        return Err(CloudFormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CloudFormatError::TrailingBytes(bytes.len() - expected));
    }
    let prims = bytes[HEADER_LEN..]
        .chunks_exact(RECORD_LEN)
        .map(|rec| {
            let mut params = [0.0; PARAMS_PER_PRIMITIVE];
            for (v, chunk) in params.iter_mut().zip(rec.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
            GaussianPrimitive::from_params(&params)
        })
        .collect();
    Ok(GaussianCloud::new(prims))
}

pub fn save_cloud(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_cloud(&bytes)?)
}
