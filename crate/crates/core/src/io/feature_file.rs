//! Binary feature-map files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size        field
//! 0       8           magic "PCULF001"
//! 8       4           H (u32)
//! 12      4           W (u32)
//! 16      4           D (u32)
//! 20      4*H*W*D     f32 payload, row-major (h, w, d)
//! ```

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::io::write_atomic;
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

pub const FEATURE_MAGIC: &[u8; 8] = b"PCULF001";
const MAGIC_FAMILY: &[u8; 5] = b"PCULF";
pub const HEADER_LEN: usize = 20;
/// Upper bound on `H * W * D`.
pub const MAX_ELEMENTS: u64 = 1 << 30;

pub fn encode_feature_map<T: Scalar>(features: &FeatureMap<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * features.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    for dim in [features.height(), features.width(), features.depth()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in features.data() {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    out
}

/// Validates and decodes a complete feature file image.
pub fn decode_feature_map<T: Scalar>(bytes: &[u8]) -> Result<FeatureMap<T>, FormatError> {
    if bytes.len() < FEATURE_MAGIC.len() {
        return Err(FormatError::Truncated {
            section: "magic",
            expected: FEATURE_MAGIC.len() as u64,
            found: bytes.len() as u64,
        });
    }
    let magic = &bytes[..8];
    if magic != FEATURE_MAGIC {
        let found = String::from_utf8_lossy(magic).into_owned();
        return Err(if magic.starts_with(MAGIC_FAMILY) {
            FormatError::UnsupportedVersion {
                supported: String::from_utf8_lossy(FEATURE_MAGIC).into_owned(),
                found,
            }
        } else {
            FormatError::BadMagic {
                expected: String::from_utf8_lossy(FEATURE_MAGIC).into_owned(),
                found,
            }
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            section: "header",
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (h, w, d) = (dim(0), dim(1), dim(2));
    if h == 0 || w == 0 || d == 0 {
        return Err(FormatError::ZeroDimension { h, w, d });
    }
    let elements = h as u64 * w as u64 * d as u64;
    if elements > MAX_ELEMENTS {
        return Err(FormatError::DimensionOverflow {
            h,
            w,
            d,
            limit: MAX_ELEMENTS,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = elements * 4;
    if (payload.len() as u64) < expected {
        return Err(FormatError::Truncated {
            section: "payload",
            expected,
            found: payload.len() as u64,
        });
    }
    if payload.len() as u64 > expected {
        return Err(FormatError::TrailingBytes {
            found: payload.len() as u64 - expected,
        });
    }
    let mut data = Vec::with_capacity(elements as usize);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFiniteValue { index });
        }
        data.push(T::lit(v as f64));
    }
    Ok(FeatureMap::new(h as usize, w as usize, d as usize, data)
        .expect("header and payload validated"))
}

pub fn write_feature_file<T: Scalar>(path: impl AsRef<Path>, features: &FeatureMap<T>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &encode_feature_map(features))
}

/// Reads the whole file, then validates it; nothing is returned on any error.
pub fn read_feature_file<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureMap<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_feature_map(&bytes).map_err(|e| Error::from(e).at(path))
}
