//! On-disk formats: feature files, model containers, dataset manifests, and
//! a synthetic dataset generator.

mod container;
mod feature_file;
mod manifest;
pub mod synthetic;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use container::{
    decode_bank, decode_classifier, encode_bank, encode_classifier, read_bank, read_classifier,
    write_bank, write_classifier, BankMeta, BlockInfo, ContainerHeader, ContainerKind,
    CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use feature_file::{
    decode_feature_map, encode_feature_map, read_feature_file, write_feature_file, FEATURE_MAGIC,
    HEADER_LEN, MAX_ELEMENTS,
};
pub use manifest::{Dataset, DatasetManifest, ManifestItem, Split, MANIFEST_VERSION};

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let wrap = |e: std::io::Error| Error::from(e).at(path);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(bytes).map_err(wrap)?;
    tmp.as_file().sync_all().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}
