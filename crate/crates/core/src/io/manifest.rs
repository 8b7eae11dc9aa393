use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_feature_file, write_atomic};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    /// Feature file path, relative to the manifest's directory unless absolute.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub depth: usize,
    pub items: Vec<ManifestItem>,
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported version {}", self.version)));
        }
        if self.depth == 0 {
            return Err(Error::Manifest("depth must be positive".into()));
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", item.id)));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |i| i.split == split)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let mut text = serde_json::to_vec_pretty(self)?;
        text.push(b'\n');
        write_atomic(path.as_ref(), &text)
    }
}

impl Dataset {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::from(e).at(path))?;
        manifest.validate().map_err(|e| e.at(path))?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { manifest, root })
    }

    pub fn resolve(&self, item: &ManifestItem) -> PathBuf {
        let p = Path::new(&item.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_item<T: Scalar>(&self, item: &ManifestItem) -> Result<FeatureMap<T>> {
        let path = self.resolve(item);
        let f: FeatureMap<T> = read_feature_file(&path)?;
        if f.depth() != self.manifest.depth {
            return Err(Error::DimensionMismatch {
                context: "feature file depth vs manifest depth",
                expected: self.manifest.depth,
                found: f.depth(),
            }
            .at(path));
        }
        Ok(f)
    }

    pub fn load_split<T: Scalar>(&self, split: Split) -> Result<Vec<FeatureMap<T>>> {
        let items: Vec<_> = self.manifest.split(split).collect();
        items.par_iter().map(|i| self.load_item(i)).collect()
    }

    /// Loads a split together with its labels; every item must carry one.
    pub fn load_labeled<T: Scalar>(&self, split: Split) -> Result<Vec<(String, FeatureMap<T>, usize)>> {
        let items: Vec<_> = self.manifest.split(split).collect();
        items
            .par_iter()
            .map(|item| {
                let label = item.label.ok_or_else(|| Error::MissingLabel(item.id.clone()))?;
                Ok((item.id.clone(), self.load_item(item)?, label))
            })
            .collect()
    }
}
