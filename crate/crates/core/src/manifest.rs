//! Dataset manifests: a JSON index binding PPF files to labels and splits.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// 0 = normal, 1 = anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Normal,
    Anomalous,
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Anomalous),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Normal => 0,
            Label::Anomalous => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub category: String,
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    /// Checks label/split consistency and path uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, item) in self.items.iter().enumerate() {
            if item.split == Split::Train && item.label == Label::Anomalous {
                return Err(Error::Validation(format!(
                    "item {i} ({}): train items must be normal (label 0)",
                    item.path.display()
                )));
            }
            if !seen.insert(&item.path) {
                return Err(Error::Validation(format!(
                    "item {i}: duplicate path {}",
                    item.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn train(&self) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(|i| i.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(|i| i.split == Split::Test)
    }

    /// Train items, or a validation error if there are none.
    pub fn train_for_fitting(&self) -> Result<Vec<&ManifestItem>> {
        let train: Vec<_> = self.train().collect();
        if train.is_empty() {
            return Err(Error::Validation(format!(
                "manifest for category '{}' has no train items",
                self.category
            )));
        }
        Ok(train)
    }
}

/// Reads and validates a manifest; relative item paths are resolved against
/// the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let mut manifest: Manifest = fsutil::read_json(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    for item in &mut manifest.items {
        if item.path.is_relative() {
            item.path = base.join(&item.path);
        }
    }
    manifest.validate()?;
    Ok(manifest)
}

/// Writes the manifest as-is; paths are not rewritten.
pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    fsutil::write_json_atomic(path.as_ref(), manifest)
}
