use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{load_image, load_pair};
use super::sample::{BinaryMask, Cohort, ImageSample};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unsplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Image path, relative to the manifest directory unless absolute.
    pub image: String,
    pub mask: Option<String>,
    pub cohort: Cohort,
    pub split: Split,
}

impl ManifestEntry {
    /// The entry's id: the image file stem.
    pub fn id(&self) -> String {
        Path::new(&self.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.clone())
    }
}

/// An image paired with its ground truth.
#[derive(Debug, Clone)]
pub struct LabeledPair {
    pub image: ImageSample,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against. Not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, seed: u64, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            schema_version: SCHEMA_VERSION,
            seed,
            entries,
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Checks id uniqueness and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            let id = entry.id();
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidManifest(format!("duplicate image id {id:?}")));
            }
            let files = std::iter::once(&entry.image).chain(entry.mask.as_ref());
            for rel in files {
                let path = self.resolve(rel);
                if !path.is_file() {
                    return Err(Error::InvalidManifest(format!(
                        "entry {id:?} references missing file {}",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loads every entry's image and mask. Entries without a mask fail with `MISSING_MASK`.
    pub fn load_labeled<'a>(
        &self,
        entries: impl IntoIterator<Item = &'a ManifestEntry>,
    ) -> Result<Vec<LabeledPair>> {
        entries
            .into_iter()
            .map(|entry| {
                let mask_rel = entry
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::MissingMask(entry.id()))?;
                let (mut image, mut mask) =
                    load_pair(&self.resolve(&entry.image), &self.resolve(mask_rel), entry.cohort)?;
                image.id = entry.id();
                mask.paired_image_id = Some(image.id.clone());
                Ok(LabeledPair { image, mask })
            })
            .collect()
    }

    pub fn load_images<'a>(
        &self,
        entries: impl IntoIterator<Item = &'a ManifestEntry>,
    ) -> Result<Vec<ImageSample>> {
        entries
            .into_iter()
            .map(|entry| {
                let mut image = load_image(&self.resolve(&entry.image), entry.cohort)?;
                image.id = entry.id();
                Ok(image)
            })
            .collect()
    }

    /// Re-expresses entry paths for a manifest living in `new_root`.
    pub fn rebased(&self, new_root: &Path) -> DatasetManifest {
        if self.root == new_root {
            return self.clone();
        }
        let rebase = |rel: &str| -> String {
            let abs = absolute(&self.root.join(rel));
            match abs.strip_prefix(absolute(new_root)) {
                Ok(stripped) => stripped.to_string_lossy().into_owned(),
                Err(_) => abs.to_string_lossy().into_owned(),
            }
        };
        let entries = self
            .entries
            .iter()
            .map(|e| ManifestEntry {
                image: rebase(&e.image),
                mask: e.mask.as_deref().map(rebase),
                ..e.clone()
            })
            .collect();
        DatasetManifest {
            entries,
            root: new_root.to_path_buf(),
            ..self.clone()
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Writes the manifest atomically (temp file, then rename). Paths are rebased
/// onto the destination directory.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let rebased = manifest.rebased(dir);
    let json = serde_json::to_vec_pretty(&rebased).expect("manifest serializes");
    write_atomic(path, &json)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.{}.tmp", uuid::Uuid::new_v4().simple()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Parses and validates a manifest. Relative paths resolve against the file's directory.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::SchemaMismatch(format!(
                "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
            )))
        }
        None => return Err(Error::SchemaMismatch("missing schema_version".into())),
    }
    let mut manifest: DatasetManifest = serde_json::from_value(value)
        .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
    manifest.root = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}
