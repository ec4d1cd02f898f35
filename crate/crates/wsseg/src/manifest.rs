//! Dataset manifests: which images exist, where their attention tensors and
//! saliency maps live, and which classes each image carries.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid::ImageTags;
use crate::pseudo::LabelGenConfig;
use crate::relation::LossWeights;
use crate::{Error, Result};

/// One image entry: paths are relative to the manifest's `root`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub attention: PathBuf,
    pub saliency: PathBuf,
    pub classes: Vec<usize>,
}

/// Describes a dataset plus the default pipeline parameters recorded with it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineManifest {
    /// Dataset root, resolved relative to the manifest file's directory.
    pub root: PathBuf,
    /// Number of foreground classes C.
    pub classes: usize,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub labelgen: LabelGenConfig,
    pub images: Vec<ManifestRecord>,

    #[serde(skip)]
    base: PathBuf,
}

impl PipelineManifest {
    pub fn new(
        root: PathBuf,
        classes: usize,
        weights: LossWeights,
        labelgen: LabelGenConfig,
        images: Vec<ManifestRecord>,
    ) -> Self {
        Self {
            base: root.clone(),
            root,
            classes,
            weights,
            labelgen,
            images,
        }
    }

    /// Loads and fully validates a manifest: well-formed image ids, classes
    /// within `1..=C` and non-empty, unique ids, and every referenced file
    /// present on disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: PipelineManifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        manifest.base = dir.join(&manifest.root);
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.classes == 0 {
            problems.push("classes must be at least 1".to_string());
        }
        let mut seen = BTreeSet::new();
        for rec in &self.images {
            let id = &rec.image;
            if id.is_empty() || id.contains('/') || id.contains('\\') {
                problems.push(format!("image id {id:?} is not a plain file stem"));
            }
            if !seen.insert(id.clone()) {
                problems.push(format!("duplicate image id {id:?}"));
            }
            if rec.classes.is_empty() {
                problems.push(format!("image {id:?} has no classes"));
            }
            for &c in &rec.classes {
                if c == 0 || c > self.classes {
                    problems.push(format!(
                        "image {id:?} names class {c} outside 1..={}",
                        self.classes
                    ));
                }
            }
            for rel in [&rec.attention, &rec.saliency] {
                let full = self.base.join(rel);
                if !full.is_file() {
                    problems.push(format!(
                        "image {id:?} references missing file {}",
                        full.display()
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation {
                context: "manifest".to_string(),
                problems,
            })
        }
    }

    /// Absolute path of a record-relative path.
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.base.join(rel)
    }

    pub fn tags_for(&self, record: &ManifestRecord) -> Result<ImageTags> {
        ImageTags::new(record.image.clone(), &record.classes, self.classes)
    }

    /// Records sorted by image id; batch commands iterate in this order so
    /// reports and aggregates are deterministic.
    pub fn sorted_records(&self) -> Vec<&ManifestRecord> {
        let mut recs: Vec<&ManifestRecord> = self.images.iter().collect();
        recs.sort_by(|a, b| a.image.cmp(&b.image));
        recs
    }
}
