//! Pipeline configuration: the effective parameter set and the TOML overlay
//! document accepted by the command line.
//!
//! A manifest records the weights and thresholds it was generated with; a
//! `--config` file overrides any subset of them. Recognized keys:
//! `lambda_ob`, `lambda_bg`, `lambda_csd`, `sal_threshold`, `fg_threshold`,
//! `conflict_policy` (`"ignore"` or `"argmax"`), `detach_prototypes`.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::manifest::PipelineManifest;
use crate::pseudo::{ConflictPolicy, LabelGenConfig};
use crate::relation::LossWeights;
use crate::{Error, Result};

/// Effective parameters for a pipeline run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineConfig {
    pub weights: LossWeights,
    pub labelgen: LabelGenConfig,
    /// Treat the prototypes as constants when differentiating the relation
    /// losses. Off by default: the full chain rule is what the
    /// finite-difference check validates.
    pub detach_prototypes: bool,
}

impl PipelineConfig {
    pub fn from_manifest(manifest: &PipelineManifest) -> Self {
        Self {
            weights: manifest.weights,
            labelgen: manifest.labelgen,
            detach_prototypes: false,
        }
    }

    pub fn apply(&mut self, overlay: &ConfigOverlay) {
        if let Some(v) = overlay.lambda_ob {
            self.weights.lambda_ob = v;
        }
        if let Some(v) = overlay.lambda_bg {
            self.weights.lambda_bg = v;
        }
        if let Some(v) = overlay.lambda_csd {
            self.weights.lambda_csd = v;
        }
        if let Some(v) = overlay.sal_threshold {
            self.labelgen.sal_threshold = v;
        }
        if let Some(v) = overlay.fg_threshold {
            self.labelgen.fg_threshold = v;
        }
        if let Some(v) = overlay.conflict_policy {
            self.labelgen.conflict_policy = v;
        }
        if let Some(v) = overlay.detach_prototypes {
            self.detach_prototypes = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("lambda_ob", self.weights.lambda_ob),
            ("lambda_bg", self.weights.lambda_bg),
            ("lambda_csd", self.weights.lambda_csd),
        ] {
            if v.is_nan() || v < 0.0 {
                problems.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("sal_threshold", self.labelgen.sal_threshold),
            ("fg_threshold", self.labelgen.fg_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                problems.push(format!("{name} must lie strictly inside (0, 1), got {v}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation {
                context: "config".to_string(),
                problems,
            })
        }
    }
}

/// Partial configuration parsed from a TOML document; unset keys keep the
/// manifest's values. Unknown keys are rejected to catch typos.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverlay {
    pub lambda_ob: Option<f64>,
    pub lambda_bg: Option<f64>,
    pub lambda_csd: Option<f64>,
    pub sal_threshold: Option<f64>,
    pub fg_threshold: Option<f64>,
    pub conflict_policy: Option<ConflictPolicy>,
    pub detach_prototypes: Option<bool>,
}

pub fn load_overlay(path: impl AsRef<Path>) -> Result<ConfigOverlay> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
