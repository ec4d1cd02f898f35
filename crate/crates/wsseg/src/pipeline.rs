//! Batch drivers over manifest-described file trees.
//!
//! Every command processes images with a worker pool, isolates per-image
//! failures (one corrupt file fails that record, not the batch), never
//! touches its input directories, and orders results by image id so reruns
//! produce byte-identical reports.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::cam::normalize_cam;
use crate::config::PipelineConfig;
use crate::eval::{ConfusionMatrix, MetricReport};
use crate::grid::{upsample_channels, Grid3D};
use crate::manifest::{ManifestRecord, PipelineManifest};
use crate::pseudo::{generate_initial, refine};
use crate::relation::{total_loss, LossBreakdown};
use crate::{io, Error, Result};

/// A machine-readable record of one failed image.
#[derive(Debug, Clone, Serialize)]
pub struct ImageFailure {
    pub image: String,
    pub error: String,
}

/// What a batch command accomplished.
#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub processed: usize,
    pub failures: Vec<ImageFailure>,
}

impl BatchOutcome {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs `f` on a rayon pool with the requested thread count (or the global
/// pool when unset).
pub fn with_pool<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

type RecordResults<T> = (Vec<(String, T)>, Vec<ImageFailure>);

/// Runs `work` per record in parallel and splits successes from failures,
/// keeping manifest (sorted-id) order.
fn for_each_record<T: Send>(
    manifest: &PipelineManifest,
    jobs: Option<usize>,
    work: impl Fn(&ManifestRecord) -> Result<T> + Sync,
) -> Result<RecordResults<T>> {
    let records = manifest.sorted_records();
    let results: Vec<(String, Result<T>)> = with_pool(jobs, || {
        records
            .par_iter()
            .map(|rec| (rec.image.clone(), work(rec)))
            .collect()
    })?;
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (image, result) in results {
        match result {
            Ok(v) => ok.push((image, v)),
            Err(e) => failures.push(ImageFailure {
                image,
                error: e.to_string(),
            }),
        }
    }
    Ok((ok, failures))
}

fn read_attention(manifest: &PipelineManifest, record: &ManifestRecord) -> Result<Grid3D> {
    let features = io::read_grid3(manifest.resolve(&record.attention))?;
    if features.channels() != manifest.classes {
        return Err(Error::invalid(format!(
            "attention tensor for {:?} has {} channels, manifest declares {}",
            record.image,
            features.channels(),
            manifest.classes
        )));
    }
    Ok(features)
}

/// Normalizes each image's attention map into CAMs and writes one rank-3
/// tensor per image under `out_dir`. Channels of untagged classes are
/// zeroed regardless of their activation.
pub fn run_cam(
    manifest: &PipelineManifest,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<BatchOutcome> {
    ensure_dir(out_dir)?;
    let (ok, failures) = for_each_record(manifest, jobs, |record| {
        let features = read_attention(manifest, record)?;
        let tags = manifest.tags_for(record)?;
        let mut cams = Grid3D::zeros(features.channels(), features.height(), features.width())?;
        for class in tags.class_indices() {
            let normalized = normalize_cam(&features, class - 1);
            cams.channel_mut(class - 1).copy_from_slice(normalized.data());
        }
        io::write_grid3(out_dir.join(format!("{}.wsst", record.image)), &cams)
    })?;
    Ok(BatchOutcome {
        processed: ok.len(),
        failures,
    })
}

/// One line of the loss report.
#[derive(Debug, Clone, Serialize)]
pub struct LossRecord {
    pub image: String,
    pub simple: bool,
    pub cls: f64,
    pub cad_ob: f64,
    pub cad_bg: f64,
    pub csd: f64,
    pub total: f64,
}

/// Dataset-level means over the successfully processed images.
#[derive(Debug, Clone, Serialize)]
pub struct LossSummary {
    pub images: usize,
    pub mean_cls: f64,
    pub mean_cad_ob: f64,
    pub mean_cad_bg: f64,
    pub mean_csd: f64,
    pub mean_total: f64,
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub records: Vec<LossRecord>,
    pub summary: LossSummary,
    pub failures: Vec<ImageFailure>,
}

impl LossReport {
    /// JSON-lines rendering: one record per image (sorted by id), then the
    /// summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary).expect("summary serializes"));
        out.push('\n');
        out
    }
}

/// Evaluates the combined loss per image and aggregates dataset means.
pub fn run_losses(
    manifest: &PipelineManifest,
    config: &PipelineConfig,
    jobs: Option<usize>,
) -> Result<LossReport> {
    config.validate()?;
    let (ok, failures) = for_each_record(manifest, jobs, |record| {
        let features = read_attention(manifest, record)?;
        let saliency = io::read_saliency(manifest.resolve(&record.saliency))?;
        let tags = manifest.tags_for(record)?;
        total_loss(
            &features,
            &saliency,
            &tags,
            &config.weights,
            config.labelgen.sal_threshold,
        )
    })?;

    let records: Vec<LossRecord> = ok
        .into_iter()
        .map(|(image, b): (String, LossBreakdown)| LossRecord {
            image,
            simple: b.simple,
            cls: b.cls,
            cad_ob: b.cad_ob,
            cad_bg: b.cad_bg,
            csd: b.csd,
            total: b.total,
        })
        .collect();

    // Records are already in sorted-id order, so these sums are stable.
    let n = records.len();
    let mean = |f: fn(&LossRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let summary = LossSummary {
        images: n,
        mean_cls: mean(|r| r.cls),
        mean_cad_ob: mean(|r| r.cad_ob),
        mean_cad_bg: mean(|r| r.cad_bg),
        mean_csd: mean(|r| r.csd),
        mean_total: mean(|r| r.total),
    };
    Ok(LossReport {
        records,
        summary,
        failures,
    })
}

/// Generates initial pseudo labels from previously written CAM tensors and
/// the manifest's saliency maps. CAMs are upsampled to saliency resolution
/// before thresholding; labels are written as PNGs under `out_dir`.
pub fn run_pseudo(
    manifest: &PipelineManifest,
    cams_dir: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<BatchOutcome> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let (ok, failures) = for_each_record(manifest, jobs, |record| {
        let cams = io::read_grid3(cams_dir.join(format!("{}.wsst", record.image)))?;
        let saliency = io::read_saliency(manifest.resolve(&record.saliency))?;
        let tags = manifest.tags_for(record)?;
        let cams_full = upsample_channels(&cams, saliency.height(), saliency.width())?;
        let labels = generate_initial(&cams_full, &saliency, &tags, &config.labelgen)?;
        io::write_label_map(out_dir.join(format!("{}.png", record.image)), &labels)
    })?;
    Ok(BatchOutcome {
        processed: ok.len(),
        failures,
    })
}

/// Refines predicted label maps against the initial pseudo labels and the
/// manifest's tags, writing one PNG per image under `out_dir`.
pub fn run_refine(
    manifest: &PipelineManifest,
    pred_dir: &Path,
    initial_dir: &Path,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<BatchOutcome> {
    ensure_dir(out_dir)?;
    let (ok, failures) = for_each_record(manifest, jobs, |record| {
        let pred = io::read_label_map(pred_dir.join(format!("{}.png", record.image)))?;
        let initial = io::read_label_map(initial_dir.join(format!("{}.png", record.image)))?;
        let tags = manifest.tags_for(record)?;
        let refined = refine(&pred, &initial, &tags)?;
        io::write_label_map(out_dir.join(format!("{}.png", record.image)), &refined)
    })?;
    Ok(BatchOutcome {
        processed: ok.len(),
        failures,
    })
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string());
            }
        }
    }
    Ok(stems)
}

/// Scores a directory of predicted label maps against ground truth.
/// Predictions must be complete (no ignore labels); ground truth may carry
/// them. Unpaired files on either side fail that image id.
pub fn run_eval(
    pred_dir: &Path,
    gt_dir: &Path,
    classes: usize,
) -> Result<(MetricReport, Vec<ImageFailure>)> {
    let pred_stems = png_stems(pred_dir)?;
    let gt_stems = png_stems(gt_dir)?;

    let mut failures = Vec::new();
    let mut matrix = ConfusionMatrix::new(classes);
    for id in pred_stems.union(&gt_stems) {
        let result = (|| -> Result<(PathBuf, PathBuf)> {
            if !pred_stems.contains(id) {
                return Err(Error::invalid(format!("no prediction for image {id:?}")));
            }
            if !gt_stems.contains(id) {
                return Err(Error::invalid(format!("no ground truth for image {id:?}")));
            }
            Ok((
                pred_dir.join(format!("{id}.png")),
                gt_dir.join(format!("{id}.png")),
            ))
        })()
        .and_then(|(pred_path, gt_path)| {
            let pred = io::read_label_map(pred_path)?;
            let gt = io::read_label_map(gt_path)?;
            matrix.accumulate(&pred, &gt)
        });
        if let Err(e) = result {
            failures.push(ImageFailure {
                image: id.clone(),
                error: e.to_string(),
            });
        }
    }

    let report = MetricReport::from_matrix(&matrix)?;
    Ok((report, failures))
}
