//! The whole pipeline on a generated dataset: synthesize fixtures,
//! normalize CAMs, report losses, generate and refine pseudo labels, and
//! measure how much refinement improves their quality.
//!
//! ```bash
//! cargo run -p wsseg --example synthetic_pipeline
//! ```

use wsseg::config::PipelineConfig;
use wsseg::eval::{miou, ConfusionMatrix};
use wsseg::io;
use wsseg::manifest::PipelineManifest;
use wsseg::pipeline::{run_cam, run_losses, run_pseudo, run_refine};
use wsseg::synth::{generate, SynthSpec};

fn main() -> wsseg::Result<()> {
    let root = std::env::temp_dir().join("wsseg_example_pipeline");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).expect("temp dir");

    let spec = SynthSpec {
        images: 20,
        ..SynthSpec::default()
    };
    let dataset = generate(&spec, 7, &root)?;
    println!("dataset: {} images under {}", dataset.images, root.display());

    let manifest = PipelineManifest::load(&dataset.manifest_path)?;
    let config = PipelineConfig::from_manifest(&manifest);

    let cams_dir = root.join("cams");
    run_cam(&manifest, &cams_dir, None)?;

    let losses = run_losses(&manifest, &config, None)?;
    println!(
        "losses over {} images: mean cls {:.4}, cad_ob {:.4}, cad_bg {:.4}, csd {:+.4}",
        losses.summary.images,
        losses.summary.mean_cls,
        losses.summary.mean_cad_ob,
        losses.summary.mean_cad_bg,
        losses.summary.mean_csd,
    );

    let initial_dir = root.join("initial");
    run_pseudo(&manifest, &cams_dir, &config, &initial_dir, None)?;
    let refined_dir = root.join("refined");
    run_refine(&manifest, &dataset.prediction_dir, &initial_dir, &refined_dir, None)?;

    // Score the degraded predictions and the refined labels against ground
    // truth. Refined maps may carry ignore pixels, so they go in the
    // ground-truth slot (IoU is invariant under transposing the matrix, and
    // this skips exactly the pixels the labeling declines to judge).
    let mut before = ConfusionMatrix::new(spec.classes);
    let mut after = ConfusionMatrix::new(spec.classes);
    for record in &manifest.images {
        let name = format!("{}.png", record.image);
        let gt = io::read_label_map(dataset.ground_truth_dir.join(&name))?;
        let pred = io::read_label_map(dataset.prediction_dir.join(&name))?;
        let refined = io::read_label_map(refined_dir.join(&name))?;
        before.accumulate(&pred, &gt)?;
        after.accumulate(&gt, &refined)?;
    }
    let before = miou(&before)?.mean;
    let after = miou(&after)?.mean;
    println!("degraded prediction mIoU: {before:.4}");
    println!("refined pseudo-label mIoU: {after:.4} ({:+.2} points)", (after - before) * 100.0);
    Ok(())
}
