//! The combined objective on a simple image: prototypes, the two
//! class-agnostic distance terms, the class-specific term, and the gate
//! that switches everything off for complex images.
//!
//! ```bash
//! cargo run -p wsseg --example relation_losses
//! ```

use wsseg::grid::{Grid2D, Grid3D, ImageTags};
use wsseg::relation::{total_loss, total_loss_grad, LossWeights};

fn main() -> wsseg::Result<()> {
    // A 4x4 attention map for 2 classes; the saliency map (8x8, twice the
    // resolution) marks the left half as object.
    let mut features = Grid3D::zeros(2, 4, 4)?;
    for r in 0..4 {
        for c in 0..2 {
            features.set(0, r, c, 1.5); // class-1 activation on the object
        }
        for c in 2..4 {
            features.set(0, r, c, 0.2);
            features.set(1, r, c, 0.4); // stray class-2 activation off-object
        }
    }
    let mut saliency = Grid2D::zeros(8, 8)?;
    for r in 0..8 {
        for c in 0..4 {
            saliency.set(r, c, 0.9);
        }
    }

    let weights = LossWeights::default();
    println!(
        "weights: lambda_ob={} lambda_bg={} lambda_csd={}",
        weights.lambda_ob, weights.lambda_bg, weights.lambda_csd
    );

    let simple = ImageTags::new("single-class", &[1], 2)?;
    let breakdown = total_loss(&features, &saliency, &simple, &weights, 0.5)?;
    println!("simple image:  {breakdown:?}");

    let grad = total_loss_grad(&features, &saliency, &simple, &weights, 0.5)?;
    let strongest = grad
        .data()
        .iter()
        .cloned()
        .fold(0.0f64, |a, g| a.max(g.abs()));
    println!("gradient entries: {}, largest magnitude {strongest:.6}", grad.data().len());

    // Two tagged classes: the saliency-as-object-mask assumption fails, so
    // only the classification term survives.
    let complex = ImageTags::new("two-classes", &[1, 2], 2)?;
    let breakdown = total_loss(&features, &saliency, &complex, &weights, 0.5)?;
    println!("complex image: {breakdown:?}");
    Ok(())
}
