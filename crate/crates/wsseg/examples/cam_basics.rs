//! Class scores, CAM normalization, and the classification loss on a tiny
//! hand-made attention map.
//!
//! ```bash
//! cargo run -p wsseg --example cam_basics
//! ```

use wsseg::cam::{cls_loss, cls_loss_grad, gap, normalize_cam};
use wsseg::grid::{Grid3D, ImageTags};

fn main() -> wsseg::Result<()> {
    // Two classes on a 2x2 attention grid: class 1 fires on the top row,
    // class 2 is inactive everywhere.
    let features = Grid3D::new(
        2,
        2,
        2,
        vec![
            4.0, 2.0, //
            -1.0, 0.0, // channel 0
            -0.5, -0.2, //
            -0.8, -0.1, // channel 1
        ],
    )?;
    let tags = ImageTags::new("demo", &[1], 2)?;

    let scores = gap(&features);
    println!("class scores (GAP): {:?}", scores.values);

    for class in 1..=2usize {
        let cam = normalize_cam(&features, class - 1);
        println!("normalized CAM for class {class}: {:?}", cam.data());
    }

    let loss = cls_loss(&scores, &tags);
    let grad = cls_loss_grad(&scores, &tags);
    println!("classification loss: {loss:.6}");
    println!("score gradient:      {grad:?}");
    Ok(())
}
