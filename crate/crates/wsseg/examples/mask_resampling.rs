//! Resampling and mask algebra: corner-aligned bilinear upsampling, area
//! resizing with the tie-to-one rule, binarization, and inversion.
//!
//! ```bash
//! cargo run -p wsseg --example mask_resampling
//! ```

use wsseg::grid::{binarize, invert_mask, resize_mask, upsample_bilinear, Grid2D};

fn render(name: &str, grid: &Grid2D) {
    println!("{name} ({}x{}):", grid.height(), grid.width());
    for r in 0..grid.height() {
        let row: Vec<String> = (0..grid.width())
            .map(|c| format!("{:4.2}", grid.get(r, c)))
            .collect();
        println!("  [{}]", row.join(", "));
    }
}

fn main() -> wsseg::Result<()> {
    let ramp = Grid2D::new(2, 2, vec![0.0, 1.0, 0.0, 1.0])?;
    render("source", &ramp);
    render("bilinear 2x3", &upsample_bilinear(&ramp, 2, 3)?);
    render("bilinear 4x5", &upsample_bilinear(&ramp, 4, 5)?);

    let saliency = Grid2D::new(
        4,
        4,
        vec![
            0.9, 0.8, 0.2, 0.1, //
            0.7, 0.9, 0.3, 0.0, //
            0.6, 0.7, 0.1, 0.2, //
            0.8, 0.6, 0.0, 0.1,
        ],
    )?;
    let mask = binarize(&saliency, 0.5)?;
    render("binarized saliency", &mask);
    render("inverted", &invert_mask(&mask)?);
    render("area-resized to 2x2 (ties round to salient)", &resize_mask(&mask, 2, 2)?);
    Ok(())
}
