//! Initial pseudo-label generation: where CAM and saliency agree the pixel
//! is labeled, where they disagree it is marked unreliable.
//!
//! ```bash
//! cargo run -p wsseg --example pseudo_labels
//! ```

use wsseg::grid::{Grid2D, Grid3D, ImageTags, IGNORE_LABEL};
use wsseg::pseudo::{generate_initial, LabelGenConfig};

fn render(labels: &wsseg::grid::LabelMap) {
    for r in 0..labels.height() {
        let row: String = (0..labels.width())
            .map(|c| match labels.get(r, c) {
                0 => '.',
                IGNORE_LABEL => '?',
                v => char::from_digit(v as u32, 10).unwrap_or('#'),
            })
            .collect();
        println!("  {row}");
    }
}

fn main() -> wsseg::Result<()> {
    let (h, w) = (8, 8);
    let mut cams = Grid3D::zeros(1, h, w)?;
    let mut saliency = Grid2D::zeros(h, w)?;

    // Saliency marks a 4x6 object; the CAM only fires on its central 2x3
    // part (the "most discriminative" region).
    for r in 2..6 {
        for c in 1..7 {
            saliency.set(r, c, 0.95);
        }
    }
    for r in 3..5 {
        for c in 2..5 {
            cams.set(0, r, c, 0.9);
        }
    }
    // One spurious activation outside the salient region.
    cams.set(0, 0, 7, 0.8);

    let tags = ImageTags::new("demo", &[1], 1)?;
    let labels = generate_initial(&cams, &saliency, &tags, &LabelGenConfig::default())?;
    println!("legend: '.' background, digit = class, '?' = ignore (255)");
    render(&labels);

    let object: usize = labels.labels().iter().filter(|&&v| v == 1).count();
    let unreliable: usize = labels
        .labels()
        .iter()
        .filter(|&&v| v == IGNORE_LABEL)
        .count();
    println!("labeled {object} object pixels, {unreliable} unreliable pixels");
    Ok(())
}
