//! Confusion-matrix accumulation and mean IoU on two toy label maps.
//!
//! ```bash
//! cargo run -p wsseg --example miou_eval
//! ```

use wsseg::eval::{miou, ConfusionMatrix, MetricReport};
use wsseg::grid::LabelMap;

fn main() -> wsseg::Result<()> {
    // Ground truth: a class-1 block; prediction: the same block shifted
    // right by one column, overlapping on two of four pixels.
    #[rustfmt::skip]
    let gt = LabelMap::new(3, 4, vec![
        1, 1, 0, 0,
        1, 1, 0, 0,
        0, 0, 0, 0,
    ])?;
    #[rustfmt::skip]
    let pred = LabelMap::new(3, 4, vec![
        0, 1, 1, 0,
        0, 1, 1, 0,
        0, 0, 0, 0,
    ])?;

    let mut cm = ConfusionMatrix::new(1);
    cm.accumulate(&pred, &gt)?;
    let result = miou(&cm)?;
    for (class, iou) in result.per_class.iter().enumerate() {
        match iou {
            Some(v) => println!("class {class}: IoU {v:.4}"),
            None => println!("class {class}: undefined (absent everywhere)"),
        }
    }
    println!("mean IoU: {:.4}", result.mean);

    let report = MetricReport::from_matrix(&cm)?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}
