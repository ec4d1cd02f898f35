//! The three object-guided refinement rules, traced on a small prediction:
//! untagged classes are filtered, predicted background adopts the initial
//! label, and a missing tagged class turns leftover background unreliable.
//!
//! ```bash
//! cargo run -p wsseg --example label_refinement
//! ```

use wsseg::grid::{ImageTags, LabelMap, IGNORE_LABEL};
use wsseg::pseudo::refine;

fn render(name: &str, labels: &LabelMap) {
    println!("{name}:");
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
    // Image tagged {1, 2}. The prediction found class 1, hallucinated
    // class 3, and missed class 2 entirely; the initial pseudo label knows
    // where class 2 roughly is.
    #[rustfmt::skip]
    let pred = LabelMap::new(5, 8, vec![
        0, 0, 0, 0, 0, 0, 0, 0,
        0, 1, 1, 0, 0, 3, 3, 0,
        0, 1, 1, 0, 0, 3, 3, 0,
        0, 0, 0, 0, 0, 0, 0, 0,
        0, 0, 0, 0, 0, 0, 0, 0,
    ])?;
    #[rustfmt::skip]
    let initial = LabelMap::new(5, 8, vec![
        0, 0, 0, 0, 0, 0, 0, 0,
        0, 1, 1, 0, 0, 0, 0, 0,
        0, 1, 1, 0, 2, 2, 0, 0,
        0, 0, 0, 0, 2, 2, 0, 0,
        0, 0, 0, 0, 0, 0, 0, 0,
    ])?;
    let tags = ImageTags::new("demo", &[1, 2], 3)?;

    render("prediction", &pred);
    render("initial pseudo label", &initial);

    let refined = refine(&pred, &initial, &tags)?;
    render("refined", &refined);
    println!("class-3 pixels became '?', class-2 pixels were recovered from the initial label");

    // Refinement is idempotent.
    assert_eq!(refine(&refined, &initial, &tags)?, refined);
    println!("refining again changes nothing");
    Ok(())
}
