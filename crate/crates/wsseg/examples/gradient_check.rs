//! Verify the analytic loss gradients against central finite differences
//! on randomized fixtures, term by term.
//!
//! ```bash
//! cargo run --release -p wsseg --example gradient_check
//! ```

use wsseg::gradcheck::{self, DEFAULT_TOLERANCE};

fn main() -> wsseg::Result<()> {
    let report = gradcheck::run(2024, 50, DEFAULT_TOLERANCE)?;
    println!(
        "{} trials ({} with active relation terms), step {:.0e}, tolerance {:.0e}",
        report.trials, report.simple_trials, report.step, report.tolerance
    );
    let e = &report.max_rel_error;
    println!("max relative error per term:");
    println!("  cls     {:.3e}", e.cls);
    println!("  cad_ob  {:.3e}", e.cad_ob);
    println!("  cad_bg  {:.3e}", e.cad_bg);
    println!("  csd     {:.3e}", e.csd);
    println!("  total   {:.3e}", e.total);
    println!("verdict: {}", if report.passed { "PASS" } else { "FAIL" });
    Ok(())
}
