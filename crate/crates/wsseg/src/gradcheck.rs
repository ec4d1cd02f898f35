//! Finite-difference verification of the analytic loss gradients.
//!
//! Randomized fixtures cover simple and complex images, saliency masks from
//! a single pixel up to the full frame, and mismatched attention/saliency
//! resolutions. For every attention value the harness evaluates the loss at
//! `x - h` and `x + h` and compares the central difference against the
//! analytic gradient, term by term, so a failure names the term that broke.
//!
//! Per entry the relative error is `|a - n| / max(|a|, |n|, 1e-4)`; the
//! floor keeps finite-difference rounding noise (about 1e-10 here, since
//! every term is at most quadratic in the features) from dominating entries
//! whose true gradient is zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::grid::{Grid2D, Grid3D, ImageTags};
use crate::relation::{loss_term_gradients, total_loss, total_loss_grad, LossWeights};
use crate::{Error, Result};

/// Central-difference step size.
pub const FD_STEP: f64 = 1e-5;

/// Default pass threshold on the per-term max relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

const REL_FLOOR: f64 = 1e-4;

/// Maximum relative error observed per loss term.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TermErrors {
    pub cls: f64,
    pub cad_ob: f64,
    pub cad_bg: f64,
    pub csd: f64,
    pub total: f64,
}

impl TermErrors {
    fn fold_max(&mut self, other: &TermErrors) {
        self.cls = self.cls.max(other.cls);
        self.cad_ob = self.cad_ob.max(other.cad_ob);
        self.cad_bg = self.cad_bg.max(other.cad_bg);
        self.csd = self.csd.max(other.csd);
        self.total = self.total.max(other.total);
    }

    fn exceeding(&self, tolerance: f64) -> Vec<String> {
        [
            ("cls", self.cls),
            ("cad_ob", self.cad_ob),
            ("cad_bg", self.cad_bg),
            ("csd", self.csd),
            ("total", self.total),
        ]
        .iter()
        .filter(|(_, v)| *v >= tolerance)
        .map(|(name, _)| name.to_string())
        .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub simple_trials: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_error: TermErrors,
    pub failing_terms: Vec<String>,
    pub passed: bool,
}

/// Test hook: deliberately corrupts one analytic term so the harness can be
/// shown to catch it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    None,
    /// Negates the class-specific distance gradient.
    FlipCsdSign,
}

pub fn run(seed: u64, trials: usize, tolerance: f64) -> Result<GradCheckReport> {
    run_with_fault(seed, trials, tolerance, FaultInjection::None)
}

pub fn run_with_fault(
    seed: u64,
    trials: usize,
    tolerance: f64,
    fault: FaultInjection,
) -> Result<GradCheckReport> {
    if trials == 0 {
        return Err(Error::Validation {
            context: "gradient check".to_string(),
            problems: vec!["trials must be at least 1".to_string()],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = LossWeights::default();
    let mut max_rel = TermErrors::default();
    let mut simple_trials = 0usize;

    for trial in 0..trials {
        let fixture = random_fixture(&mut rng, trial);
        let errors = check_fixture(&fixture, &weights, fault);
        if errors.simple {
            simple_trials += 1;
        }
        max_rel.fold_max(&errors.rel);
    }

    let failing_terms = max_rel.exceeding(tolerance);
    Ok(GradCheckReport {
        trials,
        simple_trials,
        step: FD_STEP,
        tolerance,
        passed: failing_terms.is_empty(),
        failing_terms,
        max_rel_error: max_rel,
    })
}

struct Fixture {
    features: Grid3D,
    saliency: Grid2D,
    tags: ImageTags,
}

fn random_fixture(rng: &mut ChaCha8Rng, trial: usize) -> Fixture {
    let class_count = rng.random_range(1..=4usize);
    let attn_h = rng.random_range(2..=6usize);
    let attn_w = rng.random_range(2..=6usize);
    let sal_h = rng.random_range(3..=12usize);
    let sal_w = rng.random_range(3..=12usize);

    let features = Grid3D::new(
        class_count,
        attn_h,
        attn_w,
        (0..class_count * attn_h * attn_w)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    )
    .expect("fixture dimensions are valid");

    // The first trials pin the mask edge cases; the rest are random blocks
    // or per-pixel noise.
    let saliency = match trial {
        0 => Grid2D::filled(sal_h, sal_w, 1.0).unwrap(), // full frame
        1 => Grid2D::zeros(sal_h, sal_w).unwrap(),       // nothing salient
        2 => {
            let mut s = Grid2D::zeros(sal_h, sal_w).unwrap();
            s.set(rng.random_range(0..sal_h), rng.random_range(0..sal_w), 1.0);
            s
        }
        _ if rng.random_bool(0.5) => {
            // Solid block covering 20-80% of each axis.
            let bh = rng.random_range(sal_h / 4 + 1..=(3 * sal_h / 4).max(sal_h / 4 + 1));
            let bw = rng.random_range(sal_w / 4 + 1..=(3 * sal_w / 4).max(sal_w / 4 + 1));
            let r0 = rng.random_range(0..=sal_h - bh);
            let c0 = rng.random_range(0..=sal_w - bw);
            let mut s = Grid2D::zeros(sal_h, sal_w).unwrap();
            for r in r0..r0 + bh {
                for c in c0..c0 + bw {
                    s.set(r, c, 1.0);
                }
            }
            s
        }
        _ => Grid2D::new(sal_h, sal_w, (0..sal_h * sal_w).map(|_| rng.random()).collect())
            .unwrap(),
    };

    let tags = if rng.random_bool(0.6) || class_count == 1 {
        let class = rng.random_range(1..=class_count);
        ImageTags::new("fixture", &[class], class_count).unwrap()
    } else {
        let mut classes: Vec<usize> =
            (1..=class_count).filter(|_| rng.random_bool(0.5)).collect();
        if classes.len() < 2 {
            classes = vec![1, class_count];
        }
        ImageTags::new("fixture", &classes, class_count).unwrap()
    };

    Fixture {
        features,
        saliency,
        tags,
    }
}

struct FixtureErrors {
    rel: TermErrors,
    simple: bool,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn check_fixture(fixture: &Fixture, weights: &LossWeights, fault: FaultInjection) -> FixtureErrors {
    let Fixture {
        features,
        saliency,
        tags,
    } = fixture;

    let analytic = loss_term_gradients(features, saliency, tags, 0.5, false)
        .expect("fixture satisfies the loss preconditions");
    let total_analytic = total_loss_grad(features, saliency, tags, weights, 0.5)
        .expect("fixture satisfies the loss preconditions");

    let mut csd_sign = 1.0;
    if fault == FaultInjection::FlipCsdSign {
        csd_sign = -1.0;
    }

    let mut rel = TermErrors::default();
    let mut probe = features.clone();
    for i in 0..features.data().len() {
        let original = features.data()[i];
        probe.data_mut()[i] = original + FD_STEP;
        let plus = total_loss(&probe, saliency, tags, weights, 0.5).unwrap();
        probe.data_mut()[i] = original - FD_STEP;
        let minus = total_loss(&probe, saliency, tags, weights, 0.5).unwrap();
        probe.data_mut()[i] = original;

        let scale = 2.0 * FD_STEP;
        rel.cls = rel
            .cls
            .max(rel_error(analytic.cls.data()[i], (plus.cls - minus.cls) / scale));
        rel.cad_ob = rel.cad_ob.max(rel_error(
            analytic.cad_ob.data()[i],
            (plus.cad_ob - minus.cad_ob) / scale,
        ));
        rel.cad_bg = rel.cad_bg.max(rel_error(
            analytic.cad_bg.data()[i],
            (plus.cad_bg - minus.cad_bg) / scale,
        ));
        rel.csd = rel.csd.max(rel_error(
            csd_sign * analytic.csd.data()[i],
            (plus.csd - minus.csd) / scale,
        ));
        rel.total = rel.total.max(rel_error(
            total_analytic.data()[i],
            (plus.total - minus.total) / scale,
        ));
    }

    FixtureErrors {
        rel,
        simple: analytic.simple,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_passes_within_tolerance() {
        let report = run(42, 30, DEFAULT_TOLERANCE).unwrap();
        assert!(report.passed, "max errors: {:?}", report.max_rel_error);
        // The fixture mix must actually exercise the relation terms.
        assert!(report.simple_trials >= 5, "{}", report.simple_trials);
    }

    #[test]
    fn zero_trials_is_a_validation_error() {
        assert!(matches!(
            run(1, 0, DEFAULT_TOLERANCE),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn injected_csd_sign_flip_is_caught_and_named() {
        let report = run_with_fault(42, 30, DEFAULT_TOLERANCE, FaultInjection::FlipCsdSign)
            .unwrap();
        assert!(!report.passed);
        assert!(report.failing_terms.contains(&"csd".to_string()));
        assert!(!report.failing_terms.contains(&"cls".to_string()));
        assert!(!report.failing_terms.contains(&"cad_ob".to_string()));
        assert!(!report.failing_terms.contains(&"cad_bg".to_string()));
    }
}
