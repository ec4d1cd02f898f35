//! Pseudo-label generation from CAMs plus saliency, and object-guided label
//! refinement.
//!
//! Initial labels combine two weak cues per pixel: the strongest normalized
//! CAM among the tagged classes, and the saliency value. Agreement labels
//! the pixel (foreground or background); disagreement marks it ignore.
//!
//! Refinement corrects a segmentation prediction with three sequential
//! rules driven by the image tags and the initial label:
//! 1. predictions of untagged classes become ignore,
//! 2. predicted background adopts the initial label wherever the initial
//!    label committed to something else,
//! 3. if any tagged class is still missing from the map, all remaining
//!    background becomes ignore, leaving rediscovery to retraining.
//!
//! Rules only ever consume background or invalid pixels, so valid class
//! predictions survive verbatim, background can only shrink, and the whole
//! transform is idempotent.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid2D, Grid3D, ImageTags, LabelMap, IGNORE_LABEL};
use crate::{Error, Result};

/// How to label a salient pixel whose strongest CAM is below the foreground
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictPolicy {
    /// Mark the pixel ignore.
    Ignore,
    /// Trust the argmax class anyway.
    Argmax,
}

/// Thresholds for initial pseudo-label generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelGenConfig {
    pub fg_threshold: f64,
    pub sal_threshold: f64,
    pub conflict_policy: ConflictPolicy,
}

impl Default for LabelGenConfig {
    fn default() -> Self {
        Self {
            fg_threshold: 0.3,
            sal_threshold: 0.5,
            conflict_policy: ConflictPolicy::Ignore,
        }
    }
}

impl LabelGenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fg_threshold", self.fg_threshold),
            ("sal_threshold", self.sal_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!(
                    "{name} must lie strictly inside (0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Generates the initial pseudo label from normalized CAMs and saliency at
/// a shared resolution.
///
/// Per pixel, with `v` the strongest tagged-class activation and `s` the
/// saliency: both cues above threshold label the argmax class, both below
/// label background, and disagreement labels ignore, unless the policy is
/// [`ConflictPolicy::Argmax`], which resolves the salient-but-unactivated
/// case to the argmax class.
pub fn generate_initial(
    cams: &Grid3D,
    saliency: &Grid2D,
    tags: &ImageTags,
    cfg: &LabelGenConfig,
) -> Result<LabelMap> {
    cfg.validate()?;
    if cams.channels() != tags.class_count() {
        return Err(Error::invalid(format!(
            "{} CAM channels but {} classes tagged",
            cams.channels(),
            tags.class_count()
        )));
    }
    if cams.height() != saliency.height() || cams.width() != saliency.width() {
        return Err(Error::invalid(format!(
            "CAM grid {}x{} does not match saliency {}x{}",
            cams.height(),
            cams.width(),
            saliency.height(),
            saliency.width()
        )));
    }

    let present = tags.class_indices();
    let mut labels = vec![0u8; saliency.len()];
    for row in 0..saliency.height() {
        for col in 0..saliency.width() {
            let mut best: Option<(usize, f64)> = None;
            for &class in &present {
                let v = cams.get(class - 1, row, col);
                // Ties go to the lowest class index.
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((class, v));
                }
            }
            let activated = best.is_some_and(|(_, v)| v >= cfg.fg_threshold);
            let salient = saliency.get(row, col) >= cfg.sal_threshold;

            let label = match (activated, salient) {
                (true, true) => best.unwrap().0 as u8,
                (false, false) => 0,
                (false, true) => match (cfg.conflict_policy, best) {
                    (ConflictPolicy::Argmax, Some((class, _))) => class as u8,
                    _ => IGNORE_LABEL,
                },
                (true, false) => IGNORE_LABEL,
            };
            labels[row * saliency.width() + col] = label;
        }
    }
    LabelMap::new(saliency.height(), saliency.width(), labels)
}

/// Behavior switches for [`refine_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefineOptions {
    /// Whether rule 2 copies ignore markers from the initial label onto
    /// predicted background (the literal reading of "initial label is
    /// nonzero"). With `false`, only committed class labels are copied and
    /// the pixel otherwise stays background.
    pub copy_ignore_from_initial: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            copy_ignore_from_initial: true,
        }
    }
}

/// Object-guided label refinement with default options.
pub fn refine(pred: &LabelMap, initial: &LabelMap, tags: &ImageTags) -> Result<LabelMap> {
    refine_with(pred, initial, tags, &RefineOptions::default())
}

/// Applies the three refinement rules in order on a copy of `pred`.
///
/// A label copied from the initial map is only trusted if its class is
/// tagged; an untagged class coming from the initial label is as misleading
/// as one in the prediction and is rewritten to ignore the same way rule 1
/// would. The output therefore never carries an untagged class regardless
/// of the inputs.
pub fn refine_with(
    pred: &LabelMap,
    initial: &LabelMap,
    tags: &ImageTags,
    opts: &RefineOptions,
) -> Result<LabelMap> {
    if pred.height() != initial.height() || pred.width() != initial.width() {
        return Err(Error::invalid(format!(
            "prediction {}x{} does not match initial label {}x{}",
            pred.height(),
            pred.width(),
            initial.height(),
            initial.width()
        )));
    }
    let tagged = |v: u8| v != 0 && v != IGNORE_LABEL && tags.is_present(v as usize);

    let mut out = pred.labels().to_vec();

    // Rule 1: predictions of classes that cannot exist become ignore.
    for v in out.iter_mut() {
        if *v != 0 && *v != IGNORE_LABEL && !tagged(*v) {
            *v = IGNORE_LABEL;
        }
    }

    // Rule 2: predicted background adopts the initial label where that
    // label committed to anything else.
    for (v, &init) in out.iter_mut().zip(initial.labels()) {
        if *v == 0 && init != 0 {
            if tagged(init) {
                *v = init;
            } else if opts.copy_ignore_from_initial {
                *v = IGNORE_LABEL;
            }
        }
    }

    // Rule 3: a tagged class absent from the current map means objects were
    // missed somewhere; every remaining background pixel becomes unreliable.
    let mut seen = vec![false; tags.class_count() + 1];
    for &v in &out {
        if v != 0 && v != IGNORE_LABEL && (v as usize) < seen.len() {
            seen[v as usize] = true;
        }
    }
    let missing = (1..=tags.class_count()).any(|c| tags.is_present(c) && !seen[c]);
    if missing {
        for v in out.iter_mut() {
            if *v == 0 {
                *v = IGNORE_LABEL;
            }
        }
    }

    LabelMap::new(pred.height(), pred.width(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(present: &[usize], class_count: usize) -> ImageTags {
        ImageTags::new("t", present, class_count).unwrap()
    }

    fn map(h: usize, w: usize, labels: &[u8]) -> LabelMap {
        LabelMap::new(h, w, labels.to_vec()).unwrap()
    }

    #[test]
    fn all_quiet_pixels_become_background() {
        let cams = Grid3D::zeros(2, 3, 3).unwrap();
        let sal = Grid2D::zeros(3, 3).unwrap();
        let out = generate_initial(&cams, &sal, &tags(&[1], 2), &LabelGenConfig::default()).unwrap();
        assert!(out.labels().iter().all(|&v| v == 0));
    }

    #[test]
    fn agreeing_block_is_labeled() {
        let mut cams = Grid3D::zeros(2, 4, 4).unwrap();
        let mut sal = Grid2D::zeros(4, 4).unwrap();
        for r in 1..3 {
            for c in 1..3 {
                cams.set(1, r, c, 1.0);
                sal.set(r, c, 1.0);
            }
        }
        let out = generate_initial(&cams, &sal, &tags(&[2], 2), &LabelGenConfig::default()).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expected = if (1..3).contains(&r) && (1..3).contains(&c) { 2 } else { 0 };
                assert_eq!(out.get(r, c), expected);
            }
        }
    }

    #[test]
    fn activated_but_non_salient_is_ignore() {
        let mut cams = Grid3D::zeros(1, 1, 1).unwrap();
        cams.set(0, 0, 0, 0.9);
        let sal = Grid2D::new(1, 1, vec![0.1]).unwrap();
        let cfg = LabelGenConfig {
            fg_threshold: 0.3,
            sal_threshold: 0.5,
            conflict_policy: ConflictPolicy::Ignore,
        };
        let out = generate_initial(&cams, &sal, &tags(&[1], 1), &cfg).unwrap();
        assert_eq!(out.get(0, 0), IGNORE_LABEL);

        // The argmax policy only rescues the salient-but-unactivated case.
        let cfg = LabelGenConfig {
            conflict_policy: ConflictPolicy::Argmax,
            ..cfg
        };
        let out = generate_initial(&cams, &sal, &tags(&[1], 1), &cfg).unwrap();
        assert_eq!(out.get(0, 0), IGNORE_LABEL);
    }

    #[test]
    fn salient_but_unactivated_follows_policy() {
        let cams = Grid3D::zeros(2, 1, 1).unwrap();
        let sal = Grid2D::new(1, 1, vec![0.9]).unwrap();
        let ignore = generate_initial(&cams, &sal, &tags(&[2], 2), &LabelGenConfig::default())
            .unwrap();
        assert_eq!(ignore.get(0, 0), IGNORE_LABEL);

        let cfg = LabelGenConfig {
            conflict_policy: ConflictPolicy::Argmax,
            ..LabelGenConfig::default()
        };
        let argmax = generate_initial(&cams, &sal, &tags(&[2], 2), &cfg).unwrap();
        assert_eq!(argmax.get(0, 0), 2);
    }

    #[test]
    fn generation_rejects_mismatched_shapes_and_thresholds() {
        let cams = Grid3D::zeros(1, 2, 2).unwrap();
        let sal = Grid2D::zeros(3, 2).unwrap();
        assert!(generate_initial(&cams, &sal, &tags(&[1], 1), &LabelGenConfig::default()).is_err());

        let sal = Grid2D::zeros(2, 2).unwrap();
        let bad = LabelGenConfig {
            fg_threshold: 0.0,
            ..LabelGenConfig::default()
        };
        assert!(generate_initial(&cams, &sal, &tags(&[1], 1), &bad).is_err());
    }

    #[test]
    fn generated_labels_only_use_tagged_classes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let c = rng.random_range(1..5usize);
            let (h, w) = (rng.random_range(1..6usize), rng.random_range(1..6usize));
            let cams = Grid3D::new(c, h, w, (0..c * h * w).map(|_| rng.random()).collect()).unwrap();
            let sal = Grid2D::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap();
            let present: Vec<usize> = (1..=c).filter(|_| rng.random_bool(0.6)).collect();
            let present = if present.is_empty() { vec![1] } else { present };
            let y = tags(&present, c);
            let out = generate_initial(&cams, &sal, &y, &LabelGenConfig::default()).unwrap();
            for &v in out.labels() {
                assert!(v == 0 || v == IGNORE_LABEL || y.is_present(v as usize));
            }
        }
    }

    #[test]
    fn refine_filters_then_mines_everything() {
        // Prediction claims class 3 which is untagged; the only tagged
        // class (1) appears nowhere, so after filtering, every background
        // pixel is mined to ignore: the whole map ends up 255.
        let pred = map(2, 2, &[3, 3, 0, 0]);
        let initial = map(2, 2, &[0, 0, 0, 0]);
        let out = refine(&pred, &initial, &tags(&[1], 3)).unwrap();
        assert!(out.labels().iter().all(|&v| v == IGNORE_LABEL));
    }

    #[test]
    fn refine_is_identity_when_consistent() {
        let pred = map(2, 2, &[1, 2, 0, 0]);
        let out = refine(&pred, &pred, &tags(&[1, 2], 2)).unwrap();
        assert_eq!(out, pred);
    }

    #[test]
    fn refine_relabels_background_from_initial() {
        let pred = map(2, 2, &[0, 0, 0, 0]);
        let initial = map(2, 2, &[2, 2, 0, 0]);
        let out = refine(&pred, &initial, &tags(&[2], 2)).unwrap();
        assert_eq!(out.labels(), &[2, 2, 0, 0]);
    }

    #[test]
    fn refine_copies_ignore_only_when_asked() {
        let pred = map(1, 3, &[0, 0, 1]);
        let initial = map(1, 3, &[IGNORE_LABEL, 0, 0]);
        let y = tags(&[1], 2);
        let literal = refine(&pred, &initial, &y).unwrap();
        assert_eq!(literal.labels(), &[IGNORE_LABEL, 0, 1]);

        let opts = RefineOptions {
            copy_ignore_from_initial: false,
        };
        let class_only = refine_with(&pred, &initial, &y, &opts).unwrap();
        assert_eq!(class_only.labels(), &[0, 0, 1]);
    }

    #[test]
    fn refine_never_copies_untagged_classes_from_initial() {
        let pred = map(1, 2, &[0, 1]);
        let initial = map(1, 2, &[2, 0]);
        let y = tags(&[1], 2);
        let out = refine(&pred, &initial, &y).unwrap();
        // Class 2 is untagged: the copy is rewritten to ignore.
        assert_eq!(out.labels(), &[IGNORE_LABEL, 1]);
    }

    #[test]
    fn refine_rejects_mismatched_shapes() {
        let pred = map(1, 2, &[0, 0]);
        let initial = map(2, 1, &[0, 0]);
        assert!(refine(&pred, &initial, &tags(&[1], 1)).is_err());
    }

    fn arb_label() -> impl Strategy<Value = u8> {
        prop::sample::select(vec![0u8, 1, 2, IGNORE_LABEL])
    }

    fn arb_tags() -> impl Strategy<Value = ImageTags> {
        prop::sample::select(vec![
            tags(&[1], 2),
            tags(&[2], 2),
            tags(&[1, 2], 2),
        ])
    }

    proptest! {
        #[test]
        fn refine_properties_hold_for_random_triples(
            pred_labels in prop::collection::vec(arb_label(), 9),
            init_labels in prop::collection::vec(arb_label(), 9),
            y in arb_tags(),
        ) {
            let pred = map(3, 3, &pred_labels);
            let initial = map(3, 3, &init_labels);
            let once = refine(&pred, &initial, &y).unwrap();
            let twice = refine(&once, &initial, &y).unwrap();
            prop_assert_eq!(&once, &twice, "idempotence");

            for (i, (&before, &after)) in pred.labels().iter().zip(once.labels()).enumerate() {
                if before != 0 && before != IGNORE_LABEL && y.is_present(before as usize) {
                    prop_assert_eq!(before, after, "tagged pixel {} changed", i);
                }
                if after == 0 {
                    prop_assert_eq!(before, 0, "background appeared at {}", i);
                }
                if after != 0 && after != IGNORE_LABEL {
                    prop_assert!(y.is_present(after as usize), "untagged class survived at {}", i);
                }
            }
        }
    }
}
