//! Class activation maps and the multi-label classification loss.
//!
//! The attention map is produced externally by a class-aware convolutional
//! layer; this module turns it into per-class scores (global average
//! pooling), normalized activation maps, and the multi-label soft-margin
//! loss with its analytic gradient.

use crate::grid::{Grid2D, Grid3D, ImageTags};

/// Channels whose maximum activation is at or below this are treated as
/// inactive: normalization returns the zero map instead of dividing.
pub const CAM_EPSILON: f64 = 1e-12;

/// Pre-sigmoid per-class prediction scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub values: Vec<f64>,
}

impl ClassScores {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Global average pooling: one score per channel, the spatial mean.
pub fn gap(features: &Grid3D) -> ClassScores {
    let pixels = features.pixels() as f64;
    let values = (0..features.channels())
        .map(|c| features.channel(c).iter().sum::<f64>() / pixels)
        .collect();
    ClassScores { values }
}

/// Normalizes one attention channel into `[0, 1]`: negative values are
/// clipped to zero and the rest divided by the channel maximum. A channel
/// whose maximum is at or below [`CAM_EPSILON`] yields the zero map, the
/// limit of the clipped map as activation vanishes.
pub fn normalize_cam(features: &Grid3D, channel: usize) -> Grid2D {
    assert!(
        channel < features.channels(),
        "channel {channel} out of range for {} channels",
        features.channels()
    );
    let raw = features.channel(channel);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let data = if max <= CAM_EPSILON {
        vec![0.0; raw.len()]
    } else {
        raw.iter().map(|&v| v.max(0.0) / max).collect()
    };
    Grid2D::new(features.height(), features.width(), data)
        .expect("channel dimensions are valid")
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow on either side.
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Multi-label soft-margin classification loss,
/// `-(1/C) * sum_c [ y_c ln s(q_c) + (1 - y_c) ln(1 - s(q_c)) ]`
/// with `s` the sigmoid. Evaluated through log-sigmoid identities so large
/// scores saturate gracefully instead of producing infinities.
pub fn cls_loss(scores: &ClassScores, tags: &ImageTags) -> f64 {
    assert_eq!(
        scores.len(),
        tags.class_count(),
        "score and tag lengths differ"
    );
    let class_count = scores.len() as f64;
    scores
        .values
        .iter()
        .zip(tags.present())
        .map(|(&q, &present)| if present { softplus(-q) } else { softplus(q) })
        .sum::<f64>()
        / class_count
}

/// Gradient of [`cls_loss`] with respect to the scores:
/// `(s(q_c) - y_c) / C`.
pub fn cls_loss_grad(scores: &ClassScores, tags: &ImageTags) -> Vec<f64> {
    assert_eq!(
        scores.len(),
        tags.class_count(),
        "score and tag lengths differ"
    );
    let class_count = scores.len() as f64;
    scores
        .values
        .iter()
        .zip(tags.present())
        .map(|(&q, &present)| (sigmoid(q) - if present { 1.0 } else { 0.0 }) / class_count)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid3D;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn tags(present: &[usize], class_count: usize) -> ImageTags {
        ImageTags::new("t", present, class_count).unwrap()
    }

    #[test]
    fn gap_means_each_channel() {
        let f = Grid3D::new(2, 2, 2, vec![2.0, 2.0, 2.0, 2.0, 1.0, 3.0, 5.0, 7.0]).unwrap();
        let q = gap(&f);
        assert_eq!(q.values, vec![2.0, 4.0]);

        let zero = Grid3D::zeros(3, 4, 4).unwrap();
        assert!(gap(&zero).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_cam_clips_and_scales() {
        let f = Grid3D::new(1, 2, 2, vec![-1.0, 2.0, 4.0, 0.0]).unwrap();
        let a = normalize_cam(&f, 0);
        assert_eq!(a.data(), &[0.0, 0.5, 1.0, 0.0][..]);
    }

    #[test]
    fn normalize_cam_degenerate_channels_become_zero() {
        let negative = Grid3D::new(1, 1, 3, vec![-3.0, -1.0, -0.5]).unwrap();
        assert!(normalize_cam(&negative, 0).data().iter().all(|&v| v == 0.0));

        let constant = Grid3D::new(1, 2, 2, vec![4.0; 4]).unwrap();
        assert!(normalize_cam(&constant, 0).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cls_loss_at_zero_scores_is_ln_2() {
        for present in [&[1][..], &[2][..], &[1, 3][..]] {
            let q = ClassScores {
                values: vec![0.0; 3],
            };
            let loss = cls_loss(&q, &tags(present, 3));
            assert!((loss - 2.0f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn cls_loss_matches_hand_worked_value() {
        let q = ClassScores {
            values: vec![2.0, -2.0],
        };
        let loss = cls_loss(&q, &tags(&[1], 2));
        assert!((loss - 0.12692801104297258).abs() < 1e-12);
    }

    #[test]
    fn cls_loss_vanishes_for_confident_correct_scores() {
        let q = ClassScores {
            values: vec![60.0, 60.0],
        };
        let loss = cls_loss(&q, &tags(&[1, 2], 2));
        assert!((0.0..1e-12).contains(&loss));

        // Saturation must not produce infinities.
        let q = ClassScores {
            values: vec![500.0, -500.0],
        };
        assert!(cls_loss(&q, &tags(&[2], 2)).is_finite());
    }

    #[test]
    fn cls_grad_at_zero_scores() {
        let c = 4;
        let q = ClassScores {
            values: vec![0.0; c],
        };
        let g = cls_loss_grad(&q, &tags(&[1], c));
        assert!((g[0] + 0.5 / c as f64).abs() < 1e-15);
        for &v in &g[1..] {
            assert!((v - 0.5 / c as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn cls_grad_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let step = 1e-5;
        for _ in 0..100 {
            let c = rng.random_range(1..6usize);
            let values: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
            let present: Vec<usize> =
                (1..=c).filter(|_| rng.random_bool(0.5)).collect();
            let y = tags(&present, c);
            let q = ClassScores { values };
            let grad = cls_loss_grad(&q, &y);
            for i in 0..c {
                let mut plus = q.clone();
                plus.values[i] += step;
                let mut minus = q.clone();
                minus.values[i] -= step;
                let numeric = (cls_loss(&plus, &y) - cls_loss(&minus, &y)) / (2.0 * step);
                let denom = grad[i].abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((grad[i] - numeric) / denom).abs() < 1e-6,
                    "analytic {} vs numeric {}",
                    grad[i],
                    numeric
                );
            }
        }
    }

    proptest! {
        #[test]
        fn cls_loss_is_permutation_invariant(
            values in prop::collection::vec(-5.0f64..5.0, 2..6),
            mask in prop::collection::vec(prop::bool::ANY, 2..6),
            rot in 0usize..5,
        ) {
            let n = values.len().min(mask.len());
            let values = &values[..n];
            let mask = &mask[..n];
            let rot = rot % n;

            let base = cls_loss(
                &ClassScores { values: values.to_vec() },
                &ImageTags::from_present("p", mask.to_vec()),
            );
            let mut rv = values.to_vec();
            rv.rotate_left(rot);
            let mut rm = mask.to_vec();
            rm.rotate_left(rot);
            let rotated = cls_loss(
                &ClassScores { values: rv },
                &ImageTags::from_present("p", rm),
            );
            prop_assert!((base - rotated).abs() < 1e-12);
        }

        #[test]
        fn normalized_cams_stay_in_unit_range(
            data in prop::collection::vec(-10.0f64..10.0, 4..32),
        ) {
            let w = 4;
            let h = data.len() / w;
            let f = Grid3D::new(1, h, w, data[..h * w].to_vec()).unwrap();
            let a = normalize_cam(&f, 0);
            let max = f.channel(0).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for &v in a.data() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if max > CAM_EPSILON {
                prop_assert!(a.data().iter().any(|&v| (v - 1.0).abs() < 1e-12));
            }
        }
    }
}
