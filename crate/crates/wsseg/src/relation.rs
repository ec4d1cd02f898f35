//! Saliency-guided prototype relation losses and their analytic gradients.
//!
//! For a simple image (exactly one tagged class) the binarized saliency mask
//! approximates the object mask. Masked average pooling of the upsampled
//! attention map under that mask gives an object prototype, and under the
//! inverted mask a background prototype. Three losses are built from them:
//!
//! - the object class-agnostic distance term pulls masked attention values
//!   toward the object prototype (masked mean squared distance),
//! - the background term does the same under the inverted mask, preventing
//!   the network from dodging the constraint by shifting activation into
//!   the background,
//! - the class-specific distance term `y . p_bg - y . p_ob` pushes the
//!   present class's object activation above its background activation.
//!
//! Resolution plumbing: prototypes are pooled at saliency resolution from
//! the bilinearly upsampled attention map, while the distance terms average
//! at attention resolution under area-resized masks. The combined objective
//! adds the classification loss, which applies to every image; the relation
//! terms are gated to simple images whose masks have usable support at both
//! resolutions.
//!
//! Gradients flow through the prototypes by default (full chain rule,
//! including the bilinear upsampling adjoint); `detach_prototypes` treats
//! them as constants instead. Everything here is validated against central
//! finite differences in [`crate::gradcheck`].

use serde::{Deserialize, Serialize};

use crate::cam::{cls_loss, cls_loss_grad, gap};
use crate::grid::{
    bilinear_adjoint, binarize, invert_mask, resize_mask, upsample_channels, Grid2D, Grid3D,
    ImageTags,
};
use crate::{Error, Result};

/// Masks with support at or below this many pixels are considered empty.
pub const SUPPORT_EPSILON: f64 = 1e-6;

/// Mask-weighted mean feature vector plus the mask mass it was pooled over.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub values: Vec<f64>,
    pub support: f64,
}

/// Relative weights of the relation terms in the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ob: f64,
    pub lambda_bg: f64,
    pub lambda_csd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ob: 0.01,
            lambda_bg: 0.025,
            lambda_csd: 0.1,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_ob: 0.0,
        lambda_bg: 0.0,
        lambda_csd: 0.0,
    };

    fn check(&self) -> Result<()> {
        if self.lambda_ob < 0.0 || self.lambda_bg < 0.0 || self.lambda_csd < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Per-term loss values for one image. `total` already applies the weights;
/// the individual terms are unweighted. `simple` records whether the
/// relation terms were active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub cad_ob: f64,
    pub cad_bg: f64,
    pub csd: f64,
    pub total: f64,
    pub simple: bool,
}

/// Whether exactly one foreground class is tagged. Only such images get the
/// relation losses; the saliency-equals-object-mask approximation breaks
/// down with multiple categories.
pub fn is_simple(tags: &ImageTags) -> bool {
    tags.present_count() == 1
}

/// Masked average pooling: `p_c = sum(M * F_c) / sum(M)` over pixels.
///
/// `features` must already live at the mask's resolution. Fails with
/// [`Error::EmptySupport`] when the mask mass is at or below
/// [`SUPPORT_EPSILON`]; callers skip the relation losses for that image.
pub fn masked_prototype(features: &Grid3D, mask: &Grid2D) -> Result<Prototype> {
    if features.height() != mask.height() || features.width() != mask.width() {
        return Err(Error::invalid(format!(
            "feature grid {}x{} does not match mask {}x{}",
            features.height(),
            features.width(),
            mask.height(),
            mask.width()
        )));
    }
    let support = mask.sum();
    if support <= SUPPORT_EPSILON {
        return Err(Error::EmptySupport);
    }
    let values = (0..features.channels())
        .map(|c| {
            features
                .channel(c)
                .iter()
                .zip(mask.data())
                .map(|(&f, &m)| m * f)
                .sum::<f64>()
                / support
        })
        .collect();
    Ok(Prototype { values, support })
}

/// Class-agnostic distance loss: the masked mean over pixels of the
/// per-pixel channel-mean squared distance to the prototype,
/// `(1/sum(M)) * sum_ij M_ij * (1/C) * sum_c (F_cij - p_c)^2`.
pub fn cad_loss(features: &Grid3D, mask: &Grid2D, prototype: &Prototype) -> Result<f64> {
    if features.height() != mask.height() || features.width() != mask.width() {
        return Err(Error::invalid(format!(
            "feature grid {}x{} does not match mask {}x{}",
            features.height(),
            features.width(),
            mask.height(),
            mask.width()
        )));
    }
    if prototype.values.len() != features.channels() {
        return Err(Error::invalid(format!(
            "prototype length {} does not match {} channels",
            prototype.values.len(),
            features.channels()
        )));
    }
    let support = mask.sum();
    if support <= SUPPORT_EPSILON {
        return Err(Error::EmptySupport);
    }
    let class_count = features.channels() as f64;
    let mut sum = 0.0;
    for (c, &p) in prototype.values.iter().enumerate() {
        sum += features
            .channel(c)
            .iter()
            .zip(mask.data())
            .map(|(&f, &m)| {
                let d = f - p;
                m * d * d
            })
            .sum::<f64>();
    }
    Ok(sum / (class_count * support))
}

/// Class-specific distance loss `y . p_bg - y . p_ob`: negative when the
/// present class activates the object region above the background, and
/// antisymmetric under swapping the prototypes.
pub fn csd_loss(object: &Prototype, background: &Prototype, tags: &ImageTags) -> f64 {
    assert_eq!(object.values.len(), background.values.len());
    assert_eq!(object.values.len(), tags.class_count());
    object
        .values
        .iter()
        .zip(&background.values)
        .zip(tags.present())
        .map(|((&p, &pb), &present)| if present { pb - p } else { 0.0 })
        .sum()
}

/// Everything the relation terms share between the value and gradient paths.
struct RelationContext {
    object_mask: Grid2D,
    background_mask: Grid2D,
    object_mask_attn: Grid2D,
    background_mask_attn: Grid2D,
    object_prototype: Prototype,
    background_prototype: Prototype,
}

/// Builds the masks and prototypes, or `None` when any mask degenerates at
/// either resolution (empty object or background region). The gate depends
/// only on the saliency input, never on the attention values, so loss
/// values stay differentiable in the features wherever they are defined.
fn relation_context(
    features: &Grid3D,
    saliency: &Grid2D,
    sal_threshold: f64,
) -> Result<Option<RelationContext>> {
    let object_mask = binarize(saliency, sal_threshold)?;
    let background_mask = invert_mask(&object_mask)?;
    if object_mask.sum() <= SUPPORT_EPSILON || background_mask.sum() <= SUPPORT_EPSILON {
        return Ok(None);
    }

    let object_mask_attn = resize_mask(&object_mask, features.height(), features.width())?;
    let background_mask_attn = resize_mask(&background_mask, features.height(), features.width())?;
    if object_mask_attn.sum() <= SUPPORT_EPSILON
        || background_mask_attn.sum() <= SUPPORT_EPSILON
    {
        return Ok(None);
    }

    let upsampled = upsample_channels(features, saliency.height(), saliency.width())?;
    let object_prototype = masked_prototype(&upsampled, &object_mask)?;
    let background_prototype = masked_prototype(&upsampled, &background_mask)?;

    Ok(Some(RelationContext {
        object_mask,
        background_mask,
        object_mask_attn,
        background_mask_attn,
        object_prototype,
        background_prototype,
    }))
}

/// Combined objective for one image: classification loss always, plus the
/// weighted relation terms when the image is simple and both masks have
/// usable support at both resolutions. Degenerate masks downgrade to
/// classification-only and record `simple = false`.
pub fn total_loss(
    features: &Grid3D,
    saliency: &Grid2D,
    tags: &ImageTags,
    weights: &LossWeights,
    sal_threshold: f64,
) -> Result<LossBreakdown> {
    check_tags(features, tags)?;
    weights.check()?;
    let cls = cls_loss(&gap(features), tags);

    let ctx = if is_simple(tags) {
        relation_context(features, saliency, sal_threshold)?
    } else {
        None
    };

    let Some(ctx) = ctx else {
        return Ok(LossBreakdown {
            cls,
            cad_ob: 0.0,
            cad_bg: 0.0,
            csd: 0.0,
            total: cls,
            simple: false,
        });
    };

    let cad_ob = cad_loss(features, &ctx.object_mask_attn, &ctx.object_prototype)?;
    let cad_bg = cad_loss(features, &ctx.background_mask_attn, &ctx.background_prototype)?;
    let csd = csd_loss(&ctx.object_prototype, &ctx.background_prototype, tags);
    let total =
        cls + weights.lambda_ob * cad_ob + weights.lambda_bg * cad_bg + weights.lambda_csd * csd;
    Ok(LossBreakdown {
        cls,
        cad_ob,
        cad_bg,
        csd,
        total,
        simple: true,
    })
}

/// Unweighted per-term gradients with respect to the attention map, plus
/// the gate flag. Gated-off terms have identically zero gradients.
#[derive(Debug, Clone)]
pub struct TermGradients {
    pub cls: Grid3D,
    pub cad_ob: Grid3D,
    pub cad_bg: Grid3D,
    pub csd: Grid3D,
    pub simple: bool,
}

/// Gradient of every loss term with respect to each attention value.
///
/// With `detach_prototypes = false` (the default behavior of
/// [`total_loss_grad`]) the chain rule runs through the prototypes: pooling
/// at saliency resolution contributes through the adjoint of the bilinear
/// upsampling. With `detach_prototypes = true` the prototypes are treated
/// as constants, which leaves only the direct distance-field terms and
/// zeroes the class-specific gradient entirely.
pub fn loss_term_gradients(
    features: &Grid3D,
    saliency: &Grid2D,
    tags: &ImageTags,
    sal_threshold: f64,
    detach_prototypes: bool,
) -> Result<TermGradients> {
    check_tags(features, tags)?;
    let channels = features.channels();
    let (attn_h, attn_w) = (features.height(), features.width());
    let pixels = (attn_h * attn_w) as f64;

    // Classification: GAP spreads each score gradient uniformly.
    let score_grad = cls_loss_grad(&gap(features), tags);
    let mut cls = Grid3D::zeros(channels, attn_h, attn_w)?;
    for (c, &g) in score_grad.iter().enumerate() {
        cls.channel_mut(c).fill(g / pixels);
    }

    let mut out = TermGradients {
        cls,
        cad_ob: Grid3D::zeros(channels, attn_h, attn_w)?,
        cad_bg: Grid3D::zeros(channels, attn_h, attn_w)?,
        csd: Grid3D::zeros(channels, attn_h, attn_w)?,
        simple: false,
    };

    let ctx = if is_simple(tags) {
        relation_context(features, saliency, sal_threshold)?
    } else {
        None
    };
    let Some(ctx) = ctx else {
        return Ok(out);
    };
    out.simple = true;

    let class_count = channels as f64;
    let attn_ob = &ctx.object_mask_attn;
    let attn_bg = &ctx.background_mask_attn;
    let support_ob = attn_ob.sum();
    let support_bg = attn_bg.sum();

    // Pooling-path carriers: how a unit change of a prototype entry traces
    // back to each attention value. Only needed when gradients flow through
    // the prototypes.
    let pooled = if detach_prototypes {
        None
    } else {
        let adj_ob = bilinear_adjoint(&ctx.object_mask, attn_h, attn_w)?;
        let adj_bg = bilinear_adjoint(&ctx.background_mask, attn_h, attn_w)?;
        Some((adj_ob, adj_bg))
    };

    for c in 0..channels {
        let p_ob = ctx.object_prototype.values[c];
        let p_bg = ctx.background_prototype.values[c];
        let feat = features.channel(c);

        // Direct distance-field terms at attention resolution, and the
        // masked deviation sums feeding the prototype path.
        let mut dev_sum_ob = 0.0;
        let mut dev_sum_bg = 0.0;
        {
            let grad_ob = out.cad_ob.channel_mut(c);
            for (i, (&f, &m)) in feat.iter().zip(attn_ob.data()).enumerate() {
                let d = f - p_ob;
                grad_ob[i] = 2.0 * m * d / (support_ob * class_count);
                dev_sum_ob += m * d;
            }
        }
        {
            let grad_bg = out.cad_bg.channel_mut(c);
            for (i, (&f, &m)) in feat.iter().zip(attn_bg.data()).enumerate() {
                let d = f - p_bg;
                grad_bg[i] = 2.0 * m * d / (support_bg * class_count);
                dev_sum_bg += m * d;
            }
        }

        if let Some((adj_ob, adj_bg)) = &pooled {
            // d(cad)/d(p) routed through masked pooling of the upsampled map.
            let cad_ob_via_p = -2.0 * dev_sum_ob / (support_ob * class_count);
            let cad_bg_via_p = -2.0 * dev_sum_bg / (support_bg * class_count);
            let y = if tags.is_present(c + 1) { 1.0 } else { 0.0 };
            let pool_ob = ctx.object_prototype.support;
            let pool_bg = ctx.background_prototype.support;

            let grad_ob = out.cad_ob.channel_mut(c);
            for (g, &a) in grad_ob.iter_mut().zip(adj_ob.data()) {
                *g += cad_ob_via_p * a / pool_ob;
            }
            let grad_bg = out.cad_bg.channel_mut(c);
            for (g, &a) in grad_bg.iter_mut().zip(adj_bg.data()) {
                *g += cad_bg_via_p * a / pool_bg;
            }
            if y != 0.0 {
                let grad_csd = out.csd.channel_mut(c);
                for (g, (&a_ob, &a_bg)) in grad_csd
                    .iter_mut()
                    .zip(adj_ob.data().iter().zip(adj_bg.data()))
                {
                    *g = y * (a_bg / pool_bg - a_ob / pool_ob);
                }
            }
        }
    }

    Ok(out)
}

/// Gradient of [`total_loss`] with respect to the attention map, with
/// gradients flowing through the prototypes.
pub fn total_loss_grad(
    features: &Grid3D,
    saliency: &Grid2D,
    tags: &ImageTags,
    weights: &LossWeights,
    sal_threshold: f64,
) -> Result<Grid3D> {
    total_loss_grad_with(features, saliency, tags, weights, sal_threshold, false)
}

/// [`total_loss_grad`] with an explicit prototype-detach choice.
pub fn total_loss_grad_with(
    features: &Grid3D,
    saliency: &Grid2D,
    tags: &ImageTags,
    weights: &LossWeights,
    sal_threshold: f64,
    detach_prototypes: bool,
) -> Result<Grid3D> {
    weights.check()?;
    let terms = loss_term_gradients(features, saliency, tags, sal_threshold, detach_prototypes)?;
    let mut out = terms.cls;
    for ((v, &ob), (&bg, &csd)) in out
        .data_mut()
        .iter_mut()
        .zip(terms.cad_ob.data())
        .zip(terms.cad_bg.data().iter().zip(terms.csd.data()))
    {
        *v += weights.lambda_ob * ob + weights.lambda_bg * bg + weights.lambda_csd * csd;
    }
    Ok(out)
}

fn check_tags(features: &Grid3D, tags: &ImageTags) -> Result<()> {
    if tags.class_count() != features.channels() {
        return Err(Error::invalid(format!(
            "tag vector covers {} classes but the attention map has {} channels",
            tags.class_count(),
            features.channels()
        )));
    }
    Ok(())
}
