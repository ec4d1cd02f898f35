//! Dense 2-D/3-D real grids, label maps, image tags, resampling, and mask
//! algebra.
//!
//! Grids are immutable after construction and every operation here is a pure
//! function, so they can be shared across worker threads freely. Values are
//! stored as `f64` even though the on-disk tensor format is 32-bit; the
//! finite-difference gradient checks need the extra precision.

use crate::{Error, Result};

/// Pixel value that marks a label as "ignore" in [`LabelMap`]s.
pub const IGNORE_LABEL: u8 = 255;

/// A dense real-valued 2-D grid in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "grid data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dimensions are always >= 1
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Sum of all values; for binary masks this is the mask support.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// A dense real-valued 3-D grid, channel-major then row-major.
///
/// Houses per-class attention maps and distance fields: `channels` is the
/// class count, the spatial extent is the attention resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid3D {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "grid data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    /// Contiguous row-major slice of one channel.
    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn channel_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    /// Copies one channel out as a [`Grid2D`].
    pub fn channel_grid(&self, channel: usize) -> Grid2D {
        Grid2D::new(self.height, self.width, self.channel(channel).to_vec())
            .expect("channel slice has matching length")
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Per-pixel class assignment: `0` is background, `1..=C` are foreground
/// classes, [`IGNORE_LABEL`] marks pixels excluded from loss and evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::invalid(format!(
                "label data length {} does not match {height}x{width}",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        self.labels[row * self.width + col] = label;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }
}

/// Image-level supervision: which of the `C` foreground classes are present.
///
/// Class indices are 1-based to line up with label-map values; index 0 is
/// reserved for background and never appears in a tag set. Training images
/// carry at least one present class; the all-absent vector is still
/// representable because evaluation-only records may produce it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTags {
    image_id: String,
    present: Vec<bool>,
}

impl ImageTags {
    /// Builds tags for `class_count` foreground classes from 1-based class
    /// indices. Out-of-range indices are rejected.
    pub fn new(
        image_id: impl Into<String>,
        classes: &[usize],
        class_count: usize,
    ) -> Result<Self> {
        let mut present = vec![false; class_count];
        for &c in classes {
            if c == 0 || c > class_count {
                return Err(Error::invalid(format!(
                    "class index {c} outside 1..={class_count}"
                )));
            }
            present[c - 1] = true;
        }
        Ok(Self {
            image_id: image_id.into(),
            present,
        })
    }

    pub fn from_present(image_id: impl Into<String>, present: Vec<bool>) -> Self {
        Self {
            image_id: image_id.into(),
            present,
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    /// Number of foreground classes C.
    pub fn class_count(&self) -> usize {
        self.present.len()
    }

    /// Whether 1-based class `class` is present. Out-of-range queries are
    /// treated as absent.
    pub fn is_present(&self, class: usize) -> bool {
        class >= 1 && class <= self.present.len() && self.present[class - 1]
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Present classes as sorted 1-based indices.
    pub fn class_indices(&self) -> Vec<usize> {
        self.present
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| p.then_some(i + 1))
            .collect()
    }
}

/// Per-axis bilinear sample: (low index, high index, fraction toward high).
///
/// Corner-aligned: destination index `t` maps to source coordinate
/// `t * (S - 1) / (T - 1)`; a single-element destination maps to source
/// index 0.
fn axis_samples(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    (0..dst_len)
        .map(|t| {
            if dst_len == 1 {
                return (0, 0, 0.0);
            }
            let pos = (t as f64 * (src_len - 1) as f64) / (dst_len - 1) as f64;
            let pos = pos.clamp(0.0, (src_len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn upsample_into(
    src: &[f64],
    src_w: usize,
    rows: &[(usize, usize, f64)],
    cols: &[(usize, usize, f64)],
    out: &mut Vec<f64>,
) {
    for &(r0, r1, fr) in rows {
        for &(c0, c1, fc) in cols {
            let top = src[r0 * src_w + c0] * (1.0 - fc) + src[r0 * src_w + c1] * fc;
            let bottom = src[r1 * src_w + c0] * (1.0 - fc) + src[r1 * src_w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
}

fn check_target(target_h: usize, target_w: usize) -> Result<()> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid(format!(
            "target dimensions must be positive, got {target_h}x{target_w}"
        )));
    }
    Ok(())
}

/// Bilinearly resamples `src` to `target_h` x `target_w` with corner-aligned
/// sampling. Outputs are convex combinations of source values, so they stay
/// inside the source min/max envelope.
pub fn upsample_bilinear(src: &Grid2D, target_h: usize, target_w: usize) -> Result<Grid2D> {
    check_target(target_h, target_w)?;
    let rows = axis_samples(src.height, target_h);
    let cols = axis_samples(src.width, target_w);
    let mut out = Vec::with_capacity(target_h * target_w);
    upsample_into(&src.data, src.width, &rows, &cols, &mut out);
    Grid2D::new(target_h, target_w, out)
}

/// [`upsample_bilinear`] applied to every channel of a [`Grid3D`].
pub fn upsample_channels(src: &Grid3D, target_h: usize, target_w: usize) -> Result<Grid3D> {
    check_target(target_h, target_w)?;
    let rows = axis_samples(src.height, target_h);
    let cols = axis_samples(src.width, target_w);
    let mut out = Vec::with_capacity(src.channels * target_h * target_w);
    for c in 0..src.channels {
        upsample_into(src.channel(c), src.width, &rows, &cols, &mut out);
    }
    Grid3D::new(src.channels, target_h, target_w, out)
}

/// Adjoint of [`upsample_bilinear`]: scatters a field living on the target
/// grid back onto a `src_h` x `src_w` source grid with the transposed
/// interpolation weights. This is the operator that carries loss gradients
/// from mask resolution back to attention resolution.
pub fn bilinear_adjoint(field: &Grid2D, src_h: usize, src_w: usize) -> Result<Grid2D> {
    check_target(src_h, src_w)?;
    let rows = axis_samples(src_h, field.height);
    let cols = axis_samples(src_w, field.width);
    let mut out = vec![0.0; src_h * src_w];
    for (tr, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (tc, &(c0, c1, fc)) in cols.iter().enumerate() {
            let v = field.get(tr, tc);
            out[r0 * src_w + c0] += v * (1.0 - fr) * (1.0 - fc);
            out[r0 * src_w + c1] += v * (1.0 - fr) * fc;
            out[r1 * src_w + c0] += v * fr * (1.0 - fc);
            out[r1 * src_w + c1] += v * fr * fc;
        }
    }
    Grid2D::new(src_h, src_w, out)
}

/// Per-axis area overlap: for each destination index, the first source index
/// and the fractional coverage of each overlapped source cell.
fn axis_overlaps(src_len: usize, dst_len: usize) -> Vec<(usize, Vec<f64>)> {
    (0..dst_len)
        .map(|t| {
            let start = (t * src_len) as f64 / dst_len as f64;
            let end = ((t + 1) * src_len) as f64 / dst_len as f64;
            let k0 = (start.floor() as usize).min(src_len - 1);
            let k1 = (end.ceil() as usize).clamp(k0 + 1, src_len);
            let weights = (k0..k1)
                .map(|k| (end.min((k + 1) as f64) - start.max(k as f64)).max(0.0))
                .collect();
            (k0, weights)
        })
        .collect()
}

/// Area-average resample of arbitrary real values. Each output pixel is the
/// mean of the exact source rectangle it covers, with partial pixels
/// weighted by overlap.
pub fn resize_area(src: &Grid2D, target_h: usize, target_w: usize) -> Result<Grid2D> {
    check_target(target_h, target_w)?;
    let rows = axis_overlaps(src.height, target_h);
    let cols = axis_overlaps(src.width, target_w);
    let mut out = Vec::with_capacity(target_h * target_w);
    for (r0, row_w) in &rows {
        for (c0, col_w) in &cols {
            let mut sum = 0.0;
            let mut weight = 0.0;
            for (dr, &wr) in row_w.iter().enumerate() {
                for (dc, &wc) in col_w.iter().enumerate() {
                    sum += wr * wc * src.get(r0 + dr, c0 + dc);
                    weight += wr * wc;
                }
            }
            out.push(sum / weight);
        }
    }
    Grid2D::new(target_h, target_w, out)
}

/// Resizes a mask by area averaging and re-thresholding at 0.5. Exact ties
/// resolve to 1 so salient pixels are never lost at block boundaries.
/// Resizing a binary mask to its own size is the identity.
pub fn resize_mask(mask: &Grid2D, target_h: usize, target_w: usize) -> Result<Grid2D> {
    if let Some(v) = mask.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!(
            "mask values must lie in [0, 1], found {v}"
        )));
    }
    let averaged = resize_area(mask, target_h, target_w)?;
    let data = averaged
        .data
        .iter()
        .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    Grid2D::new(target_h, target_w, data)
}

/// Complements a binary mask: every value becomes `1 - value`.
pub fn invert_mask(mask: &Grid2D) -> Result<Grid2D> {
    if let Some(v) = mask.data.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!(
            "mask values must be exactly 0 or 1, found {v}"
        )));
    }
    let data = mask.data.iter().map(|&v| 1.0 - v).collect();
    Grid2D::new(mask.height, mask.width, data)
}

/// Thresholds a saliency field in `[0, 1]` into a binary mask. Values equal
/// to the threshold count as salient.
pub fn binarize(saliency: &Grid2D, threshold: f64) -> Result<Grid2D> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "binarization threshold must lie strictly inside (0, 1), got {threshold}"
        )));
    }
    let data = saliency
        .data
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect();
    Grid2D::new(saliency.height, saliency.width, data)
}
