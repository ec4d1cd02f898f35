//! File formats shared by every pipeline stage.
//!
//! - Tensor files (`.wsst`): magic `WSST`, version byte 1, dtype byte 1
//!   (32-bit float), rank byte (2 or 3), one reserved zero byte, `rank`
//!   unsigned 32-bit little-endian dimensions, then the row-major
//!   (channel-major for rank 3) little-endian `f32` payload. No padding, no
//!   trailing bytes. Round-trips are bit-exact.
//! - Label maps: 8-bit single-channel PNG, pixel value = class index,
//!   255 = ignore.
//! - Saliency masks: 8-bit single-channel PNG, value / 255 gives the
//!   saliency in `[0, 1]`.
//! - Image tags: one JSON object per line,
//!   `{"image": "<id>", "classes": [<ints >= 1>]}`.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use crate::grid::{Grid2D, Grid3D, ImageTags, LabelMap};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"WSST";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;

fn tensor_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::TensorFormat {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn encode_tensor(dims: &[usize], values: &[f64]) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(8 + 4 * dims.len() + 4 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(DTYPE_F32);
    buf.push(dims.len() as u8);
    buf.push(0); // reserved
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::invalid(format!("dimension {d} exceeds the 32-bit limit")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

struct RawTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn decode_tensor(path: &Path, bytes: &[u8]) -> Result<RawTensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(tensor_err(path, 0, "bad magic, expected \"WSST\""));
    }
    if bytes.len() < 8 {
        return Err(tensor_err(path, bytes.len(), "truncated header"));
    }
    if bytes[4] != VERSION {
        return Err(tensor_err(path, 4, format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(tensor_err(path, 5, format!("unsupported dtype {}", bytes[5])));
    }
    let rank = bytes[6] as usize;
    if rank != 2 && rank != 3 {
        return Err(tensor_err(path, 6, format!("rank must be 2 or 3, got {rank}")));
    }
    if bytes[7] != 0 {
        return Err(tensor_err(path, 7, "reserved byte must be zero"));
    }

    let dims_end = 8 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(tensor_err(path, bytes.len(), "truncated dimension list"));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut elements = 1usize;
    for i in 0..rank {
        let off = 8 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(tensor_err(path, off, format!("dimension {i} is zero")));
        }
        elements = elements
            .checked_mul(d)
            .ok_or_else(|| tensor_err(path, off, "element count overflows"))?;
        dims.push(d);
    }

    let expected = dims_end + 4 * elements;
    if bytes.len() < expected {
        return Err(tensor_err(path, bytes.len(), format!(
            "truncated payload, expected {expected} bytes total"
        )));
    }
    if bytes.len() > expected {
        return Err(tensor_err(path, expected, format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }

    let values = bytes[dims_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(RawTensor { dims, values })
}

/// Writes a rank-3 tensor. Values are narrowed to `f32`.
pub fn write_grid3(path: impl AsRef<Path>, grid: &Grid3D) -> Result<()> {
    let path = path.as_ref();
    let buf = encode_tensor(&[grid.channels(), grid.height(), grid.width()], grid.data())?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes a rank-2 tensor. Values are narrowed to `f32`.
pub fn write_grid2(path: impl AsRef<Path>, grid: &Grid2D) -> Result<()> {
    let path = path.as_ref();
    let buf = encode_tensor(&[grid.height(), grid.width()], grid.data())?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_grid3(path: impl AsRef<Path>) -> Result<Grid3D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_tensor(path, &bytes)?;
    if raw.dims.len() != 3 {
        return Err(tensor_err(path, 6, format!(
            "expected a rank-3 tensor, found rank {}",
            raw.dims.len()
        )));
    }
    Grid3D::new(raw.dims[0], raw.dims[1], raw.dims[2], raw.values)
}

pub fn read_grid2(path: impl AsRef<Path>) -> Result<Grid2D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_tensor(path, &bytes)?;
    if raw.dims.len() != 2 {
        return Err(tensor_err(path, 6, format!(
            "expected a rank-2 tensor, found rank {}",
            raw.dims.len()
        )));
    }
    Grid2D::new(raw.dims[0], raw.dims[1], raw.values)
}

fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PngEncoder::new(BufWriter::new(file));
    encoder
        .write_image(
            pixels,
            width as u32,
            height as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| Error::ImageFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

fn read_gray_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    match decoded {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            Ok((h, w, img.into_raw()))
        }
        other => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            reason: format!(
                "expected an 8-bit single-channel image, found {:?}",
                other.color()
            ),
        }),
    }
}

pub fn write_label_map(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_gray_png(path.as_ref(), labels.width(), labels.height(), labels.labels())
}

pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (h, w, pixels) = read_gray_png(path.as_ref())?;
    LabelMap::new(h, w, pixels)
}

/// Writes a saliency field in `[0, 1]` as an 8-bit grayscale PNG.
pub fn write_saliency(path: impl AsRef<Path>, saliency: &Grid2D) -> Result<()> {
    if let Some(v) = saliency.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!(
            "saliency values must lie in [0, 1], found {v}"
        )));
    }
    let pixels: Vec<u8> = saliency
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    write_gray_png(path.as_ref(), saliency.width(), saliency.height(), &pixels)
}

pub fn read_saliency(path: impl AsRef<Path>) -> Result<Grid2D> {
    let (h, w, pixels) = read_gray_png(path.as_ref())?;
    Grid2D::new(h, w, pixels.iter().map(|&p| p as f64 / 255.0).collect())
}

#[derive(Serialize, Deserialize)]
struct TagRecord {
    image: String,
    classes: Vec<usize>,
}

/// Writes tags as JSON lines, one record per image, in the given order.
pub fn write_tags(path: impl AsRef<Path>, tags: &[ImageTags]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in tags {
        let record = TagRecord {
            image: t.image_id().to_string(),
            classes: t.class_indices(),
        };
        out.push_str(&serde_json::to_string(&record).expect("tag record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines tag file. Every record must name at least one class in
/// `1..=class_count`.
pub fn read_tags(path: impl AsRef<Path>, class_count: usize) -> Result<Vec<ImageTags>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tags = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TagRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        if record.classes.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                reason: format!("line {}: image {:?} has no classes", lineno + 1, record.image),
            });
        }
        let t = ImageTags::new(record.image, &record.classes, class_count).map_err(|e| {
            Error::Parse {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", lineno + 1),
            }
        })?;
        tags.push(t);
    }
    Ok(tags)
}
