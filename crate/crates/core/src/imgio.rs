//! Image and dataset I/O: JSRT raw radiographs, mask rasters, resampling,
//! dataset pairing and splitting, and the four-panel overlay renderer.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest value a 12-bit JSRT sample can take.
pub const JSRT_MAX: u16 = 4095;

/// Single-channel raster with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != width * height {
            return Err(Error::InvalidData(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidData(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from `f(x, y)`; results are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "image dims must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Boolean raster; `true` marks lung.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != width * height {
            return Err(Error::InvalidData(format!(
                "{} values for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        assert!(width > 0 && height > 0, "mask dims must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dims must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }
}

/// One radiograph and (outside prediction mode) its lung mask.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: String,
    pub image: GrayImage,
    pub mask: Option<BinaryMask>,
}

/// Decoding options for headerless JSRT raws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JsrtOptions {
    pub width: usize,
    pub height: usize,
    /// Map `v -> 1 - v` so lungs come out dark.
    pub invert: bool,
}

impl Default for JsrtOptions {
    fn default() -> Self {
        Self {
            width: 2048,
            height: 2048,
            invert: true,
        }
    }
}

/// Reads a headerless big-endian 16-bit raw radiograph.
pub fn read_jsrt_raw(path: &Path, opts: &JsrtOptions) -> Result<GrayImage> {
    if !path.is_file() {
        return Err(Error::FileMissing(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    decode_jsrt(&bytes, opts)
}

pub fn decode_jsrt(bytes: &[u8], opts: &JsrtOptions) -> Result<GrayImage> {
    if opts.width == 0 || opts.height == 0 {
        return Err(Error::ZeroDimension);
    }
    let expected = opts.width * opts.height * 2;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let scale = f32::from(JSRT_MAX);
    let data = bytes
        .chunks_exact(2)
        .map(|w| {
            let v = f32::from(u16::from_be_bytes([w[0], w[1]]).min(JSRT_MAX)) / scale;
            if opts.invert {
                1.0 - v
            } else {
                v
            }
        })
        .collect();
    Ok(GrayImage {
        width: opts.width,
        height: opts.height,
        data,
    })
}

/// Inverse of [`decode_jsrt`] for values that came from 12-bit words.
pub fn encode_jsrt(img: &GrayImage, invert: bool) -> Vec<u8> {
    let scale = f32::from(JSRT_MAX);
    let mut out = Vec::with_capacity(img.data.len() * 2);
    for &v in &img.data {
        let v = if invert { 1.0 - v } else { v };
        let word = (v * scale).round().clamp(0.0, scale) as u16;
        out.extend_from_slice(&word.to_be_bytes());
    }
    out
}

fn sniff_format(bytes: &[u8]) -> Option<ImageFormat> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(ImageFormat::Png)
    } else if bytes.starts_with(b"P5") {
        Some(ImageFormat::Pnm)
    } else {
        None
    }
}

fn decode_raster(path: &Path) -> Result<image::DynamicImage> {
    if !path.is_file() {
        return Err(Error::FileMissing(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let format =
        sniff_format(&bytes).ok_or_else(|| Error::UnsupportedFormat(path.to_path_buf()))?;
    image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads an 8-bit PNG or binary PGM mask; pixels above 127 are lung.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = decode_raster(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::new(w, h, img.into_raw().into_iter().map(|v| v > 127).collect())
}

/// Reads a grayscale PNG/PGM as an already display-ready image (no inversion).
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = decode_raster(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| f32::from(v) / 65535.0)
        .collect();
    GrayImage::new(w, h, data)
}

/// Loads an image by extension: `.raw`/`.img` go through the JSRT decoder,
/// anything else must be a PNG or PGM.
pub fn load_image(path: &Path, jsrt: &JsrtOptions) -> Result<GrayImage> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
    {
        Some(ext) if ext == "raw" || ext == "img" => read_jsrt_raw(path, jsrt),
        _ => read_gray(path),
    }
}

/// Source coordinate of output sample `i` under the half-pixel-center convention.
fn source_coord(i: usize, in_len: usize, out_len: usize) -> f64 {
    (i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::ZeroDimension);
    }
    if (out_w, out_h) == img.dims() {
        return Ok(img.clone());
    }
    let taps = |i: usize, in_len: usize, out_len: usize| {
        let s = source_coord(i, in_len, out_len).clamp(0.0, (in_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(in_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| taps(x, img.width, out_w)).collect();
    let mut data = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = taps(y, img.height, out_h);
        for &(x0, x1, fx) in &xs {
            let p = |x: usize, y: usize| f64::from(img.get(x, y));
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            data.push((v as f32).clamp(0.0, 1.0));
        }
    }
    Ok(GrayImage {
        width: out_w,
        height: out_h,
        data,
    })
}

/// Nearest source index for output sample `i`; equidistant samples resolve to
/// the smaller index. Integer arithmetic keeps the tie test exact.
fn nearest_index(i: usize, in_len: usize, out_len: usize) -> usize {
    // 2*out*(src - 0.5) where src = (i + 0.5) * in / out - 0.5
    let num = (2 * i as i64 + 1) * in_len as i64 - 2 * out_len as i64;
    let den = 2 * out_len as i64;
    let idx = num.div_euclid(den) + i64::from(num.rem_euclid(den) != 0);
    idx.clamp(0, in_len as i64 - 1) as usize
}

pub fn resize_nearest(mask: &BinaryMask, out_w: usize, out_h: usize) -> Result<BinaryMask> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::ZeroDimension);
    }
    let xs: Vec<usize> = (0..out_w)
        .map(|x| nearest_index(x, mask.width, out_w))
        .collect();
    let mut data = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = nearest_index(y, mask.height, out_h);
        data.extend(xs.iter().map(|&sx| mask.get(sx, sy)));
    }
    Ok(BinaryMask {
        width: out_w,
        height: out_h,
        data,
    })
}

/// Train/validation/test index partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that the three lists are disjoint and cover `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::InvalidConfig(format!(
                    "split index {i} out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig(
                "split does not cover every entry".into(),
            ));
        }
        Ok(())
    }

    /// Train and validation indices together, ascending.
    pub fn pool(&self) -> Vec<usize> {
        let mut pool: Vec<usize> = self.train.iter().chain(&self.val).copied().collect();
        pool.sort_unstable();
        pool
    }
}

/// Sizes of an 8:1:1 split: each minor part is `floor(n/10)`, train takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let minor = n / 10;
    (n - 2 * minor, minor, minor)
}

/// Seeded 8:1:1 split of `0..n`.
pub fn split_dataset(n: usize, seed: u64) -> Result<SplitSpec> {
    if n < 3 {
        return Err(Error::TooFewEntries(n));
    }
    let (n_train, n_val, _) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SplitMix64::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train,
        val,
        test,
        seed,
    })
}

/// Colors used by the overlay renderer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlayStyle {
    pub gutter: usize,
    pub truth_only: [u8; 3],
    pub predicted_only: [u8; 3],
    pub agreement: [u8; 3],
    pub gutter_color: [u8; 3],
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            gutter: 4,
            truth_only: [0, 96, 255],
            predicted_only: [255, 48, 48],
            agreement: [40, 220, 80],
            gutter_color: [0, 0, 0],
        }
    }
}

fn gray_rgb(v: f32) -> [u8; 3] {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [g, g, g]
}

/// Renders four side-by-side panels: the image, prediction-vs-truth
/// superimposition, the predicted mask, and the disagreement map.
pub fn render_overlay_panel(
    img: &GrayImage,
    predicted: &BinaryMask,
    truth: &BinaryMask,
    style: &OverlayStyle,
) -> Result<RgbImage> {
    if img.dims() != predicted.dims() || img.dims() != truth.dims() {
        return Err(Error::DimMismatch(format!(
            "image {:?}, prediction {:?}, truth {:?}",
            img.dims(),
            predicted.dims(),
            truth.dims()
        )));
    }
    let (w, h) = img.dims();
    let total_w = 4 * w + 3 * style.gutter;
    let mut out: RgbImage =
        ImageBuffer::from_pixel(total_w as u32, h as u32, Rgb(style.gutter_color));
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (p, t) = (predicted.data[i], truth.data[i]);
            let base = gray_rgb(img.data[i]);
            let overlay = match (p, t) {
                (true, true) => style.agreement,
                (true, false) => style.predicted_only,
                (false, true) => style.truth_only,
                (false, false) => base,
            };
            let pred = if p { [255; 3] } else { [0; 3] };
            let diff = if p != t { [255, 0, 255] } else { [0; 3] };
            for (panel, rgb) in [base, overlay, pred, diff].into_iter().enumerate() {
                let px = panel * (w + style.gutter) + x;
                out.put_pixel(px as u32, y as u32, Rgb(rgb));
            }
        }
    }
    Ok(out)
}

pub fn write_overlay_panel(
    img: &GrayImage,
    predicted: &BinaryMask,
    truth: &BinaryMask,
    path: &Path,
    style: &OverlayStyle,
) -> Result<()> {
    let panel = render_overlay_panel(img, predicted, truth, style)?;
    panel
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Writes a mask as an 8-bit grayscale PNG (255 = lung).
pub fn write_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        mask.width as u32,
        mask.height as u32,
        mask.data.iter().map(|&v| if v { 255 } else { 0 }).collect(),
    )
    .expect("buffer length matches dims");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Writes an image as an 8-bit grayscale PNG.
pub fn write_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        img.width as u32,
        img.height as u32,
        img.data
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect(),
    )
    .expect("buffer length matches dims");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// An image file paired (by stem) with an optional mask file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedFile {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("raw" | "img" | "png" | "pgm")
    )
}

fn files_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() || !is_image_file(&path) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.entry(stem.to_string()).or_insert(path);
        }
    }
    Ok(out)
}

/// Pairs `root/images/<stem>.*` with `root/masks/<stem>.*`, sorted by stem.
pub fn pair_dataset(root: &Path) -> Result<Vec<PairedFile>> {
    let images_dir = root.join("images");
    if !images_dir.is_dir() {
        return Err(Error::MissingImagesDir(images_dir));
    }
    let images = files_by_stem(&images_dir)?;
    let mut masks = files_by_stem(&root.join("masks"))?;
    Ok(images
        .into_iter()
        .map(|(id, image_path)| {
            let mask_path = masks.remove(&id);
            PairedFile {
                id,
                image_path,
                mask_path,
            }
        })
        .collect())
}

/// Loads an image and its mask; the mask is resampled to the image's dims.
pub fn load_entry(
    id: &str,
    image_path: &Path,
    mask_path: Option<&Path>,
    jsrt: &JsrtOptions,
) -> Result<DatasetEntry> {
    let image = load_image(image_path, jsrt)?;
    let mask = match mask_path {
        Some(p) => {
            let m = read_mask(p)?;
            Some(if m.dims() == image.dims() {
                m
            } else {
                resize_nearest(&m, image.width(), image.height())?
            })
        }
        None => None,
    };
    Ok(DatasetEntry {
        id: id.to_string(),
        image,
        mask,
    })
}

/// One row of `manifest.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub image_path: String,
    pub mask_path: String,
    pub width: usize,
    pub height: usize,
}

impl ManifestRow {
    pub fn mask(&self) -> Option<&Path> {
        (!self.mask_path.is_empty()).then(|| Path::new(&self.mask_path))
    }
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    w.write_record(["id", "image_path", "mask_path", "width", "height"])
        .and_then(|_| {
            for r in rows {
                w.serialize((&r.id, &r.image_path, &r.mask_path, r.width, r.height))?;
            }
            Ok(())
        })
        .map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    if !path.is_file() {
        return Err(Error::FileMissing(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ManifestRow>, _>>()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
