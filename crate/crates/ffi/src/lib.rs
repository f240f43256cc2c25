//! C ABI over the lungseg pipelines.
//!
//! Images, masks and models are opaque heap handles released with their
//! `*_free` function. Every fallible call returns an [`LsStatus`]; on failure
//! [`ls_last_error`] describes the most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lungseg::classical::{cca_lung_pipeline, watershed_lung_pipeline, ClassicalConfig};
use lungseg::imgio::{load_image, read_jsrt_raw, write_mask_png, JsrtOptions};
use lungseg::unet::{predict_mask, UNet};
use lungseg::{metrics, BinaryMask, Error, GrayImage};

/// Grayscale image with intensities in [0, 1].
pub struct LsImage(GrayImage);

/// Binary lung mask.
pub struct LsMask(BinaryMask);

/// Trained segmentation network.
pub struct LsModel(UNet<f32>);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    SizeMismatch = 5,
    DimensionMismatch = 6,
    Segmentation = 7,
    Model = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> LsStatus {
    match e {
        Error::FileMissing(_) | Error::Io(_) | Error::Write { .. } => LsStatus::Io,
        Error::UnsupportedFormat(_) | Error::Decode { .. } | Error::InvalidData(_) => {
            LsStatus::Format
        }
        Error::SizeMismatch { .. } => LsStatus::SizeMismatch,
        Error::DimMismatch(_) | Error::ShapeMismatch(_) | Error::SpatialMismatch(_) => {
            LsStatus::DimensionMismatch
        }
        Error::EmptyImage | Error::NoMarkers => LsStatus::Segmentation,
        Error::Checkpoint(_) | Error::ModelRequired => LsStatus::Model,
        _ => LsStatus::InvalidArgument,
    }
}

struct Fail(LsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            LsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LsStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Copies `width * height` row-major intensities into a new image.
///
/// # Safety
/// `data` must point to `width * height` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_image_new(
    width: usize,
    height: usize,
    data: *const f32,
    out: *mut *mut LsImage,
) -> LsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = width
            .checked_mul(height)
            .ok_or_else(|| Fail(LsStatus::InvalidArgument, "image too large".into()))?;
        let pixels = std::slice::from_raw_parts(data, len).to_vec();
        emit(out, LsImage(GrayImage::new(width, height, pixels)?))
    })
}

/// Reads a PNG/PGM, or a 2048x2048 JSRT raw (`.raw`/`.img`, inverted).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_image_read(path: *const c_char, out: *mut *mut LsImage) -> LsStatus {
    guard(|| {
        let path = path_arg(path)?;
        emit(out, LsImage(load_image(&path, &JsrtOptions::default())?))
    })
}

/// Reads a headerless big-endian 12-bit raw of the given dimensions.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_image_read_raw(
    path: *const c_char,
    width: usize,
    height: usize,
    invert: bool,
    out: *mut *mut LsImage,
) -> LsStatus {
    guard(|| {
        let path = path_arg(path)?;
        let opts = JsrtOptions {
            width,
            height,
            invert,
        };
        emit(out, LsImage(read_jsrt_raw(&path, &opts)?))
    })
}

/// # Safety
/// `image` must be a live handle or null; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_image_dims(
    image: *const LsImage,
    width: *mut usize,
    height: *mut usize,
) -> LsStatus {
    guard(|| {
        let img = borrow(image, "image")?;
        if width.is_null() || height.is_null() {
            return Err(null("output pointer"));
        }
        (*width, *height) = img.0.dims();
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ls_image_free(image: *mut LsImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Otsu threshold and connected components with default settings.
///
/// # Safety
/// `image` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_segment_cca(image: *const LsImage, out: *mut *mut LsMask) -> LsStatus {
    guard(|| {
        let img = borrow(image, "image")?;
        emit(
            out,
            LsMask(cca_lung_pipeline(&img.0, &ClassicalConfig::default())?),
        )
    })
}

/// Marker-based watershed with default settings.
///
/// # Safety
/// `image` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_segment_watershed(
    image: *const LsImage,
    out: *mut *mut LsMask,
) -> LsStatus {
    guard(|| {
        let img = borrow(image, "image")?;
        emit(
            out,
            LsMask(watershed_lung_pipeline(
                &img.0,
                &ClassicalConfig::default(),
            )?),
        )
    })
}

/// Loads a checkpoint trained at `input_size` x `input_size`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_load(
    path: *const c_char,
    input_size: usize,
    out: *mut *mut LsModel,
) -> LsStatus {
    guard(|| {
        let path = path_arg(path)?;
        emit(out, LsModel(UNet::load(&path, input_size)?))
    })
}

/// Lung mask at the image's own size; pixels with probability above
/// `threshold` are lung.
///
/// # Safety
/// `model` and `image` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_predict(
    model: *const LsModel,
    image: *const LsImage,
    threshold: f64,
    out: *mut *mut LsMask,
) -> LsStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let img = borrow(image, "image")?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Fail(
                LsStatus::InvalidArgument,
                format!("threshold {threshold} outside [0, 1]"),
            ));
        }
        emit(out, LsMask(predict_mask(&model.0, &img.0, threshold)?))
    })
}

/// # Safety
/// `model` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ls_model_free(model: *mut LsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `mask` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_mask_dims(
    mask: *const LsMask,
    width: *mut usize,
    height: *mut usize,
) -> LsStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        if width.is_null() || height.is_null() {
            return Err(null("output pointer"));
        }
        (*width, *height) = m.0.dims();
        Ok(())
    })
}

/// Writes the mask row-major as 0/1 bytes into `buf`, which must hold exactly
/// `width * height` bytes.
///
/// # Safety
/// `mask` must be a live handle; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ls_mask_copy(mask: *const LsMask, buf: *mut u8, len: usize) -> LsStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let data = m.0.data();
        if len != data.len() {
            return Err(Fail(
                LsStatus::SizeMismatch,
                format!("buffer holds {len} bytes, mask has {}", data.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(buf, len);
        for (d, &v) in dst.iter_mut().zip(data) {
            *d = u8::from(v);
        }
        Ok(())
    })
}

/// Saves the mask as an 8-bit PNG (0 or 255).
///
/// # Safety
/// `mask` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ls_mask_write_png(mask: *const LsMask, path: *const c_char) -> LsStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        let path = path_arg(path)?;
        Ok(write_mask_png(&m.0, &path)?)
    })
}

/// # Safety
/// `mask` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ls_mask_free(mask: *mut LsMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Dice coefficient of two equally sized masks; 1 when both are empty.
///
/// # Safety
/// `pred` and `truth` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_dice(
    pred: *const LsMask,
    truth: *const LsMask,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let (p, t) = (borrow(pred, "pred")?, borrow(truth, "truth")?);
        let d = metrics::dice(&p.0, &t.0)?;
        *out.as_mut().ok_or_else(|| null("output pointer"))? = d;
        Ok(())
    })
}

/// Intersection over union of two equally sized masks; 1 when both are empty.
///
/// # Safety
/// `pred` and `truth` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_iou(
    pred: *const LsMask,
    truth: *const LsMask,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let (p, t) = (borrow(pred, "pred")?, borrow(truth, "truth")?);
        let j = metrics::iou(&p.0, &t.0)?;
        *out.as_mut().ok_or_else(|| null("output pointer"))? = j;
        Ok(())
    })
}
