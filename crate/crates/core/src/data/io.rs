use std::path::Path;

use image::{ImageFormat, ImageReader, RgbImage as Rgb8};

use super::DataError;
use crate::color::RgbImage;

/// Decodes an 8-bit PNG or binary PPM; sample `k` maps to `k / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage, DataError> {
    let path = path.as_ref();
    let err = |msg: String| DataError::Image {
        path: path.display().to_string(),
        msg,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| err(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        other => return Err(err(format!("unsupported format {other:?} (expected PNG or PPM)"))),
    }
    let rgb = reader.decode().map_err(|e| err(e.to_string()))?.to_rgb8();
    Ok(from_rgb8(&rgb))
}

pub fn from_rgb8(rgb: &Rgb8) -> RgbImage {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    RgbImage::from_fn(h, w, |c, r, x| rgb.get_pixel(x as u32, r as u32)[c] as f64 / 255.0)
}

/// Clamps to `[0, 1]` and rounds half up to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn to_rgb8(img: &RgbImage) -> Rgb8 {
    let (h, w) = (img.height(), img.width());
    Rgb8::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([0, 1, 2].map(|c| quantize(img.get(c, y, x))))
    })
}

/// Writes PNG or binary PPM depending on the extension (`.png`, `.ppm`).
pub fn save_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let err = |msg: String| DataError::Image {
        path: path.display().to_string(),
        msg,
    };
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => ImageFormat::Png,
        Some("ppm") => ImageFormat::Pnm,
        other => return Err(err(format!("unsupported output extension {other:?} (expected png or ppm)"))),
    };
    to_rgb8(img).save_with_format(path, format).map_err(|e| err(e.to_string()))
}

/// Whether a path looks like an image this module can read.
pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm")
    )
}
