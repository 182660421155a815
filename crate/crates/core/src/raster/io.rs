use std::path::Path;

use image::{DynamicImage, ImageEncoder};

use super::Raster;
use crate::fsutil::atomic_write;
use crate::{Error, Result};

/// Gray value of an RGB triple: `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .min(255.0) as u8
}

pub(crate) fn from_dynamic(img: DynamicImage) -> Result<Raster> {
    let (w, h) = (img.width(), img.height());
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => img.to_luma8().into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luminance(p[0], p[1], p[2]))
            .collect(),
    };
    Raster::new(w, h, pixels)
}

/// Reads an image file and converts it to 8-bit grayscale.
pub fn load_png(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    from_dynamic(img)
}

pub(crate) fn encode_png(
    path: &Path,
    bytes: &[u8],
    width: u32,
    height: u32,
    color: image::ExtendedColorType,
) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(bytes, width, height, color)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

/// Writes an 8-bit grayscale PNG atomically.
pub fn save_png(img: &Raster, path: &Path) -> Result<()> {
    let buf = encode_png(
        path,
        img.pixels(),
        img.width(),
        img.height(),
        image::ExtendedColorType::L8,
    )?;
    atomic_write(path, &buf)
}
