//! Single-channel 8-bit rasters and the image quality stage.

mod clahe;
mod io;

pub use clahe::{clahe, clip_histogram, ClaheParams, ClippedHistogram};
pub use io::{load_png, luminance, save_png};
pub(crate) use io::encode_png;

use crate::{Error, Result};

/// Row-major 8-bit grayscale image.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidRaster(format!(
                "{width}x{height} needs {expected} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// A raster with every pixel set to `value`.
    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        let idx = y as usize * self.width as usize + x as usize;
        self.pixels[idx] = value;
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let start = y as usize * self.width as usize;
        &self.pixels[start..start + self.width as usize]
    }

    /// Copies `src` into this raster with its top-left corner at `(x, y)`.
    /// Parts falling outside are ignored.
    pub fn blit(&mut self, src: &Raster, x: u32, y: u32) {
        if x >= self.width || y >= self.height {
            return;
        }
        let w = src.width.min(self.width - x) as usize;
        for sy in 0..src.height.min(self.height - y) {
            let dst_start = (y + sy) as usize * self.width as usize + x as usize;
            self.pixels[dst_start..dst_start + w].copy_from_slice(&src.row(sy)[..w]);
        }
    }
}

/// Integer pixel rectangle with origin at the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }
}

pub fn roi_crop(img: &Raster, rect: PixelRect) -> Result<Raster> {
    if rect.w == 0 || rect.h == 0 {
        return Err(Error::ZeroArea);
    }
    if !rect.fits_within(img.width, img.height) {
        return Err(Error::OutOfBounds {
            x: rect.x,
            y: rect.y,
            w: rect.w,
            h: rect.h,
            width: img.width,
            height: img.height,
        });
    }
    let mut pixels = Vec::with_capacity(rect.area() as usize);
    for y in rect.y..rect.y + rect.h {
        let row = img.row(y);
        pixels.extend_from_slice(&row[rect.x as usize..(rect.x + rect.w) as usize]);
    }
    Raster::new(rect.w, rect.h, pixels)
}

/// 256-bin gray-level histogram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    bins: [u64; 256],
    total: u64,
}

impl Default for Histogram {
    fn default() -> Self {
        Self {
            bins: [0; 256],
            total: 0,
        }
    }
}

impl Histogram {
    pub fn from_bins(bins: [u64; 256]) -> Self {
        let total = bins.iter().sum();
        Self { bins, total }
    }

    /// Histogram of the pixel values in `values`.
    pub fn from_values(values: &[u8]) -> Self {
        let mut bins = [0u64; 256];
        for &v in values {
            bins[v as usize] += 1;
        }
        Self {
            bins,
            total: values.len() as u64,
        }
    }

    pub fn bins(&self) -> &[u64; 256] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Adds the counts of `other` into this histogram.
    pub fn accumulate(&mut self, other: &Histogram) {
        for (a, b) in self.bins.iter_mut().zip(other.bins.iter()) {
            *a += *b;
        }
        self.total += other.total;
    }

    /// Running sums; `cumulative()[v]` counts pixels with value `<= v`.
    pub fn cumulative(&self) -> [u64; 256] {
        let mut cdf = [0u64; 256];
        let mut acc = 0;
        for (c, b) in cdf.iter_mut().zip(self.bins.iter()) {
            acc += b;
            *c = acc;
        }
        cdf
    }

    /// Largest single-bin share of the total mass.
    pub fn max_bin_fraction(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        *self.bins.iter().max().unwrap_or(&0) as f64 / self.total as f64
    }
}

pub fn histogram(img: &Raster) -> Histogram {
    Histogram::from_values(&img.pixels)
}
