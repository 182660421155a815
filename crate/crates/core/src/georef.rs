//! Lunar crater catalog ingestion and projection onto a global mosaic.

use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::raster::{PixelRect, Raster};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CraterRecord {
    /// Degrees, `[-90, 90]`.
    pub lat: f64,
    /// Degrees, normalized into `[-180, 180)`.
    pub lon: f64,
    /// Kilometres.
    pub diameter_km: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogSchema {
    pub lat_column: String,
    pub lon_column: String,
    pub diameter_column: String,
    pub delimiter: char,
}

impl Default for CatalogSchema {
    fn default() -> Self {
        Self {
            lat_column: "LAT_CIRC_IMG".into(),
            lon_column: "LON_CIRC_IMG".into(),
            diameter_column: "DIAM_CIRC_IMG".into(),
            delimiter: ',',
        }
    }
}

impl CatalogSchema {
    pub fn validate(&self) -> Result<()> {
        let cols = [&self.lat_column, &self.lon_column, &self.diameter_column];
        if cols[0] == cols[1] || cols[0] == cols[2] || cols[1] == cols[2] {
            return Err(Error::InvalidParameter(
                "catalog schema needs three distinct column names".into(),
            ));
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::InvalidParameter(format!(
                "catalog delimiter must be ASCII, got {:?}",
                self.delimiter
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedCatalog {
    pub records: Vec<CraterRecord>,
    /// Data rows that were malformed or out of range.
    pub skipped: usize,
}

fn parse_row(lat: &str, lon: &str, diam: &str) -> Option<CraterRecord> {
    let lat: f64 = lat.trim().parse().ok()?;
    let mut lon: f64 = lon.trim().parse().ok()?;
    let diameter_km: f64 = diam.trim().parse().ok()?;
    if !(-90.0..=90.0).contains(&lat) || !(diameter_km.is_finite() && diameter_km > 0.0) {
        return None;
    }
    if (180.0..360.0).contains(&lon) {
        lon -= 360.0;
    }
    if !(-180.0..180.0).contains(&lon) {
        return None;
    }
    Some(CraterRecord {
        lat,
        lon,
        diameter_km,
    })
}

/// Streams a delimiter-separated catalog with a header row.
pub fn parse_crater_catalog(text: impl Read, schema: &CatalogSchema) -> Result<ParsedCatalog> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text);
    let headers = reader.headers().map_err(|e| Error::Parse {
        file: None,
        line: 1,
        message: e.to_string(),
    })?;
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let lat_idx = column(&schema.lat_column)?;
    let lon_idx = column(&schema.lon_column)?;
    let diam_idx = column(&schema.diameter_column)?;

    let mut records = Vec::new();
    let mut skipped = 0;
    for row in reader.records() {
        let parsed = row.ok().and_then(|r| {
            parse_row(r.get(lat_idx)?, r.get(lon_idx)?, r.get(diam_idx)?)
        });
        match parsed {
            Some(rec) => records.push(rec),
            None => skipped += 1,
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCatalog { skipped });
    }
    Ok(ParsedCatalog { records, skipped })
}

/// Equirectangular geometry of a full-globe mosaic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoonProjection {
    mosaic_w: u32,
    mosaic_h: u32,
    meters_per_pixel: f64,
    max_abs_lat: f64,
}

impl MoonProjection {
    pub fn new(mosaic_w: u32, mosaic_h: u32, meters_per_pixel: f64, max_abs_lat: f64) -> Result<Self> {
        if mosaic_w == 0 || mosaic_h == 0 {
            return Err(Error::InvalidParameter("mosaic dimensions must be positive".into()));
        }
        let aspect = mosaic_w as f64 / mosaic_h as f64;
        if (aspect / 2.0 - 1.0).abs() > 0.01 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "a global equirectangular mosaic is 2:1, got {mosaic_w}x{mosaic_h}"
            )));
        }
        if !(meters_per_pixel.is_finite() && meters_per_pixel > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "meters per pixel must be positive, got {meters_per_pixel}"
            )));
        }
        if !(max_abs_lat > 0.0 && max_abs_lat <= 90.0) {
            return Err(Error::InvalidParameter(format!(
                "latitude limit must lie in (0, 90], got {max_abs_lat}"
            )));
        }
        Ok(Self {
            mosaic_w,
            mosaic_h,
            meters_per_pixel,
            max_abs_lat,
        })
    }

    pub fn mosaic_w(&self) -> u32 {
        self.mosaic_w
    }

    pub fn mosaic_h(&self) -> u32 {
        self.mosaic_h
    }

    pub fn meters_per_pixel(&self) -> f64 {
        self.meters_per_pixel
    }

    pub fn max_abs_lat(&self) -> f64 {
        self.max_abs_lat
    }

    /// Continuous pixel position of a lat/lon point.
    pub fn to_pixel(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = (lon + 180.0) / 360.0 * self.mosaic_w as f64;
        let y = (90.0 - lat) / 180.0 * self.mosaic_h as f64;
        (x, y)
    }

    pub fn to_lat_lon(&self, x: f64, y: f64) -> (f64, f64) {
        let lon = x / self.mosaic_w as f64 * 360.0 - 180.0;
        let lat = 90.0 - y / self.mosaic_h as f64 * 180.0;
        (lat, lon)
    }
}

/// Unclamped projected extent of a crater: `(center_x, center_y, width, height)` in pixels.
pub fn crater_extent(rec: &CraterRecord, proj: &MoonProjection) -> Result<(f64, f64, f64, f64)> {
    if rec.lat.abs() > proj.max_abs_lat {
        return Err(Error::PolarRegion {
            lat: rec.lat,
            max_abs_lat: proj.max_abs_lat,
        });
    }
    let (cx, cy) = proj.to_pixel(rec.lat, rec.lon);
    let height = rec.diameter_km * 1000.0 / proj.meters_per_pixel;
    let width = height / rec.lat.to_radians().cos();
    Ok((cx, cy, width, height))
}

fn axis_span(center: f64, size: f64, limit: u32) -> Option<(u32, u32)> {
    let size = size.round().max(1.0);
    let start = (center - size / 2.0).round();
    let lo = start.max(0.0);
    let hi = (start + size).min(limit as f64);
    (hi > lo).then_some((lo as u32, (hi - lo) as u32))
}

pub fn crater_to_pixel_box(rec: &CraterRecord, proj: &MoonProjection) -> Result<PixelRect> {
    let (cx, cy, w, h) = crater_extent(rec, proj)?;
    let (x, bw) = axis_span(cx, w, proj.mosaic_w).ok_or(Error::OffMosaic)?;
    let (y, bh) = axis_span(cy, h, proj.mosaic_h).ok_or(Error::OffMosaic)?;
    Ok(PixelRect::new(x, y, bw, bh))
}

pub fn filter_by_diameter(records: &[CraterRecord], d_min: f64, d_max: f64) -> Result<Vec<CraterRecord>> {
    if !(d_min > 0.0 && d_min <= d_max) {
        return Err(Error::InvalidRange { d_min, d_max });
    }
    Ok(records
        .iter()
        .filter(|r| (d_min..=d_max).contains(&r.diameter_km))
        .copied()
        .collect())
}

/// Mean intensities of the inscribed disk of `rect` and of the ring between
/// 1.0 and 1.5 times its radius, restricted to the raster.
pub fn disk_and_annulus_means(img: &Raster, rect: &PixelRect) -> (Option<f64>, Option<f64>) {
    let r = rect.w.min(rect.h) as f64 / 2.0;
    let cx = rect.x as f64 + rect.w as f64 / 2.0;
    let cy = rect.y as f64 + rect.h as f64 / 2.0;
    let outer = 1.5 * r;
    let x0 = (cx - outer).floor().max(0.0) as u32;
    let y0 = (cy - outer).floor().max(0.0) as u32;
    let x1 = ((cx + outer).ceil() as u32).min(img.width());
    let y1 = ((cy + outer).ceil() as u32).min(img.height());
    let (r2, outer2) = (r * r, outer * outer);
    let (mut disk_sum, mut disk_n, mut ring_sum, mut ring_n) = (0u64, 0u64, 0u64, 0u64);
    for y in y0..y1 {
        let dy = y as f64 + 0.5 - cy;
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - cx;
            let d2 = dx * dx + dy * dy;
            if d2 <= r2 {
                disk_sum += img.get(x, y) as u64;
                disk_n += 1;
            } else if d2 <= outer2 {
                ring_sum += img.get(x, y) as u64;
                ring_n += 1;
            }
        }
    }
    let mean = |s: u64, n: u64| (n > 0).then(|| s as f64 / n as f64);
    (mean(disk_sum, disk_n), mean(ring_sum, ring_n))
}

/// Keeps the boxes whose inscribed disk differs from its surrounding ring by
/// at least `delta` gray levels. Boxes where either region is empty are dropped.
pub fn prune_by_contrast(mosaic: &Raster, boxes: &[PixelRect], delta: f64) -> Vec<PixelRect> {
    let keep: Vec<bool> = boxes
        .par_iter()
        .map(|b| match disk_and_annulus_means(mosaic, b) {
            (Some(disk), Some(ring)) => (ring - disk).abs() >= delta,
            _ => false,
        })
        .collect();
    boxes
        .iter()
        .zip(keep)
        .filter_map(|(b, k)| k.then_some(*b))
        .collect()
}
