//! Contrast-limited adaptive histogram equalization.

use serde::{Deserialize, Serialize};

use super::{Histogram, Raster};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    pub grid_w: u32,
    pub grid_h: u32,
    /// Multiple of the mean bin height (`region_pixels / 256`) at which
    /// bins are clipped. `f64::INFINITY` disables clipping.
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            grid_w: 8,
            grid_h: 8,
            clip_limit: 4.0,
        }
    }
}

/// Result of clipping a histogram and spreading the excess.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClippedHistogram {
    /// Bins after clipping, redistribution and the repair pass.
    pub bins: [u64; 256],
    /// Counts removed by the initial clip.
    pub excess: u64,
    /// Counts removed again by the repair pass and discarded.
    pub discarded: u64,
}

/// Clips every bin at `limit`, spreads the removed mass uniformly over all
/// bins (the `excess % 256` remainder goes one count each to evenly strided
/// bins), then re-clips once. Mass pushed over the limit by the spread is
/// discarded.
pub fn clip_histogram(hist: &Histogram, limit: u64) -> ClippedHistogram {
    let mut bins = *hist.bins();
    let mut excess = 0u64;
    for b in bins.iter_mut() {
        if *b > limit {
            excess += *b - limit;
            *b = limit;
        }
    }
    if excess == 0 {
        return ClippedHistogram {
            bins,
            excess,
            discarded: 0,
        };
    }
    let per_bin = excess / 256;
    let remainder = (excess % 256) as usize;
    for b in bins.iter_mut() {
        *b += per_bin;
    }
    if remainder > 0 {
        let step = (256 / remainder).max(1);
        for i in (0..256).step_by(step).take(remainder) {
            bins[i] += 1;
        }
    }
    let mut discarded = 0;
    for b in bins.iter_mut() {
        if *b > limit {
            discarded += *b - limit;
            *b = limit;
        }
    }
    ClippedHistogram {
        bins,
        excess,
        discarded,
    }
}

fn region_bounds(len: u32, parts: u32) -> Vec<u32> {
    (0..=parts)
        .map(|k| (k as u64 * len as u64 / parts as u64) as u32)
        .collect()
}

fn region_lut(hist: &Histogram, clip_limit: f64) -> [u8; 256] {
    let mut lut = [0u8; 256];
    let occupied = hist.bins().iter().filter(|&&b| b > 0).count();
    if occupied <= 1 {
        // A single gray level carries no contrast to equalize.
        for (v, out) in lut.iter_mut().enumerate() {
            *out = v as u8;
        }
        return lut;
    }
    let n = hist.total();
    let limit = clip_limit * n as f64 / 256.0;
    let bins = if limit.is_finite() && limit < n as f64 {
        clip_histogram(hist, (limit.floor() as u64).max(1)).bins
    } else {
        *hist.bins()
    };
    let sum: u64 = bins.iter().sum();
    let mut acc = 0u64;
    for (v, out) in lut.iter_mut().enumerate() {
        acc += bins[v];
        *out = (255.0 * acc as f64 / sum as f64).round().min(255.0) as u8;
    }
    lut
}

/// Per-axis interpolation: for each coordinate the two neighbouring region
/// indices and the weight of the second one.
fn axis_weights(len: u32, bounds: &[u32]) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = bounds
        .windows(2)
        .map(|w| (w[0] as f64 + w[1] as f64) / 2.0)
        .collect();
    let last = centers.len() - 1;
    (0..len)
        .map(|i| {
            let pos = i as f64 + 0.5;
            if pos <= centers[0] {
                return (0, 0, 0.0);
            }
            if pos >= centers[last] {
                return (last, last, 0.0);
            }
            let k = centers.partition_point(|&c| c <= pos) - 1;
            let t = (pos - centers[k]) / (centers[k + 1] - centers[k]);
            (k, k + 1, t)
        })
        .collect()
}

pub fn clahe(img: &Raster, params: &ClaheParams) -> Result<Raster> {
    let ClaheParams {
        grid_w,
        grid_h,
        clip_limit,
    } = *params;
    if grid_w == 0 || grid_h == 0 {
        return Err(Error::InvalidParameter("CLAHE grid must be at least 1x1".into()));
    }
    if clip_limit.is_nan() || clip_limit < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "CLAHE clip limit must be >= 1.0, got {clip_limit}"
        )));
    }
    let (width, height) = img.dims();
    if width / grid_w < 2 || height / grid_h < 2 {
        return Err(Error::GridTooFine {
            grid_w,
            grid_h,
            width,
            height,
        });
    }

    let xb = region_bounds(width, grid_w);
    let yb = region_bounds(height, grid_h);

    let mut luts = Vec::with_capacity((grid_w * grid_h) as usize);
    for ry in 0..grid_h as usize {
        for rx in 0..grid_w as usize {
            let mut hist = Histogram::default();
            for y in yb[ry]..yb[ry + 1] {
                let row = &img.row(y)[xb[rx] as usize..xb[rx + 1] as usize];
                hist.accumulate(&Histogram::from_values(row));
            }
            luts.push(region_lut(&hist, clip_limit));
        }
    }
    let lut = |rx: usize, ry: usize| &luts[ry * grid_w as usize + rx];

    let xw = axis_weights(width, &xb);
    let yw = axis_weights(height, &yb);
    let mut out = Vec::with_capacity(img.pixels().len());
    for (y, &(r0, r1, ty)) in yw.iter().enumerate() {
        for (&v, &(c0, c1, tx)) in img.row(y as u32).iter().zip(xw.iter()) {
            let v = v as usize;
            let top = (1.0 - tx) * lut(c0, r0)[v] as f64 + tx * lut(c1, r0)[v] as f64;
            let bottom = (1.0 - tx) * lut(c0, r1)[v] as f64 + tx * lut(c1, r1)[v] as f64;
            let value = (1.0 - ty) * top + ty * bottom;
            out.push(value.round().clamp(0.0, 255.0) as u8);
        }
    }
    Raster::new(width, height, out)
}
