//! Fixed-size tile plans over large rasters.
//!
//! Tiles never hang off the image: the last tile on each axis is shifted
//! inward so it ends exactly on the border, and duplicate origins created by
//! that shift are dropped.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::fsutil::atomic_write;
use crate::raster::{roi_crop, PixelRect, Raster};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: u32,
    pub overlap: u32,
    /// Row-major tile origins in the parent frame.
    pub origins: Vec<(u32, u32)>,
    pub parent_w: u32,
    pub parent_h: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tile {
    pub origin: (u32, u32),
    pub img: Raster,
}

fn axis_origins(dim: u32, tile: u32, stride: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut pos = 0u32;
    loop {
        if pos as u64 + tile as u64 >= dim as u64 {
            let last = dim - tile;
            if out.last() != Some(&last) {
                out.push(last);
            }
            return out;
        }
        out.push(pos);
        pos += stride;
    }
}

pub fn plan_tiles(parent_w: u32, parent_h: u32, tile_size: u32, overlap: u32) -> Result<TileGrid> {
    if tile_size == 0 {
        return Err(Error::InvalidParameter("tile size must be positive".into()));
    }
    if overlap >= tile_size {
        return Err(Error::InvalidParameter(format!(
            "overlap {overlap} must be smaller than tile size {tile_size}"
        )));
    }
    if tile_size > parent_w.min(parent_h) {
        return Err(Error::TileLargerThanImage {
            tile_size,
            width: parent_w,
            height: parent_h,
        });
    }
    let stride = tile_size - overlap;
    let xs = axis_origins(parent_w, tile_size, stride);
    let ys = axis_origins(parent_h, tile_size, stride);
    let origins = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    Ok(TileGrid {
        tile_size,
        overlap,
        origins,
        parent_w,
        parent_h,
    })
}

impl TileGrid {
    /// Rebuilds a grid from stored origins, checking that every tile fits.
    pub fn from_origins(
        parent_w: u32,
        parent_h: u32,
        tile_size: u32,
        overlap: u32,
        origins: Vec<(u32, u32)>,
    ) -> Result<Self> {
        if tile_size == 0 || tile_size > parent_w.min(parent_h) {
            return Err(Error::TileLargerThanImage {
                tile_size,
                width: parent_w,
                height: parent_h,
            });
        }
        for &(x, y) in &origins {
            if !PixelRect::new(x, y, tile_size, tile_size).fits_within(parent_w, parent_h) {
                return Err(Error::OutOfBounds {
                    x,
                    y,
                    w: tile_size,
                    h: tile_size,
                    width: parent_w,
                    height: parent_h,
                });
            }
        }
        Ok(Self {
            tile_size,
            overlap,
            origins,
            parent_w,
            parent_h,
        })
    }

    pub fn contains_origin(&self, origin: (u32, u32)) -> bool {
        self.origins.contains(&origin)
    }

    pub fn window(&self, origin: (u32, u32)) -> PixelRect {
        PixelRect::new(origin.0, origin.1, self.tile_size, self.tile_size)
    }

    /// Sidecar text: one `x y` origin pair per line.
    pub fn write_sidecar(&self, mut sink: impl Write) -> std::io::Result<()> {
        for (x, y) in &self.origins {
            writeln!(sink, "{x} {y}")?;
        }
        Ok(())
    }

    pub fn save_sidecar(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_sidecar(&mut buf).map_err(|e| Error::io(path, e))?;
        atomic_write(path, &buf)
    }
}

/// Parses the origin list of a `.tiles` sidecar.
pub fn read_sidecar(source: impl BufRead) -> Result<Vec<(u32, u32)>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            file: None,
            line: i + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed: Vec<Option<u32>> = trimmed.split_whitespace().map(|t| t.parse().ok()).collect();
        match parsed.as_slice() {
            [Some(x), Some(y)] => out.push((*x, *y)),
            _ => {
                return Err(Error::Parse {
                    file: None,
                    line: i + 1,
                    message: format!("expected `x y`, got `{trimmed}`"),
                })
            }
        }
    }
    Ok(out)
}

/// `<parentstem>_x<origin_x>_y<origin_y>`
pub fn tile_stem(parent_stem: &str, origin: (u32, u32)) -> String {
    format!("{parent_stem}_x{}_y{}", origin.0, origin.1)
}

/// Splits a tile stem back into its parent stem and origin.
pub fn parse_tile_stem(stem: &str) -> Option<(&str, (u32, u32))> {
    let (rest, y) = stem.rsplit_once("_y")?;
    let (parent, x) = rest.rsplit_once("_x")?;
    Some((parent, (x.parse().ok()?, y.parse().ok()?)))
}

pub fn extract_tiles(img: &Raster, grid: &TileGrid) -> Result<Vec<Tile>> {
    if img.dims() != (grid.parent_w, grid.parent_h) {
        return Err(Error::DimensionMismatch {
            expected: (grid.parent_w, grid.parent_h),
            actual: img.dims(),
        });
    }
    grid.origins
        .par_iter()
        .map(|&origin| {
            Ok(Tile {
                origin,
                img: roi_crop(img, grid.window(origin))?,
            })
        })
        .collect()
}

pub fn tile_box_to_parent(rect: PixelRect, origin: (u32, u32)) -> PixelRect {
    PixelRect::new(rect.x + origin.0, rect.y + origin.1, rect.w, rect.h)
}
