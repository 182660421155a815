//! Crater detections, the baseline blob detector, NMS and tile stitching.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{format_box, parse_line, Annotation, PixelBox};
use crate::evaluate::{confidence_order, iou};
use crate::fsutil::{atomic_write, create_dir, list_with_extension, stem_of};
use crate::raster::Raster;
use crate::tiling::{extract_tiles, plan_tiles, TileGrid};
use crate::translate::{require_placeholders, run_shell, substitute, DirLock};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub ann: Annotation,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// Radius of the square box blur applied first; 0 disables it.
    pub blur_radius: u32,
    /// Odd side length of the window the local mean is taken over.
    pub local_window: u32,
    /// Minimum absolute deviation from the local mean, in gray levels.
    pub threshold_offset: f64,
    /// Bounding-box area limits in pixels.
    pub min_area: u64,
    pub max_area: u64,
    /// Largest accepted ratio of the longer to the shorter box side.
    pub max_aspect: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            blur_radius: 0,
            local_window: 101,
            threshold_offset: 40.0,
            min_area: 25,
            max_area: 16384,
            max_aspect: 3.0,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if self.local_window < 3 || self.local_window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "local window must be odd and >= 3, got {}",
                self.local_window
            )));
        }
        if self.min_area >= self.max_area {
            return Err(Error::InvalidParameter(format!(
                "min_area {} must be below max_area {}",
                self.min_area, self.max_area
            )));
        }
        if !(self.max_aspect >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "max_aspect must be >= 1, got {}",
                self.max_aspect
            )));
        }
        if !(self.threshold_offset > 0.0) {
            return Err(Error::InvalidParameter("threshold offset must be positive".into()));
        }
        Ok(())
    }
}

struct Integral {
    width: usize,
    sums: Vec<i64>,
}

impl Integral {
    fn new(img: &Raster) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut sums = vec![0i64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0i64;
            for (x, &v) in img.row(y as u32).iter().enumerate() {
                row += v as i64;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { width: w + 1, sums }
    }

    /// Sum and pixel count of the window `[x0, x1) × [y0, y1)`.
    fn window(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> (i64, i64) {
        let at = |x: usize, y: usize| self.sums[y * self.width + x];
        let s = at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0);
        (s, ((x1 - x0) * (y1 - y0)) as i64)
    }
}

fn clamp_window(c: usize, half: usize, len: usize) -> (usize, usize) {
    (c.saturating_sub(half), (c + half + 1).min(len))
}

/// Signed deviation of the blurred image from the local mean, per pixel.
fn deviation_map(img: &Raster, p: &DetectorParams) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let integral = Integral::new(img);
    let blur = p.blur_radius as usize;
    let half = p.local_window as usize / 2;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let (by0, by1) = clamp_window(y, blur, h);
        let (my0, my1) = clamp_window(y, half, h);
        for (x, d) in row.iter_mut().enumerate() {
            let (bx0, bx1) = clamp_window(x, blur, w);
            let (mx0, mx1) = clamp_window(x, half, w);
            let (sb, nb) = integral.window(bx0, by0, bx1, by1);
            let (sm, nm) = integral.window(mx0, my0, mx1, my1);
            *d = (sb * nm - sm * nb) as f64 / (nb * nm) as f64;
        }
    });
    out
}

struct Component {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
    abs_dev_sum: f64,
    pixels: u64,
}

fn components(mask: &[bool], dev: &[f64], w: usize, h: usize) -> Vec<Component> {
    let mut seen = vec![false; mask.len()];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut c = Component {
            x0: u32::MAX,
            y0: u32::MAX,
            x1: 0,
            y1: 0,
            abs_dev_sum: 0.0,
            pixels: 0,
        };
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            c.x0 = c.x0.min(x as u32);
            c.y0 = c.y0.min(y as u32);
            c.x1 = c.x1.max(x as u32);
            c.y1 = c.y1.max(y as u32);
            c.abs_dev_sum += dev[i].abs();
            c.pixels += 1;
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        out.push(c);
    }
    out
}

/// Box blur, local-mean thresholding (either sign), 4-connected components,
/// then area and aspect filtering. Confidence is the mean absolute
/// deviation of the component over 255.
pub fn detect_blobs(img: &Raster, p: &DetectorParams) -> Result<Vec<Detection>> {
    p.validate()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let dev = deviation_map(img, p);
    let mask: Vec<bool> = dev.iter().map(|d| d.abs() >= p.threshold_offset).collect();
    let mut dets: Vec<Detection> = components(&mask, &dev, w, h)
        .into_iter()
        .filter_map(|c| {
            let bw = (c.x1 - c.x0 + 1) as u64;
            let bh = (c.y1 - c.y0 + 1) as u64;
            let area = bw * bh;
            let aspect = bw.max(bh) as f64 / bw.min(bh) as f64;
            if area < p.min_area || area > p.max_area || aspect > p.max_aspect {
                return None;
            }
            let bbox = PixelBox {
                x0: c.x0 as f64,
                y0: c.y0 as f64,
                x1: c.x1 as f64 + 1.0,
                y1: c.y1 as f64 + 1.0,
            };
            Some(Detection {
                ann: bbox.normalize(0, (0.0, 0.0), w as f64, h as f64),
                confidence: (c.abs_dev_sum / c.pixels as f64 / 255.0).min(1.0),
            })
        })
        .collect();
    dets.sort_by(confidence_order);
    Ok(dets)
}

/// Greedy non-maximum suppression. Output is in descending confidence order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(confidence_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if kept.iter().all(|k| iou(&k.ann, &d.ann) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Moves tile-frame detections into the parent frame and suppresses the
/// duplicates that overlapping tiles produce.
pub fn stitch_detections(
    per_tile: &[((u32, u32), Vec<Detection>)],
    grid: &TileGrid,
    iou_threshold: f64,
) -> Result<Vec<Detection>> {
    let ts = grid.tile_size;
    let (pw, ph) = (grid.parent_w as f64, grid.parent_h as f64);
    let mut all = Vec::new();
    for (origin, dets) in per_tile {
        if !grid.contains_origin(*origin) {
            return Err(Error::UnknownOrigin(origin.0, origin.1));
        }
        for d in dets {
            let px = d.ann.denormalize(ts, ts).translate(origin.0 as f64, origin.1 as f64);
            all.push(Detection {
                ann: px.normalize(d.ann.class_id, (0.0, 0.0), pw, ph),
                confidence: d.confidence,
            });
        }
    }
    Ok(nms(&all, iou_threshold))
}

/// Drops tile-frame detections touching a tile edge that lies inside the
/// parent. Objects no larger than the overlap are seen whole by a neighbour.
pub fn trim_interior_edges(dets: Vec<Detection>, origin: (u32, u32), grid: &TileGrid) -> Vec<Detection> {
    let ts = grid.tile_size;
    let left = origin.0 > 0;
    let top = origin.1 > 0;
    let right = origin.0 + ts < grid.parent_w;
    let bottom = origin.1 + ts < grid.parent_h;
    let edge = ts as f64 - 0.5;
    dets.into_iter()
        .filter(|d| {
            let b = d.ann.denormalize(ts, ts);
            !((left && b.x0 < 0.5) || (top && b.y0 < 0.5) || (right && b.x1 > edge) || (bottom && b.y1 > edge))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TiledParams {
    pub tile_size: u32,
    pub overlap: u32,
    pub stitch_iou: f64,
    pub trim_edges: bool,
}

impl Default for TiledParams {
    fn default() -> Self {
        Self {
            tile_size: 512,
            overlap: 64,
            stitch_iou: 0.5,
            trim_edges: true,
        }
    }
}

/// Tiles `img`, runs the blob detector per tile and stitches the results.
/// Images smaller than a tile are processed as a single tile.
pub fn detect_tiled(img: &Raster, tiled: &TiledParams, params: &DetectorParams) -> Result<Vec<Detection>> {
    let tile_size = tiled.tile_size.min(img.width()).min(img.height());
    let overlap = tiled.overlap.min(tile_size.saturating_sub(1));
    let grid = plan_tiles(img.width(), img.height(), tile_size, overlap)?;
    let per_tile = extract_tiles(img, &grid)?
        .into_par_iter()
        .map(|t| {
            let dets = detect_blobs(&t.img, params)?;
            let dets = if tiled.trim_edges {
                trim_interior_edges(dets, t.origin, &grid)
            } else {
                dets
            };
            Ok((t.origin, dets))
        })
        .collect::<Result<Vec<_>>>()?;
    stitch_detections(&per_tile, &grid, tiled.stitch_iou)
}

pub fn write_detections(dets: &[Detection], mut sink: impl Write) -> std::io::Result<()> {
    for d in dets {
        writeln!(sink, "{} {:.6}", format_box(&d.ann), d.confidence)?;
    }
    Ok(())
}

pub fn read_detections(source: impl BufRead) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            file: None,
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let (ann, extra) = parse_line(&line, i + 1, 1)?;
        let confidence = extra[0];
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Range {
                file: None,
                line: i + 1,
                message: format!("confidence {confidence} outside [0, 1]"),
            });
        }
        out.push(Detection { ann, confidence });
    }
    Ok(out)
}

pub fn save_detections(dets: &[Detection], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_detections(dets, &mut buf).map_err(|e| Error::io(path, e))?;
    atomic_write(path, &buf)
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_detections(BufReader::new(file)).map_err(|e| e.with_file(path))
}

/// Reads `<stem>.txt` from `dir` for every stem; absent files mean no detections.
pub fn load_detection_dir(dir: &Path, stems: &[String]) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out = BTreeMap::new();
    for stem in stems {
        let path = dir.join(format!("{stem}.txt"));
        let dets = if path.is_file() {
            load_detections(&path)?
        } else {
            Vec::new()
        };
        out.insert(stem.clone(), dets);
    }
    Ok(out)
}

/// Extra placeholders a detector command may use besides `{in}` and `{out}`.
pub type Placeholders<'a> = &'a [(&'a str, &'a Path)];

/// Runs an external detector over the PNG images in `images_dir`, then parses
/// one detection file per image stem from `out_dir`. Only `{out}` is required
/// in the template; `{in}` and any `extra` placeholders are substituted.
pub fn run_external_detector(
    images_dir: &Path,
    out_dir: &Path,
    command: &str,
    extra: Placeholders<'_>,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    require_placeholders(command, &["{out}"])?;
    let stems: Vec<String> = list_with_extension(images_dir, "png")?
        .iter()
        .map(|p| stem_of(p))
        .collect();
    create_dir(out_dir)?;
    {
        let _lock = DirLock::acquire(out_dir)?;
        let mut pairs: Vec<(&str, &Path)> = vec![("in", images_dir), ("out", out_dir)];
        pairs.extend_from_slice(extra);
        run_shell(&substitute(command, &pairs))?;
    }
    load_detection_dir(out_dir, &stems)
}

/// Paths the detection files for `stems` would have in `dir`.
pub fn detection_paths(dir: &Path, stems: &[String]) -> Vec<PathBuf> {
    stems.iter().map(|s| dir.join(format!("{s}.txt"))).collect()
}
