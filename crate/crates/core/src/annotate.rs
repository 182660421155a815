//! Normalized box labels and the `class cx cy w h` label file format.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::fsutil::atomic_write;
use crate::raster::PixelRect;
use crate::{Error, Result};

/// Slack allowed when a box pokes out of the unit square.
pub const UNIT_SLACK: f64 = 1e-6;

/// Class-labeled box in center form, normalized to the image size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annotation {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Annotation {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let ann = Self { class_id, cx, cy, w, h };
        ann.check().map_err(|message| Error::Range {
            file: None,
            line: 0,
            message,
        })?;
        Ok(ann)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let Self { cx, cy, w, h, .. } = *self;
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
            return Err(format!("center ({cx}, {cy}) outside [0, 1]"));
        }
        if !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
            return Err(format!("size ({w}, {h}) outside (0, 1]"));
        }
        let (x0, y0, x1, y1) = self.corners();
        if x0 < -UNIT_SLACK || y0 < -UNIT_SLACK || x1 > 1.0 + UNIT_SLACK || y1 > 1.0 + UNIT_SLACK {
            return Err(format!("box ({x0}, {y0}, {x1}, {y1}) exceeds the unit square"));
        }
        Ok(())
    }

    /// `(x0, y0, x1, y1)` in normalized coordinates.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    /// Builds a label from normalized corners, clamping into the unit square.
    pub fn from_corners(class_id: u32, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let (x0, x1) = (x0.clamp(0.0, 1.0), x1.clamp(0.0, 1.0));
        let (y0, y1) = (y0.clamp(0.0, 1.0), y1.clamp(0.0, 1.0));
        Self {
            class_id,
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// Box in pixel coordinates of an image of `width`×`height`.
    pub fn denormalize(&self, width: u32, height: u32) -> PixelBox {
        let (x0, y0, x1, y1) = self.corners();
        PixelBox {
            x0: x0 * width as f64,
            y0: y0 * height as f64,
            x1: x1 * width as f64,
            y1: y1 * height as f64,
        }
    }

    /// Lexicographic `(cx, cy, w, h)` order used for deterministic tie-breaks.
    pub fn coord_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cx
            .total_cmp(&other.cx)
            .then(self.cy.total_cmp(&other.cy))
            .then(self.w.total_cmp(&other.w))
            .then(self.h.total_cmp(&other.h))
    }
}

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelBox {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let b = Self {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        };
        (b.x1 > b.x0 && b.y1 > b.y0).then_some(b)
    }

    /// Normalizes into a frame whose top-left is at `origin` and which is
    /// `width`×`height` pixels.
    pub fn normalize(&self, class_id: u32, origin: (f64, f64), width: f64, height: f64) -> Annotation {
        Annotation::from_corners(
            class_id,
            (self.x0 - origin.0) / width,
            (self.y0 - origin.1) / height,
            (self.x1 - origin.0) / width,
            (self.y1 - origin.1) / height,
        )
    }
}

impl From<PixelRect> for PixelBox {
    fn from(r: PixelRect) -> Self {
        Self {
            x0: r.x as f64,
            y0: r.y as f64,
            x1: r.right() as f64,
            y1: r.bottom() as f64,
        }
    }
}

/// Clips `bbox` to `window` and normalizes the visible part to the window,
/// provided at least `min_visible` of the box area survives.
pub fn project_to_window(bbox: PixelBox, window: PixelRect, min_visible: f64) -> Option<Annotation> {
    let area = bbox.area();
    if area <= 0.0 {
        return None;
    }
    let visible = bbox.intersect(&window.into())?;
    if visible.area() / area < min_visible {
        return None;
    }
    let ann = visible.normalize(
        0,
        (window.x as f64, window.y as f64),
        window.w as f64,
        window.h as f64,
    );
    (ann.w > 0.0 && ann.h > 0.0).then_some(ann)
}

pub fn project_to_tile(
    bbox: PixelRect,
    tile_origin: (u32, u32),
    tile_size: u32,
    min_visible: f64,
) -> Option<Annotation> {
    let window = PixelRect::new(tile_origin.0, tile_origin.1, tile_size, tile_size);
    project_to_window(bbox.into(), window, min_visible)
}

/// Carries labels from a source image over to its translated counterpart.
/// Translators preserve geometry, and normalized coordinates absorb any
/// rescaling, so the labels are returned unchanged.
pub fn transfer_annotations(labels: &[Annotation], _src_dims: (u32, u32), _dst_dims: (u32, u32)) -> Vec<Annotation> {
    labels.to_vec()
}

pub(crate) fn format_box(ann: &Annotation) -> String {
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        ann.class_id, ann.cx, ann.cy, ann.w, ann.h
    )
}

pub fn write_labels(labels: &[Annotation], mut sink: impl Write) -> std::io::Result<()> {
    for ann in labels {
        writeln!(sink, "{}", format_box(ann))?;
    }
    Ok(())
}

/// Parses `class cx cy w h` followed by `extra` further numeric fields.
pub(crate) fn parse_line(line: &str, lineno: usize, extra: usize) -> Result<(Annotation, Vec<f64>)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 + extra {
        return Err(Error::Parse {
            file: None,
            line: lineno,
            message: format!("expected {} fields, found {}", 5 + extra, fields.len()),
        });
    }
    let class_id: u32 = fields[0].parse().map_err(|_| Error::Parse {
        file: None,
        line: lineno,
        message: format!("invalid class id `{}`", fields[0]),
    })?;
    let mut nums = Vec::with_capacity(4 + extra);
    for f in &fields[1..] {
        let v: f64 = f.parse().map_err(|_| Error::Parse {
            file: None,
            line: lineno,
            message: format!("invalid number `{f}`"),
        })?;
        nums.push(v);
    }
    let ann = Annotation {
        class_id,
        cx: nums[0],
        cy: nums[1],
        w: nums[2],
        h: nums[3],
    };
    ann.check().map_err(|message| Error::Range {
        file: None,
        line: lineno,
        message,
    })?;
    Ok((ann, nums.split_off(4)))
}

pub fn read_labels(source: impl BufRead) -> Result<Vec<Annotation>> {
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
        out.push(parse_line(&line, i + 1, 0)?.0);
    }
    Ok(out)
}

pub fn save_labels(labels: &[Annotation], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_labels(labels, &mut buf).map_err(|e| Error::io(path, e))?;
    atomic_write(path, &buf)
}

pub fn load_labels(path: &Path) -> Result<Vec<Annotation>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(BufReader::new(file)).map_err(|e| e.with_file(path))
}
