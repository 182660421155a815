//! Multi-model detection fusion and deduplication across georegistered images.

use std::fs;
use std::path::Path;

use crate::annotate::Annotation;
use crate::detect::Detection;
use crate::evaluate::{confidence_order, iou};
use crate::{Error, Result};

pub const DEFAULT_FUSION_IOU: f64 = 0.55;

/// A fused detection and the `(model, index)` pairs that contributed to it.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedCluster {
    pub detection: Detection,
    pub members: Vec<(usize, usize)>,
}

struct Item {
    model: usize,
    index: usize,
    det: Detection,
}

struct Cluster {
    /// Per-model maxima in global confidence order.
    members: Vec<usize>,
    fused: Annotation,
}

fn weighted_box(items: &[Item], members: &[usize]) -> Annotation {
    let first = items[members[0]].det.ann;
    if members.len() == 1 {
        return first;
    }
    let total: f64 = members.iter().map(|&m| items[m].det.confidence).sum();
    let weight = |m: usize| {
        if total > 0.0 {
            items[m].det.confidence / total
        } else {
            1.0 / members.len() as f64
        }
    };
    let mean = |f: fn(&Annotation) -> f64| members.iter().map(|&m| weight(m) * f(&items[m].det.ann)).sum::<f64>();
    Annotation {
        class_id: first.class_id,
        cx: mean(|a| a.cx),
        cy: mean(|a| a.cy),
        w: mean(|a| a.w),
        h: mean(|a| a.h),
    }
}

fn noisy_or(items: &[Item], members: &[usize]) -> f64 {
    let strongest = members.iter().map(|&m| items[m].det.confidence).fold(0.0, f64::max);
    if members.len() == 1 {
        return strongest;
    }
    let miss: f64 = members.iter().map(|&m| 1.0 - items[m].det.confidence).product();
    (1.0 - miss).clamp(strongest, 1.0)
}

fn has_model(items: &[Item], members: &[usize], model: usize) -> bool {
    members.iter().any(|&m| items[m].model == model)
}

/// Joins each pair of clusters whose fused boxes still overlap at `iou_thr`,
/// most-overlapping pair first, keeping the stronger member per model.
fn merge_overlapping(items: &[Item], clusters: &mut Vec<Cluster>, iou_thr: f64) {
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let v = iou(&clusters[i].fused, &clusters[j].fused);
                if v >= iou_thr && best.is_none_or(|(b, _, _)| v > b) {
                    best = Some((v, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { return };
        let absorbed = clusters.remove(j);
        let mut members = clusters[i].members.clone();
        for m in absorbed.members {
            if !has_model(items, &members, items[m].model) {
                members.push(m);
            } else if let Some(slot) = members.iter_mut().find(|k| items[**k].model == items[m].model) {
                if m < *slot {
                    *slot = m;
                }
            }
        }
        members.sort_unstable();
        clusters[i].fused = weighted_box(items, &members);
        clusters[i].members = members;
    }
}

/// Greedy confidence-ordered clustering across models. Each model adds at
/// most its strongest box to a cluster; its weaker overlapping boxes are
/// suppressed. Boxes are confidence-weighted means, confidences noisy-OR.
pub fn fuse_clusters(per_model: &[Vec<Detection>], iou_thr: f64) -> Vec<FusedCluster> {
    let mut items: Vec<Item> = per_model
        .iter()
        .enumerate()
        .flat_map(|(model, dets)| dets.iter().enumerate().map(move |(index, &det)| Item { model, index, det }))
        .collect();
    items.sort_by(|a, b| confidence_order(&a.det, &b.det));

    let mut clusters: Vec<Cluster> = Vec::new();
    for k in 0..items.len() {
        let det = items[k].det;
        match clusters.iter_mut().find(|c| iou(&c.fused, &det.ann) >= iou_thr) {
            Some(c) => {
                if !has_model(&items, &c.members, items[k].model) {
                    c.members.push(k);
                    c.fused = weighted_box(&items, &c.members);
                }
            }
            None => clusters.push(Cluster {
                members: vec![k],
                fused: det.ann,
            }),
        }
    }
    merge_overlapping(&items, &mut clusters, iou_thr);

    let mut out: Vec<FusedCluster> = clusters
        .into_iter()
        .map(|c| FusedCluster {
            detection: Detection {
                ann: c.fused,
                confidence: noisy_or(&items, &c.members),
            },
            members: c.members.iter().map(|&m| (items[m].model, items[m].index)).collect(),
        })
        .collect();
    out.sort_by(|a, b| confidence_order(&a.detection, &b.detection));
    out
}

pub fn fuse_detections(per_model: &[Vec<Detection>], iou_thr: f64) -> Vec<Detection> {
    fuse_clusters(per_model, iou_thr).into_iter().map(|c| c.detection).collect()
}

/// Affine map from image pixels to a planar world frame in meters:
/// `x = a·px + b·py + c`, `y = d·px + e·py + f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldTransform {
    coeffs: [f64; 6],
}

impl WorldTransform {
    pub fn new(coeffs: [f64; 6]) -> Result<Self> {
        let [a, b, _, d, e, _] = coeffs;
        let det = a * e - b * d;
        if !coeffs.iter().all(|v| v.is_finite()) || det.abs() < 1e-12 {
            return Err(Error::SingularTransform);
        }
        Ok(Self { coeffs })
    }

    pub fn identity() -> Self {
        Self {
            coeffs: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            coeffs: [1.0, 0.0, dx, 0.0, 1.0, dy],
        }
    }

    pub fn coeffs(&self) -> [f64; 6] {
        self.coeffs
    }

    pub fn apply(&self, px: f64, py: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.coeffs;
        (a * px + b * py + c, d * px + e * py + f)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let values: Vec<&str> = text.split_whitespace().collect();
        if values.len() != 6 {
            return Err(Error::Parse {
                file: None,
                line: 1,
                message: format!("expected 6 affine coefficients, found {}", values.len()),
            });
        }
        let mut coeffs = [0.0; 6];
        for (slot, v) in coeffs.iter_mut().zip(&values) {
            *slot = v.parse().map_err(|_| Error::Parse {
                file: None,
                line: 1,
                message: format!("invalid coefficient {v:?}"),
            })?;
        }
        Self::new(coeffs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.with_file(path))
    }

    /// Axis-aligned world bounding box of a pixel-space rectangle.
    pub fn map_box(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> (f64, f64, f64, f64) {
        let pts = [self.apply(x0, y0), self.apply(x1, y0), self.apply(x0, y1), self.apply(x1, y1)];
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| pts.iter().map(pick).fold(init, f);
        (
            fold(f64::min, f64::INFINITY, |p| p.0),
            fold(f64::min, f64::INFINITY, |p| p.1),
            fold(f64::max, f64::NEG_INFINITY, |p| p.0),
            fold(f64::max, f64::NEG_INFINITY, |p| p.1),
        )
    }
}

/// One image's detections together with its georegistration.
#[derive(Clone, Debug)]
pub struct GeoImage {
    pub stem: String,
    pub transform: WorldTransform,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
}

/// A detection in world meters, with the stems of the images that saw it.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldDetection {
    /// Center-form box in world units.
    pub bbox: Annotation,
    pub confidence: f64,
    pub provenance: Vec<String>,
}

pub fn to_world(image: &GeoImage, det: &Detection) -> Detection {
    let px = det.ann.denormalize(image.width, image.height);
    let (x0, y0, x1, y1) = image.transform.map_box(px.x0, px.y0, px.x1, px.y1);
    Detection {
        ann: Annotation {
            class_id: det.ann.class_id,
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        },
        confidence: det.confidence,
    }
}

/// Maps every image's detections into the world frame and fuses them,
/// treating each image as one model.
pub fn dedup_georegistered(images: &[GeoImage], world_iou_thr: f64) -> Result<Vec<WorldDetection>> {
    let per_image: Vec<Vec<Detection>> = images
        .iter()
        .map(|img| {
            WorldTransform::new(img.transform.coeffs())?;
            Ok(img.detections.iter().map(|d| to_world(img, d)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(fuse_clusters(&per_image, world_iou_thr)
        .into_iter()
        .map(|c| {
            let mut provenance: Vec<String> = c.members.iter().map(|&(m, _)| images[m].stem.clone()).collect();
            provenance.sort();
            WorldDetection {
                bbox: c.detection.ann,
                confidence: c.detection.confidence,
                provenance,
            }
        })
        .collect())
}
