//! Detection metrics: IoU, greedy matching, precision/recall and AP@0.5.
//!
//! AP uses all-point interpolation over detections pooled across every image
//! of a dataset. A detection is a true positive when its IoU with an
//! unmatched ground-truth box is at least the threshold (`>=`, so a box at
//! exactly 0.5 counts).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotate::Annotation;
use crate::detect::Detection;
use crate::{Error, Result};

pub fn iou(a: &Annotation, b: &Annotation) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Descending confidence; equal confidences fall back to box coordinates.
pub(crate) fn confidence_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.ann.coord_cmp(&b.ann))
}

/// Greedy one-to-one matching in confidence order. Returns
/// `(detection index, is true positive)` pairs in the order processed.
pub fn match_detections(gt: &[Annotation], dets: &[Detection], iou_thr: f64) -> Vec<(usize, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| confidence_order(&dets[i], &dets[j]));
    let mut taken = vec![false; gt.len()];
    order
        .into_iter()
        .map(|di| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gt.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = iou(&dets[di].ann, g);
                if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, _)) => {
                    taken[gi] = true;
                    (di, true)
                }
                None => (di, false),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Confidence of the detection that closes this point.
    pub threshold: f64,
}

fn sort_flags(flags: &[(f64, bool)]) -> Vec<(f64, bool)> {
    let mut sorted = flags.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    sorted
}

/// Cumulative precision/recall after each detection, in descending
/// confidence order. Recall is 0 throughout when there is no ground truth.
pub fn pr_curve(flags: &[(f64, bool)], n_gt: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    sort_flags(flags)
        .iter()
        .enumerate()
        .map(|(i, &(conf, matched))| {
            if matched {
                tp += 1;
            }
            PrPoint {
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
                precision: tp as f64 / (i + 1) as f64,
                threshold: conf,
            }
        })
        .collect()
}

/// All-point interpolated AP. With no ground truth the result is 0 if there
/// are detections and a vacuous 1 otherwise.
pub fn average_precision(flags: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = pr_curve(flags, n_gt);
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.iter().zip(envelope) {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * env;
            prev_recall = p.recall;
        }
    }
    ap
}

/// Where precision and recall rows are read off the PR curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum OperatingPoint {
    /// Detections with confidence at or above the value.
    Confidence(f64),
    /// The prefix of the ranking with the highest F1 score.
    MaxF1,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        OperatingPoint::Confidence(0.25)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub precision: f64,
    pub recall: f64,
    pub ap50: f64,
    pub n_images: usize,
    pub n_gt: usize,
    pub n_det: usize,
}

impl EvalReport {
    /// AP is vacuous when the dataset has no ground truth.
    pub fn ap_applicable(&self) -> bool {
        self.n_gt > 0
    }
}

fn precision_recall(flags: &[(f64, bool)], n_gt: usize, op: OperatingPoint) -> (f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    match op {
        OperatingPoint::Confidence(thr) => {
            let kept: Vec<bool> = flags.iter().filter(|f| f.0 >= thr).map(|f| f.1).collect();
            let tp = kept.iter().filter(|&&m| m).count();
            (ratio(tp, kept.len()), ratio(tp, n_gt))
        }
        OperatingPoint::MaxF1 => {
            let mut best = (0.0, 0.0, -1.0);
            for p in pr_curve(flags, n_gt) {
                let f1 = if p.precision + p.recall > 0.0 {
                    2.0 * p.precision * p.recall / (p.precision + p.recall)
                } else {
                    0.0
                };
                if f1 > best.2 {
                    best = (p.precision, p.recall, f1);
                }
            }
            (best.0, best.1)
        }
    }
}

/// Evaluates per-image detections against ground truth keyed by image stem.
/// Images without a detection entry count as having no detections.
pub fn evaluate_dataset(
    model_name: &str,
    gt: &BTreeMap<String, Vec<Annotation>>,
    dets: &BTreeMap<String, Vec<Detection>>,
    iou_thr: f64,
    op: OperatingPoint,
) -> Result<EvalReport> {
    if let Some(stem) = dets.keys().find(|s| !gt.contains_key(*s)) {
        return Err(Error::StemMismatch(stem.clone()));
    }
    let empty = Vec::new();
    let mut flags = Vec::new();
    let mut n_gt = 0;
    let mut n_det = 0;
    for (stem, labels) in gt {
        let image_dets = dets.get(stem).unwrap_or(&empty);
        n_gt += labels.len();
        n_det += image_dets.len();
        flags.extend(
            match_detections(labels, image_dets, iou_thr)
                .into_iter()
                .map(|(i, m)| (image_dets[i].confidence, m)),
        );
    }
    let (precision, recall) = precision_recall(&flags, n_gt, op);
    Ok(EvalReport {
        model_name: model_name.to_string(),
        precision,
        recall,
        ap50: average_precision(&flags, n_gt),
        n_images: gt.len(),
        n_gt,
        n_det,
    })
}

/// Plain-text table with one column per model and rows mAP, precision and
/// recall (test split), three decimals each.
pub fn render_report(reports: &[EvalReport]) -> String {
    let row_names = ["mAP_test", "precision_test", "recall_test"];
    let label_w = row_names.iter().map(|r| r.len()).max().unwrap_or(0).max("Metric".len());
    let widths: Vec<usize> = reports.iter().map(|r| r.model_name.len().max(5)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "Metric");
    for (r, w) in reports.iter().zip(&widths) {
        let _ = write!(out, "  {:>w$}", r.model_name);
    }
    out.push('\n');
    for (i, name) in row_names.iter().enumerate() {
        let _ = write!(out, "{name:<label_w$}");
        for (r, w) in reports.iter().zip(&widths) {
            let v = [r.ap50, r.precision, r.recall][i];
            let _ = write!(out, "  {:>w$}", format!("{v:.3}"));
        }
        out.push('\n');
    }
    out
}

pub const REPORT_CSV_HEADER: &str = "model,precision,recall,ap50,n_images,n_gt,n_det";

pub fn render_report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{},{},{}",
            r.model_name, r.precision, r.recall, r.ap50, r.n_images, r.n_gt, r.n_det
        );
    }
    out
}
