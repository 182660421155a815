//! File-level stages behind the `crater` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::annotate::{load_labels, project_to_window, save_labels, transfer_annotations, Annotation};
use crate::config::Config;
use crate::dataset::{compose, export_layout, CompositionName, Manifest, ManifestEntry, Sources};
use crate::detect::{
    detect_blobs, detect_tiled, load_detections, run_external_detector, save_detections, stitch_detections, Detection,
};
use crate::ensemble::{dedup_georegistered, fuse_detections, GeoImage, WorldDetection, WorldTransform};
use crate::evaluate::{evaluate_dataset, EvalReport};
use crate::fsutil::{atomic_write, create_dir, list_with_extension, stem_of};
use crate::georef::{crater_to_pixel_box, filter_by_diameter, parse_crater_catalog, prune_by_contrast, MoonProjection};
use crate::raster::{clahe, encode_png, load_png, roi_crop, save_png, PixelRect, Raster};
use crate::synthgen::generate_scene;
use crate::tiling::{extract_tiles, plan_tiles, read_sidecar, tile_stem, TileGrid};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrepareSummary {
    pub images: usize,
    pub tiles: usize,
    pub annotations: usize,
    pub skipped_rows: usize,
    pub dropped_boxes: usize,
}

/// Output layout of a preparation stage.
#[derive(Clone, Debug)]
pub struct PreparedDir {
    pub root: PathBuf,
}

impl PreparedDir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.join("labels")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn sidecar(&self, parent_stem: &str) -> PathBuf {
        self.root.join(format!("{parent_stem}.tiles"))
    }

    fn create(&self) -> Result<()> {
        create_dir(&self.images())?;
        create_dir(&self.labels())
    }
}

/// Writes every tile of `img` with its projected labels. `boxes` are pixel
/// boxes in the frame of `img`.
fn write_tiles(
    img: &Raster,
    parent_stem: &str,
    boxes: &[crate::annotate::PixelBox],
    grid: &TileGrid,
    min_visible: f64,
    out: &PreparedDir,
) -> Result<(Vec<ManifestEntry>, usize)> {
    let written = extract_tiles(img, grid)?
        .into_par_iter()
        .map(|tile| {
            let stem = tile_stem(parent_stem, tile.origin);
            let window = grid.window(tile.origin);
            let labels: Vec<Annotation> = boxes
                .iter()
                .filter_map(|b| project_to_window(*b, window, min_visible))
                .collect();
            let image = out.images().join(format!("{stem}.png"));
            let label = out.labels().join(format!("{stem}.txt"));
            save_png(&tile.img, &image)?;
            save_labels(&labels, &label)?;
            Ok((ManifestEntry::new(image, label), labels.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    grid.save_sidecar(&out.sidecar(parent_stem))?;
    let n = written.iter().map(|(_, n)| n).sum();
    Ok((written.into_iter().map(|(e, _)| e).collect(), n))
}

/// Moon mosaic and crater catalog to labeled tiles. A catalog with a header
/// but no rows yields tiles with empty label files.
pub fn prepare_moon(mosaic_path: &Path, catalog_path: &Path, out_dir: &Path, cfg: &Config) -> Result<PrepareSummary> {
    let mosaic = load_png(mosaic_path)?;
    let catalog_file = fs::File::open(catalog_path).map_err(|e| Error::io(catalog_path, e))?;
    let catalog = match parse_crater_catalog(catalog_file, &cfg.catalog_schema()) {
        Err(Error::EmptyCatalog { skipped: 0 }) => crate::georef::ParsedCatalog { records: Vec::new(), skipped: 0 },
        other => other.map_err(|e| e.with_file(catalog_path))?,
    };
    let proj = MoonProjection::new(
        mosaic.width(),
        mosaic.height(),
        cfg.meters_per_pixel_for(mosaic.width()),
        cfg.max_abs_lat,
    )?;
    let kept = filter_by_diameter(&catalog.records, cfg.d_min_km, cfg.d_max_km)?;
    let mut rects = Vec::with_capacity(kept.len());
    let mut dropped = catalog.records.len() - kept.len();
    for rec in &kept {
        match crater_to_pixel_box(rec, &proj) {
            Ok(r) => rects.push(r),
            Err(Error::PolarRegion { .. } | Error::OffMosaic) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let visible = prune_by_contrast(&mosaic, &rects, cfg.prune_delta);
    dropped += rects.len() - visible.len();
    log::info!(
        "{}: {} catalog rows, {} malformed, {} boxes kept",
        catalog_path.display(),
        catalog.records.len(),
        catalog.skipped,
        visible.len()
    );

    let out = PreparedDir::new(out_dir);
    out.create()?;
    let grid = plan_tiles(mosaic.width(), mosaic.height(), cfg.tile_size, cfg.overlap)?;
    let boxes: Vec<_> = visible.iter().map(|&r| r.into()).collect();
    let (entries, annotations) = write_tiles(&mosaic, &stem_of(mosaic_path), &boxes, &grid, cfg.min_visible, &out)?;
    let summary = PrepareSummary {
        images: 1,
        tiles: entries.len(),
        annotations,
        skipped_rows: catalog.skipped,
        dropped_boxes: dropped,
    };
    Manifest::new(entries)?.save(&out.manifest())?;
    Ok(summary)
}

/// Parses `x,y,w,h`.
pub fn parse_roi(text: &str) -> Result<PixelRect> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let values: Vec<u32> = parts.iter().filter_map(|p| p.parse().ok()).collect();
    match values[..] {
        [x, y, w, h] if parts.len() == 4 => Ok(PixelRect::new(x, y, w, h)),
        _ => Err(Error::InvalidParameter(format!("ROI must be x,y,w,h in pixels, got {text:?}"))),
    }
}

/// Aerial images and labels to cropped, enhanced, labeled tiles. Labels are
/// looked up as `<stem>.txt` in `labels_dir`; a missing file means no craters.
pub fn prepare_aerial(
    images_dir: &Path,
    labels_dir: &Path,
    roi: Option<PixelRect>,
    out_dir: &Path,
    cfg: &Config,
) -> Result<PrepareSummary> {
    let out = PreparedDir::new(out_dir);
    out.create()?;
    let images = list_with_extension(images_dir, "png")?;
    let results = images
        .par_iter()
        .map(|path| {
            let stem = stem_of(path);
            let img = load_png(path)?;
            let label_path = labels_dir.join(format!("{stem}.txt"));
            let labels = if label_path.is_file() { load_labels(&label_path)? } else { Vec::new() };
            let window = roi.unwrap_or(PixelRect::new(0, 0, img.width(), img.height()));
            let cropped = roi_crop(&img, window)?;
            let cropped = if cfg.apply_clahe { clahe(&cropped, &cfg.clahe_params())? } else { cropped };
            let in_crop: Vec<_> = labels
                .iter()
                .filter_map(|a| project_to_window(a.denormalize(img.width(), img.height()), window, cfg.min_visible))
                .map(|a| a.denormalize(window.w, window.h))
                .collect();
            let grid = plan_tiles(cropped.width(), cropped.height(), cfg.tile_size, cfg.overlap)?;
            let (entries, n) = write_tiles(&cropped, &stem, &in_crop, &grid, cfg.min_visible, &out)?;
            Ok((entries, n, labels.len() - in_crop.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = PrepareSummary {
        images: images.len(),
        ..Default::default()
    };
    let mut entries = Vec::new();
    for (e, n, dropped) in results {
        summary.tiles += e.len();
        summary.annotations += n;
        summary.dropped_boxes += dropped;
        entries.extend(e);
    }
    Manifest::new(entries)?.save(&out.manifest())?;
    Ok(summary)
}

/// Splits the manifest at `input` by group and writes it to `output`.
pub fn split_manifest(input: &Path, output: &Path, regions: Option<&Path>, cfg: &Config) -> Result<Manifest> {
    let mut manifest = Manifest::load(input)?;
    if let Some(r) = regions {
        manifest = manifest.with_regions(&crate::dataset::load_regions(r)?);
    }
    let split = crate::dataset::split_dataset(&manifest, cfg.split_ratios(), cfg.seed)?;
    split.save(output)?;
    Ok(split)
}

/// Copies every label file of `src` to `dst` through the annotation transfer.
pub fn transfer_label_dir(src: &Path, dst: &Path) -> Result<usize> {
    create_dir(dst)?;
    let files = list_with_extension(src, "txt")?;
    for f in &files {
        let labels = load_labels(f)?;
        let name = f.file_name().expect("listed files have names");
        save_labels(&transfer_annotations(&labels, (0, 0), (0, 0)), &dst.join(name))?;
    }
    Ok(files.len())
}

pub fn load_label_dir(dir: &Path) -> Result<BTreeMap<String, Vec<Annotation>>> {
    list_with_extension(dir, "txt")?
        .iter()
        .map(|p| Ok((stem_of(p), load_labels(p)?)))
        .collect()
}

pub fn load_detection_files(dir: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    list_with_extension(dir, "txt")?
        .iter()
        .map(|p| Ok((stem_of(p), load_detections(p)?)))
        .collect()
}

fn save_detection_map(dets: &BTreeMap<String, Vec<Detection>>, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    for (stem, d) in dets {
        save_detections(d, &out_dir.join(format!("{stem}.txt")))?;
    }
    Ok(())
}

/// Runs the baseline detector on every PNG in `images_dir`, whole or tiled.
pub fn detect_baseline_dir(images_dir: &Path, out_dir: &Path, tiled: bool, cfg: &Config) -> Result<BTreeMap<String, Vec<Detection>>> {
    let params = cfg.detector_params();
    let tiled_params = cfg.tiled_params();
    let dets = list_with_extension(images_dir, "png")?
        .par_iter()
        .map(|p| {
            let img = load_png(p)?;
            let d = if tiled { detect_tiled(&img, &tiled_params, &params)? } else { detect_blobs(&img, &params)? };
            Ok((stem_of(p), d))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    save_detection_map(&dets, out_dir)?;
    Ok(dets)
}

/// Uses the configured external detector when there is one, else the baseline.
pub fn detect_dir(
    images_dir: &Path,
    out_dir: &Path,
    tiled: bool,
    extra: &[(&str, &Path)],
    cfg: &Config,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    match &cfg.detector_command {
        Some(cmd) => run_external_detector(images_dir, out_dir, cmd, extra),
        None => detect_baseline_dir(images_dir, out_dir, tiled, cfg),
    }
}

/// Parent-frame detections from per-tile detection files, one sidecar per
/// parent image in `tiles_root`.
pub fn stitch_dir(tiles_root: &Path, det_dir: &Path, out_dir: &Path, cfg: &Config) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out = BTreeMap::new();
    for sidecar in list_with_extension(tiles_root, "tiles")? {
        let parent = stem_of(&sidecar);
        let file = fs::File::open(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let origins = read_sidecar(std::io::BufReader::new(file)).map_err(|e| e.with_file(&sidecar))?;
        let ts = cfg.tile_size;
        let w = origins.iter().map(|o| o.0).max().unwrap_or(0) + ts;
        let h = origins.iter().map(|o| o.1).max().unwrap_or(0) + ts;
        let grid = TileGrid::from_origins(w, h, ts, cfg.overlap, origins.clone())?;
        let per_tile = origins
            .iter()
            .map(|&o| {
                let path = det_dir.join(format!("{}.txt", tile_stem(&parent, o)));
                let dets = if path.is_file() { load_detections(&path)? } else { Vec::new() };
                let dets = if cfg.trim_edges { crate::detect::trim_interior_edges(dets, o, &grid) } else { dets };
                Ok((o, dets))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(parent, stitch_detections(&per_tile, &grid, cfg.stitch_iou)?);
    }
    save_detection_map(&out, out_dir)?;
    Ok(out)
}

/// Scores the detection files in `det_dir` against the labels in `labels_dir`.
pub fn eval_dir(model_name: &str, labels_dir: &Path, det_dir: &Path, cfg: &Config) -> Result<EvalReport> {
    let gt = load_label_dir(labels_dir)?;
    let dets = load_detection_files(det_dir)?;
    evaluate_dataset(model_name, &gt, &dets, cfg.iou_threshold, cfg.operating_point())
}

/// Fuses per-image detections from several model directories.
pub fn ensemble_dirs(model_dirs: &[PathBuf], out_dir: &Path, cfg: &Config) -> Result<BTreeMap<String, Vec<Detection>>> {
    let per_model = model_dirs.iter().map(|d| load_detection_files(d)).collect::<Result<Vec<_>>>()?;
    let stems: std::collections::BTreeSet<&String> = per_model.iter().flat_map(|m| m.keys()).collect();
    let fused: BTreeMap<String, Vec<Detection>> = stems
        .into_par_iter()
        .map(|stem| {
            let sets: Vec<Vec<Detection>> = per_model.iter().map(|m| m.get(stem).cloned().unwrap_or_default()).collect();
            (stem.clone(), fuse_detections(&sets, cfg.ensemble_iou))
        })
        .collect();
    save_detection_map(&fused, out_dir)?;
    Ok(fused)
}

/// World-frame deduplication. Every detection file in `det_dir` needs a
/// `<stem>.affine` transform in `transforms_dir` and a `<stem>.png` in
/// `images_dir` for its pixel size.
pub fn dedup_dir(det_dir: &Path, images_dir: &Path, transforms_dir: &Path, out_file: &Path, cfg: &Config) -> Result<Vec<WorldDetection>> {
    let images = load_detection_files(det_dir)?
        .into_iter()
        .map(|(stem, detections)| {
            let transform = WorldTransform::load(&transforms_dir.join(format!("{stem}.affine")))?;
            let png = images_dir.join(format!("{stem}.png"));
            let (width, height) = image::image_dimensions(&png).map_err(|source| Error::Image { path: png.clone(), source })?;
            Ok(GeoImage { stem, transform, width, height, detections })
        })
        .collect::<Result<Vec<_>>>()?;
    let world = dedup_georegistered(&images, cfg.ensemble_iou)?;
    let mut text = String::new();
    for w in &world {
        text.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6} {:.6} {}\n",
            w.bbox.class_id,
            w.bbox.cx,
            w.bbox.cy,
            w.bbox.w,
            w.bbox.h,
            w.confidence,
            w.provenance.join(",")
        ));
    }
    atomic_write(out_file, text.as_bytes())?;
    Ok(world)
}

/// Prepared inputs for the experiment harness.
#[derive(Clone, Debug)]
pub struct ExperimentInputs {
    /// Split manifest of the bomb-crater tiles.
    pub bomb: Option<PathBuf>,
    pub moon: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub compositions: Vec<CompositionName>,
}

/// One report per composition: export its layout, run the detector on the
/// test images and score against the test labels.
pub fn run_experiment(inputs: &ExperimentInputs, cfg: &Config) -> Result<Vec<EvalReport>> {
    let load = |p: &Option<PathBuf>| p.as_deref().map(Manifest::load).transpose();
    let sources = Sources {
        bomb: load(&inputs.bomb)?,
        moon: load(&inputs.moon)?,
        synthetic: load(&inputs.synthetic)?,
    };
    let compositions = inputs
        .compositions
        .iter()
        .map(|&name| compose(&sources, name))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::new();
    for composition in &compositions {
        let name = composition.name;
        let root = inputs.work_dir.join(name.as_str());
        let data = root.join("data");
        export_layout(composition, &data)?;
        let test_images = data.join("images").join("test");
        let test_labels = data.join("labels").join("test");
        let det_dir = root.join("detections");
        if det_dir.exists() {
            fs::remove_dir_all(&det_dir).map_err(|e| Error::io(&det_dir, e))?;
        }
        let model = PathBuf::from(name.as_str());
        let extra: [(&str, &Path); 3] = [("labels", &test_labels), ("data", &data), ("model", &model)];
        let dets = detect_dir(&test_images, &det_dir, false, &extra, cfg)?;
        let gt = load_label_dir(&test_labels)?;
        let report = evaluate_dataset(name.as_str(), &gt, &dets, cfg.iou_threshold, cfg.operating_point())?;
        log::info!(
            "{name}: precision {:.3} recall {:.3} AP50 {:.3} over {} images",
            report.precision,
            report.recall,
            report.ap50,
            report.n_images
        );
        reports.push(report);
    }
    Ok(reports)
}

/// Drawing colors per composition.
pub fn default_color(model: &str) -> Option<[u8; 3]> {
    match model {
        "moon" => Some([0, 255, 0]),
        "bomb" => Some([0, 0, 255]),
        "synthetic" => Some([255, 105, 180]),
        "combined" => Some([255, 255, 0]),
        _ => None,
    }
}

pub fn parse_color(text: &str) -> Result<[u8; 3]> {
    let hex = text.trim_start_matches('#');
    let bad = || Error::InvalidParameter(format!("color must be RRGGBB hex or a composition name, got {text:?}"));
    if let Some(c) = default_color(text) {
        return Ok(c);
    }
    if hex.len() != 6 {
        return Err(bad());
    }
    let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
    Ok([byte(0)?, byte(2)?, byte(4)?])
}

/// Inclusive pixel bounds of a box border on a `w`×`h` image.
pub fn border_bounds(ann: &Annotation, w: u32, h: u32) -> (u32, u32, u32, u32) {
    let b = ann.denormalize(w, h);
    let clamp = |v: f64, hi: u32| (v.max(0.0) as u32).min(hi - 1);
    let eps = 1e-6;
    let left = clamp((b.x0 + eps).floor(), w);
    let top = clamp((b.y0 + eps).floor(), h);
    let right = clamp((b.x1 - eps).ceil() - 1.0, w).max(left);
    let bottom = clamp((b.y1 - eps).ceil() - 1.0, h).max(top);
    (left, top, right, bottom)
}

/// Draws 1-px box borders per detection set in the given order, so later
/// sets win on shared pixels.
pub fn overlay(image_path: &Path, sets: &[(PathBuf, [u8; 3])], out: &Path) -> Result<()> {
    let mut img = image::open(image_path)
        .map_err(|source| Error::Image { path: image_path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    for (path, color) in sets {
        for d in load_detections(path)? {
            let (l, t, r, b) = border_bounds(&d.ann, w, h);
            for x in l..=r {
                img.put_pixel(x, t, image::Rgb(*color));
                img.put_pixel(x, b, image::Rgb(*color));
            }
            for y in t..=b {
                img.put_pixel(l, y, image::Rgb(*color));
                img.put_pixel(r, y, image::Rgb(*color));
            }
        }
    }
    let buf = encode_png(out, img.as_raw(), w, h, image::ExtendedColorType::Rgb8)?;
    atomic_write(out, &buf)
}

/// Writes `count` synthetic scenes seeded `cfg.seed + i` with labels and a manifest.
pub fn synthgen_dir(out_dir: &Path, count: usize, cfg: &Config) -> Result<usize> {
    let out = PreparedDir::new(out_dir);
    out.create()?;
    let entries = (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(&cfg.scene_spec(cfg.seed.wrapping_add(i as u64)))?;
            let stem = format!("scene_{i:04}");
            let image = out.images().join(format!("{stem}.png"));
            let label = out.labels().join(format!("{stem}.txt"));
            save_png(&scene.image, &image)?;
            save_labels(&scene.annotations, &label)?;
            Ok(ManifestEntry::new(image, label))
        })
        .collect::<Result<Vec<_>>>()?;
    Manifest::new(entries)?.save(&out.manifest())?;
    Ok(count)
}
