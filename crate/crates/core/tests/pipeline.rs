use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crater_core::annotate::{load_labels, save_labels, Annotation};
use crater_core::config::{Config, MOON_RADIUS_KM};
use crater_core::dataset::Manifest;
use crater_core::detect::{load_detections, save_detections, Detection};
use crater_core::ensemble::WorldTransform;
use crater_core::evaluate::iou;
use crater_core::pipeline::{
    dedup_dir, ensemble_dirs, overlay, prepare_aerial, prepare_moon, stitch_dir, synthgen_dir, PreparedDir,
};
use crater_core::raster::{load_png, save_png, PixelRect, Raster};
use crater_core::tiling::{read_sidecar, tile_stem};
use crater_core::Error;
use tempfile::TempDir;

const MOSAIC_W: u32 = 1024;
const MOSAIC_H: u32 = 512;

fn moon_config() -> Config {
    let mut cfg = Config::default();
    cfg.tile_size = 256;
    cfg.overlap = 0;
    cfg.d_min_km = 1.0;
    cfg.d_max_km = 1000.0;
    cfg
}

fn mpp() -> f64 {
    2.0 * std::f64::consts::PI * MOON_RADIUS_KM * 1000.0 / MOSAIC_W as f64
}

/// A crater described in pixels: center and projected height.
struct PixCrater {
    cx: f64,
    cy: f64,
    h: f64,
}

impl PixCrater {
    fn lat(&self) -> f64 {
        90.0 - self.cy * 180.0 / MOSAIC_H as f64
    }

    fn lon(&self) -> f64 {
        self.cx * 360.0 / MOSAIC_W as f64 - 180.0
    }

    fn diameter_km(&self) -> f64 {
        self.h * mpp() / 1000.0
    }

    /// Expected integer box as (x0, y0, x1, y1).
    fn rect(&self) -> (f64, f64, f64, f64) {
        let w = self.h / self.lat().to_radians().cos();
        let span = |c: f64, s: f64, lim: f64| {
            let s = s.round().max(1.0);
            let start = (c - s / 2.0).round();
            (start.max(0.0), (start + s).min(lim))
        };
        let (x0, x1) = span(self.cx, w, MOSAIC_W as f64);
        let (y0, y1) = span(self.cy, self.h, MOSAIC_H as f64);
        (x0, y0, x1, y1)
    }
}

fn craters() -> Vec<PixCrater> {
    let mut v = Vec::new();
    for (i, &(cx, cy)) in [
        (100.3, 100.2),
        (380.7, 90.1),
        (620.2, 140.6),
        (900.4, 120.3),
        (120.1, 300.7),
        (400.6, 350.2),
        (700.3, 310.4),
        (880.2, 400.1),
        (180.4, 180.3),
    ]
    .iter()
    .enumerate()
    {
        v.push(PixCrater { cx, cy, h: 16.0 + i as f64 });
    }
    // straddles the border between the first two tiles of the top row
    v.push(PixCrater { cx: 256.0, cy: 200.0, h: 20.0 });
    v
}

fn draw_mosaic(craters: &[PixCrater]) -> Raster {
    let rects: Vec<_> = craters.iter().map(PixCrater::rect).collect();
    Raster::from_fn(MOSAIC_W, MOSAIC_H, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let inside = rects.iter().any(|&(x0, y0, x1, y1)| {
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            let (rx, ry) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
            ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2) <= 1.0
        });
        if inside {
            40
        } else {
            160
        }
    })
    .unwrap()
}

fn write_catalog(path: &Path, craters: &[PixCrater]) {
    let mut text = String::from("CRATER_ID,LAT_CIRC_IMG,LON_CIRC_IMG,DIAM_CIRC_IMG\n");
    for (i, c) in craters.iter().enumerate() {
        text.push_str(&format!("c{i},{:.12},{:.12},{:.12}\n", c.lat(), c.lon(), c.diameter_km()));
    }
    fs::write(path, text).unwrap();
}

fn overlap_area(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let w = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let h = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    w * h
}

fn tile_labels(out: &Path) -> BTreeMap<(u32, u32), Vec<Annotation>> {
    let dir = PreparedDir::new(out);
    let sidecar = fs::read_to_string(dir.sidecar("mosaic")).unwrap();
    read_sidecar(sidecar.as_bytes())
        .unwrap()
        .into_iter()
        .map(|o| {
            let labels = load_labels(&dir.labels().join(format!("{}.txt", tile_stem("mosaic", o)))).unwrap();
            (o, labels)
        })
        .collect()
}

fn setup_moon(craters: &[PixCrater]) -> (TempDir, PathBuf, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let mosaic = tmp.path().join("mosaic.png");
    let catalog = tmp.path().join("catalog.csv");
    save_png(&draw_mosaic(craters), &mosaic).unwrap();
    write_catalog(&catalog, craters);
    (tmp, mosaic, catalog)
}

#[test]
fn moon_mosaic_tiles_carry_projected_craters() {
    let craters = craters();
    let (tmp, mosaic, catalog) = setup_moon(&craters);
    let out = tmp.path().join("out");
    let summary = prepare_moon(&mosaic, &catalog, &out, &moon_config()).unwrap();
    assert_eq!(summary.tiles, 8);
    assert_eq!(summary.skipped_rows, 0);
    assert_eq!(summary.dropped_boxes, 0);

    let manifest = Manifest::load(&PreparedDir::new(&out).manifest()).unwrap();
    assert_eq!(manifest.len(), 8);
    for e in manifest.entries() {
        assert_eq!(load_png(&e.image).unwrap().dims(), (256, 256));
    }

    let tiles = tile_labels(&out);
    assert_eq!(tiles.len(), 8);
    let mut total = 0;
    for (&(ox, oy), labels) in &tiles {
        let win = (ox as f64, oy as f64, ox as f64 + 256.0, oy as f64 + 256.0);
        let mut expected: Vec<(f64, f64, f64, f64)> = craters
            .iter()
            .map(PixCrater::rect)
            .filter(|&r| {
                let area = (r.2 - r.0) * (r.3 - r.1);
                overlap_area(r, win) / area >= 0.4
            })
            .map(|r| (r.0.max(win.0), r.1.max(win.1), r.2.min(win.2), r.3.min(win.3)))
            .collect();
        assert_eq!(labels.len(), expected.len(), "tile {ox},{oy}");
        total += labels.len();
        for l in labels {
            let (x0, y0, x1, y1) = l.corners();
            let got = (ox as f64 + x0 * 256.0, oy as f64 + y0 * 256.0, ox as f64 + x1 * 256.0, oy as f64 + y1 * 256.0);
            let pos = expected
                .iter()
                .position(|e| {
                    (e.0 - got.0).abs() < 1e-3 && (e.1 - got.1).abs() < 1e-3 && (e.2 - got.2).abs() < 1e-3 && (e.3 - got.3).abs() < 1e-3
                })
                .unwrap_or_else(|| panic!("unexpected label {got:?} in tile {ox},{oy}"));
            expected.remove(pos);
        }
    }
    assert_eq!(total, craters.len() + 1);
    assert_eq!(summary.annotations, total);
}

#[test]
fn polar_and_out_of_range_craters_are_dropped() {
    let mut craters = craters();
    craters.truncate(3);
    craters.push(PixCrater { cx: 500.2, cy: 3.1, h: 4.0 });
    let (tmp, mosaic, catalog) = setup_moon(&craters);
    let mut cfg = moon_config();
    cfg.d_max_km = 17.5 * mpp() / 1000.0;
    let out = tmp.path().join("out");
    let summary = prepare_moon(&mosaic, &catalog, &out, &cfg).unwrap();
    // the 18 px crater is above the diameter range and the last one is polar
    assert_eq!(summary.annotations, 2);
    assert_eq!(summary.dropped_boxes, 2);
}

#[test]
fn header_only_catalog_gives_empty_labels() {
    let tmp = TempDir::new().unwrap();
    let mosaic = tmp.path().join("mosaic.png");
    let catalog = tmp.path().join("catalog.csv");
    save_png(&Raster::filled(MOSAIC_W, MOSAIC_H, 90).unwrap(), &mosaic).unwrap();
    fs::write(&catalog, "LAT_CIRC_IMG,LON_CIRC_IMG,DIAM_CIRC_IMG\n").unwrap();
    let out = tmp.path().join("out");
    let summary = prepare_moon(&mosaic, &catalog, &out, &moon_config()).unwrap();
    assert_eq!(summary.tiles, 8);
    assert_eq!(summary.annotations, 0);
    let tiles = tile_labels(&out);
    assert_eq!(tiles.len(), 8);
    for labels in tiles.values() {
        assert!(labels.is_empty());
    }
}

#[test]
fn all_rows_malformed_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let mosaic = tmp.path().join("mosaic.png");
    let catalog = tmp.path().join("catalog.csv");
    save_png(&Raster::filled(MOSAIC_W, MOSAIC_H, 90).unwrap(), &mosaic).unwrap();
    fs::write(&catalog, "LAT_CIRC_IMG,LON_CIRC_IMG,DIAM_CIRC_IMG\nx,1,2\n").unwrap();
    let err = prepare_moon(&mosaic, &catalog, &tmp.path().join("out"), &moon_config()).unwrap_err();
    assert!(matches!(&err, Error::EmptyCatalog { skipped: 1 }), "{err}");
}

#[test]
fn missing_catalog_column_is_reported() {
    let tmp = TempDir::new().unwrap();
    let mosaic = tmp.path().join("mosaic.png");
    let catalog = tmp.path().join("catalog.csv");
    save_png(&Raster::filled(MOSAIC_W, MOSAIC_H, 90).unwrap(), &mosaic).unwrap();
    fs::write(&catalog, "LAT_CIRC_IMG,LON_CIRC_IMG\n1,2\n").unwrap();
    let err = prepare_moon(&mosaic, &catalog, &tmp.path().join("out"), &moon_config()).unwrap_err();
    match &err {
        Error::MissingColumn(c) => assert_eq!(c, "DIAM_CIRC_IMG"),
        other => panic!("unexpected error {other}"),
    }
}

fn aerial_config(tile: u32, overlap: u32) -> Config {
    let mut cfg = Config::default();
    cfg.tile_size = tile;
    cfg.overlap = overlap;
    cfg.apply_clahe = false;
    cfg
}

fn write_aerial(dir: &Path, stem: &str, img: &Raster, labels: &[Annotation]) -> (PathBuf, PathBuf) {
    let images = dir.join("src_images");
    let label_dir = dir.join("src_labels");
    fs::create_dir_all(&images).unwrap();
    fs::create_dir_all(&label_dir).unwrap();
    save_png(img, &images.join(format!("{stem}.png"))).unwrap();
    save_labels(labels, &label_dir.join(format!("{stem}.txt"))).unwrap();
    (images, label_dir)
}

#[test]
fn identity_roi_on_single_tile_keeps_labels() {
    let tmp = TempDir::new().unwrap();
    let img = Raster::from_fn(256, 256, |x, y| ((x * 7 + y * 3) % 256) as u8).unwrap();
    let labels = vec![
        Annotation::new(0, 0.25, 0.5, 0.1, 0.2).unwrap(),
        Annotation::new(0, 0.7, 0.3, 0.3, 0.15).unwrap(),
    ];
    let (images, label_dir) = write_aerial(tmp.path(), "a", &img, &labels);
    let out = tmp.path().join("out");
    let roi = PixelRect::new(0, 0, 256, 256);
    let summary = prepare_aerial(&images, &label_dir, Some(roi), &out, &aerial_config(256, 0)).unwrap();
    assert_eq!(summary.tiles, 1);
    let got = load_labels(&out.join("labels/a_x0_y0.txt")).unwrap();
    assert_eq!(got.len(), labels.len());
    for (g, l) in got.iter().zip(&labels) {
        assert!((g.cx - l.cx).abs() < 1e-6 && (g.cy - l.cy).abs() < 1e-6);
        assert!((g.w - l.w).abs() < 1e-6 && (g.h - l.h).abs() < 1e-6);
    }
    assert_eq!(load_png(&out.join("images/a_x0_y0.png")).unwrap(), img);
}

#[test]
fn crop_removing_a_label_drops_it() {
    let tmp = TempDir::new().unwrap();
    let img = Raster::filled(400, 400, 100).unwrap();
    let labels = vec![
        Annotation::new(0, 0.1, 0.1, 0.05, 0.05).unwrap(),
        Annotation::new(0, 0.7, 0.7, 0.1, 0.1).unwrap(),
    ];
    let (images, label_dir) = write_aerial(tmp.path(), "b", &img, &labels);
    let out = tmp.path().join("out");
    let roi = PixelRect::new(200, 200, 200, 200);
    let summary = prepare_aerial(&images, &label_dir, Some(roi), &out, &aerial_config(200, 0)).unwrap();
    assert_eq!(summary.dropped_boxes, 1);
    let got = load_labels(&out.join("labels/b_x0_y0.txt")).unwrap();
    assert_eq!(got.len(), 1);
    // 280 px in the parent is 80 px into the crop
    assert!((got[0].cx - 0.4).abs() < 1e-6 && (got[0].w - 0.2).abs() < 1e-6);
}

#[test]
fn aerial_labels_follow_crop_then_tiles() {
    let mut cfg = aerial_config(256, 32);
    cfg.synth_width = 800;
    cfg.synth_height = 700;
    cfg.synth_craters = 25;
    for seed in 0..3u64 {
        let tmp = TempDir::new().unwrap();
        cfg.seed = seed;
        let scenes = tmp.path().join("scenes");
        synthgen_dir(&scenes, 1, &cfg).unwrap();
        let roi = PixelRect::new(70 + seed as u32 * 10, 45, 600, 540);
        let out = tmp.path().join("out");
        prepare_aerial(&scenes.join("images"), &scenes.join("labels"), Some(roi), &out, &cfg).unwrap();

        let labels = load_labels(&scenes.join("labels/scene_0000.txt")).unwrap();
        let roi_box = (roi.x as f64, roi.y as f64, roi.right() as f64, roi.bottom() as f64);
        let in_crop: Vec<_> = labels
            .iter()
            .map(|a| {
                let (x0, y0, x1, y1) = a.corners();
                (x0 * 800.0, y0 * 700.0, x1 * 800.0, y1 * 700.0)
            })
            .filter(|&b| overlap_area(b, roi_box) / ((b.2 - b.0) * (b.3 - b.1)) >= cfg.min_visible)
            .map(|b| {
                (
                    b.0.max(roi_box.0) - roi_box.0,
                    b.1.max(roi_box.1) - roi_box.1,
                    b.2.min(roi_box.2) - roi_box.0,
                    b.3.min(roi_box.3) - roi_box.1,
                )
            })
            .collect();

        let sidecar = fs::read_to_string(out.join("scene_0000.tiles")).unwrap();
        for (ox, oy) in read_sidecar(sidecar.as_bytes()).unwrap() {
            let img = load_png(&out.join(format!("images/{}.png", tile_stem("scene_0000", (ox, oy))))).unwrap();
            let (tw, th) = img.dims();
            let win = (ox as f64, oy as f64, (ox + tw) as f64, (oy + th) as f64);
            let expected = in_crop
                .iter()
                .filter(|&&b| overlap_area(b, win) / ((b.2 - b.0) * (b.3 - b.1)) >= cfg.min_visible)
                .count();
            let got = load_labels(&out.join(format!("labels/{}.txt", tile_stem("scene_0000", (ox, oy))))).unwrap();
            assert_eq!(got.len(), expected, "seed {seed} tile {ox},{oy}");
        }
    }
}

fn write_dets(path: &Path, dets: &[Detection]) {
    save_detections(dets, path).unwrap();
}

fn det(cx: f64, cy: f64, w: f64, h: f64, confidence: f64) -> Detection {
    Detection { ann: Annotation::new(0, cx, cy, w, h).unwrap(), confidence }
}

fn rgb(path: &Path) -> image::RgbImage {
    image::open(path).unwrap().to_rgb8()
}

#[test]
fn overlay_without_detections_copies_pixels() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src.png");
    save_png(&Raster::from_fn(64, 48, |x, y| (x * 3 + y) as u8).unwrap(), &src).unwrap();
    let dets = tmp.path().join("d.txt");
    write_dets(&dets, &[]);
    let out = tmp.path().join("out.png");
    overlay(&src, &[(dets, [255, 0, 0])], &out).unwrap();
    assert_eq!(rgb(&src), rgb(&out));
}

#[test]
fn overlay_colors_exactly_the_border() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src.png");
    save_png(&Raster::filled(100, 80, 50).unwrap(), &src).unwrap();
    // pixel box 10..30 x 20..60
    let dets = tmp.path().join("d.txt");
    write_dets(&dets, &[det(0.2, 0.5, 0.2, 0.5, 0.9)]);
    let out = tmp.path().join("out.png");
    overlay(&src, &[(dets, [255, 0, 0])], &out).unwrap();
    let img = rgb(&out);
    for (x, y, p) in img.enumerate_pixels() {
        let on_border = ((10..30).contains(&x) && (y == 20 || y == 59)) || ((20..60).contains(&y) && (x == 10 || x == 29));
        let expected = if on_border { [255, 0, 0] } else { [50, 50, 50] };
        assert_eq!(p.0, expected, "pixel {x},{y}");
    }
}

#[test]
fn later_overlay_sets_win() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src.png");
    save_png(&Raster::filled(50, 50, 0).unwrap(), &src).unwrap();
    let a = tmp.path().join("a.txt");
    let b = tmp.path().join("b.txt");
    write_dets(&a, &[det(0.5, 0.5, 0.4, 0.4, 0.5)]);
    write_dets(&b, &[det(0.5, 0.5, 0.4, 0.4, 0.5)]);
    let out = tmp.path().join("out.png");
    overlay(&src, &[(a, [0, 255, 0]), (b, [0, 0, 255])], &out).unwrap();
    let img = rgb(&out);
    assert_eq!(img.get_pixel(15, 15).0, [0, 0, 255]);
    assert_eq!(img.get_pixel(25, 25).0, [0, 0, 0]);
}

#[test]
fn stitching_perfect_tile_detections_recovers_scene() {
    let tmp = TempDir::new().unwrap();
    let cfg = aerial_config(512, 64);
    let scenes = tmp.path().join("scenes");
    synthgen_dir(&scenes, 1, &cfg).unwrap();
    let tiles = tmp.path().join("tiles");
    prepare_aerial(&scenes.join("images"), &scenes.join("labels"), None, &tiles, &cfg).unwrap();

    let det_dir = tmp.path().join("tile_dets");
    fs::create_dir_all(&det_dir).unwrap();
    for entry in fs::read_dir(tiles.join("labels")).unwrap() {
        let path = entry.unwrap().path();
        let dets: Vec<_> = load_labels(&path)
            .unwrap()
            .into_iter()
            .map(|ann| Detection { ann, confidence: 1.0 })
            .collect();
        write_dets(&det_dir.join(path.file_name().unwrap()), &dets);
    }
    let stitched = tmp.path().join("stitched");
    let out = stitch_dir(&tiles, &det_dir, &stitched, &cfg).unwrap();
    let got = &out["scene_0000"];
    let truth = load_labels(&scenes.join("labels/scene_0000.txt")).unwrap();
    assert_eq!(got.len(), truth.len());
    for t in &truth {
        let best = got.iter().map(|d| iou(&d.ann, t)).fold(0.0, f64::max);
        assert!(best > 0.99, "best iou {best}");
    }
    assert_eq!(load_detections(&stitched.join("scene_0000.txt")).unwrap().len(), got.len());
}

#[test]
fn ensembling_identical_models_is_a_no_op() {
    let tmp = TempDir::new().unwrap();
    let dets = vec![det(0.3, 0.3, 0.1, 0.1, 0.8), det(0.7, 0.6, 0.2, 0.1, 0.4)];
    let dirs: Vec<PathBuf> = ["m1", "m2"].iter().map(|m| tmp.path().join(m)).collect();
    for d in &dirs {
        fs::create_dir_all(d).unwrap();
        write_dets(&d.join("img.txt"), &dets);
    }
    let single = ensemble_dirs(&dirs[..1], &tmp.path().join("one"), &Config::default()).unwrap();
    assert_eq!(single["img"], dets);
    let both = ensemble_dirs(&dirs, &tmp.path().join("two"), &Config::default()).unwrap();
    assert_eq!(both["img"].len(), 2);
    for (f, d) in both["img"].iter().zip(&dets) {
        assert!(iou(&f.ann, &d.ann) > 1.0 - 1e-9);
        assert!(f.confidence >= d.confidence);
    }
}

#[test]
fn overlapping_images_share_world_detections() {
    let tmp = TempDir::new().unwrap();
    let (images, dets, transforms) = (tmp.path().join("img"), tmp.path().join("det"), tmp.path().join("tf"));
    for d in [&images, &dets, &transforms] {
        fs::create_dir_all(d).unwrap();
    }
    // b is a shifted 100 px to the right in world units
    for (stem, shift, cx) in [("a", 0.0, 0.75), ("b", 100.0, 0.25)] {
        save_png(&Raster::filled(200, 200, 0).unwrap(), &images.join(format!("{stem}.png"))).unwrap();
        write_dets(&dets.join(format!("{stem}.txt")), &[det(cx, 0.5, 0.1, 0.1, 0.6)]);
        let tf = WorldTransform::translation(shift, 0.0).coeffs();
        let text: Vec<String> = tf.iter().map(|v| v.to_string()).collect();
        fs::write(transforms.join(format!("{stem}.affine")), text.join(" ")).unwrap();
    }
    let out = tmp.path().join("world.txt");
    let world = dedup_dir(&dets, &images, &transforms, &out, &Config::default()).unwrap();
    assert_eq!(world.len(), 1);
    assert_eq!(world[0].provenance, vec!["a".to_string(), "b".to_string()]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.trim_end().ends_with("a,b"));
}
