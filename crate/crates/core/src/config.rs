//! Pipeline configuration: TOML file, then `--key value` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SplitRatios;
use crate::detect::{DetectorParams, TiledParams};
use crate::evaluate::OperatingPoint;
use crate::georef::CatalogSchema;
use crate::raster::ClaheParams;
use crate::synthgen::SceneSpec;
use crate::{Error, Result};

/// Mean lunar radius in kilometres.
pub const MOON_RADIUS_KM: f64 = 1737.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub tile_size: u32,
    pub overlap: u32,

    pub apply_clahe: bool,
    pub clahe_grid_w: u32,
    pub clahe_grid_h: u32,
    pub clahe_clip: f64,

    /// Equatorial resolution of the moon mosaic; derived from its width when unset.
    pub meters_per_pixel: Option<f64>,
    pub max_abs_lat: f64,
    pub d_min_km: f64,
    pub d_max_km: f64,
    pub prune_delta: f64,
    pub lat_column: String,
    pub lon_column: String,
    pub diameter_column: String,
    pub catalog_delimiter: char,

    pub min_visible: f64,

    pub blur_radius: u32,
    pub local_window: u32,
    pub threshold_offset: f64,
    pub min_area: u64,
    pub max_area: u64,
    pub max_aspect: f64,
    pub stitch_iou: f64,
    pub trim_edges: bool,

    pub iou_threshold: f64,
    /// Confidence cut for the precision/recall rows.
    pub conf_threshold: f64,
    /// Report precision/recall at the max-F1 point instead of `conf_threshold`.
    pub max_f1: bool,
    pub ensemble_iou: f64,

    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub seed: u64,

    /// Shell templates. Both take `{in}` and `{out}`; the detector may also use
    /// `{labels}`, `{data}` and `{model}` during experiments.
    pub translator_command: Option<String>,
    pub detector_command: Option<String>,

    pub synth_width: u32,
    pub synth_height: u32,
    pub synth_craters: usize,
    pub synth_radius_min: f64,
    pub synth_radius_max: f64,
    pub synth_contrast_min: f64,
    pub synth_contrast_max: f64,
    pub synth_noise_sigma: f64,
}

impl Default for Config {
    fn default() -> Self {
        let det = DetectorParams::default();
        let tiled = TiledParams::default();
        let clahe = ClaheParams::default();
        let schema = CatalogSchema::default();
        let ratios = SplitRatios::default();
        let scene = SceneSpec::default();
        Self {
            tile_size: tiled.tile_size,
            overlap: tiled.overlap,
            apply_clahe: true,
            clahe_grid_w: clahe.grid_w,
            clahe_grid_h: clahe.grid_h,
            clahe_clip: clahe.clip_limit,
            meters_per_pixel: None,
            max_abs_lat: 85.0,
            d_min_km: 0.4,
            d_max_km: 5.0,
            prune_delta: 10.0,
            lat_column: schema.lat_column,
            lon_column: schema.lon_column,
            diameter_column: schema.diameter_column,
            catalog_delimiter: schema.delimiter,
            min_visible: 0.4,
            blur_radius: det.blur_radius,
            local_window: det.local_window,
            threshold_offset: det.threshold_offset,
            min_area: det.min_area,
            max_area: det.max_area,
            max_aspect: det.max_aspect,
            stitch_iou: tiled.stitch_iou,
            trim_edges: tiled.trim_edges,
            iou_threshold: 0.5,
            conf_threshold: 0.25,
            max_f1: false,
            ensemble_iou: crate::ensemble::DEFAULT_FUSION_IOU,
            split_train: ratios.train,
            split_val: ratios.val,
            split_test: ratios.test,
            seed: 0,
            translator_command: None,
            detector_command: None,
            synth_width: scene.width,
            synth_height: scene.height,
            synth_craters: scene.n_craters,
            synth_radius_min: scene.radius_min,
            synth_radius_max: scene.radius_max,
            synth_contrast_min: scene.contrast_min,
            synth_contrast_max: scene.contrast_max,
            synth_noise_sigma: scene.noise_sigma,
        }
    }
}

/// Keys that may be cleared with the flag value `none`.
pub const OPTIONAL_KEYS: &[&str] = &["meters_per_pixel", "translator_command", "detector_command"];

/// Every configuration key, in declaration order.
pub const KEYS: &[&str] = &[
    "tile_size",
    "overlap",
    "apply_clahe",
    "clahe_grid_w",
    "clahe_grid_h",
    "clahe_clip",
    "meters_per_pixel",
    "max_abs_lat",
    "d_min_km",
    "d_max_km",
    "prune_delta",
    "lat_column",
    "lon_column",
    "diameter_column",
    "catalog_delimiter",
    "min_visible",
    "blur_radius",
    "local_window",
    "threshold_offset",
    "min_area",
    "max_area",
    "max_aspect",
    "stitch_iou",
    "trim_edges",
    "iou_threshold",
    "conf_threshold",
    "max_f1",
    "ensemble_iou",
    "split_train",
    "split_val",
    "split_test",
    "seed",
    "translator_command",
    "detector_command",
    "synth_width",
    "synth_height",
    "synth_craters",
    "synth_radius_min",
    "synth_radius_max",
    "synth_contrast_min",
    "synth_contrast_max",
    "synth_noise_sigma",
];

fn unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Parses a flag value as a TOML scalar, falling back to a plain string.
fn parse_scalar(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .filter(|v| !v.is_table())
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets one key from its textual flag value. Dashes in `key` count as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown configuration key {key:?}")));
        }
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        if value == "none" && OPTIONAL_KEYS.contains(&key.as_str()) {
            table.remove(&key);
        } else {
            let mut parsed = parse_scalar(value);
            if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (table.get(&key), &parsed) {
                parsed = toml::Value::Float(*i as f64);
            }
            table.insert(key.clone(), parsed);
        }
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("--{}: {}", key.replace('_', "-"), e.message())))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || self.overlap >= self.tile_size {
            return Err(Error::Config(format!(
                "overlap {} must be below tile size {}",
                self.overlap, self.tile_size
            )));
        }
        let c = self.clahe_params();
        if c.grid_w == 0 || c.grid_h == 0 || !(c.clip_limit >= 1.0) {
            return Err(Error::Config("CLAHE grid must be >= 1 and clip >= 1".into()));
        }
        if let Some(m) = self.meters_per_pixel {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("meters_per_pixel must be positive, got {m}")));
            }
        }
        if !(self.max_abs_lat > 0.0 && self.max_abs_lat <= 90.0) {
            return Err(Error::Config(format!("max_abs_lat must lie in (0, 90], got {}", self.max_abs_lat)));
        }
        if !(self.d_min_km >= 0.0 && self.d_min_km <= self.d_max_km) {
            return Err(Error::Config(format!("bad diameter range [{}, {}]", self.d_min_km, self.d_max_km)));
        }
        if !(self.prune_delta >= 0.0) {
            return Err(Error::Config("prune_delta must be non-negative".into()));
        }
        self.catalog_schema().validate()?;
        if !(self.min_visible > 0.0 && self.min_visible <= 1.0) {
            return Err(Error::Config(format!("min_visible must lie in (0, 1], got {}", self.min_visible)));
        }
        self.detector_params().validate()?;
        unit_open("stitch_iou", self.stitch_iou)?;
        unit_open("iou_threshold", self.iou_threshold)?;
        unit_open("ensemble_iou", self.ensemble_iou)?;
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(Error::Config(format!("conf_threshold must lie in [0, 1], got {}", self.conf_threshold)));
        }
        self.split_ratios().validate()?;
        self.scene_spec(0).validate()?;
        if let Some(cmd) = &self.translator_command {
            crate::translate::require_placeholders(cmd, &["{in}", "{out}"])?;
        }
        if let Some(cmd) = &self.detector_command {
            crate::translate::require_placeholders(cmd, &["{out}"])?;
        }
        Ok(())
    }

    pub fn clahe_params(&self) -> ClaheParams {
        ClaheParams {
            grid_w: self.clahe_grid_w,
            grid_h: self.clahe_grid_h,
            clip_limit: self.clahe_clip,
        }
    }

    pub fn catalog_schema(&self) -> CatalogSchema {
        CatalogSchema {
            lat_column: self.lat_column.clone(),
            lon_column: self.lon_column.clone(),
            diameter_column: self.diameter_column.clone(),
            delimiter: self.catalog_delimiter,
        }
    }

    pub fn meters_per_pixel_for(&self, mosaic_w: u32) -> f64 {
        self.meters_per_pixel
            .unwrap_or_else(|| 2.0 * std::f64::consts::PI * MOON_RADIUS_KM * 1000.0 / mosaic_w as f64)
    }

    pub fn detector_params(&self) -> DetectorParams {
        DetectorParams {
            blur_radius: self.blur_radius,
            local_window: self.local_window,
            threshold_offset: self.threshold_offset,
            min_area: self.min_area,
            max_area: self.max_area,
            max_aspect: self.max_aspect,
        }
    }

    pub fn tiled_params(&self) -> TiledParams {
        TiledParams {
            tile_size: self.tile_size,
            overlap: self.overlap,
            stitch_iou: self.stitch_iou,
            trim_edges: self.trim_edges,
        }
    }

    pub fn operating_point(&self) -> OperatingPoint {
        if self.max_f1 {
            OperatingPoint::MaxF1
        } else {
            OperatingPoint::Confidence(self.conf_threshold)
        }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.split_train,
            val: self.split_val,
            test: self.split_test,
        }
    }

    pub fn scene_spec(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            width: self.synth_width,
            height: self.synth_height,
            n_craters: self.synth_craters,
            radius_min: self.synth_radius_min,
            radius_max: self.synth_radius_max,
            contrast_min: self.synth_contrast_min,
            contrast_max: self.synth_contrast_max,
            noise_sigma: self.synth_noise_sigma,
            seed,
        }
    }
}
