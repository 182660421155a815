//! Synthetic crater fields with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotate::Annotation;
use crate::raster::Raster;
use crate::{Error, Result};

pub const BACKGROUND: f64 = 128.0;
/// Outer radius of the bright rim, as a multiple of the crater radius.
pub const RIM_FACTOR: f64 = 1.3;
/// Radius of the clear zone kept around each crater, as a multiple of its radius.
pub const CLEARANCE_FACTOR: f64 = 1.5;
pub const MAX_ATTEMPTS: usize = 1000;
pub const MAX_CONTRAST: f64 = 160.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub n_craters: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub contrast_min: f64,
    pub contrast_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 1024,
            n_craters: 20,
            radius_min: 6.0,
            radius_max: 24.0,
            contrast_min: 120.0,
            contrast_max: 150.0,
            noise_sigma: 8.0,
            seed: 0,
        }
    }
}

/// One placed crater in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crater {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub contrast: f64,
}

impl Crater {
    pub fn annotation(&self, width: u32, height: u32) -> Annotation {
        let (w, h) = (width as f64, height as f64);
        Annotation {
            class_id: 0,
            cx: self.cx / w,
            cy: self.cy / h,
            w: 2.0 * self.r / w,
            h: 2.0 * self.r / h,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Raster,
    pub craters: Vec<Crater>,
    pub annotations: Vec<Annotation>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.width == 0 || self.height == 0 {
            return bad("scene dimensions must be positive".into());
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return bad(format!("bad radius range [{}, {}]", self.radius_min, self.radius_max));
        }
        let fit = 2.0 * CLEARANCE_FACTOR * self.radius_max;
        if fit >= self.width.min(self.height) as f64 {
            return bad(format!(
                "radius {} does not fit a {}x{} scene",
                self.radius_max, self.width, self.height
            ));
        }
        if !(self.contrast_min >= 0.0 && self.contrast_min <= self.contrast_max && self.contrast_max <= MAX_CONTRAST) {
            return bad(format!(
                "contrast range [{}, {}] must lie within [0, {MAX_CONTRAST}]",
                self.contrast_min, self.contrast_max
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        Ok(())
    }
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn place(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Crater>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut placed: Vec<Crater> = Vec::with_capacity(spec.n_craters);
    for index in 0..spec.n_craters {
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let r = sample(rng, spec.radius_min, spec.radius_max);
            let m = CLEARANCE_FACTOR * r;
            let cx = sample(rng, m, w - m);
            let cy = sample(rng, m, h - m);
            let clear = placed.iter().all(|c| {
                let d = ((c.cx - cx).powi(2) + (c.cy - cy).powi(2)).sqrt();
                d >= CLEARANCE_FACTOR * (c.r + r) + 2.0
            });
            if clear {
                found = Some((cx, cy, r));
                break;
            }
        }
        let (cx, cy, r) = found.ok_or(Error::PlacementFailure {
            index,
            attempts: MAX_ATTEMPTS,
        })?;
        let contrast = sample(rng, spec.contrast_min, spec.contrast_max);
        placed.push(Crater { cx, cy, r, contrast });
    }
    Ok(placed)
}

/// Noise-free intensity at a pixel center.
fn shade(craters: &[Crater], px: f64, py: f64) -> f64 {
    for c in craters {
        let (dx, dy) = (px - c.cx, py - c.cy);
        let d2 = dx * dx + dy * dy;
        if d2 <= c.r * c.r {
            return BACKGROUND - c.contrast;
        }
        if d2 <= (RIM_FACTOR * c.r).powi(2) {
            return if dx + dy < 0.0 {
                BACKGROUND + c.contrast
            } else {
                BACKGROUND
            };
        }
    }
    BACKGROUND
}

/// Dark disks with a bright upper-left rim on a noisy mid-gray background.
/// Craters are placed first, then the image is rendered row by row.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let craters = place(spec, &mut rng)?;
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma is positive and finite"));
    let (w, h) = (spec.width, spec.height);
    let mut pixels = Vec::with_capacity(w as usize * h as usize);
    let mut near: Vec<Crater> = Vec::new();
    for y in 0..h {
        let py = y as f64 + 0.5;
        near.clear();
        near.extend(craters.iter().filter(|c| (py - c.cy).abs() <= RIM_FACTOR * c.r));
        for x in 0..w {
            let mut v = shade(&near, x as f64 + 0.5, py);
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    let image = Raster::new(w, h, pixels)?;
    let annotations = craters.iter().map(|c| c.annotation(w, h)).collect();
    Ok(Scene { image, craters, annotations })
}
