//! Image-to-image translation stage.
//!
//! The built-in translator is global histogram matching: every source tile
//! is tone-mapped onto a pooled target-domain histogram. Learned translators
//! (e.g. a CycleGAN generator) plug in as an external command that must keep
//! file stems and image dimensions intact.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::annotate::{load_labels, save_labels, transfer_annotations};
use crate::fsutil::{create_dir, list_with_extension, shell_quote, stem_of};
use crate::raster::{self, Histogram, Raster};
use crate::{Error, Result};

/// Monotone gray-level lookup table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferFunction {
    map: [u8; 256],
}

impl TransferFunction {
    pub fn identity() -> Self {
        let mut map = [0u8; 256];
        for (i, m) in map.iter_mut().enumerate() {
            *m = i as u8;
        }
        Self { map }
    }

    /// Wraps a lookup table, rejecting decreasing ones.
    pub fn from_map(map: [u8; 256]) -> Result<Self> {
        if map.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter(
                "transfer function must be non-decreasing".into(),
            ));
        }
        Ok(Self { map })
    }

    pub fn map(&self) -> &[u8; 256] {
        &self.map
    }

    #[inline]
    pub fn apply(&self, v: u8) -> u8 {
        self.map[v as usize]
    }
}

/// `map[v]` is the smallest `u` with `CDF_target(u) >= CDF_src(v)`.
///
/// CDFs are compared as exact integer ratios, so equal histograms and
/// scaled copies map without rounding artefacts.
pub fn build_transfer_function(src: &Histogram, target: &Histogram) -> Result<TransferFunction> {
    if src.is_empty() || target.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    let (ns, nt) = (src.total() as u128, target.total() as u128);
    let cs = src.cumulative();
    let ct = target.cumulative();
    let mut map = [0u8; 256];
    let mut u = 0usize;
    for v in 0..256 {
        let need = cs[v] as u128 * nt;
        while u < 255 && (ct[u] as u128 * ns) < need {
            u += 1;
        }
        map[v] = u as u8;
    }
    Ok(TransferFunction { map })
}

pub fn translate_raster(img: &Raster, f: &TransferFunction) -> Raster {
    let pixels = img.pixels().iter().map(|&v| f.apply(v)).collect();
    Raster::new(img.width(), img.height(), pixels).expect("same dimensions as input")
}

/// Mean absolute gray-level difference between an image and its round trip.
pub fn cycle_consistency_loss(original: &Raster, roundtrip: &Raster) -> Result<f64> {
    if original.dims() != roundtrip.dims() {
        return Err(Error::DimensionMismatch {
            expected: original.dims(),
            actual: roundtrip.dims(),
        });
    }
    let sum: u64 = original
        .pixels()
        .iter()
        .zip(roundtrip.pixels())
        .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs() as u64)
        .sum();
    Ok(sum as f64 / original.pixels().len() as f64)
}

#[derive(Clone, Debug)]
pub struct TranslatorJob {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Shell command with `{in}` and `{out}` placeholders.
    pub command: String,
}

/// Holds `<dir>/.stage.lock` for the lifetime of the guard so that two
/// external jobs never write into the same directory at once.
pub(crate) struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub(crate) fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".stage.lock");
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub(crate) fn substitute(template: &str, pairs: &[(&str, &Path)]) -> String {
    let mut cmd = template.to_string();
    for (key, path) in pairs {
        cmd = cmd.replace(&format!("{{{key}}}"), &shell_quote(path));
    }
    cmd
}

pub(crate) fn run_shell(command: &str) -> Result<()> {
    log::info!("running external command: {command}");
    let status = Command::new("sh")
        .arg("-c")
        .arg(command)
        .status()
        .map_err(|e| Error::CommandFailed {
            command: command.to_string(),
            status: e.to_string(),
        })?;
    if !status.success() {
        return Err(Error::CommandFailed {
            command: command.to_string(),
            status: status.to_string(),
        });
    }
    Ok(())
}

pub(crate) fn require_placeholders(template: &str, keys: &[&str]) -> Result<()> {
    for key in keys {
        if !template.contains(key) {
            return Err(Error::InvalidParameter(format!(
                "external command template lacks the {key} placeholder"
            )));
        }
    }
    Ok(())
}

fn png_dims(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs an external translator over a directory of PNG tiles and checks the
/// geometry contract. Labels found beside the inputs are carried over to the
/// outputs. Returns the output image paths in stem order.
pub fn run_external_translator(job: &TranslatorJob) -> Result<Vec<PathBuf>> {
    require_placeholders(&job.command, &["{in}", "{out}"])?;
    let inputs = list_with_extension(&job.input_dir, "png")?;
    if inputs.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "translator input {} contains no PNG tiles",
            job.input_dir.display()
        )));
    }
    create_dir(&job.output_dir)?;
    let _lock = DirLock::acquire(&job.output_dir)?;
    run_shell(&substitute(
        &job.command,
        &[("in", &job.input_dir), ("out", &job.output_dir)],
    ))?;

    let mut missing = Vec::new();
    let mut outputs = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let stem = stem_of(input);
        let output = job.output_dir.join(format!("{stem}.png"));
        if output.is_file() {
            outputs.push((stem, input, output));
        } else {
            missing.push(stem);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingOutputs(missing));
    }
    for (stem, input, output) in &outputs {
        let expected = png_dims(input)?;
        let actual = png_dims(output)?;
        if expected != actual {
            return Err(Error::DimensionDrift {
                stem: stem.clone(),
                expected,
                actual,
            });
        }
        let label = job.input_dir.join(format!("{stem}.txt"));
        if label.is_file() {
            let moved = transfer_annotations(&load_labels(&label)?, expected, actual);
            save_labels(&moved, &job.output_dir.join(format!("{stem}.txt")))?;
        }
    }
    Ok(outputs.into_iter().map(|(_, _, o)| o).collect())
}

/// Tone-matches every PNG tile in `input_dir` to `target` and writes the
/// results (with carried-over labels) to `output_dir`. Returns the mean
/// cycle-consistency loss of the inverse mapping over all tiles.
pub fn run_histogram_translator(input_dir: &Path, output_dir: &Path, target: &Histogram) -> Result<f64> {
    let inputs = list_with_extension(input_dir, "png")?;
    create_dir(output_dir)?;
    let mut total_loss = 0.0;
    for input in &inputs {
        let stem = stem_of(input);
        let img = raster::load_png(input)?;
        let src_hist = raster::histogram(&img);
        let forward = build_transfer_function(&src_hist, target)?;
        let translated = translate_raster(&img, &forward);
        let backward = build_transfer_function(&raster::histogram(&translated), &src_hist)?;
        total_loss += cycle_consistency_loss(&img, &translate_raster(&translated, &backward))?;
        raster::save_png(&translated, &output_dir.join(format!("{stem}.png")))?;
        let label = input_dir.join(format!("{stem}.txt"));
        if label.is_file() {
            let moved = transfer_annotations(&load_labels(&label)?, img.dims(), translated.dims());
            save_labels(&moved, &output_dir.join(format!("{stem}.txt")))?;
        }
    }
    Ok(if inputs.is_empty() {
        0.0
    } else {
        total_loss / inputs.len() as f64
    })
}

/// Histogram pooled over every PNG in `dir`.
pub fn pooled_histogram(dir: &Path) -> Result<Histogram> {
    let mut pooled = Histogram::default();
    for path in list_with_extension(dir, "png")? {
        pooled.accumulate(&raster::histogram(&raster::load_png(&path)?));
    }
    Ok(pooled)
}
