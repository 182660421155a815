use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crater_core::config::{Config, KEYS};
use crater_core::dataset::CompositionName;
use crater_core::evaluate::{render_report, render_report_csv, EvalReport};
use crater_core::pipeline::{self, ExperimentInputs};
use crater_core::translate::{pooled_histogram, run_external_translator, run_histogram_translator, TranslatorJob};

const AFTER_HELP: &str = "Every configuration key can also be given as a flag, e.g. `--tile-size 256` \
or `--detector-command 'yolo {in} {out}'`. Precedence: flags, then --config, then defaults. \
Run `crater config` for the full list with default values.";

#[derive(Parser)]
#[command(name = "crater", version, propagate_version = true, about = "Crater dataset preparation, detection and evaluation", after_help = AFTER_HELP)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for per-image stages.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tile a moon mosaic and project catalog craters onto the tiles.
    PrepareMoon {
        #[arg(long)]
        mosaic: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Crop, enhance and tile aerial images with their labels.
    PrepareAerial {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Region of interest as x,y,w,h in pixels; the full image when absent.
        #[arg(long)]
        roi: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign whole groups of a manifest to train/val/test.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// File of `stem group` lines overriding the default grouping.
        #[arg(long)]
        regions: Option<PathBuf>,
    },
    /// Translate tiles to the target style with the external command or histogram matching.
    Translate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of target-style PNGs for histogram matching.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Carry label files over to translated tiles.
    AnnotateTransfer {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect craters in every PNG of a directory.
    Detect {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tile each image internally and stitch the results.
        #[arg(long)]
        tiled: bool,
        #[command(flatten)]
        stitch: StitchArgs,
    },
    /// Score detections against labels and print the report table.
    Eval {
        #[arg(long)]
        labels: PathBuf,
        /// NAME=DIR of one model's detection files; repeatable.
        #[arg(long = "model", value_name = "NAME=DIR", required = true)]
        models: Vec<String>,
        /// Also write the machine-readable report here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fuse detections of several models per image.
    Ensemble {
        /// Directory of one model's detection files; repeatable.
        #[arg(long = "model", value_name = "DIR", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory of `<stem>.affine` transforms; enables world-frame deduplication.
        #[arg(long, requires = "images")]
        transforms: Option<PathBuf>,
        /// Images the detections refer to, for their pixel sizes.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Run every training-set composition against the bomb-crater test split.
    Experiment {
        /// Split manifest of the bomb-crater tiles.
        #[arg(long)]
        bomb: Option<PathBuf>,
        #[arg(long)]
        moon: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<PathBuf>,
        #[arg(long)]
        work: PathBuf,
        /// Restrict to these compositions; repeatable.
        #[arg(long = "composition")]
        compositions: Vec<String>,
    },
    /// Draw detection boxes onto an image.
    Overlay {
        #[arg(long)]
        image: PathBuf,
        /// COLOR=FILE where COLOR is a composition name or RRGGBB; drawn in order.
        #[arg(long = "detections", value_name = "COLOR=FILE")]
        detections: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic crater scenes with exact labels.
    Synthgen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args)]
struct StitchArgs {
    /// Prepared tile directory whose sidecars map tile detections back to parents.
    #[arg(long = "stitch", value_name = "TILES_DIR", requires = "stitched")]
    tiles: Option<PathBuf>,
    /// Output directory for parent-frame detections.
    #[arg(long)]
    stitched: Option<PathBuf>,
}

/// Pulls `--key value` and `--key=value` pairs for configuration keys out of
/// the raw arguments.
fn split_overrides(args: Vec<OsString>) -> (Vec<OsString>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        let key = name.replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            rest.push(arg);
            continue;
        }
        match inline.or_else(|| it.next().map(|v| v.to_string_lossy().into_owned())) {
            Some(value) => overrides.push((key, value)),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn split_pair(text: &str) -> Result<(&str, &str)> {
    match text.split_once('=') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a, b)),
        _ => bail!("expected NAME=PATH, got {text:?}"),
    }
}

fn emit_reports(reports: &[EvalReport], csv: Option<&Path>) -> Result<()> {
    print!("{}", render_report(reports));
    if let Some(path) = csv {
        fs::write(path, render_report_csv(reports)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli, cfg: Config) -> Result<()> {
    match cli.command {
        Command::PrepareMoon { mosaic, catalog, out } => {
            let s = pipeline::prepare_moon(&mosaic, &catalog, &out, &cfg)
                .with_context(|| format!("preparing {} with {}", mosaic.display(), catalog.display()))?;
            log::info!("{} tiles, {} labels, {} craters dropped", s.tiles, s.annotations, s.dropped_boxes);
        }
        Command::PrepareAerial { images, labels, roi, out } => {
            let roi = roi.as_deref().map(pipeline::parse_roi).transpose()?;
            let s = pipeline::prepare_aerial(&images, &labels, roi, &out, &cfg)
                .with_context(|| format!("preparing {}", images.display()))?;
            log::info!("{} images, {} tiles, {} labels", s.images, s.tiles, s.annotations);
        }
        Command::Split { manifest, out, regions } => {
            let m = pipeline::split_manifest(&manifest, &out, regions.as_deref(), &cfg)?;
            log::info!("{} entries in {} groups", m.len(), m.groups().len());
        }
        Command::Translate { input, out, target } => match (&cfg.translator_command, target) {
            (Some(cmd), _) => {
                let outputs = run_external_translator(&TranslatorJob {
                    input_dir: input,
                    output_dir: out,
                    command: cmd.clone(),
                })?;
                log::info!("{} tiles translated", outputs.len());
            }
            (None, Some(target)) => {
                let hist = pooled_histogram(&target)?;
                let loss = run_histogram_translator(&input, &out, &hist)?;
                println!("cycle_loss\t{loss:.6}");
            }
            (None, None) => bail!("translate needs --target or a translator_command"),
        },
        Command::AnnotateTransfer { labels, out } => {
            let n = pipeline::transfer_label_dir(&labels, &out)?;
            log::info!("{n} label files transferred");
        }
        Command::Detect { images, out, tiled, stitch } => {
            let dets = pipeline::detect_dir(&images, &out, tiled, &[], &cfg)?;
            log::info!("{} detections in {} images", dets.values().map(Vec::len).sum::<usize>(), dets.len());
            if let (Some(tiles), Some(stitched)) = (stitch.tiles, stitch.stitched) {
                let parents = pipeline::stitch_dir(&tiles, &out, &stitched, &cfg)?;
                log::info!("stitched into {} parent images", parents.len());
            }
        }
        Command::Eval { labels, models, csv } => {
            let reports = models
                .iter()
                .map(|m| {
                    let (name, dir) = split_pair(m)?;
                    Ok(pipeline::eval_dir(name, &labels, Path::new(dir), &cfg)?)
                })
                .collect::<Result<Vec<_>>>()?;
            emit_reports(&reports, csv.as_deref())?;
        }
        Command::Ensemble { models, out, transforms, images } => {
            let fused = pipeline::ensemble_dirs(&models, &out, &cfg)?;
            log::info!("fused {} images", fused.len());
            if let (Some(t), Some(i)) = (transforms, images) {
                let world = pipeline::dedup_dir(&out, &i, &t, &out.join("world.txt"), &cfg)?;
                log::info!("{} world-frame detections", world.len());
            }
        }
        Command::Experiment { bomb, moon, synthetic, work, compositions } => {
            let compositions = if compositions.is_empty() {
                CompositionName::ALL.to_vec()
            } else {
                compositions
                    .iter()
                    .map(|c| c.parse().map_err(anyhow::Error::msg))
                    .collect::<Result<_>>()?
            };
            let inputs = ExperimentInputs {
                bomb,
                moon,
                synthetic,
                work_dir: work.clone(),
                compositions,
            };
            let reports = pipeline::run_experiment(&inputs, &cfg)?;
            fs::create_dir_all(&work)?;
            fs::write(work.join("report.txt"), render_report(&reports))?;
            emit_reports(&reports, Some(&work.join("report.csv")))?;
        }
        Command::Overlay { image, detections, out } => {
            let sets = detections
                .iter()
                .map(|d| {
                    let (color, file) = split_pair(d)?;
                    Ok((PathBuf::from(file), pipeline::parse_color(color)?))
                })
                .collect::<Result<Vec<_>>>()?;
            pipeline::overlay(&image, &sets, &out)?;
        }
        Command::Synthgen { out, count } => {
            pipeline::synthgen_dir(&out, count, &cfg)?;
            log::info!("{count} scenes written to {}", out.display());
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let (args, overrides) = split_overrides(std::env::args_os().collect());
    let cli = Cli::parse_from(args);
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = load_config(cli.config.as_deref(), &overrides).and_then(|cfg| run(cli, cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
