//! Subcommand bodies.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use evsplat_core::dataset::{simulate as simulate_dataset, Dataset, SceneConfig};
use evsplat_core::edi;
use evsplat_core::error::Error;
use evsplat_core::event_sim;
use evsplat_core::image::Image;
use evsplat_core::io;
use evsplat_core::metrics;
use evsplat_core::raster;
use evsplat_core::trainer::{self, LatentMode, TrainConfig, LOG_HEADER};
use serde::Serialize;

use crate::{EdiArgs, EvalArgs, RenderArgs, SimulateArgs, Split, TrainArgs};

const CHECKPOINT: &str = "checkpoint.bin";
const TRAIN_LOG: &str = "train_log.csv";
const HOLDOUT_METRICS: &str = "holdout_metrics.csv";
const RESOLVED_CONFIG: &str = "train_config.toml";

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_image_pair(img: &Image, dir: &Path, stem: &str) -> Result<()> {
    io::save_png(img, &dir.join(format!("{stem}.png")))?;
    io::save_raw(img, &dir.join(format!("{stem}.fimg")))?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = SceneConfig::load(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = simulate_dataset(&cfg)?;
    ds.save(&args.out)?;
    write_file(&args.out.join("scene_config.toml"), &cfg.to_toml())?;
    log::info!(
        "wrote {} views ({} holdout) to {}",
        ds.views.len(),
        ds.holdout_views().count(),
        args.out.display()
    );
    Ok(())
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| config_error(format!("grid {text:?}: {e}")))?;
    let [start, stop, step] = parts[..] else {
        return Err(config_error(format!("grid {text:?}: expected start:stop:step")));
    };
    if !(step > 0.0) || !(start > 0.0) || !(stop >= start) {
        return Err(config_error(format!("grid {text:?}: need 0 < start <= stop and step > 0")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

#[derive(Serialize)]
struct EdiReport {
    theta: f64,
    calibrated: bool,
    bins: usize,
    window: [f64; 2],
    events: usize,
    /// Largest per-pixel gap between the latent mean and the blurry input.
    mean_identity_residual: f64,
}

pub fn edi(args: &EdiArgs) -> Result<()> {
    if args.bins == 0 {
        return Err(config_error("--bins must be at least 1"));
    }
    if !(args.exposure > 0.0) {
        return Err(config_error("--exposure must be positive"));
    }
    let blur = io::load_image(&args.blur)?;
    let events = event_sim::read_evt1(&args.events)?;
    if (events.width, events.height) != (blur.width(), blur.height()) {
        return Err(Error::ShapeMismatch(format!(
            "events are {}x{}, image is {}x{}",
            events.width,
            events.height,
            blur.width(),
            blur.height()
        ))
        .into());
    }
    let window = (args.start, args.start + args.exposure);
    let bins = event_sim::bin_events(&events, window, args.bins)?;
    let theta = if args.calibrate {
        let t = edi::calibrate_theta(&blur, &bins, &parse_grid(&args.grid)?)?;
        log::info!("calibrated threshold {t}");
        t
    } else {
        args.theta.unwrap_or(edi::DEFAULT_THETA)
    };
    let result = edi::edi_deblur(&blur, &bins, theta)?;
    create_dir(&args.out)?;
    for (k, img) in result.latents.iter().enumerate() {
        save_image_pair(img, &args.out, &format!("latent_{k}"))?;
    }
    let report = EdiReport {
        theta,
        calibrated: args.calibrate,
        bins: args.bins,
        window: [window.0, window.1],
        events: events.len(),
        mean_identity_residual: result.identity_residual(&blur)?,
    };
    write_file(
        &args.out.join("edi_report.json"),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    println!("theta {theta}, mean identity residual {:.3e}", report.mean_identity_residual);
    Ok(())
}

fn load_train_config(args: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let sibling = args
        .resume
        .as_ref()
        .and_then(|p| p.parent())
        .map(|d| d.join(RESOLVED_CONFIG))
        .filter(|p| p.exists());
    let mut cfg = match (&args.config, sibling) {
        (Some(path), _) => TrainConfig::load(path)?,
        (None, Some(path)) => {
            log::info!("using {}", path.display());
            TrainConfig::load(&path)?
        }
        (None, None) => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if args.no_event_loss {
        cfg.event_loss = false;
    }
    if args.no_ade && cfg.latent_mode == LatentMode::Ade {
        cfg.latent_mode = LatentMode::Pose;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_train_config(args, seed)?;
    let ds = Dataset::load(&args.dataset)?;
    let (scene, state) = match &args.resume {
        Some(path) => {
            let (scene, state) = trainer::load_checkpoint(path)?;
            let wants_net = cfg.latent_mode == LatentMode::Ade;
            if scene.ade.is_some() != wants_net {
                return Err(config_error(format!(
                    "checkpoint {} does not match latent mode {:?}",
                    path.display(),
                    cfg.latent_mode
                )));
            }
            log::info!("resuming at iteration {}", state.iteration);
            (scene, state)
        }
        None => trainer::setup(&ds, &cfg)?,
    };
    create_dir(&args.out)?;
    write_file(&args.out.join(RESOLVED_CONFIG), &cfg.to_toml())?;

    let log_path = args.out.join(TRAIN_LOG);
    let append = args.resume.is_some() && log_path.exists();
    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    if !append {
        writeln!(log_file, "{LOG_HEADER}")?;
    }
    let mut write_error = None;
    let outcome = trainer::train_from(&ds, &cfg, scene, state, |row| {
        if let Some(p) = row.holdout_psnr {
            log::info!(
                "iteration {}: loss {:.5}, {} gaussians, holdout {p:.2} dB",
                row.iteration,
                row.loss.total,
                row.gaussians
            );
        }
        if write_error.is_none() {
            write_error = writeln!(log_file, "{}", row.to_csv()).err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e).context(format!("writing {}", log_path.display()));
    }

    trainer::save_checkpoint(&args.out.join(CHECKPOINT), &outcome.scene, &outcome.state)?;
    let mut csv = String::from("view_id,psnr,ssim\n");
    for m in &outcome.holdout {
        csv.push_str(&format!("{},{},{}\n", m.id, m.psnr, m.ssim));
    }
    write_file(&args.out.join(HOLDOUT_METRICS), &csv)?;
    match trainer::mean_psnr(&outcome.holdout) {
        Some(p) => println!(
            "trained to iteration {} with {} gaussians; holdout PSNR {p:.2} dB",
            outcome.state.iteration,
            outcome.scene.cloud.len()
        ),
        None => println!(
            "trained to iteration {} with {} gaussians",
            outcome.state.iteration,
            outcome.scene.cloud.len()
        ),
    }
    Ok(())
}

pub fn render(args: &RenderArgs) -> Result<()> {
    let (scene, _) = trainer::load_checkpoint(&args.checkpoint)?;
    let ds = Dataset::load(&args.dataset)?;
    create_dir(&args.out)?;
    let mut count = 0;
    for v in &ds.views {
        let keep = match args.split {
            Split::All => true,
            Split::Train => !v.holdout,
            Split::Holdout => v.holdout,
        };
        if !keep {
            continue;
        }
        let view = if args.estimated { &v.view } else { &v.gt_view };
        let img = raster::render(&scene.cloud, view, ds.meta.background)?;
        save_image_pair(&img, &args.out, &format!("render_{:04}", v.id))?;
        count += 1;
    }
    println!("rendered {count} views to {}", args.out.display());
    Ok(())
}

/// Loads `<dir>/<stem>.fimg`, falling back to the PNG.
fn load_stem(dir: &Path, stem: &str) -> Result<Option<Image>> {
    for ext in ["fimg", "png"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.exists() {
            return Ok(Some(io::load_image(&p)?));
        }
    }
    Ok(None)
}

/// Image stems in `dir`, sorted and deduplicated across extensions.
fn image_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "fimg")))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_owned))
        .collect();
    stems.sort();
    stems.dedup();
    Ok(stems)
}

/// Reference image for a render: same stem, or the first true sharp frame of
/// a dataset view for `render_####`.
fn reference_for(dir: &Path, stem: &str) -> Result<Option<Image>> {
    if let Some(img) = load_stem(dir, stem)? {
        return Ok(Some(img));
    }
    match stem.strip_prefix("render_") {
        Some(id) => load_stem(dir, &format!("gt_sharp_{id}_0")),
        None => Ok(None),
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut rows = Vec::new();
    for stem in image_stems(&args.renders)? {
        let Some(reference) = reference_for(&args.reference, &stem)? else {
            log::warn!("no reference for {stem}");
            continue;
        };
        let img = load_stem(&args.renders, &stem)?.expect("stem was listed");
        let p = metrics::psnr(&img, &reference, 1.0).with_context(|| stem.clone())?;
        let s = metrics::ssim(&img, &reference).with_context(|| stem.clone())?;
        rows.push((stem, p, s));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "no renders in {} have a reference in {}",
            args.renders.display(),
            args.reference.display()
        ))
        .into());
    }
    let mut csv = String::from("view_id,psnr,ssim,psnr_capped\n");
    for (stem, p, s) in &rows {
        csv.push_str(&format!("{stem},{},{s},{}\n", p.db, p.identical));
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&args.out, &csv)?;
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.1.db).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.2).sum::<f64>() / n;
    println!("{} images: mean PSNR {mean_psnr:.3} dB, mean SSIM {mean_ssim:.4}", rows.len());
    Ok(())
}
