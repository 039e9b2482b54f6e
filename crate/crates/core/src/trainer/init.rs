//! Initial Gaussians.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{effective_theta, InitMode, TrainConfig};
use crate::dataset::Dataset;
use crate::edi;
use crate::error::{Error, Result};
use crate::geometry::{CameraView, Gaussian, GaussianCloud, Quat};
use crate::image::Image;

pub const INITIAL_OPACITY: f64 = 0.1;
const NEIGHBOURS: usize = 3;
const FALLBACK_COLOR: f64 = 0.5;

/// Mean distance to the three nearest other points.
fn neighbour_scales(points: &[Vector3<f64>], fallback: f64) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm())
                .collect();
            if d.is_empty() {
                return fallback;
            }
            d.sort_by(f64::total_cmp);
            let k = d.len().min(NEIGHBOURS);
            (d[..k].iter().sum::<f64>() / k as f64).max(1e-4)
        })
        .collect()
}

/// Builds the starting cloud: perturbed true centers or random points,
/// isotropic scales from neighbour spacing, low opacity, and colors read from
/// the deblurred first latent of the nearest training view that sees them.
pub fn initialize_scene(ds: &Dataset, cfg: &TrainConfig) -> Result<GaussianCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1417_0000);
    let init = &cfg.init;
    let points: Vec<Vector3<f64>> = match init.mode {
        InitMode::Simulator => {
            if ds.gt_cloud.is_empty() {
                return Err(Error::Data("simulator initialization needs the true scene".into()));
            }
            let sigma = init.perturbation * ds.gt_cloud.extent().max(1e-6);
            let normal = Normal::new(0.0, sigma.max(0.0))
                .map_err(|e| Error::Config(format!("perturbation: {e}")))?;
            ds.gt_cloud
                .gaussians
                .iter()
                .map(|g| g.pos() + Vector3::from_fn(|_, _| normal.sample(&mut rng)))
                .collect()
        }
        InitMode::Random => {
            if init.count == 0 || !(init.box_half_size > 0.0) {
                return Err(Error::Config("random initialization needs count > 0 and a positive box".into()));
            }
            let h = init.box_half_size;
            (0..init.count)
                .map(|_| Vector3::from_fn(|_, _| rng.random_range(-h..h)))
                .collect()
        }
    };

    let theta = effective_theta(ds, cfg);
    let mut sources: Vec<(Vector3<f64>, CameraView, Image)> = Vec::new();
    for v in ds.train_views() {
        let bins = v.bins(&ds.meta)?;
        let sharp = match edi::edi_deblur(&v.blur, &bins, theta) {
            Ok(r) => r.latents[0].map(|x| x.clamp(0.0, 1.0)),
            Err(_) => v.blur.clone(),
        };
        sources.push((v.view.center(), v.view, sharp));
    }

    let fallback = 0.1 * ds.gt_cloud.extent().max(init.box_half_size);
    let scales = neighbour_scales(&points, fallback);
    points
        .iter()
        .zip(scales)
        .map(|(p, s)| {
            let mut color = Vector3::repeat(FALLBACK_COLOR);
            let mut best = f64::INFINITY;
            for (center, view, img) in &sources {
                let dist = (p - center).norm();
                if dist >= best {
                    continue;
                }
                if let Some((u, v)) = view.project_point(p) {
                    let (x, y) = (u.round(), v.round());
                    if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
                        let px = img.pixel(x as usize, y as usize);
                        color = Vector3::from_fn(|c, _| px[c.min(px.len() - 1)]);
                        best = dist;
                    }
                }
            }
            Gaussian::new(*p, Quat::IDENTITY, Vector3::repeat(s), INITIAL_OPACITY, color)
        })
        .collect::<Result<Vec<_>>>()
        .map(GaussianCloud::new)
}
