//! Event Double Integral: latent sharp frames from one blurry frame and its
//! binned events.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event_sim::EventBins;
use crate::image::Image;

pub const DEFAULT_THETA: f64 = 0.25;

/// Largest exponent accepted before `exp` is considered to overflow.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EdiResult {
    /// `I_0 … I_b`.
    pub latents: Vec<Image>,
    pub theta: f64,
}

impl EdiResult {
    /// Largest per-pixel deviation of the latent mean from `blur`.
    pub fn identity_residual(&self, blur: &Image) -> Result<f64> {
        let n = self.latents.len() as f64;
        let mut worst: f64 = 0.0;
        for (i, &b) in blur.data().iter().enumerate() {
            let mean = self.latents.iter().map(|l| l.data()[i]).sum::<f64>() / n;
            worst = worst.max((mean - b).abs());
        }
        Ok(worst)
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidContrastThreshold(theta))
    }
}

/// Per-pixel `exp(Θ·C_k)` for `k = 1..=b`, flattened as `[k][pixel]`.
fn exp_cumulative(bins: &EventBins, theta: f64) -> Result<Vec<Vec<f64>>> {
    check_theta(theta)?;
    if bins.b() == 0 {
        return Err(Error::EmptyBinning);
    }
    bins.cumulative()
        .iter()
        .map(|c| {
            c.data()
                .iter()
                .map(|&v| {
                    let x = theta * v;
                    if x > MAX_EXPONENT {
                        Err(Error::EventOverflow(x))
                    } else {
                        Ok(x.exp())
                    }
                })
                .collect()
        })
        .collect()
}

/// `D = 1 + Σ_k exp(Θ·C_k)` per pixel, single channel.
pub fn edi_denominator(bins: &EventBins, theta: f64) -> Result<Image> {
    let e = exp_cumulative(bins, theta)?;
    let mut d = Image::filled(bins.width(), bins.height(), 1, 1.0);
    for ek in &e {
        for (o, v) in d.data_mut().iter_mut().zip(ek) {
            *o += v;
        }
    }
    Ok(d)
}

/// `I_0 = (b+1)·I_blur / D` and `I_k = I_0·exp(Θ·C_k)`, applied to every
/// color channel with the shared single-channel bins.
pub fn edi_deblur(blur: &Image, bins: &EventBins, theta: f64) -> Result<EdiResult> {
    if bins.width() != blur.width() || bins.height() != blur.height() {
        return Err(Error::ShapeMismatch(format!(
            "blur is {}x{} but events are {}x{}",
            blur.width(),
            blur.height(),
            bins.width(),
            bins.height()
        )));
    }
    let e = exp_cumulative(bins, theta)?;
    let b = bins.b();
    let c = blur.channels();
    let denom: Vec<f64> = (0..blur.width() * blur.height())
        .map(|p| 1.0 + e.iter().map(|ek| ek[p]).sum::<f64>())
        .collect();
    let scale = (b + 1) as f64;
    // The ratio is exactly 1 without events, so a still pixel passes through.
    let ratio: Vec<f64> = denom.iter().map(|d| scale / d).collect();
    let i0_data: Vec<f64> = blur
        .data()
        .par_iter()
        .enumerate()
        .map(|(i, &v)| v * ratio[i / c])
        .collect();
    let i0 = Image::from_vec(blur.width(), blur.height(), c, i0_data)?;
    let mut latents = Vec::with_capacity(b + 1);
    for ek in &e {
        let data = i0
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * ek[i / c])
            .collect();
        latents.push(Image::from_vec(blur.width(), blur.height(), c, data)?);
    }
    latents.insert(0, i0);
    Ok(EdiResult { latents, theta })
}

/// Anisotropic total variation summed over channels.
pub fn total_variation(img: &Image) -> f64 {
    let (w, h, c) = img.shape();
    let mut tv = 0.0;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get(x, y, ch);
                if x + 1 < w {
                    tv += (img.get(x + 1, y, ch) - v).abs();
                }
                if y + 1 < h {
                    tv += (img.get(x, y + 1, ch) - v).abs();
                }
            }
        }
    }
    tv
}

/// Picks the grid value whose `I_0` has the smallest total variation. Ties go
/// to the smaller threshold.
pub fn calibrate_theta(blur: &Image, bins: &EventBins, theta_grid: &[f64]) -> Result<f64> {
    if theta_grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    for &t in theta_grid {
        check_theta(t)?;
    }
    let mut grid = theta_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|&t| {
            edi_deblur(blur, bins, t).map(|r| total_variation(&r.latents[0]))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..grid.len() {
        if scores[i] < scores[best] {
            best = i;
        }
    }
    log::debug!("threshold calibration: {:?} -> {:?}", grid, scores);
    Ok(grid[best])
}
