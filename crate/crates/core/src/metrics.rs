//! Image quality metrics and render throughput.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{CameraView, GaussianCloud};
use crate::image::Image;
use crate::raster;

pub use crate::losses::ssim;

pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// Set when the images are identical and `db` is the cap.
    pub identical: bool,
}

/// `10·log10(max² / MSE)` over all channels jointly.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<Psnr> {
    a.check_same_shape(b)?;
    let n = a.data().len().max(1) as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(Psnr {
            db: PSNR_CAP,
            identical: true,
        });
    }
    Ok(Psnr {
        db: (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP),
        identical: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpsReport {
    pub fps: f64,
    pub median_seconds_per_frame: f64,
}

/// Median forward-only throughput: each repetition renders every view once.
pub fn measure_fps(
    cloud: &GaussianCloud,
    views: &[CameraView],
    repetitions: usize,
    background: [f64; 3],
) -> Result<FpsReport> {
    if repetitions < 10 {
        return Err(Error::InvalidArgument(format!(
            "throughput needs at least 10 repetitions, got {repetitions}"
        )));
    }
    if views.is_empty() {
        return Err(Error::InvalidArgument("no views to render".into()));
    }
    let mut per_frame = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for v in views {
            std::hint::black_box(raster::render(cloud, v, background)?);
        }
        per_frame.push(start.elapsed().as_secs_f64() / views.len() as f64);
    }
    per_frame.sort_by(f64::total_cmp);
    let mid = per_frame.len() / 2;
    let median = if per_frame.len() % 2 == 0 {
        0.5 * (per_frame[mid - 1] + per_frame[mid])
    } else {
        per_frame[mid]
    };
    Ok(FpsReport {
        fps: 1.0 / median.max(1e-12),
        median_seconds_per_frame: median,
    })
}
