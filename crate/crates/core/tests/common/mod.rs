//! Shared oracles for integration tests. Nothing here calls a backward pass:
//! gradients are estimated with central differences on forward evaluations.
#![allow(dead_code)]

use evsplat_core::geometry::{CameraView, Gaussian, GaussianCloud, Quat};
use evsplat_core::image::Image;
use evsplat_core::raster;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;

/// Passes when either the absolute error is tiny or the relative error is
/// within tolerance.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let abs = (analytic - numeric).abs();
    if abs < ABS_TOL {
        return true;
    }
    abs / analytic.abs().max(numeric.abs()) < REL_TOL
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckReport {
    pub checked: usize,
    pub failed: usize,
    /// Worst relative error among components whose absolute error exceeds
    /// the absolute floor.
    pub worst_rel: f64,
    /// Largest |analytic| seen, to show the check is not vacuous.
    pub max_magnitude: f64,
}

impl CheckReport {
    pub fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max_magnitude = self.max_magnitude.max(analytic.abs());
        let abs = (analytic - numeric).abs();
        if abs >= ABS_TOL {
            self.worst_rel = self.worst_rel.max(abs / analytic.abs().max(numeric.abs()));
        }
        if !grad_close(analytic, numeric) {
            self.failed += 1;
        }
    }

    pub fn merge(&mut self, o: CheckReport) {
        self.checked += o.checked;
        self.failed += o.failed;
        self.worst_rel = self.worst_rel.max(o.worst_rel);
        self.max_magnitude = self.max_magnitude.max(o.max_magnitude);
    }
}

pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// Stored parameters of one Gaussian in a fixed order:
/// position, raw quaternion, log-scale, opacity logit, color.
pub fn param_mut(g: &mut Gaussian, k: usize) -> &mut f64 {
    match k {
        0..=2 => &mut g.position[k],
        3 => &mut g.rotation.w,
        4 => &mut g.rotation.x,
        5 => &mut g.rotation.y,
        6 => &mut g.rotation.z,
        7..=9 => &mut g.log_scale[k - 7],
        10 => &mut g.opacity_logit,
        11..=13 => &mut g.color[k - 11],
        _ => unreachable!(),
    }
}

pub fn analytic_param(g: &raster::GaussianGrad, k: usize) -> f64 {
    match k {
        0..=2 => g.position[k],
        3..=6 => g.rotation[k - 3],
        7..=9 => g.log_scale[k - 7],
        10 => g.opacity_logit,
        11..=13 => g.color[k - 11],
        _ => unreachable!(),
    }
}

pub fn dot(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize, c: usize, lo: f64, hi: f64) -> Image {
    let data = (0..w * h * c).map(|_| rng.random_range(lo..hi)).collect();
    Image::from_vec(w, h, c, data).unwrap()
}

pub fn camera(w: usize, h: usize, f: f64) -> CameraView {
    CameraView {
        rotation: Quat::IDENTITY,
        translation: [0.0; 3],
        focal: [f, f],
        principal_point: [w as f64 / 2.0, h as f64 / 2.0],
        resolution: [w, h],
    }
}

/// Random scene whose splats all cover the whole 32×32 frame inside their
/// 3σ boxes, so the box cull is never hit by a perturbation. Opacities stay
/// well below the alpha clamp and the transmittance cutoff.
pub fn random_gradcheck_scene(seed: u64) -> (GaussianCloud, CameraView, [f64; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let view = {
        // Slightly rotated, translated camera so the world→camera transform is
        // exercised as well.
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rot = Quat::from_axis_angle(axis, rng.random_range(-0.2..0.2));
        CameraView {
            rotation: rot,
            translation: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
            focal: [30.0, 32.0],
            principal_point: [16.0, 15.5],
            resolution: [32, 32],
        }
    };
    let r = view.rotation_matrix().transpose();
    let t = Vector3::from(view.translation);
    let gaussians = (0..10)
        .map(|_| {
            let depth = rng.random_range(2.5..4.5);
            let cam = Vector3::new(
                rng.random_range(-0.25..0.25) * depth / 2.0,
                rng.random_range(-0.25..0.25) * depth / 2.0,
                depth,
            );
            let world = r * (cam - t);
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalized()
            .unwrap();
            // Minimum axis 0.6 at depth ≤ 4.5 with f=30 gives σ ≥ 4 px, so the
            // 3σ box spans more than the 32 px frame from any center inside it.
            let scale = Vector3::new(
                rng.random_range(0.6..1.0) * depth / 2.5,
                rng.random_range(0.6..1.0) * depth / 2.5,
                rng.random_range(0.6..1.0) * depth / 2.5,
            );
            Gaussian::new(
                world,
                q,
                scale,
                rng.random_range(0.05..0.5),
                Vector3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
            )
            .unwrap()
        })
        .collect();
    let bg = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    (GaussianCloud::new(gaussians), view, bg)
}

/// Checks `raster::backward` against central differences of
/// `L = <upstream, render(cloud)>` for every parameter of every Gaussian.
pub fn check_raster_gradients(seed: u64) -> CheckReport {
    let (cloud, view, bg) = random_gradcheck_scene(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let upstream = random_image(&mut rng, view.width(), view.height(), 3, -1.0, 1.0);

    let (_, tape) = raster::forward(&cloud, &view, bg).unwrap();
    let grads = raster::backward(&tape, &upstream).unwrap();
    let loss = |c: &GaussianCloud| dot(&raster::render(c, &view, bg).unwrap(), &upstream);

    let mut report = CheckReport::default();
    for gi in 0..cloud.len() {
        for k in 0..PARAMS_PER_GAUSSIAN {
            let mut plus = cloud.clone();
            *param_mut(&mut plus.gaussians[gi], k) += FD_STEP;
            let mut minus = cloud.clone();
            *param_mut(&mut minus.gaussians[gi], k) -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            report.record(analytic_param(&grads.gaussians[gi], k), numeric);
        }
    }
    report
}

/// Compares `analytic` with central differences of `f` at every component of `x`.
pub fn check_image_gradient(x: &Image, f: impl Fn(&Image) -> f64, analytic: &Image) -> CheckReport {
    let mut report = CheckReport::default();
    for i in 0..x.data().len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        report.record(analytic.data()[i], numeric);
    }
    report
}

/// `b` and a copy of it pushed away by at least `gap` in a random direction,
/// so absolute-value kinks are never within a finite-difference step.
pub fn separated_pair(rng: &mut impl Rng, w: usize, h: usize, c: usize, gap: f64) -> (Image, Image) {
    let b = random_image(rng, w, h, c, 0.1, 0.9);
    let data = b
        .data()
        .iter()
        .map(|&v| {
            let d = rng.random_range(gap..0.3);
            if rng.random_bool(0.5) { v + d } else { v - d }
        })
        .collect();
    (Image::from_vec(w, h, c, data).unwrap(), b)
}

/// Checks `AdeNetwork::backward_full` against central differences of
/// `L = Σ <U, δ>` on a fully randomized network, for sampled parameters of
/// every layer and every input coordinate. Components whose perturbation
/// flips a ReLU are skipped and counted separately.
pub fn check_ade_gradients(seed: u64, samples_per_layer: usize) -> (CheckReport, usize) {
    use evsplat_core::ade::AdeNetwork;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cloud, view, _) = random_gradcheck_scene(seed);
    let positions = cloud.positions();
    let mut net = AdeNetwork::new(4, 0.01, seed).unwrap();
    for p in net.params_mut() {
        *p = rng.random_range(-0.3..0.3);
    }
    let upstream: Vec<Vec<Vector3<f64>>> = (0..net.l())
        .map(|_| {
            (0..positions.len())
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    let eval_at = |n: &AdeNetwork, x: &[Vector3<f64>]| {
        let (devs, cache) = n.forward(x, &view).unwrap();
        let l: f64 = devs
            .deviations
            .iter()
            .zip(&upstream)
            .flat_map(|(d, u)| d.iter().zip(u).map(|(a, b)| a.dot(b)))
            .sum();
        (l, cache.relu_mask())
    };
    let eval = |n: &AdeNetwork| eval_at(n, &positions);
    let (_, cache) = net.forward(&positions, &view).unwrap();
    let base_mask = cache.relu_mask();
    let (analytic, analytic_x) = net.backward_full(&cache, &upstream).unwrap();

    let mut report = CheckReport::default();
    let mut skipped = 0;
    for layer in net.layers().to_vec() {
        let range = layer.offset..layer.bias().end;
        for _ in 0..samples_per_layer {
            let k = rng.random_range(range.clone());
            let mut plus = net.clone();
            plus.params_mut()[k] += FD_STEP;
            let mut minus = net.clone();
            minus.params_mut()[k] -= FD_STEP;
            let (lp, mp) = eval(&plus);
            let (lm, mm) = eval(&minus);
            if mp != base_mask || mm != base_mask {
                skipped += 1;
                continue;
            }
            report.record(analytic[k], (lp - lm) / (2.0 * FD_STEP));
        }
    }
    for j in 0..positions.len() {
        for c in 0..3 {
            let mut plus = positions.clone();
            plus[j][c] += FD_STEP;
            let mut minus = positions.clone();
            minus[j][c] -= FD_STEP;
            let (lp, mp) = eval_at(&net, &plus);
            let (lm, mm) = eval_at(&net, &minus);
            if mp != base_mask || mm != base_mask {
                skipped += 1;
                continue;
            }
            report.record(analytic_x[j][c], (lp - lm) / (2.0 * FD_STEP));
        }
    }
    (report, skipped)
}

/// D-SSIM gradient with respect to its first image.
pub fn check_dssim_gradient(seed: u64, w: usize, h: usize) -> CheckReport {
    use evsplat_core::losses;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_image(&mut rng, w, h, 3, 0.0, 1.0);
    let b = random_image(&mut rng, w, h, 3, 0.0, 1.0);
    let g = losses::dssim(&a, &b).unwrap().grad;
    check_image_gradient(&a, |x| losses::dssim(x, &b).unwrap().value, &g)
}

/// Blur loss gradient, with estimate and observation kept apart so no L1
/// kink lies within a finite-difference step.
pub fn check_blur_loss_gradient(seed: u64, w: usize, h: usize) -> CheckReport {
    use evsplat_core::losses::{self, LossWeights};
    let weights = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (est, obs) = separated_pair(&mut rng, w, h, 3, 1e-3);
    let g = losses::blur_loss(&est, &obs, &weights).unwrap().grad;
    check_image_gradient(&est, |x| losses::blur_loss(x, &obs, &weights).unwrap().value, &g)
}

/// Estimated event map pulled back through a random upstream gradient, for
/// both the first and the last frame.
pub fn check_event_map_gradient(seed: u64, w: usize, h: usize) -> CheckReport {
    use evsplat_core::losses;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = random_image(&mut rng, w, h, 3, 0.0, 1.0);
    let last = random_image(&mut rng, w, h, 3, 0.0, 1.0);
    let up = random_image(&mut rng, w, h, 1, -1.0, 1.0);
    let (gf, gl) = losses::estimated_event_map_backward(&first, &last, &up).unwrap();
    let mut r = check_image_gradient(&first, |x| dot(&losses::estimated_event_map(x, &last).unwrap(), &up), &gf);
    r.merge(check_image_gradient(&last, |x| dot(&losses::estimated_event_map(&first, x).unwrap(), &up), &gl));
    r
}

pub fn check_event_loss_gradient(seed: u64, w: usize, h: usize) -> CheckReport {
    use evsplat_core::losses::{self, EventMaps};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (est, meas) = separated_pair(&mut rng, w, h, 1, 1e-3);
    let loss = |x: &Image| {
        losses::event_loss(&EventMaps {
            measured: meas.clone(),
            estimated: x.clone(),
        })
        .unwrap()
    };
    check_image_gradient(&est, |x| loss(x).value, &loss(&est).grad)
}
