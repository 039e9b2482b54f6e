//! Differentiable CPU splatting.
//!
//! Every Gaussian is projected with the local affine (EWA) approximation,
//! globally sorted front to back, and composited per pixel:
//!
//! ```text
//! α_j = min(o_j · exp(−½ dᵀ Σ₂⁻¹ d), 0.999)
//! C   = Σ_j c_j α_j T_j + T_final · background,   T_j = Π_{m<j} (1 − α_m)
//! ```
//!
//! The forward pass records which splats touched each pixel (and with what
//! alpha / transmittance) so the backward pass can replay the compositing in
//! reverse without re-evaluating the scene.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{normalize_backward, rotmat_grad_to_quat, rotmat_of_unit, CameraView, Gaussian, GaussianCloud, Quat};
use crate::image::Image;

pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of every projected covariance (pixel²).
pub const COV2D_REGULARIZATION: f64 = 0.1;
pub const ALPHA_MAX: f64 = 0.999;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Bounding-box half extent, in standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;

const ROWS_PER_CHUNK: usize = 4;

#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    pub mean2d: [f64; 2],
    /// Regularized screen-space covariance.
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub gaussian_index: usize,
    /// `(a, b, c)` of the inverse covariance `[[a, b], [b, c]]`.
    conic: [f64; 3],
    /// Half extents of the 3σ bounding box along x and y.
    extent: [f64; 2],
    opacity: f64,
    color: [f64; 3],
    cache: ProjectionCache,
}

#[derive(Debug, Clone)]
struct ProjectionCache {
    p_cam: Vector3<f64>,
    jac: Matrix2x3<f64>,
    /// Camera-frame covariance `W Σ Wᵀ`.
    cov_cam: Matrix3<f64>,
    rot: Matrix3<f64>,
    unit_quat: Quat,
    raw_quat: Quat,
    scale: Vector3<f64>,
}

impl ProjectedGaussian {
    pub fn conic(&self) -> [f64; 3] {
        self.conic
    }

    pub fn extent(&self) -> [f64; 2] {
        self.extent
    }
}

/// Projects one Gaussian, returning `None` when it is behind the near plane,
/// lies more than its 3σ extent outside the frame, or has a singular
/// footprint.
pub fn project(g: &Gaussian, view: &CameraView, index: usize) -> Result<Option<ProjectedGaussian>> {
    let w = view.rotation_matrix();
    let t = Vector3::from(view.translation);
    let p_cam = w * g.pos() + t;
    let z = p_cam.z;
    if z <= NEAR_PLANE {
        return Ok(None);
    }
    let [fx, fy] = view.focal;
    let [cx, cy] = view.principal_point;
    let u = fx * p_cam.x / z + cx;
    let v = fy * p_cam.y / z + cy;

    let unit_quat = g.rotation.normalized()?;
    let rot = rotmat_of_unit(unit_quat);
    let scale = g.scale();
    let s2 = Matrix3::from_diagonal(&scale.component_mul(&scale));
    let cov3 = rot * s2 * rot.transpose();
    let cov_cam = w * cov3 * w.transpose();
    let jac = Matrix2x3::new(
        fx / z,
        0.0,
        -fx * p_cam.x / (z * z),
        0.0,
        fy / z,
        -fy * p_cam.y / (z * z),
    );
    let cov2d = jac * cov_cam * jac.transpose()
        + Matrix2::from_diagonal_element(COV2D_REGULARIZATION);
    let det = cov2d.determinant();
    if !(det > 0.0) || !det.is_finite() {
        log::warn!("skipping Gaussian {index}: singular projected covariance (det = {det})");
        return Ok(None);
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    let extent = [
        EXTENT_SIGMAS * cov2d[(0, 0)].sqrt(),
        EXTENT_SIGMAS * cov2d[(1, 1)].sqrt(),
    ];
    let (wf, hf) = ((view.width() - 1) as f64, (view.height() - 1) as f64);
    if u + extent[0] < 0.0 || u - extent[0] > wf || v + extent[1] < 0.0 || v - extent[1] > hf {
        return Ok(None);
    }
    Ok(Some(ProjectedGaussian {
        mean2d: [u, v],
        cov2d,
        depth: z,
        gaussian_index: index,
        conic,
        extent,
        opacity: g.opacity(),
        color: g.color,
        cache: ProjectionCache {
            p_cam,
            jac,
            cov_cam,
            rot,
            unit_quat,
            raw_quat: g.rotation,
            scale,
        },
    }))
}

#[derive(Debug, Clone, Copy)]
struct Contribution {
    /// Position in the depth-sorted list.
    slot: u32,
    alpha: f64,
    /// Transmittance in front of this splat.
    transmittance: f64,
    clamped: bool,
}

/// Everything the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct CompositingTape {
    width: usize,
    height: usize,
    background: [f64; 3],
    view: CameraView,
    n_gaussians: usize,
    sorted: Vec<ProjectedGaussian>,
    contributions: Vec<Contribution>,
    /// CSR offsets into `contributions`, one entry per pixel plus one.
    offsets: Vec<usize>,
    final_transmittance: Vec<f64>,
}

impl CompositingTape {
    pub fn view(&self) -> &CameraView {
        &self.view
    }

    pub fn n_gaussians(&self) -> usize {
        self.n_gaussians
    }

    /// Number of Gaussians that survived projection.
    pub fn n_visible(&self) -> usize {
        self.sorted.len()
    }

    /// Indices (into the input cloud) of the visible splats, front to back.
    pub fn depth_order(&self) -> Vec<usize> {
        self.sorted.iter().map(|p| p.gaussian_index).collect()
    }

    pub fn contributions_at(&self, x: usize, y: usize) -> usize {
        let p = y * self.width + x;
        self.offsets[p + 1] - self.offsets[p]
    }
}

/// Per-Gaussian gradients, indexed like the input cloud.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianGrad {
    pub position: [f64; 3],
    /// With respect to the stored (raw) quaternion; orthogonal to it.
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl GaussianGrad {
    pub fn add_assign(&mut self, o: &GaussianGrad) {
        for i in 0..3 {
            self.position[i] += o.position[i];
            self.log_scale[i] += o.log_scale[i];
            self.color[i] += o.color[i];
        }
        for i in 0..4 {
            self.rotation[i] += o.rotation[i];
        }
        self.opacity_logit += o.opacity_logit;
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(&self.rotation)
            .chain(&self.log_scale)
            .chain(&self.color)
            .chain(std::iter::once(&self.opacity_logit))
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderGrads {
    pub gaussians: Vec<GaussianGrad>,
}

impl RenderGrads {
    pub fn zeros(n: usize) -> Self {
        RenderGrads {
            gaussians: vec![GaussianGrad::default(); n],
        }
    }

    pub fn accumulate(&mut self, other: &RenderGrads) {
        for (a, b) in self.gaussians.iter_mut().zip(&other.gaussians) {
            a.add_assign(b);
        }
    }
}

fn project_and_sort(cloud: &GaussianCloud, view: &CameraView) -> Result<Vec<ProjectedGaussian>> {
    let mut sorted = Vec::with_capacity(cloud.len());
    for (i, g) in cloud.gaussians.iter().enumerate() {
        if let Some(p) = project(g, view, i)? {
            sorted.push(p);
        }
    }
    sorted.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
    Ok(sorted)
}

#[inline]
fn splat_alpha(p: &ProjectedGaussian, px: f64, py: f64) -> Option<(f64, bool)> {
    let dx = px - p.mean2d[0];
    let dy = py - p.mean2d[1];
    if dx.abs() > p.extent[0] || dy.abs() > p.extent[1] {
        return None;
    }
    let [a, b, c] = p.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    let raw = p.opacity * power.exp();
    if raw > ALPHA_MAX {
        Some((ALPHA_MAX, true))
    } else {
        Some((raw, false))
    }
}

fn chunk_candidates(sorted: &[ProjectedGaussian], y0: usize, y1: usize) -> Vec<u32> {
    sorted
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            p.mean2d[1] + p.extent[1] >= y0 as f64 && p.mean2d[1] - p.extent[1] <= (y1 - 1) as f64
        })
        .map(|(i, _)| i as u32)
        .collect()
}

struct ChunkOut {
    pixels: Vec<f64>,
    contributions: Vec<Contribution>,
    counts: Vec<usize>,
    final_t: Vec<f64>,
}

fn composite_chunk(
    sorted: &[ProjectedGaussian],
    width: usize,
    y0: usize,
    y1: usize,
    background: [f64; 3],
    record: bool,
) -> ChunkOut {
    let candidates = chunk_candidates(sorted, y0, y1);
    let n_pix = (y1 - y0) * width;
    let mut out = ChunkOut {
        pixels: vec![0.0; n_pix * 3],
        contributions: Vec::new(),
        counts: Vec::with_capacity(if record { n_pix } else { 0 }),
        final_t: Vec::with_capacity(if record { n_pix } else { 0 }),
    };
    for y in y0..y1 {
        for x in 0..width {
            let (px, py) = (x as f64, y as f64);
            let mut t = 1.0;
            let mut color = [0.0; 3];
            let mut count = 0;
            for &slot in &candidates {
                let p = &sorted[slot as usize];
                let Some((alpha, clamped)) = splat_alpha(p, px, py) else {
                    continue;
                };
                let w = alpha * t;
                for c in 0..3 {
                    color[c] += p.color[c] * w;
                }
                if record {
                    out.contributions.push(Contribution {
                        slot,
                        alpha,
                        transmittance: t,
                        clamped,
                    });
                    count += 1;
                }
                t *= 1.0 - alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            let base = ((y - y0) * width + x) * 3;
            for c in 0..3 {
                out.pixels[base + c] = color[c] + t * background[c];
            }
            if record {
                out.counts.push(count);
                out.final_t.push(t);
            }
        }
    }
    out
}

fn row_chunks(height: usize) -> Vec<(usize, usize)> {
    (0..height)
        .step_by(ROWS_PER_CHUNK)
        .map(|y0| (y0, (y0 + ROWS_PER_CHUNK).min(height)))
        .collect()
}

fn rasterize(
    cloud: &GaussianCloud,
    view: &CameraView,
    background: [f64; 3],
    record: bool,
) -> Result<(Image, Option<CompositingTape>)> {
    view.validate()?;
    let (width, height) = (view.width(), view.height());
    let sorted = project_and_sort(cloud, view)?;
    let chunks: Vec<ChunkOut> = row_chunks(height)
        .into_par_iter()
        .map(|(y0, y1)| composite_chunk(&sorted, width, y0, y1, background, record))
        .collect();

    let mut pixels = Vec::with_capacity(width * height * 3);
    for ch in &chunks {
        pixels.extend_from_slice(&ch.pixels);
    }
    let image = Image::from_vec(width, height, 3, pixels)?;
    if !record {
        return Ok((image, None));
    }
    let total: usize = chunks.iter().map(|c| c.contributions.len()).sum();
    let mut contributions = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(width * height + 1);
    let mut final_transmittance = Vec::with_capacity(width * height);
    offsets.push(0);
    for ch in chunks {
        let mut acc = contributions.len();
        for n in &ch.counts {
            acc += n;
            offsets.push(acc);
        }
        contributions.extend(ch.contributions);
        final_transmittance.extend(ch.final_t);
    }
    let tape = CompositingTape {
        width,
        height,
        background,
        view: *view,
        n_gaussians: cloud.len(),
        sorted,
        contributions,
        offsets,
        final_transmittance,
    };
    Ok((image, Some(tape)))
}

/// Renders `cloud` and records a tape for [`backward`].
pub fn forward(
    cloud: &GaussianCloud,
    view: &CameraView,
    background: [f64; 3],
) -> Result<(Image, CompositingTape)> {
    let (img, tape) = rasterize(cloud, view, background, true)?;
    Ok((img, tape.expect("tape recorded")))
}

/// Forward-only rendering; no tape, no gradients.
pub fn render(cloud: &GaussianCloud, view: &CameraView, background: [f64; 3]) -> Result<Image> {
    Ok(rasterize(cloud, view, background, false)?.0)
}

/// Screen-space gradient slots per sorted splat:
/// mean (2), conic a/b/c (3), opacity (1), color (3).
const SLOT_WIDTH: usize = 9;

fn backward_chunk(tape: &CompositingTape, grad: &Image, y0: usize, y1: usize) -> Vec<f64> {
    let mut acc = vec![0.0; tape.sorted.len() * SLOT_WIDTH];
    let bg = tape.background;
    for y in y0..y1 {
        for x in 0..tape.width {
            let pix = y * tape.width + x;
            let g = grad.pixel(x, y);
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let contribs = &tape.contributions[tape.offsets[pix]..tape.offsets[pix + 1]];
            // Colour accumulated behind the current splat, background included.
            let t_final = tape.final_transmittance[pix];
            let mut behind = [t_final * bg[0], t_final * bg[1], t_final * bg[2]];
            let (px, py) = (x as f64, y as f64);
            for c in contribs.iter().rev() {
                let p = &tape.sorted[c.slot as usize];
                let (alpha, t) = (c.alpha, c.transmittance);
                let slot = &mut acc[c.slot as usize * SLOT_WIDTH..(c.slot as usize + 1) * SLOT_WIDTH];
                let mut d_alpha = 0.0;
                let mut g_behind = 0.0;
                for ch in 0..3 {
                    slot[6 + ch] += alpha * t * g[ch];
                    d_alpha += t * p.color[ch] * g[ch];
                    g_behind += behind[ch] * g[ch];
                }
                d_alpha -= g_behind / (1.0 - alpha);
                for ch in 0..3 {
                    behind[ch] += p.color[ch] * alpha * t;
                }
                if c.clamped {
                    continue;
                }
                // α = o · exp(power)
                let dx = px - p.mean2d[0];
                let dy = py - p.mean2d[1];
                let [a, b, cc] = p.conic;
                let gauss = (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + cc * dy * dy)).exp();
                slot[5] += d_alpha * gauss;
                let d_power = d_alpha * alpha;
                slot[0] += d_power * (a * dx + b * dy);
                slot[1] += d_power * (b * dx + cc * dy);
                slot[2] += d_power * (-0.5 * dx * dx);
                slot[3] += d_power * (-dx * dy);
                slot[4] += d_power * (-0.5 * dy * dy);
            }
        }
    }
    acc
}

fn chain_to_parameters(p: &ProjectedGaussian, s: &[f64], view: &CameraView) -> GaussianGrad {
    let cache = &p.cache;
    let [fx, fy] = view.focal;
    let (x, y, z) = (cache.p_cam.x, cache.p_cam.y, cache.p_cam.z);

    // Conic → 2D covariance: dΣ = −A · dA · A (symmetric gradients).
    let [a, b, c] = p.conic;
    let conic_m = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(s[2], 0.5 * s[3], 0.5 * s[3], s[4]);
    let g_cov2d = -(conic_m * g_conic * conic_m);

    let jac = cache.jac;
    let g_cov_cam = jac.transpose() * g_cov2d * jac;
    let g_jac = 2.0 * g_cov2d * jac * cache.cov_cam;

    let w = view.rotation_matrix();
    let g_cov3 = w.transpose() * g_cov_cam * w;

    let s2 = cache.scale.component_mul(&cache.scale);
    let g_rot = 2.0 * g_cov3 * cache.rot * Matrix3::from_diagonal(&s2);
    let rtgr = cache.rot.transpose() * g_cov3 * cache.rot;
    let log_scale = [
        2.0 * s2.x * rtgr[(0, 0)],
        2.0 * s2.y * rtgr[(1, 1)],
        2.0 * s2.z * rtgr[(2, 2)],
    ];
    let rotation = normalize_backward(cache.raw_quat, rotmat_grad_to_quat(cache.unit_quat, &g_rot));

    let (du, dv) = (s[0], s[1]);
    let z2 = z * z;
    let z3 = z2 * z;
    let g_pcam = Vector3::new(
        du * fx / z + g_jac[(0, 2)] * (-fx / z2),
        dv * fy / z + g_jac[(1, 2)] * (-fy / z2),
        du * (-fx * x / z2)
            + dv * (-fy * y / z2)
            + g_jac[(0, 0)] * (-fx / z2)
            + g_jac[(0, 2)] * (2.0 * fx * x / z3)
            + g_jac[(1, 1)] * (-fy / z2)
            + g_jac[(1, 2)] * (2.0 * fy * y / z3),
    );
    let g_pos = w.transpose() * g_pcam;

    GaussianGrad {
        position: g_pos.into(),
        rotation,
        log_scale,
        opacity_logit: s[5] * p.opacity * (1.0 - p.opacity),
        color: [s[6], s[7], s[8]],
    }
}

/// Exact gradients of the composited image (contracted with `grad`) with
/// respect to every Gaussian parameter, in the stored parameterization.
pub fn backward(tape: &CompositingTape, grad: &Image) -> Result<RenderGrads> {
    if grad.shape() != (tape.width, tape.height, 3) {
        return Err(Error::ShapeMismatch(format!(
            "image gradient {:?} does not match tape {}x{}x3",
            grad.shape(),
            tape.width,
            tape.height
        )));
    }
    let partials: Vec<Vec<f64>> = row_chunks(tape.height)
        .into_par_iter()
        .map(|(y0, y1)| backward_chunk(tape, grad, y0, y1))
        .collect();
    // Reduce in chunk order so results do not depend on scheduling.
    let mut screen = vec![0.0; tape.sorted.len() * SLOT_WIDTH];
    for part in &partials {
        for (a, b) in screen.iter_mut().zip(part) {
            *a += b;
        }
    }
    let mut out = RenderGrads::zeros(tape.n_gaussians);
    for (slot, p) in tape.sorted.iter().enumerate() {
        let s = &screen[slot * SLOT_WIDTH..(slot + 1) * SLOT_WIDTH];
        if s.iter().all(|v| *v == 0.0) {
            continue;
        }
        out.gaussians[p.gaussian_index] = chain_to_parameters(p, s, &tape.view);
    }
    Ok(out)
}
