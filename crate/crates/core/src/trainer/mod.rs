//! Scene optimization: latent renders, the blur and event objectives, and
//! Adam updates of the Gaussians and the deviation network.

mod checkpoint;
mod densify;
mod init;

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ade::{self, AdeNetwork};
use crate::dataset::{Dataset, DatasetMeta, ViewData};
use crate::error::{Error, Result};
use crate::event_sim::EventBins;
use crate::geometry::{CameraView, GaussianCloud, Quat};
use crate::image::Image;
use crate::losses::{self, EventMaps, LossWeights};
use crate::metrics;
use crate::optim::Adam;
use crate::raster::{self, RenderGrads};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use densify::{densify_and_prune, DensifyReport};
pub use init::initialize_scene;

pub const TRAIN_CONFIG_VERSION: u32 = 1;

/// How the `b + 1` latent renders of a view are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// Base render plus `b` renders of network-deviated Gaussians.
    Ade,
    /// Renders at the estimated latent poses, without the network.
    Pose,
    /// A single render compared directly with the blurry frame.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub mlp: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            mlp: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub interval: usize,
    pub start: usize,
    pub stop: usize,
    /// Mean position-gradient norm above which a Gaussian is cloned or split.
    pub grad_threshold: f64,
    pub opacity_prune: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            enabled: true,
            interval: 200,
            start: 200,
            stop: 1500,
            grad_threshold: 2e-3,
            opacity_prune: 0.005,
            max_gaussians: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Perturbed centers of the true scene.
    Simulator,
    /// Uniform points in a box.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub mode: InitMode,
    /// Standard deviation of the center perturbation, in units of scene extent.
    pub perturbation: f64,
    /// Point count for random mode.
    pub count: usize,
    /// Half-size of the random-mode box.
    pub box_half_size: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            mode: InitMode::Simulator,
            perturbation: 0.05,
            count: 100,
            box_half_size: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub version: u32,
    pub iterations: usize,
    pub seed: u64,
    pub latent_mode: LatentMode,
    pub event_loss: bool,
    /// Completed iterations before the event term joins the objective.
    pub event_start: usize,
    pub lambda_p: f64,
    pub lr: LearningRates,
    pub weights: LossWeights,
    pub densify: DensifyConfig,
    pub init: InitConfig,
    /// Shuffle the view order every epoch instead of cycling.
    pub shuffle: bool,
    /// Holdout evaluation period in iterations; 0 disables it.
    pub eval_interval: usize,
    /// Contrast threshold used for the measured event maps and the
    /// color initialization; the dataset's value when absent.
    pub theta: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: TRAIN_CONFIG_VERSION,
            iterations: 2000,
            seed: 0,
            latent_mode: LatentMode::Ade,
            event_loss: true,
            event_start: 1000,
            lambda_p: ade::DEFAULT_LAMBDA_P,
            lr: LearningRates::default(),
            weights: LossWeights::default(),
            densify: DensifyConfig::default(),
            init: InitConfig::default(),
            shuffle: false,
            eval_interval: 100,
            theta: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
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
        toml::to_string(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != TRAIN_CONFIG_VERSION {
            return bad(format!("unsupported train config version {}", self.version));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        let lr = &self.lr;
        for (name, v) in [
            ("position", lr.position),
            ("rotation", lr.rotation),
            ("log_scale", lr.log_scale),
            ("opacity", lr.opacity),
            ("color", lr.color),
            ("mlp", lr.mlp),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("learning rate `{name}` must be positive, got {v}"));
            }
        }
        if !(self.lambda_p >= 0.0) {
            return bad(format!("lambda_p must be non-negative, got {}", self.lambda_p));
        }
        if let Some(t) = self.theta {
            if !(t > 0.0) {
                return bad(format!("theta must be positive, got {t}"));
            }
        }
        if self.densify.enabled && self.densify.interval == 0 {
            return bad("densify interval must be positive".into());
        }
        self.weights.validate()
    }
}

/// The optimized state: Gaussians and, in `Ade` mode, the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: GaussianCloud,
    pub ade: Option<AdeNetwork>,
}

/// Per-Gaussian parameter groups, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Position,
    Rotation,
    LogScale,
    Opacity,
    Color,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Position,
        Group::Rotation,
        Group::LogScale,
        Group::Opacity,
        Group::Color,
    ];

    pub fn stride(self) -> usize {
        match self {
            Group::Position | Group::LogScale | Group::Color => 3,
            Group::Rotation => 4,
            Group::Opacity => 1,
        }
    }

    fn lr(self, lr: &LearningRates) -> f64 {
        match self {
            Group::Position => lr.position,
            Group::Rotation => lr.rotation,
            Group::LogScale => lr.log_scale,
            Group::Opacity => lr.opacity,
            Group::Color => lr.color,
        }
    }

    fn gather(self, cloud: &GaussianCloud) -> Vec<f64> {
        let mut out = Vec::with_capacity(cloud.len() * self.stride());
        for g in &cloud.gaussians {
            match self {
                Group::Position => out.extend_from_slice(&g.position),
                Group::Rotation => out.extend_from_slice(&g.rotation.to_array()),
                Group::LogScale => out.extend_from_slice(&g.log_scale),
                Group::Opacity => out.push(g.opacity_logit),
                Group::Color => out.extend_from_slice(&g.color),
            }
        }
        out
    }

    fn scatter(self, cloud: &mut GaussianCloud, values: &[f64]) {
        let s = self.stride();
        for (g, v) in cloud.gaussians.iter_mut().zip(values.chunks_exact(s)) {
            match self {
                Group::Position => g.position.copy_from_slice(v),
                Group::Rotation => g.rotation = Quat::new(v[0], v[1], v[2], v[3]),
                Group::LogScale => g.log_scale.copy_from_slice(v),
                Group::Opacity => g.opacity_logit = v[0],
                Group::Color => g.color.copy_from_slice(v),
            }
        }
    }

    fn gather_grads(self, grads: &RenderGrads) -> Vec<f64> {
        let mut out = Vec::with_capacity(grads.gaussians.len() * self.stride());
        for g in &grads.gaussians {
            match self {
                Group::Position => out.extend_from_slice(&g.position),
                Group::Rotation => out.extend_from_slice(&g.rotation),
                Group::LogScale => out.extend_from_slice(&g.log_scale),
                Group::Opacity => out.push(g.opacity_logit),
                Group::Color => out.extend_from_slice(&g.color),
            }
        }
        out
    }
}

/// Adam state for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    /// Indexed like [`Group::ALL`].
    pub groups: Vec<Adam>,
    pub mlp: Option<Adam>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed iterations.
    pub iteration: u64,
    pub optim: Optimizers,
    /// Summed position-gradient norms since the last densification.
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
    pub rng: ChaCha8Rng,
    /// Training-view order of the current epoch.
    pub order: Vec<usize>,
}

impl TrainState {
    pub fn new(scene: &Scene, cfg: &TrainConfig) -> Self {
        let n = scene.cloud.len();
        TrainState {
            iteration: 0,
            optim: Optimizers {
                groups: Group::ALL
                    .iter()
                    .map(|g| Adam::new(g.lr(&cfg.lr), n * g.stride()))
                    .collect(),
                mlp: scene.ade.as_ref().map(|a| Adam::new(cfg.lr.mlp, a.num_params())),
            },
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7ea1),
            order: Vec::new(),
        }
    }

    pub fn check_consistent(&self, scene: &Scene) -> Result<()> {
        let n = scene.cloud.len();
        for (g, opt) in Group::ALL.iter().zip(&self.optim.groups) {
            if opt.len() != n * g.stride() {
                return Err(Error::Data(format!("{g:?} moments do not match {n} gaussians")));
            }
        }
        if self.grad_accum.len() != n || self.grad_count.len() != n {
            return Err(Error::Data("gradient accumulators do not match the scene".into()));
        }
        match (&scene.ade, &self.optim.mlp) {
            (Some(a), Some(o)) if a.num_params() == o.len() => Ok(()),
            (None, None) => Ok(()),
            _ => Err(Error::Data("network and its optimizer state disagree".into())),
        }
    }
}

/// Everything one training view contributes to an iteration.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub id: usize,
    pub blur: Image,
    pub bins: EventBins,
    /// Estimated pose at exposure start.
    pub view: CameraView,
    /// Estimated poses of latent steps `0..=b`.
    pub latent_views: Vec<CameraView>,
    pub measured: Image,
}

impl TrainView {
    pub fn new(data: &ViewData, meta: &DatasetMeta, theta: f64) -> Result<Self> {
        let bins = data.bins(meta)?;
        let measured = losses::measured_event_map(&bins, theta);
        Ok(TrainView {
            id: data.id,
            blur: data.blur.clone(),
            bins,
            view: data.view,
            latent_views: data.latent_views.clone(),
            measured,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub blur: f64,
    pub event: f64,
}

/// Gradients of the training loss for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrads {
    pub gaussians: RenderGrads,
    pub mlp: Option<Vec<f64>>,
}

/// The latent renders of one view and the estimated blurry frame.
#[derive(Debug, Clone)]
pub struct LatentRenders {
    pub renders: Vec<Image>,
    pub estimated_blur: Image,
}

struct Forward {
    renders: Vec<Image>,
    tapes: Vec<raster::CompositingTape>,
    ade_cache: Option<ade::AdeCache>,
}

fn forward_latents(scene: &Scene, tv: &TrainView, mode: LatentMode, bg: [f64; 3]) -> Result<Forward> {
    let mut renders = Vec::new();
    let mut tapes = Vec::new();
    let mut push = |cloud: &GaussianCloud, view: &CameraView| -> Result<()> {
        let (img, tape) = raster::forward(cloud, view, bg)?;
        renders.push(img);
        tapes.push(tape);
        Ok(())
    };
    let mut ade_cache = None;
    match mode {
        LatentMode::None => push(&scene.cloud, &tv.view)?,
        LatentMode::Pose => {
            for v in &tv.latent_views {
                push(&scene.cloud, v)?;
            }
        }
        LatentMode::Ade => {
            let net = scene
                .ade
                .as_ref()
                .ok_or_else(|| Error::Config("latent mode `ade` needs a network".into()))?;
            let positions = scene.cloud.positions();
            let (devs, cache) = net.forward(&positions, &tv.view)?;
            push(&scene.cloud, &tv.view)?;
            for i in 1..=devs.l() {
                let moved = ade::apply_deviations(&positions, &devs, i)?;
                push(&scene.cloud.with_positions(&moved), &tv.view)?;
            }
            ade_cache = Some(cache);
        }
    }
    Ok(Forward {
        renders,
        tapes,
        ade_cache,
    })
}

/// Renders the latents of a view exactly as a training step would.
pub fn render_latents(scene: &Scene, tv: &TrainView, mode: LatentMode, bg: [f64; 3]) -> Result<LatentRenders> {
    let f = forward_latents(scene, tv, mode, bg)?;
    let estimated_blur = losses::average_latents(&f.renders)?;
    Ok(LatentRenders {
        renders: f.renders,
        estimated_blur,
    })
}

/// Loss terms of one view without gradients.
pub fn view_loss(scene: &Scene, tv: &TrainView, cfg: &TrainConfig, bg: [f64; 3]) -> Result<LossBreakdown> {
    let lat = render_latents(scene, tv, cfg.latent_mode, bg)?;
    let blur = losses::blur_loss(&lat.estimated_blur, &tv.blur, &cfg.weights)?.value;
    let maps = EventMaps {
        measured: tv.measured.clone(),
        estimated: losses::estimated_event_map(&lat.renders[0], &lat.renders[lat.renders.len() - 1])?,
    };
    let event = losses::event_loss(&maps)?.value;
    let total = if cfg.event_loss && lat.renders.len() > 1 {
        losses::total_loss(blur, event, &cfg.weights)
    } else {
        blur
    };
    Ok(LossBreakdown { total, blur, event })
}

/// Loss terms averaged over every view.
pub fn mean_view_loss(scene: &Scene, views: &[TrainView], cfg: &TrainConfig, bg: [f64; 3]) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown {
        total: 0.0,
        blur: 0.0,
        event: 0.0,
    };
    for tv in views {
        let l = view_loss(scene, tv, cfg, bg)?;
        acc.total += l.total;
        acc.blur += l.blur;
        acc.event += l.event;
    }
    let n = views.len().max(1) as f64;
    Ok(LossBreakdown {
        total: acc.total / n,
        blur: acc.blur / n,
        event: acc.event / n,
    })
}

/// Loss of one view and its gradient with respect to every parameter.
pub fn loss_and_grads(
    scene: &Scene,
    tv: &TrainView,
    cfg: &TrainConfig,
    bg: [f64; 3],
) -> Result<(LossBreakdown, SceneGrads)> {
    loss_and_grads_with(scene, tv, cfg, bg, cfg.event_loss)
}

fn loss_and_grads_with(
    scene: &Scene,
    tv: &TrainView,
    cfg: &TrainConfig,
    bg: [f64; 3],
    event_active: bool,
) -> Result<(LossBreakdown, SceneGrads)> {
    let fwd = forward_latents(scene, tv, cfg.latent_mode, bg)?;
    let n = fwd.renders.len();
    let est = losses::average_latents(&fwd.renders)?;
    let lb = losses::blur_loss(&est, &tv.blur, &cfg.weights)?;
    let share = losses::average_latents_backward(&lb.grad, n);
    let mut upstream = vec![share; n];

    let first = &fwd.renders[0];
    let last = &fwd.renders[n - 1];
    let maps = EventMaps {
        measured: tv.measured.clone(),
        estimated: losses::estimated_event_map(first, last)?,
    };
    let le = losses::event_loss(&maps)?;
    let use_event = event_active && n > 1 && cfg.weights.lambda_event > 0.0;
    if use_event {
        let (gf, gl) = losses::estimated_event_map_backward(first, last, &le.grad)?;
        let lam = cfg.weights.lambda_event;
        upstream[0].add_assign(&gf.scale(lam))?;
        upstream[n - 1].add_assign(&gl.scale(lam))?;
    }
    let total = if use_event {
        losses::total_loss(lb.value, le.value, &cfg.weights)
    } else {
        lb.value
    };

    let per_render: Vec<RenderGrads> = fwd
        .tapes
        .iter()
        .zip(&upstream)
        .map(|(t, g)| raster::backward(t, g))
        .collect::<Result<_>>()?;
    let mut gaussians = RenderGrads::zeros(scene.cloud.len());
    for g in &per_render {
        gaussians.accumulate(g);
    }
    let mlp = match (&fwd.ade_cache, &scene.ade) {
        (Some(cache), Some(net)) => {
            // x̂ = x + λ_p·δ(x), so dL/dδ = λ_p·dL/dx̂ for every deviated render.
            let dd: Vec<Vec<Vector3<f64>>> = per_render[1..]
                .iter()
                .map(|g| {
                    g.gaussians
                        .iter()
                        .map(|gg| Vector3::from(gg.position) * net.lambda_p)
                        .collect()
                })
                .collect();
            let (g_params, g_inputs) = net.backward_full(cache, &dd)?;
            for (g, gi) in gaussians.gaussians.iter_mut().zip(&g_inputs) {
                for k in 0..3 {
                    g.position[k] += gi[k];
                }
            }
            Some(g_params)
        }
        _ => None,
    };
    Ok((
        LossBreakdown {
            total,
            blur: lb.value,
            event: le.value,
        },
        SceneGrads { gaussians, mlp },
    ))
}

/// Keeps every Gaussian inside its valid parameter domain.
fn project_parameters(cloud: &mut GaussianCloud) {
    for g in &mut cloud.gaussians {
        g.rotation = g.rotation.normalized().unwrap_or(Quat::IDENTITY);
        for c in &mut g.color {
            *c = c.clamp(0.0, 1.0);
        }
        g.opacity_logit = g.opacity_logit.clamp(-30.0, 30.0);
        for s in &mut g.log_scale {
            *s = s.clamp(-12.0, 4.0);
        }
    }
}

/// One optimization step on one view.
pub fn train_iteration(
    scene: &mut Scene,
    tv: &TrainView,
    state: &mut TrainState,
    cfg: &TrainConfig,
    bg: [f64; 3],
) -> Result<LossBreakdown> {
    let event_active = cfg.event_loss && state.iteration >= cfg.event_start as u64;
    let (loss, grads) = loss_and_grads_with(scene, tv, cfg, bg, event_active)?;
    if !loss.total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss at iteration {} on view {} ({} gaussians): {:?}",
            state.iteration + 1,
            tv.id,
            scene.cloud.len(),
            loss
        )));
    }
    for (group, opt) in Group::ALL.iter().zip(state.optim.groups.iter_mut()) {
        let mut values = group.gather(&scene.cloud);
        opt.step(&mut values, &group.gather_grads(&grads.gaussians))?;
        group.scatter(&mut scene.cloud, &values);
    }
    project_parameters(&mut scene.cloud);
    if let (Some(net), Some(opt), Some(g)) = (scene.ade.as_mut(), state.optim.mlp.as_mut(), grads.mlp.as_ref()) {
        opt.step(net.params_mut(), g)?;
    }
    for (i, g) in grads.gaussians.gaussians.iter().enumerate() {
        let norm = Vector3::from(g.position).norm();
        if norm > 0.0 {
            state.grad_accum[i] += norm;
            state.grad_count[i] += 1;
        }
    }
    state.iteration += 1;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewMetrics {
    pub id: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Renders every holdout view at its true pose and compares it with the true
/// sharp frame at exposure start.
pub fn evaluate_holdout(cloud: &GaussianCloud, ds: &Dataset) -> Result<Vec<ViewMetrics>> {
    ds.holdout_views()
        .map(|v| {
            let img = raster::render(cloud, &v.gt_view, ds.meta.background)?;
            Ok(ViewMetrics {
                id: v.id,
                psnr: metrics::psnr(&img, &v.gt_sharp[0], 1.0)?.db,
                ssim: metrics::ssim(&img, &v.gt_sharp[0])?,
            })
        })
        .collect()
}

pub fn mean_psnr(m: &[ViewMetrics]) -> Option<f64> {
    (!m.is_empty()).then(|| m.iter().map(|v| v.psnr).sum::<f64>() / m.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub loss: LossBreakdown,
    pub gaussians: usize,
    pub holdout_psnr: Option<f64>,
}

pub const LOG_HEADER: &str = "iteration,loss,loss_blur,loss_event,gaussians,holdout_psnr";

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration,
            self.loss.total,
            self.loss.blur,
            self.loss.event,
            self.gaussians,
            self.holdout_psnr.map(|p| p.to_string()).unwrap_or_default()
        )
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Threshold used for measured event maps and initialization.
pub fn effective_theta(ds: &Dataset, cfg: &TrainConfig) -> f64 {
    cfg.theta.unwrap_or(ds.meta.theta)
}

pub fn prepare_views(ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<TrainView>> {
    let theta = effective_theta(ds, cfg);
    let views: Vec<TrainView> = ds
        .train_views()
        .map(|v| TrainView::new(v, &ds.meta, theta))
        .collect::<Result<_>>()?;
    if views.is_empty() {
        return Err(Error::Data("dataset has no training views".into()));
    }
    Ok(views)
}

/// Radius of the training cameras around their centroid, padded by 10%.
pub fn camera_extent(views: &[TrainView]) -> f64 {
    let centers: Vec<Vector3<f64>> = views.iter().map(|v| v.view.center()).collect();
    let c = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    1.1 * centers.iter().map(|p| (p - c).norm()).fold(0.0, f64::max).max(1e-6)
}

/// Fresh scene and optimizer state for a training run.
pub fn setup(ds: &Dataset, cfg: &TrainConfig) -> Result<(Scene, TrainState)> {
    cfg.validate()?;
    let cloud = initialize_scene(ds, cfg)?;
    let ade = match cfg.latent_mode {
        LatentMode::Ade => Some(AdeNetwork::new(ds.meta.b, cfg.lambda_p, cfg.seed)?),
        _ => None,
    };
    let scene = Scene { cloud, ade };
    let state = TrainState::new(&scene, cfg);
    Ok((scene, state))
}

fn next_view(state: &mut TrainState, n: usize, shuffle: bool) -> usize {
    let pos = (state.iteration as usize) % n;
    if pos == 0 || state.order.len() != n {
        state.order = (0..n).collect();
        if shuffle {
            state.order.shuffle(&mut state.rng);
        }
    }
    state.order[pos]
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scene: Scene,
    pub state: TrainState,
    pub log: Vec<LogRow>,
    pub holdout: Vec<ViewMetrics>,
}

/// Runs iterations until `cfg.iterations` have been completed, starting from
/// `scene`/`state` (fresh or restored from a checkpoint).
pub fn train_from(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut scene: Scene,
    mut state: TrainState,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    state.check_consistent(&scene)?;
    let views = prepare_views(ds, cfg)?;
    let extent = camera_extent(&views);
    let bg = ds.meta.background;
    let has_holdout = ds.holdout_views().next().is_some();
    let mut log = Vec::new();
    while (state.iteration as usize) < cfg.iterations {
        let vi = next_view(&mut state, views.len(), cfg.shuffle);
        let loss = train_iteration(&mut scene, &views[vi], &mut state, cfg, bg)?;
        let it = state.iteration as usize;
        let d = &cfg.densify;
        if d.enabled && it >= d.start && it <= d.stop && it.is_multiple_of(d.interval) {
            let report = densify_and_prune(&mut scene, &mut state, cfg, extent)?;
            log::debug!("iteration {it}: {report:?}");
        }
        let holdout_psnr = if has_holdout && cfg.eval_interval > 0 && it.is_multiple_of(cfg.eval_interval) {
            mean_psnr(&evaluate_holdout(&scene.cloud, ds)?)
        } else {
            None
        };
        let row = LogRow {
            iteration: state.iteration,
            loss,
            gaussians: scene.cloud.len(),
            holdout_psnr,
        };
        on_row(&row);
        log.push(row);
    }
    let holdout = evaluate_holdout(&scene.cloud, ds)?;
    Ok(TrainOutcome {
        scene,
        state,
        log,
        holdout,
    })
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (scene, state) = setup(ds, cfg)?;
    train_from(ds, cfg, scene, state, |_| {})
}

#[cfg(test)]
mod tests;
