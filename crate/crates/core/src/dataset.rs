//! Synthetic multi-view datasets: scene configuration, simulation, noisy
//! pose estimates, and the on-disk layout.
//!
//! A dataset directory holds
//!
//! - `manifest.json`: dataset-wide settings and the file list,
//! - `poses.json`: intrinsics plus estimated and true poses per view,
//! - `blur_####.png` / `.fimg`: the blurry frame of each view,
//! - `events_####.evt`: the view's events in `EVT1`,
//! - `gt_sharp_####_k.png` / `.fimg`: true latent frames `k = 0..=b`,
//! - `gt_cloud.json`: the true scene.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_sim::{self, EventBins, EventNoise, EventStream, ShakeTrajectory};
use crate::geometry::{CameraView, Gaussian, GaussianCloud, Pose, Quat};
use crate::image::Image;
use crate::io;
use crate::raster;

pub const CONFIG_VERSION: u32 = 1;
pub const DATASET_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum SceneSpec {
    /// `count` Gaussians with random centers inside a ball of `radius`.
    Random {
        count: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_scale_range")]
        scale_range: [f64; 2],
        #[serde(default = "default_opacity_range")]
        opacity_range: [f64; 2],
    },
    /// An explicit list.
    Gaussians { gaussians: Vec<GaussianSpec> },
}

fn default_radius() -> f64 {
    1.0
}
fn default_scale_range() -> [f64; 2] {
    [0.05, 0.15]
}
fn default_opacity_range() -> [f64; 2] {
    [0.7, 0.95]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub position: [f64; 3],
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Distance of the camera ring from the origin.
    pub ring_radius: f64,
    /// Alternating elevation of ring cameras, degrees.
    #[serde(default = "default_elevation")]
    pub elevation_deg: f64,
    pub train_views: usize,
    #[serde(default)]
    pub holdout_views: usize,
}

fn default_elevation() -> f64 {
    15.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShakeSpec {
    /// Number of event bins per exposure.
    pub b: usize,
    #[serde(default = "default_exposure")]
    pub exposure: f64,
    /// Camera-frame translation reached at exposure end, world units.
    #[serde(default)]
    pub translation: f64,
    /// Rotation reached at exposure end, degrees.
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_exposure() -> f64 {
    0.04
}
fn default_substeps() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Relative per-pixel threshold mismatch; 0 disables noise.
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_theta() -> f64 {
    crate::edi::DEFAULT_THETA
}

impl Default for EventSpec {
    fn default() -> Self {
        EventSpec {
            theta: default_theta(),
            noise_sigma: 0.0,
        }
    }
}

/// Error model standing in for a structure-from-motion pose estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseNoise {
    /// Standard deviation of the rotation angle, degrees.
    #[serde(default = "default_rot_noise")]
    pub rotation_deg: f64,
    /// Standard deviation of the translation, as a fraction of scene extent.
    #[serde(default = "default_trans_noise")]
    pub translation_frac: f64,
}

fn default_rot_noise() -> f64 {
    0.5
}
fn default_trans_noise() -> f64 {
    0.005
}

impl Default for PoseNoise {
    fn default() -> Self {
        PoseNoise {
            rotation_deg: default_rot_noise(),
            translation_frac: default_trans_noise(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub background: [f64; 3],
    pub scene: SceneSpec,
    pub camera: CameraSpec,
    pub shake: ShakeSpec,
    #[serde(default)]
    pub events: EventSpec,
    #[serde(default)]
    pub pose_noise: PoseNoise,
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
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
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported scene config version {}", self.version));
        }
        let c = &self.camera;
        if c.width < 8 || c.height < 8 || !(c.focal > 0.0) || !(c.ring_radius > 0.0) {
            return bad("camera needs ≥ 8×8 pixels, positive focal and ring radius".into());
        }
        if c.train_views == 0 {
            return bad("need at least one training view".into());
        }
        if self.shake.b == 0 || !(self.shake.exposure > 0.0) || self.shake.substeps == 0 {
            return bad("shake needs b ≥ 1, positive exposure and substeps ≥ 1".into());
        }
        if !(self.events.theta > 0.0) || self.events.noise_sigma < 0.0 {
            return bad("events need θ > 0 and non-negative noise".into());
        }
        if self.pose_noise.rotation_deg < 0.0 || self.pose_noise.translation_frac < 0.0 {
            return bad("pose noise must be non-negative".into());
        }
        match &self.scene {
            SceneSpec::Random {
                count,
                radius,
                scale_range,
                opacity_range,
            } => {
                if *count == 0 || !(*radius > 0.0) {
                    return bad("random scene needs count ≥ 1 and positive radius".into());
                }
                if !(scale_range[0] > 0.0 && scale_range[0] <= scale_range[1]) {
                    return bad(format!("invalid scale_range {scale_range:?}"));
                }
                if !(opacity_range[0] > 0.0 && opacity_range[0] <= opacity_range[1] && opacity_range[1] < 1.0) {
                    return bad(format!("invalid opacity_range {opacity_range:?}"));
                }
            }
            SceneSpec::Gaussians { gaussians } => {
                if gaussians.is_empty() {
                    return bad("explicit scene lists no gaussians".into());
                }
            }
        }
        Ok(())
    }
}

pub fn build_scene(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<GaussianCloud> {
    match spec {
        SceneSpec::Random {
            count,
            radius,
            scale_range,
            opacity_range,
        } => {
            let mut gaussians = Vec::with_capacity(*count);
            for _ in 0..*count {
                let dir: [f64; 3] = UnitSphere.sample(rng);
                let r = radius * rng.random::<f64>().cbrt();
                let pos = Vector3::from(dir) * r;
                let axis: [f64; 3] = UnitSphere.sample(rng);
                let rot = Quat::from_axis_angle(Vector3::from(axis), rng.random_range(0.0..std::f64::consts::PI));
                let mut draw = || {
                    if scale_range[0] == scale_range[1] {
                        scale_range[0]
                    } else {
                        rng.random_range(scale_range[0]..scale_range[1])
                    }
                };
                let scale = Vector3::new(draw(), draw(), draw());
                let opacity = if opacity_range[0] == opacity_range[1] {
                    opacity_range[0]
                } else {
                    rng.random_range(opacity_range[0]..opacity_range[1])
                };
                let color = Vector3::new(rng.random(), rng.random(), rng.random());
                gaussians.push(Gaussian::new(pos, rot, scale, opacity, color)?);
            }
            Ok(GaussianCloud::new(gaussians))
        }
        SceneSpec::Gaussians { gaussians } => gaussians
            .iter()
            .map(|g| {
                Gaussian::new(
                    Vector3::from(g.position),
                    Quat::from_array(g.rotation),
                    Vector3::from(g.scale),
                    g.opacity,
                    Vector3::from(g.color),
                )
            })
            .collect::<Result<Vec<_>>>()
            .map(GaussianCloud::new),
    }
}

/// Cameras on a ring around the origin, alternating above and below the
/// equator. Every `k`-th camera (evenly spread) is a holdout view.
pub fn ring_cameras(spec: &CameraSpec) -> Vec<(CameraView, bool)> {
    let n = spec.train_views + spec.holdout_views;
    let holdout_stride = if spec.holdout_views > 0 {
        n as f64 / spec.holdout_views as f64
    } else {
        f64::INFINITY
    };
    let holdouts: Vec<usize> = (0..spec.holdout_views)
        .map(|h| ((h as f64 + 0.5) * holdout_stride) as usize)
        .collect();
    (0..n)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let el = spec.elevation_deg.to_radians() * if k % 2 == 0 { 1.0 } else { -1.0 };
            let eye = Vector3::new(phi.cos() * el.cos(), el.sin(), phi.sin() * el.cos()) * spec.ring_radius;
            let view = CameraView::look_at(
                eye,
                Vector3::zeros(),
                Vector3::new(0.0, -1.0, 0.0),
                spec.focal,
                [spec.width, spec.height],
            );
            (view, holdouts.contains(&k))
        })
        .collect()
}

/// Random end-of-exposure offset with the configured magnitudes.
pub fn random_shake_offset(spec: &ShakeSpec, rng: &mut ChaCha8Rng) -> Pose {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let angle = spec.rotation_deg.to_radians() * rng.random_range(0.5..1.0);
    let shift = spec.translation * rng.random_range(0.5..1.0);
    Pose::new(
        Quat::from_axis_angle(Vector3::from(axis), angle),
        Vector3::from(dir) * shift,
    )
}

/// Perturbs a camera by a random rotation about its center and a random
/// translation in its own frame.
pub fn perturb_view(view: &CameraView, noise: &PoseNoise, extent: f64, rng: &mut ChaCha8Rng) -> CameraView {
    let rot_sigma = noise.rotation_deg.to_radians();
    let trans_sigma = noise.translation_frac * extent;
    let gauss = |s: f64, rng: &mut ChaCha8Rng| {
        if s > 0.0 {
            Normal::new(0.0, s).expect("positive sigma").sample(rng)
        } else {
            0.0
        }
    };
    let rv = Vector3::new(gauss(rot_sigma, rng), gauss(rot_sigma, rng), gauss(rot_sigma, rng));
    let tv = Vector3::new(gauss(trans_sigma, rng), gauss(trans_sigma, rng), gauss(trans_sigma, rng));
    let offset = Pose::new(Quat::from_rotvec(rv), tv);
    view.with_pose(offset.compose(&view.pose()))
}

/// One camera's data.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewData {
    pub id: usize,
    pub holdout: bool,
    /// True pose at exposure start.
    pub gt_view: CameraView,
    /// Estimated pose at exposure start, as a pose provider would report it.
    pub view: CameraView,
    /// True poses of latent steps `0..=b`.
    pub gt_latent_views: Vec<CameraView>,
    /// Estimated poses of latent steps `0..=b`; entry 0 equals `view`.
    pub latent_views: Vec<CameraView>,
    pub blur: Image,
    pub events: EventStream,
    /// True sharp frames `0..=b`.
    pub gt_sharp: Vec<Image>,
}

impl ViewData {
    pub fn bins(&self, meta: &DatasetMeta) -> Result<EventBins> {
        event_sim::bin_events(&self.events, (0.0, meta.exposure), meta.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub seed: u64,
    pub b: usize,
    pub theta: f64,
    pub exposure: f64,
    pub background: [f64; 3],
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub views: Vec<ViewData>,
    pub gt_cloud: GaussianCloud,
}

impl Dataset {
    pub fn train_views(&self) -> impl Iterator<Item = &ViewData> {
        self.views.iter().filter(|v| !v.holdout)
    }

    pub fn holdout_views(&self) -> impl Iterator<Item = &ViewData> {
        self.views.iter().filter(|v| v.holdout)
    }
}

/// Renders, blurs and fires events for every camera of the config.
pub fn simulate(cfg: &SceneConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cloud = build_scene(&cfg.scene, &mut rng)?;
    let extent = cloud.extent().max(1e-6);
    let b = cfg.shake.b;
    let mut views = Vec::new();
    for (id, (base, holdout)) in ring_cameras(&cfg.camera).into_iter().enumerate() {
        let end = random_shake_offset(&cfg.shake, &mut rng);
        let mut traj = ShakeTrajectory::linear(base, end, b, cfg.shake.exposure);
        traj.substeps = cfg.shake.substeps;
        let dense = traj.dense_views();
        let frames: Vec<Image> = dense
            .iter()
            .map(|(_, v)| raster::render(&cloud, v, cfg.background))
            .collect::<Result<_>>()?;
        let times: Vec<f64> = dense.iter().map(|(t, _)| *t).collect();
        let blur = event_sim::synthesize_blur(&frames)?;
        let noise = (cfg.events.noise_sigma > 0.0).then(|| EventNoise {
            threshold_sigma: cfg.events.noise_sigma,
            seed: cfg.seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        });
        let events = event_sim::synthesize_events_with_noise(&frames, &times, cfg.events.theta, noise)?;
        let gt_latent_views = traj.views();
        let gt_sharp: Vec<Image> = (0..=b)
            .map(|k| frames[k * cfg.shake.substeps].clone())
            .collect();
        let latent_views: Vec<CameraView> = gt_latent_views
            .iter()
            .map(|v| perturb_view(v, &cfg.pose_noise, extent, &mut rng))
            .collect();
        views.push(ViewData {
            id,
            holdout,
            gt_view: base,
            view: latent_views[0],
            gt_latent_views,
            latent_views,
            blur,
            events,
            gt_sharp,
        });
    }
    Ok(Dataset {
        meta: DatasetMeta {
            version: DATASET_VERSION,
            seed: cfg.seed,
            b,
            theta: cfg.events.theta,
            exposure: cfg.shake.exposure,
            background: cfg.background,
            width: cfg.camera.width,
            height: cfg.camera.height,
        },
        views,
        gt_cloud: cloud,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    meta: DatasetMeta,
    views: Vec<ManifestView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestView {
    id: usize,
    holdout: bool,
    blur: String,
    blur_raw: String,
    events: String,
    gt_sharp: Vec<String>,
    gt_sharp_raw: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseRecord {
    id: usize,
    holdout: bool,
    focal: [f64; 2],
    principal_point: [f64; 2],
    resolution: [usize; 2],
    pose: Pose,
    gt_pose: Pose,
    latent_poses: Vec<Pose>,
    gt_latent_poses: Vec<Pose>,
}

pub fn blur_name(id: usize, ext: &str) -> String {
    format!("blur_{id:04}.{ext}")
}

pub fn events_name(id: usize) -> String {
    format!("events_{id:04}.evt")
}

pub fn gt_sharp_name(id: usize, k: usize, ext: &str) -> String {
    format!("gt_sharp_{id:04}_{k}.{ext}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest {
            meta: self.meta.clone(),
            views: Vec::new(),
        };
        let mut poses = Vec::new();
        for v in &self.views {
            let entry = ManifestView {
                id: v.id,
                holdout: v.holdout,
                blur: blur_name(v.id, "png"),
                blur_raw: blur_name(v.id, "fimg"),
                events: events_name(v.id),
                gt_sharp: (0..v.gt_sharp.len()).map(|k| gt_sharp_name(v.id, k, "png")).collect(),
                gt_sharp_raw: (0..v.gt_sharp.len()).map(|k| gt_sharp_name(v.id, k, "fimg")).collect(),
            };
            io::save_png(&v.blur, &dir.join(&entry.blur))?;
            io::save_raw(&v.blur, &dir.join(&entry.blur_raw))?;
            event_sim::write_evt1(&v.events, &dir.join(&entry.events))?;
            for (k, img) in v.gt_sharp.iter().enumerate() {
                io::save_png(img, &dir.join(&entry.gt_sharp[k]))?;
                io::save_raw(img, &dir.join(&entry.gt_sharp_raw[k]))?;
            }
            manifest.views.push(entry);
            poses.push(PoseRecord {
                id: v.id,
                holdout: v.holdout,
                focal: v.gt_view.focal,
                principal_point: v.gt_view.principal_point,
                resolution: v.gt_view.resolution,
                pose: v.view.pose(),
                gt_pose: v.gt_view.pose(),
                latent_poses: v.latent_views.iter().map(CameraView::pose).collect(),
                gt_latent_poses: v.gt_latent_views.iter().map(CameraView::pose).collect(),
            });
        }
        write_json(&dir.join("manifest.json"), &manifest)?;
        write_json(&dir.join("poses.json"), &poses)?;
        write_json(&dir.join("gt_cloud.json"), &self.gt_cloud)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        if manifest.meta.version != DATASET_VERSION {
            return Err(Error::Data(format!(
                "unsupported dataset version {}",
                manifest.meta.version
            )));
        }
        let poses: Vec<PoseRecord> = read_json(&dir.join("poses.json"))?;
        let gt_cloud: GaussianCloud = read_json(&dir.join("gt_cloud.json"))?;
        let mut views = Vec::new();
        for entry in &manifest.views {
            let rec = poses
                .iter()
                .find(|p| p.id == entry.id)
                .ok_or_else(|| Error::Data(format!("no pose record for view {}", entry.id)))?;
            let cam = |pose: &Pose| CameraView {
                rotation: pose.rotation,
                translation: pose.translation,
                focal: rec.focal,
                principal_point: rec.principal_point,
                resolution: rec.resolution,
            };
            let load = |raw: &str, png: &str| -> Result<Image> {
                let p = dir.join(raw);
                if p.exists() {
                    io::load_raw(&p)
                } else {
                    io::load_png(&dir.join(png))
                }
            };
            let view = ViewData {
                id: entry.id,
                holdout: entry.holdout,
                gt_view: cam(&rec.gt_pose),
                view: cam(&rec.pose),
                gt_latent_views: rec.gt_latent_poses.iter().map(cam).collect(),
                latent_views: rec.latent_poses.iter().map(cam).collect(),
                blur: load(&entry.blur_raw, &entry.blur)?,
                events: event_sim::read_evt1(&dir.join(&entry.events))?,
                gt_sharp: entry
                    .gt_sharp_raw
                    .iter()
                    .zip(&entry.gt_sharp)
                    .map(|(r, p)| load(r, p))
                    .collect::<Result<_>>()?,
            };
            view.gt_view.validate()?;
            if view.blur.width() != manifest.meta.width || view.blur.height() != manifest.meta.height {
                return Err(Error::Data(format!("view {} has the wrong resolution", entry.id)));
            }
            views.push(view);
        }
        Ok(Dataset {
            meta: manifest.meta,
            views,
            gt_cloud,
        })
    }
}

/// Files a dataset directory is expected to contain.
pub fn expected_files(ds: &Dataset) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = ["manifest.json", "poses.json", "gt_cloud.json"]
        .iter()
        .map(PathBuf::from)
        .collect();
    for v in &ds.views {
        out.push(blur_name(v.id, "png").into());
        out.push(events_name(v.id).into());
        for k in 0..v.gt_sharp.len() {
            out.push(gt_sharp_name(v.id, k, "png").into());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_GAUSSIAN: &str = r#"
version = 1
seed = 3
background = [0.1, 0.1, 0.1]

[scene]
kind = "gaussians"
gaussians = [{ position = [0.0, 0.0, 0.0], scale = [0.3, 0.3, 0.3], opacity = 0.9, color = [0.9, 0.5, 0.2] }]

[camera]
width = 16
height = 16
focal = 20.0
ring_radius = 4.0
train_views = 2

[shake]
b = 4
translation = 0.8
"#;

    #[test]
    fn parses_and_simulates() {
        let cfg = SceneConfig::from_toml(ONE_GAUSSIAN).unwrap();
        let ds = simulate(&cfg).unwrap();
        assert_eq!(ds.views.len(), 2);
        for v in &ds.views {
            assert_eq!(v.gt_sharp.len(), 5);
            assert_eq!(v.latent_views.len(), 5);
            assert_eq!(v.latent_views[0], v.view);
            assert!(!v.events.is_empty());
        }
        assert_eq!(expected_files(&ds).len(), 3 + 2 * (2 + 5));
    }

    #[test]
    fn still_camera_blur_is_frame_zero() {
        let mut cfg = SceneConfig::from_toml(ONE_GAUSSIAN).unwrap();
        cfg.shake.translation = 0.0;
        let ds = simulate(&cfg).unwrap();
        for v in &ds.views {
            assert_eq!(v.blur, v.gt_sharp[0]);
            assert!(v.events.is_empty());
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = SceneConfig::from_toml(ONE_GAUSSIAN).unwrap();
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = SceneConfig::from_toml(ONE_GAUSSIAN).unwrap();
        let ds = simulate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        for f in expected_files(&ds) {
            assert!(dir.path().join(&f).exists(), "{}", f.display());
        }
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.gt_cloud, ds.gt_cloud);
        for (a, b) in back.views.iter().zip(&ds.views) {
            assert_eq!(a.gt_view, b.gt_view);
            assert_eq!(a.view, b.view);
            assert_eq!(a.gt_latent_views, b.gt_latent_views);
            assert_eq!(a.latent_views, b.latent_views);
            assert_eq!(a.blur, b.blur);
            assert_eq!(a.events, b.events);
            assert_eq!(a.gt_sharp, b.gt_sharp);
        }
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let broken = ONE_GAUSSIAN.replace("focal = 20.0", "focal = \"wide\"");
        let err = SceneConfig::from_toml(&broken).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        let unknown = ONE_GAUSSIAN.replace("train_views = 2", "train_views = 2\nzoom = 3");
        assert!(SceneConfig::from_toml(&unknown).is_err());
        let wrong_version = ONE_GAUSSIAN.replace("version = 1", "version = 9");
        assert!(SceneConfig::from_toml(&wrong_version).is_err());
    }

    #[test]
    fn holdouts_are_spread() {
        let spec = CameraSpec {
            width: 16,
            height: 16,
            focal: 20.0,
            ring_radius: 4.0,
            elevation_deg: 15.0,
            train_views: 8,
            holdout_views: 2,
        };
        let cams = ring_cameras(&spec);
        let held: Vec<usize> = cams.iter().enumerate().filter(|(_, c)| c.1).map(|(i, _)| i).collect();
        assert_eq!(held, vec![2, 7]);
        for (c, _) in cams {
            let (u, v) = c.project_point(&Vector3::zeros()).unwrap();
            assert!((u - 8.0).abs() < 1e-9 && (v - 8.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_pose_noise_is_identity() {
        let spec = CameraSpec {
            width: 16,
            height: 16,
            focal: 20.0,
            ring_radius: 4.0,
            elevation_deg: 15.0,
            train_views: 1,
            holdout_views: 0,
        };
        let (cam, _) = ring_cameras(&spec)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let none = PoseNoise { rotation_deg: 0.0, translation_frac: 0.0 };
        let p = perturb_view(&cam, &none, 1.0, &mut rng);
        assert!((p.center() - cam.center()).norm() < 1e-12);
    }
}
