//! Ground-truth data synthesis: sharp frames along a shake trajectory, the
//! blurry frame they average to, and the events an ideal sensor would fire.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, GaussianCloud, Pose};
use crate::image::{luminance, mean_of, Image};
use crate::raster;

/// Offset inside `ln(I + ε)`; shared by the simulator and the event losses.
pub const LOG_EPS: f64 = 1e-3;

pub fn log_intensity(v: f64) -> f64 {
    (v + LOG_EPS).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    /// +1 or −1.
    pub polarity: i8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    /// Sorted by time.
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: usize, height: usize) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Signed polarity sum per pixel over the whole stream.
    pub fn count_map(&self) -> Image {
        let mut map = Image::new(self.width, self.height, 1);
        for e in &self.events {
            let i = e.y as usize * self.width + e.x as usize;
            map.data_mut()[i] += e.polarity as f64;
        }
        map
    }
}

/// Per-bin, per-pixel signed polarity sums `B_1 … B_b` over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct EventBins {
    /// One single-channel map per bin; `maps[k - 1]` is `B_k`.
    pub maps: Vec<Image>,
    pub window: (f64, f64),
}

impl EventBins {
    pub fn zeros(width: usize, height: usize, b: usize, window: (f64, f64)) -> Self {
        EventBins {
            maps: vec![Image::new(width, height, 1); b],
            window,
        }
    }

    pub fn b(&self) -> usize {
        self.maps.len()
    }

    pub fn width(&self) -> usize {
        self.maps.first().map_or(0, Image::width)
    }

    pub fn height(&self) -> usize {
        self.maps.first().map_or(0, Image::height)
    }

    /// `B_k`, one-based.
    pub fn bin(&self, k: usize) -> &Image {
        &self.maps[k - 1]
    }

    /// Cumulative maps `C_k = Σ_{i ≤ k} B_i` for `k = 1..=b`.
    pub fn cumulative(&self) -> Vec<Image> {
        let mut out: Vec<Image> = Vec::with_capacity(self.b());
        for m in &self.maps {
            let next = match out.last() {
                Some(prev) => prev.zip_map(m, |a, b| a + b).expect("bins share a shape"),
                None => m.clone(),
            };
            out.push(next);
        }
        out
    }

    /// `Σ_k B_k`.
    pub fn total(&self) -> Image {
        self.cumulative()
            .pop()
            .unwrap_or_else(|| Image::new(self.width(), self.height(), 1))
    }
}

/// Camera motion during one exposure: `offsets[k]` is applied in the camera
/// frame on top of `base_view` for latent step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShakeTrajectory {
    pub base_view: CameraView,
    pub offsets: Vec<Pose>,
    /// Exposure length in seconds.
    pub exposure: f64,
    /// Extra interpolated frames per step used for the blur and the events.
    pub substeps: usize,
}

impl ShakeTrajectory {
    /// Uniform motion from the base view to `end_offset` over `b` steps.
    pub fn linear(base_view: CameraView, end_offset: Pose, b: usize, exposure: f64) -> Self {
        let offsets = (0..=b)
            .map(|k| match k {
                0 => Pose::IDENTITY,
                _ => Pose::lerp(&Pose::IDENTITY, &end_offset, k as f64 / b as f64),
            })
            .collect();
        ShakeTrajectory {
            base_view,
            offsets,
            exposure,
            substeps: 1,
        }
    }

    pub fn still(base_view: CameraView, b: usize, exposure: f64) -> Self {
        ShakeTrajectory {
            base_view,
            offsets: vec![Pose::IDENTITY; b + 1],
            exposure,
            substeps: 1,
        }
    }

    pub fn b(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.len() < 2 {
            return Err(Error::InvalidArgument("trajectory needs b ≥ 1".into()));
        }
        if self.offsets[0] != Pose::IDENTITY {
            return Err(Error::InvalidArgument(
                "trajectory step 0 must be the identity offset".into(),
            ));
        }
        if !(self.exposure > 0.0) || self.substeps == 0 {
            return Err(Error::InvalidArgument(
                "exposure must be positive and substeps ≥ 1".into(),
            ));
        }
        self.base_view.validate()
    }

    fn view_for(&self, offset: &Pose) -> CameraView {
        self.base_view
            .with_pose(offset.compose(&self.base_view.pose()))
    }

    /// Camera of latent step `k`.
    pub fn view(&self, k: usize) -> CameraView {
        self.view_for(&self.offsets[k])
    }

    pub fn views(&self) -> Vec<CameraView> {
        (0..self.offsets.len()).map(|k| self.view(k)).collect()
    }

    /// Timestamp of latent step `k`, relative to exposure start.
    pub fn step_time(&self, k: usize) -> f64 {
        self.exposure * k as f64 / self.b() as f64
    }

    /// All sub-stepped cameras and their timestamps (keyframes included).
    pub fn dense_views(&self) -> Vec<(f64, CameraView)> {
        let b = self.b();
        let s = self.substeps;
        let mut out = Vec::with_capacity(b * s + 1);
        out.push((0.0, self.view(0)));
        for k in 0..b {
            for j in 1..=s {
                let frac = j as f64 / s as f64;
                let pose = if j == s {
                    self.offsets[k + 1]
                } else {
                    Pose::lerp(&self.offsets[k], &self.offsets[k + 1], frac)
                };
                let t = self.exposure * (k as f64 + frac) / b as f64;
                out.push((t, self.view_for(&pose)));
            }
        }
        out
    }
}

/// One sharp render per trajectory step.
pub fn render_sharp_sequence(
    cloud: &GaussianCloud,
    traj: &ShakeTrajectory,
    background: [f64; 3],
) -> Result<Vec<Image>> {
    traj.validate()?;
    traj.views()
        .iter()
        .map(|v| raster::render(cloud, v, background))
        .collect()
}

/// Pixelwise mean of the latent frames.
pub fn synthesize_blur(frames: &[Image]) -> Result<Image> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to blur".into()));
    }
    mean_of(frames)
}

/// Optional sensor non-idealities. Off by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventNoise {
    /// Standard deviation of per-pixel threshold mismatch, relative to Θ.
    pub threshold_sigma: f64,
    pub seed: u64,
}

/// Ideal event camera driven by a sequence of frames.
///
/// Every pixel keeps a reference log level, starting at the first frame.
/// Whenever the log-intensity has moved by a full threshold from the
/// reference, one event of that sign fires and the reference moves by Θ.
/// Crossing times are interpolated linearly between frame timestamps.
pub fn synthesize_events(frames: &[Image], timestamps: &[f64], theta: f64) -> Result<EventStream> {
    synthesize_events_with_noise(frames, timestamps, theta, None)
}

pub fn synthesize_events_with_noise(
    frames: &[Image],
    timestamps: &[f64],
    theta: f64,
    noise: Option<EventNoise>,
) -> Result<EventStream> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidContrastThreshold(theta));
    }
    if frames.len() != timestamps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames but {} timestamps",
            frames.len(),
            timestamps.len()
        )));
    }
    let Some(first) = frames.first() else {
        return Err(Error::InvalidArgument("no frames".into()));
    };
    let (w, h) = (first.width(), first.height());
    if w > u16::MAX as usize + 1 || h > u16::MAX as usize + 1 {
        return Err(Error::InvalidArgument("resolution exceeds u16 coordinates".into()));
    }
    let logs: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| {
            if f.width() != w || f.height() != h {
                return Err(Error::ShapeMismatch("frame shape mismatch".into()));
            }
            Ok(luminance(f).data().iter().map(|&v| log_intensity(v)).collect())
        })
        .collect::<Result<_>>()?;

    let thresholds: Vec<f64> = match noise {
        Some(n) if n.threshold_sigma > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
            let dist = Normal::new(1.0, n.threshold_sigma)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            (0..w * h)
                .map(|_| theta * dist.sample(&mut rng).max(0.05))
                .collect()
        }
        _ => vec![theta; w * h],
    };

    let mut events = Vec::new();
    let mut reference = logs[0].clone();
    for k in 1..frames.len() {
        let (t_prev, t_cur) = (timestamps[k - 1], timestamps[k]);
        for pix in 0..w * h {
            let prev = logs[k - 1][pix];
            let cur = logs[k][pix];
            let th = thresholds[pix];
            let n = ((cur - reference[pix]) / th + 1e-9 * (cur - reference[pix]).signum()).trunc();
            if n == 0.0 {
                continue;
            }
            let sign = n.signum();
            let (x, y) = ((pix % w) as u16, (pix / w) as u16);
            for m in 1..=(n.abs() as i64) {
                let level = reference[pix] + sign * th * m as f64;
                let frac = if cur != prev {
                    ((level - prev) / (cur - prev)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                events.push(Event {
                    t: t_prev + frac * (t_cur - t_prev),
                    x,
                    y,
                    polarity: sign as i8,
                });
            }
            reference[pix] += n * th;
        }
    }
    events.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    Ok(EventStream {
        width: w,
        height: h,
        events,
    })
}

/// Splits `[t0, t1]` into `b` equal bins and sums polarities per pixel.
///
/// Bin `k` covers `(t0 + (k−1)Δ, t0 + kΔ]`; an event exactly at `t0` goes to
/// bin 1. This matches the simulator, which stamps the last crossing of a
/// step at the step's own timestamp. Events outside the window are dropped.
pub fn bin_events(stream: &EventStream, window: (f64, f64), b: usize) -> Result<EventBins> {
    if b == 0 {
        return Err(Error::EmptyBinning);
    }
    let (t0, t1) = window;
    if !(t0 < t1) {
        return Err(Error::InvalidArgument(format!("empty window ({t0}, {t1})")));
    }
    let dt = (t1 - t0) / b as f64;
    let mut bins = EventBins::zeros(stream.width, stream.height, b, window);
    for e in &stream.events {
        if e.t < t0 || e.t > t1 {
            continue;
        }
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= stream.width || y >= stream.height {
            return Err(Error::Data(format!(
                "event at ({x}, {y}) outside {}x{}",
                stream.width, stream.height
            )));
        }
        let k = ((e.t - t0) / dt - 1e-9).ceil().clamp(1.0, b as f64) as usize;
        let map = &mut bins.maps[k - 1];
        let i = y * stream.width + x;
        map.data_mut()[i] += e.polarity as f64;
    }
    Ok(bins)
}

const EVT1_MAGIC: &[u8; 4] = b"EVT1";
const EVT1_RECORD: usize = 13;

/// `EVT1`: 16-byte header (magic, u32 width, u32 height, u32 count) followed
/// by packed `(f64 t, u16 x, u16 y, i8 polarity)` records, little-endian.
pub fn encode_evt1(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + EVT1_RECORD * stream.len());
    out.extend_from_slice(EVT1_MAGIC);
    out.extend_from_slice(&(stream.width as u32).to_le_bytes());
    out.extend_from_slice(&(stream.height as u32).to_le_bytes());
    out.extend_from_slice(&(stream.len() as u32).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity as u8);
    }
    out
}

pub fn decode_evt1(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < 16 || &bytes[..4] != EVT1_MAGIC {
        return Err(Error::Data("not an EVT1 event file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (width, height, count) = (word(4), word(8), word(12));
    if bytes.len() != 16 + count * EVT1_RECORD {
        return Err(Error::Data(format!(
            "EVT1 declares {count} events but holds {} bytes of records",
            bytes.len() - 16
        )));
    }
    let events = bytes[16..]
        .chunks_exact(EVT1_RECORD)
        .map(|r| {
            let polarity = r[12] as i8;
            if polarity != 1 && polarity != -1 {
                return Err(Error::Data(format!("invalid polarity {polarity}")));
            }
            Ok(Event {
                t: f64::from_le_bytes(r[0..8].try_into().unwrap()),
                x: u16::from_le_bytes(r[8..10].try_into().unwrap()),
                y: u16::from_le_bytes(r[10..12].try_into().unwrap()),
                polarity,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EventStream {
        width,
        height,
        events,
    })
}

pub fn write_evt1(stream: &EventStream, path: &Path) -> Result<()> {
    fs::write(path, encode_evt1(stream)).map_err(|e| Error::io(path, e))
}

pub fn read_evt1(path: &Path) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_evt1(&bytes)
}

/// Debug export, one `t,x,y,p` row per event.
pub fn events_to_csv(stream: &EventStream) -> String {
    let mut s = String::from("t,x,y,p\n");
    for e in &stream.events {
        let _ = writeln!(s, "{},{},{},{}", e.t, e.x, e.y, e.polarity);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Gaussian, Quat};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn cam() -> CameraView {
        CameraView {
            rotation: Quat::IDENTITY,
            translation: [0.0, 0.0, 0.0],
            focal: [30.0, 30.0],
            principal_point: [16.0, 16.0],
            resolution: [32, 32],
        }
    }

    fn one_gaussian() -> GaussianCloud {
        GaussianCloud::new(vec![Gaussian::new(
            Vector3::new(0.0, 0.0, 3.0),
            Quat::IDENTITY,
            Vector3::new(0.15, 0.15, 0.15),
            0.9,
            Vector3::new(1.0, 1.0, 1.0),
        )
        .unwrap()])
    }

    fn mono(values: &[f64]) -> Image {
        Image::from_vec(values.len(), 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn still_trajectory_gives_identical_frames() {
        let traj = ShakeTrajectory::still(cam(), 4, 0.1);
        let frames = render_sharp_sequence(&one_gaussian(), &traj, [0.0; 3]).unwrap();
        assert_eq!(frames.len(), 5);
        assert!(frames.iter().all(|f| *f == frames[0]));
        assert_eq!(synthesize_blur(&frames).unwrap(), frames[0]);
    }

    #[test]
    fn x_translation_moves_centroid_monotonically() {
        // A +x world-to-camera translation moves the scene towards +u.
        let end = Pose::new(Quat::IDENTITY, Vector3::new(0.2, 0.0, 0.0));
        let traj = ShakeTrajectory::linear(cam(), end, 4, 0.1);
        let frames = render_sharp_sequence(&one_gaussian(), &traj, [0.0; 3]).unwrap();
        let centroid = |img: &Image| {
            let (mut s, mut sx) = (0.0, 0.0);
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let v = img.get(x, y, 0);
                    s += v;
                    sx += v * x as f64;
                }
            }
            sx / s
        };
        let cs: Vec<f64> = frames.iter().map(centroid).collect();
        assert!(cs.windows(2).all(|w| w[1] > w[0]), "{cs:?}");
        // Projection oracle on the single center: u = f·(x + t)/z + c.
        let expected_last = 30.0 * 0.2 / 3.0 + 16.0;
        assert!((cs[4] - expected_last).abs() < 0.05, "{} vs {}", cs[4], expected_last);
    }

    #[test]
    fn empty_cloud_sequence_is_background() {
        let traj = ShakeTrajectory::linear(cam(), Pose::new(Quat::IDENTITY, Vector3::new(0.1, 0.0, 0.0)), 3, 0.1);
        let frames = render_sharp_sequence(&GaussianCloud::default(), &traj, [0.3, 0.2, 0.1]).unwrap();
        assert_eq!(frames.len(), 4);
        for f in frames {
            assert_eq!(f, Image::from_color(32, 32, &[0.3, 0.2, 0.1]));
        }
    }

    #[test]
    fn blur_examples() {
        let a = mono(&[0.0, 0.2]);
        let b = mono(&[1.0, 0.4]);
        let blur = synthesize_blur(&[a.clone(), b]).unwrap();
        assert_eq!(blur.data()[0], 0.5);
        assert!((blur.data()[1] - 0.3).abs() < 1e-15);
        let consts: Vec<Image> = [0.1, 0.2, 0.6].iter().map(|c| mono(&[*c, *c])).collect();
        let m = synthesize_blur(&consts).unwrap();
        assert!(m.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert!(matches!(
            synthesize_blur(&[a, mono(&[0.0])]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn constant_frames_fire_nothing() {
        let f = mono(&[0.3, 0.7]);
        let s = synthesize_events(&[f.clone(), f.clone(), f], &[0.0, 0.5, 1.0], 0.2).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn exact_two_threshold_step_fires_two_events() {
        let theta: f64 = 0.25;
        let i0 = 0.2;
        // Build the step in the offset-log domain so it is exactly 2Θ.
        let i1 = (i0 + LOG_EPS) * (2.0 * theta).exp() - LOG_EPS;
        let s = synthesize_events(&[mono(&[i0, 0.5]), mono(&[i1, 0.5])], &[0.0, 1.0], theta).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.events.iter().all(|e| e.polarity == 1 && e.x == 0));
    }

    #[test]
    fn halving_with_ln2_threshold_fires_one_negative_event_per_pixel() {
        let theta = std::f64::consts::LN_2;
        let before = [0.8, 0.4, 0.9, 0.05];
        let after: Vec<f64> = before.iter().map(|v| (v + LOG_EPS) / 2.0 - LOG_EPS).collect();
        let s = synthesize_events(&[mono(&before), mono(&after)], &[0.0, 1.0], theta).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.events.iter().all(|e| e.polarity == -1));
        let xs: Vec<u16> = {
            let mut v: Vec<u16> = s.events.iter().map(|e| e.x).collect();
            v.sort();
            v
        };
        assert_eq!(xs, vec![0, 1, 2, 3]);
    }

    #[test]
    fn invalid_threshold_is_rejected() {
        let f = mono(&[0.3]);
        assert!(matches!(
            synthesize_events(&[f.clone(), f], &[0.0, 1.0], 0.0),
            Err(Error::InvalidContrastThreshold(_))
        ));
    }

    #[test]
    fn binning_examples() {
        let empty = EventStream::new(4, 3);
        let bins = bin_events(&empty, (0.0, 1.0), 3).unwrap();
        assert_eq!(bins.b(), 3);
        assert!(bins.maps.iter().all(|m| m.data().iter().all(|v| *v == 0.0)));

        let mut s = EventStream::new(4, 3);
        for t in [0.4, 0.45, 0.5] {
            s.events.push(Event { t, x: 2, y: 1, polarity: 1 });
        }
        let bins = bin_events(&s, (0.0, 0.75), 3).unwrap();
        assert_eq!(bins.bin(2).get(2, 1, 0), 3.0);
        assert_eq!(bins.bin(1).data().iter().sum::<f64>(), 0.0);
        assert_eq!(bins.bin(3).data().iter().sum::<f64>(), 0.0);
        assert_eq!(bins.bin(2).data().iter().sum::<f64>(), 3.0);

        assert!(matches!(bin_events(&s, (0.0, 1.0), 0), Err(Error::EmptyBinning)));
    }

    #[test]
    fn events_outside_window_are_dropped() {
        let mut s = EventStream::new(2, 2);
        s.events.push(Event { t: -0.1, x: 0, y: 0, polarity: 1 });
        s.events.push(Event { t: 1.1, x: 0, y: 0, polarity: 1 });
        s.events.push(Event { t: 0.0, x: 1, y: 1, polarity: -1 });
        let bins = bin_events(&s, (0.0, 1.0), 2).unwrap();
        assert_eq!(bins.total().data(), &[0.0, 0.0, 0.0, -1.0]);
        assert_eq!(bins.bin(1).get(1, 1, 0), -1.0);
    }

    #[test]
    fn evt1_layout() {
        let mut s = EventStream::new(640, 480);
        s.events.push(Event { t: 0.5, x: 3, y: 7, polarity: -1 });
        let bytes = encode_evt1(&s);
        assert_eq!(bytes.len(), 16 + 13);
        assert_eq!(&bytes[..4], b"EVT1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 640);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(bytes[28] as i8, -1);
        assert_eq!(decode_evt1(&bytes).unwrap(), s);
        assert!(decode_evt1(&bytes[..20]).is_err());
    }

    #[test]
    fn csv_export() {
        let mut s = EventStream::new(2, 2);
        s.events.push(Event { t: 0.25, x: 1, y: 0, polarity: 1 });
        assert_eq!(events_to_csv(&s), "t,x,y,p\n0.25,1,0,1\n");
    }

    #[test]
    fn substeps_add_intermediate_frames() {
        let mut traj = ShakeTrajectory::linear(cam(), Pose::new(Quat::IDENTITY, Vector3::new(0.1, 0.0, 0.0)), 2, 0.2);
        traj.substeps = 3;
        let dense = traj.dense_views();
        assert_eq!(dense.len(), 7);
        assert_eq!(dense[3].1, traj.view(1));
        assert!((dense[6].0 - 0.2).abs() < 1e-15);
    }

    fn arb_frames() -> impl Strategy<Value = Vec<Image>> {
        prop::collection::vec(prop::collection::vec(0.0..1.0f64, 12), 2..6)
            .prop_map(|fs| fs.into_iter().map(|d| Image::from_vec(4, 3, 1, d).unwrap()).collect())
    }

    proptest! {
        #[test]
        fn reference_level_tracking(frames in arb_frames(), theta in 0.05..1.0f64) {
            let ts: Vec<f64> = (0..frames.len()).map(|i| i as f64).collect();
            let s = synthesize_events(&frames, &ts, theta).unwrap();
            let counts = s.count_map();
            let first = frames.first().unwrap();
            let last = frames.last().unwrap();
            for i in 0..12 {
                let delta = log_intensity(last.data()[i]) - log_intensity(first.data()[i]);
                prop_assert!((delta - counts.data()[i] * theta).abs() < theta);
            }
            prop_assert!(s.events.windows(2).all(|w| w[0].t <= w[1].t));
        }

        #[test]
        fn bins_telescope(frames in arb_frames(), theta in 0.05..1.0f64, b in 1usize..7) {
            let ts: Vec<f64> = (0..frames.len()).map(|i| i as f64).collect();
            let s = synthesize_events(&frames, &ts, theta).unwrap();
            let window = (0.0, (frames.len() - 1) as f64);
            let many = bin_events(&s, window, b).unwrap();
            let one = bin_events(&s, window, 1).unwrap();
            prop_assert_eq!(many.total(), one.bin(1).clone());
            prop_assert_eq!(one.bin(1).clone(), s.count_map());
        }

        #[test]
        fn larger_threshold_never_adds_events(frames in arb_frames(), theta in 0.05..0.5f64) {
            let ts: Vec<f64> = (0..frames.len()).map(|i| i as f64).collect();
            let fine = synthesize_events(&frames, &ts, theta).unwrap();
            let coarse = synthesize_events(&frames, &ts, 2.0 * theta).unwrap();
            let per_pixel = |s: &EventStream| {
                let mut c = vec![0usize; 12];
                for e in &s.events {
                    c[e.y as usize * 4 + e.x as usize] += 1;
                }
                c
            };
            let (f, c) = (per_pixel(&fine), per_pixel(&coarse));
            for i in 0..12 {
                prop_assert!(c[i] <= f[i]);
            }
        }
    }
}
