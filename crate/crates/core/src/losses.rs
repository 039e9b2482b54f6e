//! Training objectives. Every loss returns its value together with the
//! gradient with respect to its image argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_sim::{EventBins, LOG_EPS};
use crate::image::{luminance, luminance_backward, mean_of, Image};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_dssim: f64,
    pub lambda_event: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dssim: 0.2,
            lambda_event: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(Error::Config(format!(
                "lambda_dssim must lie in [0, 1], got {}",
                self.lambda_dssim
            )));
        }
        if !(self.lambda_event >= 0.0) || !self.lambda_event.is_finite() {
            return Err(Error::Config(format!(
                "lambda_event must be non-negative, got {}",
                self.lambda_event
            )));
        }
        if self.lambda_event > 1.0 {
            log::warn!("lambda_event = {} exceeds 1", self.lambda_event);
        }
        Ok(())
    }
}

/// A scalar loss and its gradient with respect to one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Image,
}

pub fn average_latents(renders: &[Image]) -> Result<Image> {
    mean_of(renders)
}

/// Gradient reaching each latent from a gradient on the average.
pub fn average_latents_backward(grad: &Image, n: usize) -> Image {
    grad.scale(1.0 / n as f64)
}

/// Sliding window: `weights` is `size_x × size_y`, placed at every offset
/// where it fits inside the image.
struct Window {
    size_x: usize,
    size_y: usize,
    weights: Vec<f64>,
}

impl Window {
    fn for_image(w: usize, h: usize) -> Window {
        if w >= SSIM_WINDOW && h >= SSIM_WINDOW {
            let half = (SSIM_WINDOW / 2) as f64;
            let g: Vec<f64> = (0..SSIM_WINDOW)
                .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
                .collect();
            let s: f64 = g.iter().sum();
            let g: Vec<f64> = g.iter().map(|v| v / s).collect();
            let weights = (0..SSIM_WINDOW * SSIM_WINDOW)
                .map(|i| g[i / SSIM_WINDOW] * g[i % SSIM_WINDOW])
                .collect();
            Window {
                size_x: SSIM_WINDOW,
                size_y: SSIM_WINDOW,
                weights,
            }
        } else {
            // Too small for a window: one set of global statistics.
            let n = (w * h) as f64;
            Window {
                size_x: w,
                size_y: h,
                weights: vec![1.0 / n; w * h],
            }
        }
    }
}

/// Mean SSIM of one channel pair and, optionally, its gradient w.r.t. `a`.
fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Vec<f64>) {
    let win = Window::for_image(w, h);
    let nx = w - win.size_x + 1;
    let ny = h - win.size_y + 1;
    let n = (nx * ny) as f64;
    let mut total = 0.0;
    // Per-center coefficients of the gradient expansion.
    let mut coef = if want_grad { vec![[0.0; 3]; nx * ny] } else { Vec::new() };
    for oy in 0..ny {
        for ox in 0..nx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..win.size_y {
                let row = (oy + wy) * w + ox;
                let wrow = &win.weights[wy * win.size_x..(wy + 1) * win.size_x];
                for (wx, &wt) in wrow.iter().enumerate() {
                    let (va, vb) = (a[row + wx], b[row + wx]);
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let n1 = 2.0 * ma * mb + SSIM_C1;
            let n2 = 2.0 * cov + SSIM_C2;
            let d1 = ma * ma + mb * mb + SSIM_C1;
            let d2 = var_a + var_b + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                let ds_dma = 2.0 * mb * n2 / (d1 * d2) - s * 2.0 * ma / d1;
                let ds_dvar = -s / d2;
                let ds_dcov = 2.0 * n1 / (d1 * d2);
                // dS/da[q] = w(q)·(α + 2β·a[q] + γ·b[q])
                let alpha = ds_dma - 2.0 * ma * ds_dvar - mb * ds_dcov;
                coef[oy * nx + ox] = [alpha / n, ds_dvar / n, ds_dcov / n];
            }
        }
    }
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; w * h];
        for oy in 0..ny {
            for ox in 0..nx {
                let [alpha, beta, gamma] = coef[oy * nx + ox];
                for wy in 0..win.size_y {
                    let row = (oy + wy) * w + ox;
                    let wrow = &win.weights[wy * win.size_x..(wy + 1) * win.size_x];
                    for (wx, &wt) in wrow.iter().enumerate() {
                        let q = row + wx;
                        grad[q] += wt * (alpha + 2.0 * beta * a[q] + gamma * b[q]);
                    }
                }
            }
        }
    }
    (total / n, grad)
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.check_same_shape(b)?;
    let (w, h, c) = a.shape();
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("SSIM of an empty image".into()));
    }
    let mut sum = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h, c));
    for ch in 0..c {
        let (ca, cb) = (a.channel(ch), b.channel(ch));
        let (s, g) = ssim_channel(ca.data(), cb.data(), w, h, want_grad);
        sum += s;
        if let Some(out) = grad.as_mut() {
            let data = out.data_mut();
            for (i, v) in g.into_iter().enumerate() {
                data[i * c + ch] = v / c as f64;
            }
        }
    }
    Ok((sum / c as f64, grad))
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ = 1.5), averaged over
/// channels. Images smaller than the window use global statistics.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<LossGrad> {
    let (value, grad) = ssim_impl(a, b, true)?;
    Ok(LossGrad {
        value,
        grad: grad.expect("gradient requested"),
    })
}

/// `(1 − SSIM(a, b)) / 2` and its gradient with respect to `a`.
pub fn dssim(a: &Image, b: &Image) -> Result<LossGrad> {
    let s = ssim_with_grad(a, b)?;
    Ok(LossGrad {
        value: (1.0 - s.value) / 2.0,
        grad: s.grad.scale(-0.5),
    })
}

/// Mean absolute error with gradient w.r.t. `a`; the subgradient at
/// equality is 0.
pub fn mae(a: &Image, b: &Image) -> Result<LossGrad> {
    a.check_same_shape(b)?;
    let n = a.data().len().max(1) as f64;
    let value = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n;
    let grad = a.zip_map(b, |x, y| {
        if x > y {
            1.0 / n
        } else if x < y {
            -1.0 / n
        } else {
            0.0
        }
    })?;
    Ok(LossGrad { value, grad })
}

/// `(1 − λ)·MAE + λ·D-SSIM` between the estimated and observed blurry frames.
pub fn blur_loss(est: &Image, observed: &Image, w: &LossWeights) -> Result<LossGrad> {
    let l1 = mae(est, observed)?;
    let lam = w.lambda_dssim;
    if lam == 0.0 {
        return Ok(l1);
    }
    let ds = dssim(est, observed)?;
    let grad = l1.grad.zip_map(&ds.grad, |g1, g2| (1.0 - lam) * g1 + lam * g2)?;
    Ok(LossGrad {
        value: (1.0 - lam) * l1.value + lam * ds.value,
        grad,
    })
}

/// Measured log-intensity change over the exposure, `Θ·Σ_k B_k`.
pub fn measured_event_map(bins: &EventBins, theta: f64) -> Image {
    bins.total().scale(theta)
}

/// `ln(lum(last) + ε) − ln(lum(first) + ε)`.
pub fn estimated_event_map(first: &Image, last: &Image) -> Result<Image> {
    first.check_same_shape(last)?;
    luminance(last).zip_map(&luminance(first), |l, f| {
        (l + LOG_EPS).ln() - (f + LOG_EPS).ln()
    })
}

/// Pulls a gradient on the estimated map back to `(first, last)`.
pub fn estimated_event_map_backward(
    first: &Image,
    last: &Image,
    grad: &Image,
) -> Result<(Image, Image)> {
    first.check_same_shape(last)?;
    let (lf, ll) = (luminance(first), luminance(last));
    lf.check_same_shape(grad)?;
    let gl = ll.zip_map(grad, |l, g| g / (l + LOG_EPS))?;
    let gf = lf.zip_map(grad, |f, g| -g / (f + LOG_EPS))?;
    let c = first.channels();
    Ok((luminance_backward(&gf, c), luminance_backward(&gl, c)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventMaps {
    pub measured: Image,
    pub estimated: Image,
}

/// Mean absolute error between the maps, with gradient w.r.t. `estimated`.
pub fn event_loss(maps: &EventMaps) -> Result<LossGrad> {
    mae(&maps.estimated, &maps.measured)
}

pub fn total_loss(lb: f64, le: f64, w: &LossWeights) -> f64 {
    lb + w.lambda_event * le
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn textured(w: usize, h: usize, c: usize, phase: f64) -> Image {
        let data = (0..w * h * c)
            .map(|i| 0.5 + 0.4 * ((i as f64) * 0.37 + phase).sin())
            .collect();
        Image::from_vec(w, h, c, data).unwrap()
    }

    #[test]
    fn average_examples() {
        let a = textured(4, 4, 3, 0.0);
        assert_eq!(average_latents(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
        let g = Image::filled(4, 4, 3, 1.0);
        assert!(average_latents_backward(&g, 5).data().iter().all(|v| *v == 0.2));
    }

    #[test]
    fn ssim_of_identical_is_one() {
        for (w, h) in [(16, 16), (5, 7)] {
            let a = textured(w, h, 3, 0.3);
            assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            assert!(dssim(&a, &a).unwrap().value.abs() < 1e-12);
        }
    }

    #[test]
    fn dssim_of_inverse_is_in_range() {
        let a = textured(16, 16, 3, 0.0);
        let inv = a.map(|v| 1.0 - v);
        let d = dssim(&a, &inv).unwrap().value;
        assert!(d > 0.0 && d <= 1.0, "{d}");
    }

    #[test]
    fn constant_images_match_means_only_formula() {
        for (w, h) in [(16, 16), (6, 6)] {
            let delta = 0.1;
            let a = Image::filled(w, h, 1, 0.5);
            let b = Image::filled(w, h, 1, 0.5 + delta);
            let (ma, mb) = (0.5f64, 0.5 + delta);
            let expected = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
            assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = textured(16, 16, 3, 0.0);
        let b = textured(16, 16, 3, 1.3);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn blur_loss_examples() {
        let obs = textured(16, 16, 3, 0.0);
        let w = LossWeights::default();
        assert_eq!(blur_loss(&obs, &obs, &w).unwrap().value, 0.0);

        let shifted = obs.map(|v| v + 0.1);
        let pure = LossWeights { lambda_dssim: 0.0, ..w };
        assert!((blur_loss(&shifted, &obs, &pure).unwrap().value - 0.1).abs() < 1e-12);

        // Weighting: 0.8·L1 + 0.2·D-SSIM.
        let l1 = mae(&shifted, &obs).unwrap().value;
        let ds = dssim(&shifted, &obs).unwrap().value;
        let v = blur_loss(&shifted, &obs, &w).unwrap().value;
        assert!((v - (0.8 * l1 + 0.2 * ds)).abs() < 1e-14);
        assert!((0.8f64 * 0.1 + 0.2 * 0.05 - 0.09).abs() < 1e-15);
    }

    #[test]
    fn blur_loss_rejects_mismatch() {
        let w = LossWeights::default();
        assert!(matches!(
            blur_loss(&Image::new(4, 4, 3), &Image::new(4, 5, 3), &w),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn event_map_examples() {
        let bins = EventBins::zeros(3, 3, 4, (0.0, 1.0));
        assert!(measured_event_map(&bins, 0.25).data().iter().all(|v| *v == 0.0));

        let mut bins = EventBins::zeros(2, 1, 3, (0.0, 1.0));
        bins.maps[0].data_mut()[1] = 2.0;
        bins.maps[2].data_mut()[1] = 1.0;
        assert_eq!(measured_event_map(&bins, 0.25).data()[1], 0.75);

        let first = textured(4, 4, 3, 0.0);
        let e = estimated_event_map(&first, &first).unwrap();
        assert!(e.data().iter().all(|v| *v == 0.0));

        let bright = Image::filled(4, 4, 3, 0.4);
        let double = bright.scale(2.0);
        let e = estimated_event_map(&bright, &double).unwrap();
        // ε shifts the ratio by at most ε/I relative.
        let tol = LOG_EPS / 0.4;
        assert!(e.data().iter().all(|v| (v - 2f64.ln()).abs() < tol));
    }

    #[test]
    fn event_loss_examples() {
        let m = textured(4, 4, 1, 0.0);
        let same = EventMaps { measured: m.clone(), estimated: m.clone() };
        let l = event_loss(&same).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|g| *g == 0.0));
        let off = EventMaps { measured: m.clone(), estimated: m.map(|v| v + 0.2) };
        assert!((event_loss(&off).unwrap().value - 0.2).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights { lambda_dssim: 0.2, lambda_event: 0.2 };
        assert!((total_loss(0.09, 0.5, &w) - 0.19).abs() < 1e-15);
        let none = LossWeights { lambda_event: 0.0, ..w };
        assert_eq!(total_loss(0.09, 0.5, &none), 0.09);
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { lambda_dssim: 1.5, lambda_event: 0.1 }.validate().is_err());
        assert!(LossWeights { lambda_dssim: 0.2, lambda_event: 2.0 }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn ssim_in_range(
            a in prop::collection::vec(0.0..1.0f64, 256),
            b in prop::collection::vec(0.0..1.0f64, 256),
        ) {
            let a = Image::from_vec(16, 16, 1, a).unwrap();
            let b = Image::from_vec(16, 16, 1, b).unwrap();
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn event_loss_shift_invariant(
            m in prop::collection::vec(-1.0..1.0f64, 16),
            e in prop::collection::vec(-1.0..1.0f64, 16),
            c in -2.0..2.0f64,
        ) {
            let m = Image::from_vec(4, 4, 1, m).unwrap();
            let e = Image::from_vec(4, 4, 1, e).unwrap();
            let l0 = event_loss(&EventMaps { measured: m.clone(), estimated: e.clone() }).unwrap().value;
            let l1 = event_loss(&EventMaps {
                measured: m.map(|v| v + c),
                estimated: e.map(|v| v + c),
            }).unwrap().value;
            prop_assert!((l0 - l1).abs() < 1e-12);
        }

        #[test]
        fn total_loss_is_linear_in_event_term(lb in 0.0..1.0f64, le in 0.0..1.0f64, d in 0.0..1.0f64, lam in 0.0..1.0f64) {
            let w = LossWeights { lambda_dssim: 0.2, lambda_event: lam };
            prop_assert!((total_loss(lb, le + d, &w) - total_loss(lb, le, &w) - lam * d).abs() < 1e-12);
        }
    }
}
