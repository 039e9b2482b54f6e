//! Linear-light float images.

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image. Values are linear intensity; they are
/// only clamped to `[0, 1]` when exported.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "images have 1 or 3 channels");
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Fills every pixel with `color` (length must equal `channels`).
    pub fn from_color(width: usize, height: usize, color: &[f64]) -> Self {
        let mut img = Image::new(width, height, color.len());
        for px in img.data.chunks_exact_mut(color.len()) {
            px.copy_from_slice(color);
        }
        img
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_shape(other)?;
        Ok(Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Image) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts a single channel as a one-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels);
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }
}

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Per-pixel `0.299 R + 0.587 G + 0.114 B`. Single-channel input is returned
/// unchanged.
pub fn luminance(img: &Image) -> Image {
    if img.channels() == 1 {
        return img.clone();
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
        .collect();
    Image::from_vec(img.width(), img.height(), 1, data).expect("shape preserved")
}

/// Adjoint of [`luminance`]: spreads a one-channel gradient back onto RGB.
pub fn luminance_backward(grad: &Image, channels: usize) -> Image {
    if channels == 1 {
        return grad.clone();
    }
    let mut out = Image::new(grad.width(), grad.height(), 3);
    for (o, g) in out.data_mut().chunks_exact_mut(3).zip(grad.data()) {
        for c in 0..3 {
            o[c] = LUMA_WEIGHTS[c] * g;
        }
    }
    out
}

/// Pixelwise mean of same-shape images, written as `I₀ + Σ(Iᵢ − I₀)/n` so a
/// stack of identical images averages to the first one bit-for-bit.
pub fn mean_of(images: &[Image]) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of zero images".into()))?;
    for img in &images[1..] {
        if !img.same_shape(first) {
            return Err(Error::ShapeMismatch(format!(
                "frame shape mismatch: {:?} vs {:?}",
                first.shape(),
                img.shape()
            )));
        }
    }
    let n = images.len() as f64;
    let mut out = first.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let base = first.data()[i];
        let dev: f64 = images[1..].iter().map(|img| img.data()[i] - base).sum();
        *o = base + dev / n;
    }
    Ok(out)
}
