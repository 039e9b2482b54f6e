//! Image files: 8-bit sRGB PNG for inspection and a raw little-endian float
//! dump (`FIMG`) for lossless round-trips.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

const FIMG_MAGIC: &[u8; 4] = b"FIMG";
const FIMG_VERSION: u32 = 1;

pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (linear_to_srgb(v) * 255.0).round() as u8)
        .collect();
    let color = if img.channels() == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

pub fn load_png(path: &Path) -> Result<Image> {
    let dynimg =
        image::open(path).map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, raw) = match dynimg {
        image::DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        other => (3, other.to_rgb8().into_raw()),
    };
    let data = raw
        .into_iter()
        .map(|b| srgb_to_linear(b as f64 / 255.0))
        .collect();
    Image::from_vec(w, h, channels, data)
}

pub fn encode_raw(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + img.data().len() * 8);
    out.extend_from_slice(FIMG_MAGIC);
    out.extend_from_slice(&FIMG_VERSION.to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.channels() as u32).to_le_bytes());
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 20 || &bytes[..4] != FIMG_MAGIC {
        return Err(Error::Data("not a FIMG raw image".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FIMG_VERSION {
        return Err(Error::Data(format!("unsupported FIMG version {version}")));
    }
    let (w, h, c) = (word(8) as usize, word(12) as usize, word(16) as usize);
    let n = w * h * c;
    if bytes.len() != 20 + 8 * n {
        return Err(Error::Data(format!(
            "FIMG payload is {} bytes, expected {}",
            bytes.len() - 20,
            8 * n
        )));
    }
    let data = bytes[20..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Image::from_vec(w, h, c, data)
}

pub fn save_raw(img: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_raw(img)).map_err(|e| Error::io(path, e))
}

pub fn load_raw(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes)
}

/// Loads a raw dump when the path ends in `.fimg`, a PNG otherwise.
pub fn load_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("fimg") => load_raw(path),
        _ => load_png(path),
    }
}
