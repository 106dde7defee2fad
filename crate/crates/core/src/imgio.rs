//! Image tensors and PNG I/O.
//!
//! In-memory images are channel-first `ndarray` arrays:
//! RGB `[3, H, W]` and RGBA `[4, H, W]` in `[0, 1]`, network images in
//! `[-1, 1]`, binary masks `[H, W]` in `{0, 1}`, and two-channel masks
//! `[2, H, W]` (channel 0 = glasses region, channel 1 = face shape).
//!
//! On disk everything is 8-bit PNG. The two-channel mask is stored as
//! gray+alpha with values 0/255. Quantization happens in exactly one
//! place ([`quantize_u8`]) so that emitted datasets are bit-reproducible.

use std::path::Path;

use image::{GrayAlphaImage, GrayImage, ImageReader, RgbImage, RgbaImage};
use ndarray::{Array2, Array3};

use crate::{CoreError, Result};

/// Map `[0,1]` to `0..=255` with round-half-up and saturation.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Map an 8-bit channel back to `[0,1]`.
#[inline]
pub fn dequantize_u8(b: u8) -> f32 {
    f32::from(b) / 255.0
}

/// `[0,1]` RGB to `[-1,1]`.
pub fn rgb01_to_pm1(img: &Array3<f32>) -> Array3<f32> {
    img.mapv(|v| v * 2.0 - 1.0)
}

/// `[-1,1]` RGB to `[0,1]`, clamped.
pub fn pm1_to_rgb01(img: &Array3<f32>) -> Array3<f32> {
    img.mapv(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

pub fn save_rgb01_png(path: &Path, img: &Array3<f32>) -> Result<()> {
    let (c, h, w) = img.dim();
    if c != 3 {
        return Err(CoreError::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize_u8(img[[0, y, x]]),
                quantize_u8(img[[1, y, x]]),
                quantize_u8(img[[2, y, x]]),
            ];
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    out.save(path).map_err(|e| CoreError::image(path, e))
}

pub fn load_rgb01_png(path: &Path) -> Result<Array3<f32>> {
    let img = ImageReader::open(path)
        .map_err(|e| CoreError::io(path, e))?
        .decode()
        .map_err(|e| CoreError::image(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = dequantize_u8(px.0[c]);
        }
    }
    Ok(out)
}

/// Save a `[-1,1]` image (converted through `[0,1]`).
pub fn save_pm1_png(path: &Path, img: &Array3<f32>) -> Result<()> {
    save_rgb01_png(path, &pm1_to_rgb01(img))
}

pub fn load_pm1_png(path: &Path) -> Result<Array3<f32>> {
    Ok(rgb01_to_pm1(&load_rgb01_png(path)?))
}

pub fn save_rgba01_png(path: &Path, img: &Array3<f32>) -> Result<()> {
    let (c, h, w) = img.dim();
    if c != 4 {
        return Err(CoreError::Shape(format!("expected 4 channels, got {c}")));
    }
    let mut out = RgbaImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize_u8(img[[0, y, x]]),
                quantize_u8(img[[1, y, x]]),
                quantize_u8(img[[2, y, x]]),
                quantize_u8(img[[3, y, x]]),
            ];
            out.put_pixel(x as u32, y as u32, image::Rgba(px));
        }
    }
    out.save(path).map_err(|e| CoreError::image(path, e))
}

pub fn load_rgba01_png(path: &Path) -> Result<Array3<f32>> {
    let img = ImageReader::open(path)
        .map_err(|e| CoreError::io(path, e))?
        .decode()
        .map_err(|e| CoreError::image(path, e))?
        .to_rgba8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::zeros((4, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..4 {
            out[[c, y as usize, x as usize]] = dequantize_u8(px.0[c]);
        }
    }
    Ok(out)
}

/// Two-channel binary mask as gray+alpha PNG, 0/255.
pub fn save_mask2_png(path: &Path, mask: &Array3<u8>) -> Result<()> {
    let (c, h, w) = mask.dim();
    if c != 2 {
        return Err(CoreError::Shape(format!(
            "expected 2 mask channels, got {c}"
        )));
    }
    let mut out = GrayAlphaImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let g = if mask[[0, y, x]] != 0 { 255 } else { 0 };
            let f = if mask[[1, y, x]] != 0 { 255 } else { 0 };
            out.put_pixel(x as u32, y as u32, image::LumaA([g, f]));
        }
    }
    out.save(path).map_err(|e| CoreError::image(path, e))
}

pub fn load_mask2_png(path: &Path) -> Result<Array3<u8>> {
    let img = ImageReader::open(path)
        .map_err(|e| CoreError::io(path, e))?
        .decode()
        .map_err(|e| CoreError::image(path, e))?
        .to_luma_alpha8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::zeros((2, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        out[[0, y as usize, x as usize]] = u8::from(px.0[0] >= 128);
        out[[1, y as usize, x as usize]] = u8::from(px.0[1] >= 128);
    }
    Ok(out)
}

/// Single-channel binary mask as grayscale PNG, 0/255.
pub fn save_mask_png(path: &Path, mask: &Array2<u8>) -> Result<()> {
    let (h, w) = mask.dim();
    let mut out = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = if mask[[y, x]] != 0 { 255 } else { 0 };
            out.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    out.save(path).map_err(|e| CoreError::image(path, e))
}

pub fn load_mask_png(path: &Path) -> Result<Array2<u8>> {
    let img = ImageReader::open(path)
        .map_err(|e| CoreError::io(path, e))?
        .decode()
        .map_err(|e| CoreError::image(path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array2::zeros((h, w));
    for (x, y, px) in img.enumerate_pixels() {
        out[[y as usize, x as usize]] = u8::from(px.0[0] >= 128);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn quantize_round_trip_is_exact_on_quantized_values() {
        for b in 0..=255u8 {
            assert_eq!(quantize_u8(dequantize_u8(b)), b);
        }
    }

    #[test]
    fn rgb_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = Array3::from_shape_fn((3, 5, 7), |(c, y, x)| {
            dequantize_u8(((c * 83 + y * 17 + x * 3) % 256) as u8)
        });
        save_rgb01_png(&path, &img).unwrap();
        let back = load_rgb01_png(&path).unwrap();
        assert_eq!(back.dim(), (3, 5, 7));
        assert_eq!(img, back);
    }

    #[test]
    fn mask2_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = Array3::from_shape_fn((2, 4, 6), |(c, y, x)| ((c + y + x) % 2) as u8);
        save_mask2_png(&path, &mask).unwrap();
        assert_eq!(load_mask2_png(&path).unwrap(), mask);
    }
}
