//! Decoding and conforming raw frames to 224×224 unit-range grayscale.

use std::path::Path;

use image::{DynamicImage, GenericImageView, ImageFormat};

use crate::domain::{EchoImage, IMAGE_SIZE};
use crate::error::{Error, Result};

/// Rec.601 luma weights.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Bilinear resampling with pixel-center alignment and edge clamping.
///
/// A same-size resize is the identity.
pub fn resize_bilinear(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    assert_eq!(src.len(), sw * sh);
    let axis = |d: usize, s: usize, dn: usize| -> (usize, usize, f32) {
        let pos = ((d as f64 + 0.5) * s as f64 / dn as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(s - 1);
        (i0, i1, (pos - i0 as f64) as f32)
    };
    let xs: Vec<_> = (0..dw).map(|x| axis(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (y0, y1, fy) = axis(y, sh, dh);
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Resizes to 224×224 and clamps to `[0, 1]`, keeping patient id and view.
pub fn conform(img: &EchoImage) -> Result<EchoImage> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::invalid("zero-area image"));
    }
    let pixels = if img.width == IMAGE_SIZE && img.height == IMAGE_SIZE {
        img.pixels.clone()
    } else {
        resize_bilinear(&img.pixels, img.width, img.height, IMAGE_SIZE, IMAGE_SIZE)
    };
    let mut out = img.clone();
    out.width = IMAGE_SIZE;
    out.height = IMAGE_SIZE;
    out.pixels = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
    Ok(out)
}

fn to_gray(img: &DynamicImage) -> Vec<f32> {
    match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.as_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect(),
    }
}

/// Decodes JPG/PNG bytes into a conforming [`EchoImage`].
pub fn preprocess_image(bytes: &[u8]) -> Result<EchoImage> {
    let decoded = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    let (w, h) = decoded.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::invalid("zero-area image"));
    }
    let gray = EchoImage::from_pixels(w as usize, h as usize, to_gray(&decoded))?;
    conform(&gray)
}

pub fn load_image(path: &Path) -> Result<EchoImage> {
    let bytes = std::fs::read(path)?;
    let mut img = preprocess_image(&bytes).map_err(|e| match e {
        Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
        other => other,
    })?;
    img.source_path = path.display().to_string();
    Ok(img)
}

/// 8-bit grayscale PNG encoding of an image's pixels.
pub fn encode_png(img: &EchoImage) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| Error::shape("pixel buffer does not match dimensions"))?;
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out.into_inner())
}
