//! Static PNG renderings: confusion matrices, scatter plots and heatmap overlays.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use crate::domain::EchoImage;
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::explain::Heatmap;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

// 3×5 bitmaps for 0-9, one row per 3-bit group, top to bottom.
const DIGITS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

fn encode(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out.into_inner())
}

fn draw_number(img: &mut RgbImage, n: u64, cx: u32, cy: u32, scale: u32, color: Rgb<u8>) {
    let s = n.to_string();
    let w = s.len() as u32 * 4 * scale - scale;
    let (x0, y0) = (cx.saturating_sub(w / 2), cy.saturating_sub(5 * scale / 2));
    for (k, ch) in s.bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3u32 {
                if bits >> (2 - col) & 1 == 1 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let x = x0 + (k as u32 * 4 + col) * scale + dx;
                            let y = y0 + row as u32 * scale + dy;
                            if x < img.width() && y < img.height() {
                                img.put_pixel(x, y, color);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cells shaded by row-normalized rate, annotated with counts.
pub fn confusion_png(cm: &ConfusionMatrix) -> Result<Vec<u8>> {
    let k = cm.classes() as u32;
    let cell = 56;
    let mut img = RgbImage::from_pixel(k * cell, k * cell, Rgb([255, 255, 255]));
    let rates = cm.rates();
    for t in 0..k {
        for p in 0..k {
            let r = rates[t as usize][p as usize];
            let shade = Rgb([(255.0 * (1.0 - 0.85 * r)) as u8, (255.0 * (1.0 - 0.6 * r)) as u8, 255]);
            for y in t * cell + 1..(t + 1) * cell - 1 {
                for x in p * cell + 1..(p + 1) * cell - 1 {
                    img.put_pixel(x, y, shade);
                }
            }
            let ink = if r > 0.5 { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) };
            draw_number(&mut img, cm.counts[t as usize][p as usize], p * cell + cell / 2, t * cell + cell / 2, 3, ink);
        }
    }
    encode(&img)
}

/// Points coloured by label index, fitted into a square canvas.
pub fn scatter_png(points: &[[f64; 2]], labels: &[usize], side: u32) -> Result<Vec<u8>> {
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let margin = 12.0;
    let span = |d: usize| (hi[d] - lo[d]).max(1e-12);
    for (p, &l) in points.iter().zip(labels) {
        let x = margin + (p[0] - lo[0]) / span(0) * (side as f64 - 2.0 * margin);
        let y = margin + (hi[1] - p[1]) / span(1) * (side as f64 - 2.0 * margin);
        let c = Rgb(PALETTE[l % PALETTE.len()]);
        for dy in -3i64..=3 {
            for dx in -3i64..=3 {
                if dx * dx + dy * dy <= 9 {
                    let (px, py) = (x as i64 + dx, y as i64 + dy);
                    if (0..side as i64).contains(&px) && (0..side as i64).contains(&py) {
                        img.put_pixel(px as u32, py as u32, c);
                    }
                }
            }
        }
    }
    encode(&img)
}

/// Jet colormap on `[0, 1]`.
pub fn jet(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |c: f64| ((1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0) * 255.0) as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Half-transparent jet heatmap over the grayscale frame.
pub fn overlay_png(img: &EchoImage, heat: &Heatmap) -> Result<Vec<u8>> {
    if img.width != heat.width || img.height != heat.height {
        return Err(Error::shape("heatmap and image sizes differ"));
    }
    let mut out = RgbImage::new(img.width as u32, img.height as u32);
    for (i, (&g, &h)) in img.pixels.iter().zip(&heat.values).enumerate() {
        let c = jet(h);
        let gray = g as f64 * 255.0;
        let mix = |k: usize| (0.5 * gray + 0.5 * c[k] as f64) as u8;
        out.put_pixel((i % img.width) as u32, (i / img.width) as u32, Rgb([mix(0), mix(1), mix(2)]));
    }
    encode(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0, 0, 127]);
        assert_eq!(jet(1.0), [127, 0, 0]);
    }
}
