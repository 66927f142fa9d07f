//! Photometric and geometric augmentations used to expand the minority class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{DiseaseLabel, EchoImage, PatientStudy};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AugmentationKind {
    Rotate15,
    GaussianBlur,
    ContrastUp,
    Brighten,
    Dim,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 5] = [
        AugmentationKind::Rotate15,
        AugmentationKind::GaussianBlur,
        AugmentationKind::ContrastUp,
        AugmentationKind::Brighten,
        AugmentationKind::Dim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationKind::Rotate15 => "ROTATE15",
            AugmentationKind::GaussianBlur => "GAUSSIAN_BLUR",
            AugmentationKind::ContrastUp => "CONTRAST_UP",
            AugmentationKind::Brighten => "BRIGHTEN",
            AugmentationKind::Dim => "DIM",
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Magnitudes for each augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugParams {
    pub rotation_deg: f64,
    pub blur_sigma: f64,
    pub contrast_factor: f32,
    pub brightness_delta: f32,
}

impl Default for AugParams {
    fn default() -> Self {
        Self { rotation_deg: 15.0, blur_sigma: 1.0, contrast_factor: 1.3, brightness_delta: 0.15 }
    }
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / s) as f32).collect()
}

/// Separable Gaussian blur with edge replication.
fn blur(px: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                k.iter().enumerate().map(|(i, &kv)| kv * px[y * w + clampi(x as isize + i as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                k.iter().enumerate().map(|(i, &kv)| kv * tmp[clampi(y as isize + i as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Counter-clockwise rotation about the image center, zero fill outside.
fn rotate(px: &[f32], w: usize, h: usize, degrees: f64) -> Vec<f32> {
    let theta = degrees.to_radians();
    let (s, c) = theta.sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            // inverse map: image y axis points down, so a visual CCW turn is a
            // clockwise turn in raster coordinates
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            let top = px[y0 * w + x0] * (1.0 - fx) + px[y0 * w + x1] * fx;
            let bot = px[y1 * w + x0] * (1.0 - fx) + px[y1 * w + x1] * fx;
            out[y * w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

pub fn augment_image(img: &EchoImage, kind: AugmentationKind, params: &AugParams) -> EchoImage {
    let (w, h) = (img.width, img.height);
    let px = &img.pixels;
    let pixels: Vec<f32> = match kind {
        AugmentationKind::Rotate15 => rotate(px, w, h, params.rotation_deg),
        AugmentationKind::GaussianBlur => blur(px, w, h, params.blur_sigma),
        AugmentationKind::ContrastUp => {
            let mean = img.mean() as f32;
            px.iter().map(|&p| (p - mean) * params.contrast_factor + mean).collect()
        }
        AugmentationKind::Brighten => px.iter().map(|&p| p + params.brightness_delta).collect(),
        AugmentationKind::Dim => px.iter().map(|&p| p - params.brightness_delta).collect(),
    };
    let mut out = img.clone();
    out.pixels = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
    out.augmentation_tag = Some(match &img.augmentation_tag {
        Some(prev) => format!("{prev}+{kind}"),
        None => kind.to_string(),
    });
    out
}

/// Applies one augmentation to all five views of a study.
pub fn augment_study(study: &PatientStudy, kind: AugmentationKind, params: &AugParams) -> PatientStudy {
    PatientStudy {
        patient_id: format!("{}+{}", study.patient_id, kind),
        views: study.views.iter().map(|(&v, img)| (v, augment_image(img, kind, params))).collect(),
        disease: study.disease,
    }
}

/// Each CA study plus one copy per augmentation kind: output is six times the input.
pub fn expand_minority_class(studies: &[PatientStudy], params: &AugParams) -> Result<Vec<PatientStudy>> {
    if let Some(s) = studies.iter().find(|s| s.disease != DiseaseLabel::Ca) {
        return Err(Error::invalid(format!("study {} is {}, expected CA", s.patient_id, s.disease)));
    }
    let mut out = Vec::with_capacity(studies.len() * 6);
    for s in studies {
        out.push(s.clone());
        out.extend(AugmentationKind::ALL.iter().map(|&k| augment_study(s, k, params)));
    }
    Ok(out)
}
