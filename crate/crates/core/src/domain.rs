//! Label vocabularies, canonical ordering and the value types shared by every stage.
//!
//! Class indices are fixed: views `A4C=0 .. PSAX_AC=4, OTHER=5`, diseases
//! `HCM=0, CA=1, NORMAL=2`. Confusion matrices from different runs are
//! therefore directly comparable.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of every preprocessed frame.
pub const IMAGE_SIZE: usize = 224;
/// Channels of one view's trunk output in the full-width trunk.
pub const FEATURE_CHANNELS: usize = 512;
/// Spatial side of one view's trunk output for a 224×224 input.
pub const FEATURE_SIDE: usize = 7;
pub const NUM_CANONICAL_VIEWS: usize = 5;
pub const NUM_VIEW_CLASSES: usize = 6;
pub const NUM_DISEASES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewLabel {
    #[serde(rename = "A4C")]
    A4c,
    #[serde(rename = "PLAX")]
    Plax,
    #[serde(rename = "PSAX_MV")]
    PsaxMv,
    #[serde(rename = "PSAX_MP")]
    PsaxMp,
    #[serde(rename = "PSAX_AC")]
    PsaxAc,
    #[serde(rename = "OTHER")]
    Other,
}

impl ViewLabel {
    pub const ALL: [ViewLabel; NUM_VIEW_CLASSES] = [
        ViewLabel::A4c,
        ViewLabel::Plax,
        ViewLabel::PsaxMv,
        ViewLabel::PsaxMp,
        ViewLabel::PsaxAc,
        ViewLabel::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewLabel::A4c => "A4C",
            ViewLabel::Plax => "PLAX",
            ViewLabel::PsaxMv => "PSAX_MV",
            ViewLabel::PsaxMp => "PSAX_MP",
            ViewLabel::PsaxAc => "PSAX_AC",
            ViewLabel::Other => "OTHER",
        }
    }

    pub fn is_canonical(self) -> bool {
        self != ViewLabel::Other
    }
}

impl fmt::Display for ViewLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown view {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiseaseLabel {
    #[serde(rename = "HCM")]
    Hcm,
    #[serde(rename = "CA")]
    Ca,
    #[serde(rename = "NORMAL")]
    Normal,
}

impl DiseaseLabel {
    pub const ALL: [DiseaseLabel; NUM_DISEASES] = [DiseaseLabel::Hcm, DiseaseLabel::Ca, DiseaseLabel::Normal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiseaseLabel::Hcm => "HCM",
            DiseaseLabel::Ca => "CA",
            DiseaseLabel::Normal => "NORMAL",
        }
    }
}

impl fmt::Display for DiseaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DiseaseLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown disease {s:?}")))
    }
}

/// The five standard views in fusion order.
pub fn canonical_view_order() -> [ViewLabel; NUM_CANONICAL_VIEWS] {
    [ViewLabel::A4c, ViewLabel::Plax, ViewLabel::PsaxMv, ViewLabel::PsaxMp, ViewLabel::PsaxAc]
}

/// One grayscale frame. Pixels are row-major with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub patient_id: String,
    pub source_path: String,
    pub view: Option<ViewLabel>,
    pub augmentation_tag: Option<String>,
}

impl EchoImage {
    /// Builds an image of arbitrary size; use [`EchoImage::check`] to enforce the 224×224 contract.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            patient_id: String::new(),
            source_path: String::new(),
            view: None,
            augmentation_tag: None,
        })
    }

    pub fn constant(value: f32) -> Self {
        Self::from_pixels(IMAGE_SIZE, IMAGE_SIZE, vec![value; IMAGE_SIZE * IMAGE_SIZE]).expect("square image")
    }

    pub fn with_meta(mut self, patient_id: &str, view: Option<ViewLabel>) -> Self {
        self.patient_id = patient_id.to_string();
        self.view = view;
        self
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len().max(1) as f64
    }

    /// Human-readable violations of the shape/range contract, empty when conforming.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.width != IMAGE_SIZE || self.height != IMAGE_SIZE {
            out.push(format!(
                "shape {}x{} differs from {IMAGE_SIZE}x{IMAGE_SIZE}",
                self.width, self.height
            ));
        }
        if self.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            out.push("intensity outside [0,1]".to_string());
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        match self.violations().first() {
            None => Ok(()),
            Some(v) => Err(Error::shape(v.clone())),
        }
    }
}

/// One patient's five canonical views plus the disease label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientStudy {
    pub patient_id: String,
    pub views: BTreeMap<ViewLabel, EchoImage>,
    pub disease: DiseaseLabel,
}

impl PatientStudy {
    pub fn view(&self, v: ViewLabel) -> Result<&EchoImage> {
        self.views.get(&v).ok_or(Error::MissingView(v))
    }

    /// Swaps the images held in two view slots.
    pub fn swap_views(&mut self, a: ViewLabel, b: ViewLabel) {
        let ia = self.views.remove(&a);
        let ib = self.views.remove(&b);
        if let Some(img) = ia {
            self.views.insert(b, img);
        }
        if let Some(img) = ib {
            self.views.insert(a, img);
        }
    }
}

/// Checks the inclusion criterion (all five views) and per-image contracts.
pub fn validate_study(study: &PatientStudy) -> std::result::Result<(), Vec<String>> {
    let mut findings = Vec::new();
    for v in canonical_view_order() {
        match study.views.get(&v) {
            None => findings.push(format!("missing view {v}")),
            Some(img) => findings.extend(img.violations().into_iter().map(|m| format!("{v}: {m}"))),
        }
    }
    if study.views.contains_key(&ViewLabel::Other) {
        findings.push("unexpected OTHER view in study".to_string());
    }
    if findings.is_empty() {
        Ok(())
    } else {
        Err(findings)
    }
}

/// Per-view trunk activation, stored channels-first as `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub view: ViewLabel,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    /// `(H, W, C)`.
    pub fn hwc(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }
}

/// Channel concatenation of per-view maps, `[views·C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedFeature {
    pub patient_id: String,
    pub views: Vec<ViewLabel>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FusedFeature {
    pub fn hwc(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Channel block belonging to the `k`-th fused view.
    pub fn block(&self, k: usize) -> &[f32] {
        let per = self.channels / self.views.len();
        let hw = self.height * self.width;
        &self.data[k * per * hw..(k + 1) * per * hw]
    }
}

/// Class scores, probabilities and the argmax label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub label: usize,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        let probabilities = softmax(&logits)?;
        let label = argmax(&logits);
        Ok(Self { logits, probabilities, label })
    }

    pub fn view(&self) -> Option<ViewLabel> {
        ViewLabel::from_index(self.label)
    }

    pub fn disease(&self) -> Option<DiseaseLabel> {
        DiseaseLabel::from_index(self.label)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Max-shifted softmax; rejects non-finite inputs.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of empty vector"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / s).collect())
}
