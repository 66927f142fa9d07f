//! Deterministic synthetic echo studies.
//!
//! Each view is a sector-masked 224×224 frame with view-specific anatomy
//! (chamber layout and orientation) and disease-specific myocardium:
//! HCM has a thick, bright, asymmetric septum; CA a moderately and evenly
//! thickened wall with granular sparkle and a thin pericardial rim; NORMAL
//! thin walls with smooth texture. Multiplicative speckle is seeded per image.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::domain::{canonical_view_order, DiseaseLabel, EchoImage, PatientStudy, ViewLabel, IMAGE_SIZE};
use crate::error::Result;
use crate::ingest::manifest::{manifest_to_string, ManifestRow};
use crate::ingest::preprocess::encode_png;

const N: usize = IMAGE_SIZE;
const BLOOD: f32 = 0.03;
const TISSUE: f32 = 0.12;
const APEX: (f32, f32) = (112.0, 6.0);
const SECTOR_RADIUS: f32 = 214.0;
const SECTOR_HALF_ANGLE: f32 = 43.0 * PI / 180.0;

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = a.wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug)]
struct Appearance {
    wall: f32,
    septum: f32,
    myo_level: f32,
    septal_level: f32,
    texture: f32,
    sparkle_prob: f64,
    sparkle_gain: f32,
    rim: bool,
}

fn appearance(disease: DiseaseLabel, rng: &mut ChaCha8Rng) -> Appearance {
    match disease {
        DiseaseLabel::Normal => {
            let wall = rng.gen_range(5.0..7.0);
            Appearance {
                wall,
                septum: wall + rng.gen_range(-0.5..0.5),
                myo_level: rng.gen_range(0.46..0.54),
                septal_level: rng.gen_range(0.46..0.54),
                texture: 0.08,
                sparkle_prob: 0.0,
                sparkle_gain: 0.0,
                rim: false,
            }
        }
        DiseaseLabel::Hcm => Appearance {
            wall: rng.gen_range(9.0..12.0),
            septum: rng.gen_range(19.0..25.0),
            myo_level: rng.gen_range(0.58..0.66),
            septal_level: rng.gen_range(0.74..0.82),
            texture: 0.16,
            sparkle_prob: 0.0,
            sparkle_gain: 0.0,
            rim: false,
        },
        DiseaseLabel::Ca => {
            let wall = rng.gen_range(11.0..13.5);
            Appearance {
                wall,
                septum: wall + rng.gen_range(-1.0..1.0),
                myo_level: rng.gen_range(0.52..0.58),
                septal_level: rng.gen_range(0.52..0.58),
                texture: 0.12,
                sparkle_prob: 0.2,
                sparkle_gain: 0.35,
                rim: true,
            }
        }
    }
}

struct Canvas {
    px: Vec<f32>,
    myo: Vec<bool>,
}

impl Canvas {
    fn new() -> Self {
        Self { px: vec![TISSUE; N * N], myo: vec![false; N * N] }
    }

    fn paint(&mut self, inside: impl Fn(f32, f32) -> bool, value: f32, myo: bool) {
        for y in 0..N {
            for x in 0..N {
                if inside(x as f32, y as f32) {
                    self.px[y * N + x] = value;
                    self.myo[y * N + x] = myo;
                }
            }
        }
    }
}

/// Point-in-ellipse test with rotation `angle` (radians).
fn ellipse(cx: f32, cy: f32, rx: f32, ry: f32, angle: f32) -> impl Fn(f32, f32) -> bool {
    let (s, c) = angle.sin_cos();
    move |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
    }
}

fn in_sector(x: f32, y: f32) -> bool {
    let (dx, dy) = (x - APEX.0, y - APEX.1);
    let r = (dx * dx + dy * dy).sqrt();
    r <= SECTOR_RADIUS && dy > 0.0 && dx.atan2(dy).abs() <= SECTOR_HALF_ANGLE
}

/// Angular distance from the septal direction (image left, angle π).
fn septal_weight(dx: f32, dy: f32) -> f32 {
    let theta = dy.atan2(dx).abs(); // 0 at right, π at left
    let off = (PI - theta).to_degrees();
    if off < 40.0 {
        1.0
    } else if off < 70.0 {
        (70.0 - off) / 30.0
    } else {
        0.0
    }
}

struct Jitter {
    dx: f32,
    dy: f32,
    zoom: f32,
    tilt: f32,
}

fn draw_a4c(c: &mut Canvas, a: &Appearance, j: &Jitter) {
    let sx = 112.0 + j.dx;
    let (s, w, z) = (a.septum, a.wall, j.zoom);
    let (oy, hs) = (j.dy, s / 2.0);
    let lv = (sx + hs + 25.0 * z, 100.0 + oy, 25.0 * z, 48.0 * z);
    let rv = (sx - hs - 21.0 * z, 106.0 + oy, 21.0 * z, 40.0 * z);
    let la = (sx + hs + 22.0 * z, 173.0 + oy, 22.0 * z, 18.0 * z);
    let ra = (sx - hs - 19.0 * z, 173.0 + oy, 19.0 * z, 17.0 * z);
    if a.rim {
        c.paint(ellipse(sx, 128.0 + oy, 92.0 * z + w, 98.0 * z + w, 0.0), 0.8, false);
        c.paint(ellipse(sx, 128.0 + oy, 89.0 * z + w, 95.0 * z + w, 0.0), TISSUE, false);
    }
    for &(cx, cy, rx, ry) in &[lv, rv, la, ra] {
        c.paint(ellipse(cx, cy, rx + w, ry + w, 0.0), a.myo_level, true);
    }
    let (top, bottom) = (52.0 * z + oy + (1.0 - z) * 100.0, 152.0 + oy);
    c.paint(move |x, y| (x - sx).abs() <= hs && y >= top && y <= bottom, a.septal_level, true);
    for &(cx, cy, rx, ry) in &[lv, rv, la, ra] {
        c.paint(ellipse(cx, cy, rx, ry, 0.0), BLOOD, false);
    }
}

fn draw_plax(c: &mut Canvas, a: &Appearance, j: &Jitter) {
    let (cx, cy) = (122.0 + j.dx, 132.0 + j.dy);
    let angle = -0.12 + j.tilt;
    let (rx, ry) = (60.0 * j.zoom, 18.0 * j.zoom);
    let (s, w) = (a.septum, a.wall);
    let (sn, cs) = angle.sin_cos();
    let frame = move |x: f32, y: f32| {
        let (dx, dy) = (x - cx, y - cy);
        (cs * dx + sn * dy, -sn * dx + cs * dy)
    };
    if a.rim {
        c.paint(ellipse(cx, cy - s / 2.0, rx + w + 16.0, ry + w + s + 30.0, angle), 0.8, false);
        c.paint(ellipse(cx, cy - s / 2.0, rx + w + 13.0, ry + w + s + 27.0, angle), TISSUE, false);
    }
    c.paint(ellipse(cx, cy, rx + w, ry + w, angle), a.myo_level, true);
    c.paint(
        move |x, y| {
            let (u, v) = frame(x, y);
            u.abs() <= rx - 4.0 && v >= -(ry + s) && v <= -ry + 2.0
        },
        a.septal_level,
        true,
    );
    c.paint(
        move |x, y| {
            let (u, v) = frame(x, y);
            ((u + 6.0) / (rx - 10.0)).powi(2) + ((v + ry + s + 12.0) / 11.0).powi(2) <= 1.0
        },
        BLOOD,
        false,
    );
    let (ax, ay) = (186.0 + j.dx, 104.0 + j.dy);
    c.paint(ellipse(ax, ay, 16.0, 16.0, 0.0), a.myo_level, true);
    c.paint(ellipse(ax, ay, 13.0, 13.0, 0.0), BLOOD, false);
    let (lx, ly) = (180.0 + j.dx, 160.0 + j.dy);
    c.paint(ellipse(lx, ly, 21.0, 21.0, 0.0), a.myo_level, true);
    c.paint(ellipse(lx, ly, 18.0, 18.0, 0.0), BLOOD, false);
    c.paint(ellipse(cx, cy, rx, ry, angle), BLOOD, false);
}

fn psax_inner_radius(view: ViewLabel) -> f32 {
    match view {
        ViewLabel::PsaxMv => 40.0,
        ViewLabel::PsaxMp => 28.0,
        _ => 16.0,
    }
}

fn draw_psax(c: &mut Canvas, a: &Appearance, j: &Jitter, view: ViewLabel) {
    let (cx, cy) = (112.0 + j.dx, 128.0 + j.dy);
    let rin = psax_inner_radius(view) * j.zoom;
    let (s, w) = (a.septum, a.wall);
    if a.rim {
        let outer = rin + w.max(s) + 6.0;
        c.paint(ellipse(cx, cy, outer + 3.0, outer + 3.0, 0.0), 0.8, false);
        c.paint(ellipse(cx, cy, outer, outer, 0.0), TISSUE, false);
    }
    c.paint(ellipse(cx - rin - s - 12.0, cy - 8.0, 20.0, rin + 12.0, 0.0), BLOOD, false);
    c.paint(
        move |x, y| {
            let (dx, dy) = (x - cx, y - cy);
            let r = (dx * dx + dy * dy).sqrt();
            let t = w + (s - w) * septal_weight(dx, dy);
            r >= rin && r <= rin + t && septal_weight(dx, dy) < 0.5
        },
        a.myo_level,
        true,
    );
    c.paint(
        move |x, y| {
            let (dx, dy) = (x - cx, y - cy);
            let r = (dx * dx + dy * dy).sqrt();
            let t = w + (s - w) * septal_weight(dx, dy);
            r >= rin && r <= rin + t && septal_weight(dx, dy) >= 0.5
        },
        a.septal_level,
        true,
    );
    c.paint(ellipse(cx, cy, rin, rin, 0.0), BLOOD, false);
    match view {
        ViewLabel::PsaxMv => {
            let (la, lb) = (rin * 0.75, rin * 0.32);
            c.paint(
                move |x, y| {
                    let (dx, dy) = (x - cx, y - cy);
                    let rho = ((dx / la).powi(2) + (dy / lb).powi(2)).sqrt();
                    (rho - 1.0).abs() * lb < 2.6 && dx.abs() > 4.0
                },
                0.72,
                false,
            );
        }
        ViewLabel::PsaxMp => {
            let level = a.myo_level.max(0.6);
            c.paint(ellipse(cx - 14.0 * j.zoom, cy + 11.0 * j.zoom, 9.0, 9.0, 0.0), level, true);
            c.paint(ellipse(cx + 15.0 * j.zoom, cy + 9.0 * j.zoom, 9.0, 9.0, 0.0), level, true);
        }
        _ => {}
    }
}

fn draw_other(c: &mut Canvas, rng: &mut ChaCha8Rng) {
    match rng.gen_range(0..3) {
        0 => {
            // subcostal-like: textured liver band with chambers beneath
            let edge = rng.gen_range(70.0..100.0);
            c.paint(move |_, y| y < edge, 0.4, true);
            for _ in 0..2 {
                let (x, y) = (rng.gen_range(70.0..150.0), rng.gen_range(130.0..180.0));
                c.paint(ellipse(x, y, 30.0, 18.0, rng.gen_range(-0.6..0.6)), 0.5, true);
                c.paint(ellipse(x, y, 24.0, 13.0, rng.gen_range(-0.6..0.6)), BLOOD, false);
            }
        }
        1 => {
            // two-chamber stack along a tilted axis
            let tilt = rng.gen_range(-0.5..0.5);
            for k in 0..2 {
                let (x, y) = (112.0 + 40.0 * tilt * k as f32, 90.0 + 70.0 * k as f32);
                c.paint(ellipse(x, y, 26.0, 36.0, tilt), 0.5, true);
                c.paint(ellipse(x, y, 19.0, 29.0, tilt), BLOOD, false);
            }
        }
        _ => {
            // off-axis scan: scattered small echoes only
            for _ in 0..12 {
                let (x, y) = (rng.gen_range(40.0..184.0), rng.gen_range(30.0..200.0));
                let r = rng.gen_range(3.0..9.0);
                c.paint(ellipse(x, y, r, r, 0.0), rng.gen_range(0.3..0.7), false);
            }
        }
    }
}

fn finish(c: Canvas, a: Option<&Appearance>, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let gain: f32 = rng.gen_range(0.92..1.08);
    let mut out = vec![0.0f32; N * N];
    for y in 0..N {
        for x in 0..N {
            let i = y * N + x;
            let n1: f32 = rng.sample(StandardNormal);
            let n2: f32 = rng.sample(StandardNormal);
            if !in_sector(x as f32, y as f32) {
                continue;
            }
            let base = c.px[i];
            let mut v = if c.myo[i] {
                let tex = a.map_or(0.12, |a| a.texture);
                let mut m = base * (1.0 + tex * n1);
                if let Some(a) = a {
                    if a.sparkle_prob > 0.0 && rng.gen_bool(a.sparkle_prob) {
                        m += a.sparkle_gain;
                    }
                }
                m
            } else {
                base * (1.0 + 0.35 * n1)
            };
            v += 0.02 * n2;
            let dx = x as f32 - APEX.0;
            let dy = y as f32 - APEX.1;
            let depth = (dx * dx + dy * dy).sqrt() / SECTOR_RADIUS;
            out[i] = (v * gain * (1.0 - 0.2 * depth)).clamp(0.0, 1.0);
        }
    }
    out
}

fn jitter(rng: &mut ChaCha8Rng) -> Jitter {
    Jitter {
        dx: rng.gen_range(-4.0..4.0),
        dy: rng.gen_range(-4.0..4.0),
        zoom: rng.gen_range(0.95..1.05),
        tilt: rng.gen_range(-0.08..0.08),
    }
}

fn render_view(view: ViewLabel, app: &Appearance, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = jitter(&mut rng);
    let mut c = Canvas::new();
    match view {
        ViewLabel::A4c => draw_a4c(&mut c, app, &j),
        ViewLabel::Plax => draw_plax(&mut c, app, &j),
        ViewLabel::PsaxMv | ViewLabel::PsaxMp | ViewLabel::PsaxAc => draw_psax(&mut c, app, &j, view),
        ViewLabel::Other => draw_other(&mut c, &mut rng),
    }
    finish(c, Some(app), &mut rng)
}

pub fn synth_patient_id(seed: u64, disease: DiseaseLabel) -> String {
    format!("{}-{seed}", disease.as_str())
}

/// A complete five-view study, bit-identical for equal `(seed, disease)`.
pub fn synth_study(seed: u64, disease: DiseaseLabel) -> PatientStudy {
    let key = mix(seed, disease.index() as u64 + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let app = appearance(disease, &mut rng);
    let pid = synth_patient_id(seed, disease);
    let views: BTreeMap<_, _> = canonical_view_order()
        .into_iter()
        .map(|v| {
            let px = render_view(v, &app, mix(key, v.index() as u64 + 11));
            let img = EchoImage::from_pixels(N, N, px).expect("square").with_meta(&pid, Some(v));
            (v, img)
        })
        .collect();
    PatientStudy { patient_id: pid, views, disease }
}

/// A frame that belongs to none of the five canonical views.
pub fn synth_other_view(seed: u64) -> EchoImage {
    let key = mix(seed, 97);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let app = appearance(DiseaseLabel::ALL[rng.gen_range(0..3)], &mut rng);
    let px = render_view(ViewLabel::Other, &app, mix(key, 5));
    EchoImage::from_pixels(N, N, px).expect("square").with_meta(&format!("OTHER-{seed}"), Some(ViewLabel::Other))
}

/// Fixed region covering the interventricular septum of a view at nominal position.
pub fn septal_band_mask(view: ViewLabel) -> Vec<bool> {
    let mut mask = vec![false; N * N];
    for y in 0..N {
        for x in 0..N {
            let (xf, yf) = (x as f32, y as f32);
            mask[y * N + x] = match view {
                ViewLabel::A4c => (xf - 112.0).abs() <= 5.0 && (60.0..=140.0).contains(&yf),
                ViewLabel::Plax => {
                    let (sn, cs) = (-0.12f32).sin_cos();
                    let (dx, dy) = (xf - 122.0, yf - 132.0);
                    let (u, v) = (cs * dx + sn * dy, -sn * dx + cs * dy);
                    u.abs() <= 40.0 && (-30.0..=-20.0).contains(&v)
                }
                ViewLabel::PsaxMv | ViewLabel::PsaxMp | ViewLabel::PsaxAc => {
                    let (dx, dy) = (xf - 112.0, yf - 128.0);
                    let r = (dx * dx + dy * dy).sqrt();
                    let rin = psax_inner_radius(view);
                    r >= rin + 2.0 && r <= rin + 12.0 && septal_weight(dx, dy) >= 1.0
                }
                ViewLabel::Other => false,
            };
        }
    }
    mask
}

/// Mean intensity of `img` over the view's septal band.
pub fn septal_band_mean(img: &EchoImage, view: ViewLabel) -> f64 {
    let mask = septal_band_mask(view);
    let (s, n) = img
        .pixels
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .fold((0.0f64, 0usize), |(s, n), (&p, _)| (s + p as f64, n + 1));
    s / n.max(1) as f64
}

/// Study seeds used by the dataset emitter; patient `i` of class `d`.
pub fn cohort_seed(seed: u64, disease: DiseaseLabel, i: usize) -> u64 {
    mix(seed, (disease.index() as u64) << 32 | i as u64) % 1_000_000_000
}

/// `n_per_class` studies per disease, in class-major order.
pub fn synth_cohort(n_per_class: usize, seed: u64) -> Vec<PatientStudy> {
    let keys: Vec<_> =
        DiseaseLabel::ALL.iter().flat_map(|&d| (0..n_per_class).map(move |i| (d, i))).collect();
    keys.par_iter().map(|&(d, i)| synth_study(cohort_seed(seed, d, i), d)).collect()
}

/// Writes `images/<patient>/<VIEW>.png` for every study (plus one OTHER frame per
/// patient) and `manifest.csv` under `out_dir`. Output bytes depend only on the arguments.
pub fn write_synthetic_dataset(out_dir: &Path, n_per_class: usize, seed: u64) -> Result<Vec<ManifestRow>> {
    let studies = synth_cohort(n_per_class, seed);
    let per_study: Vec<Result<Vec<ManifestRow>>> = studies
        .par_iter()
        .map(|study| {
            let rel_dir = format!("images/{}", study.patient_id);
            std::fs::create_dir_all(out_dir.join(&rel_dir))?;
            let mut rows = Vec::new();
            let other = synth_other_view(mix(cohort_seed(seed, study.disease, 0), study.patient_id.len() as u64) ^ hash_str(&study.patient_id));
            let frames = study.views.iter().map(|(&v, img)| (v, img)).chain(std::iter::once((ViewLabel::Other, &other)));
            for (view, img) in frames {
                let rel = format!("{rel_dir}/{}.png", view.as_str());
                std::fs::write(out_dir.join(&rel), encode_png(img)?)?;
                rows.push(ManifestRow {
                    patient_id: study.patient_id.clone(),
                    image_path: rel,
                    view,
                    disease: Some(study.disease),
                    split: None,
                });
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_study {
        rows.extend(r?);
    }
    std::fs::write(out_dir.join("manifest.csv"), manifest_to_string(&rows)?)?;
    Ok(rows)
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
