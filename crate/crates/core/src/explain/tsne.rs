//! Exact t-SNE and the silhouette score used to judge cluster separation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self { perplexity: 30.0, iterations: 1000, learning_rate: 200.0, exaggeration: 12.0, exaggeration_iters: 250, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<String>,
    /// KL(P‖Q) after every iteration.
    pub kl_history: Vec<f64>,
}

impl Embedding2D {
    /// `x,y,label` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,label\n");
        for (p, l) in self.points.iter().zip(&self.labels) {
            out.push_str(&format!("{},{},{}\n", p[0], p[1], l));
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian conditional `p_{j|i}` over squared distances `d` (self excluded)
/// at precision `beta`; returns the row and its Shannon entropy in nats.
fn row_at(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let dmin = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d.iter().enumerate().map(|(j, &v)| if j == i { 0.0 } else { (-(v - dmin) * beta).exp() }).collect();
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    let h = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
    (p, h)
}

/// Per-point conditionals whose entropy matches `ln(perplexity)`, found by
/// bisection on the precision. Rows sum to 1. Returns `(rows, entropies)`.
pub fn conditional_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("t-SNE needs at least two points"));
    }
    if !(perplexity > 1.0 && perplexity < (n - 1) as f64) {
        return Err(Error::invalid(format!("perplexity {perplexity} must lie in (1, {})", n - 1)));
    }
    let target = perplexity.ln();
    let mut rows = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        let d: Vec<f64> = x.iter().map(|xj| sq_dist(&x[i], xj)).collect();
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        let (mut p, mut h) = row_at(&d, i, beta);
        for _ in 0..200 {
            if (h - target).abs() < 1e-10 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            (p, h) = row_at(&d, i, beta);
        }
        rows.push(p);
        entropies.push(h);
    }
    Ok((rows, entropies))
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (a / b.max(1e-300)).ln()).sum()
}

/// Embeds `features` (one row per point) in two dimensions.
pub fn tsne_embed(features: &[Vec<f64>], labels: &[String], cfg: &TsneConfig) -> Result<Embedding2D> {
    let n = features.len();
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} points", labels.len())));
    }
    let dim = features.first().map_or(0, Vec::len);
    if dim < 2 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::shape("t-SNE features must share one dimension ≥ 2"));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE input".into()));
    }
    if features.iter().all(|f| f == &features[0]) {
        return Err(Error::invalid("degenerate input: all points identical"));
    }
    let (cond, _) = conditional_affinities(features, cfg.perplexity)?;
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-2).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0f64; n * n];
    let mut q = vec![0.0f64; n * n];
    let mut kl_history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let early = it < cfg.exaggeration_iters;
        let (exag, momentum) = if early { (cfg.exaggeration, 0.5) } else { (1.0, 0.8) };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                    1.0 / (1.0 + dx * dx + dy * dy)
                };
                num[i * n + j] = v;
                z += v;
            }
        }
        for (qv, &nv) in q.iter_mut().zip(&num) {
            *qv = (nv / z).max(1e-12);
        }
        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let m = (exag * p[i * n + j] - q[i * n + j]) * num[i * n + j];
                grad[0] += 4.0 * m * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                let same = (grad[d] > 0.0) == (update[i][d] > 0.0);
                gains[i][d] = if same { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 }.max(0.01);
                update[i][d] = momentum * update[i][d] - cfg.learning_rate * gains[i][d] * grad[d];
            }
        }
        for (yi, ui) in y.iter_mut().zip(&update) {
            yi[0] += ui[0];
            yi[1] += ui[1];
        }
        let mean = y.iter().fold([0.0, 0.0], |m, v| [m[0] + v[0] / n as f64, m[1] + v[1] / n as f64]);
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
        kl_history.push(kl(&p, &q));
    }
    Ok(Embedding2D { points: y, labels: labels.to_vec(), kl_history })
}

/// Mean silhouette coefficient of a labelled point set (Euclidean distance).
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let n = points.len();
    if labels.len() != n || n < 2 {
        return Err(Error::invalid("silhouette needs ≥ 2 labelled points"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("silhouette needs at least two clusters"));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![(0.0f64, 0usize); classes.len()];
        for j in 0..n {
            if i != j {
                let c = classes.binary_search(&labels[j]).expect("known class");
                sums[c].0 += sq_dist(&points[i], &points[j]).sqrt();
                sums[c].1 += 1;
            }
        }
        let own = classes.binary_search(&labels[i]).expect("known class");
        if sums[own].1 == 0 {
            continue;
        }
        let a = sums[own].0 / sums[own].1 as f64;
        let b = sums
            .iter()
            .enumerate()
            .filter(|&(c, s)| c != own && s.1 > 0)
            .map(|(_, s)| s.0 / s.1 as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}
