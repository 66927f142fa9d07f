//! Classical classifiers over pooled study vectors: one-vs-rest linear SVM and
//! logistic regression, a Gini random forest, and multinomial gradient-boosted trees.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DiseaseLabel, NUM_DISEASES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassifierKind {
    LinearSvm,
    Logistic,
    RandomForest,
    GradientBoosted,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] =
        [ClassifierKind::LinearSvm, ClassifierKind::Logistic, ClassifierKind::RandomForest, ClassifierKind::GradientBoosted];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::LinearSvm => "LINEAR_SVM",
            ClassifierKind::Logistic => "LOGISTIC",
            ClassifierKind::RandomForest => "RANDOM_FOREST",
            ClassifierKind::GradientBoosted => "GRADIENT_BOOSTED",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltClassifierParams {
    pub svm_c: f64,
    pub logistic_lambda: f64,
    pub forest_trees: usize,
    pub boost_rounds: usize,
    pub boost_depth: usize,
    pub boost_shrinkage: f64,
    pub seed: u64,
}

impl Default for AltClassifierParams {
    fn default() -> Self {
        Self {
            svm_c: 1.0,
            logistic_lambda: 1e-4,
            forest_trees: 100,
            boost_rounds: 100,
            boost_depth: 3,
            boost_shrinkage: 0.1,
            seed: 0,
        }
    }
}

/// Per-feature standardization fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Scaler {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Scaler {
    fn fit(x: &[Vec<f64>]) -> Self {
        let (n, d) = (x.len() as f64, x[0].len());
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in x {
            for j in 0..d {
                var[j] += (row[j] - mean[j]).powi(2) / n;
            }
        }
        let inv_std = var.iter().map(|&v| if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Self { mean, inv_std }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.inv_std).map(|((v, m), s)| (v - m) * s).collect()
    }
}

/// One-vs-rest linear scores `w_k·x + b_k` on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvrLinear {
    scaler: Scaler,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl OvrLinear {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = self.scaler.apply(x);
        self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, &z) + b).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dual coordinate descent for the L2-regularized hinge-loss SVM; the bias is an
/// extra constant feature. Labels are ±1.
fn svm_binary(x: &[Vec<f64>], y: &[f64], c: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let n = x.len();
    let q: Vec<f64> = x.iter().map(|r| dot(r, r) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..2000 {
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let g = y[i] * (dot(&w, &x[i]) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (alpha[i] - g / q[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y[i];
                for (wj, xj) in w.iter_mut().zip(&x[i]) {
                    *wj += delta * xj;
                }
                b += delta;
            }
        }
        if pg_max - pg_min < 1e-4 {
            break;
        }
    }
    (w, b)
}

/// L2-regularized logistic regression by gradient descent with backtracking.
fn logistic_binary(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let (n, d) = (x.len() as f64, x[0].len());
    let objective = |w: &[f64], b: f64| -> f64 {
        let loss: f64 = x
            .iter()
            .zip(y)
            .map(|(r, &t)| {
                let z = dot(w, r) + b;
                // log(1 + exp(-t z)) computed stably
                let m = -t * z;
                if m > 0.0 {
                    m + (-m).exp().ln_1p()
                } else {
                    m.exp().ln_1p()
                }
            })
            .sum();
        loss / n + 0.5 * lambda * dot(w, w)
    };
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut step = 1.0;
    let mut f = objective(&w, b);
    for _ in 0..3000 {
        let mut gw: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
        let mut gb = 0.0;
        for (r, &t) in x.iter().zip(y) {
            let z = dot(&w, r) + b;
            let s = -t / (1.0 + (t * z).exp()) / n;
            for (g, v) in gw.iter_mut().zip(r) {
                *g += s * v;
            }
            gb += s;
        }
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2.sqrt() < 1e-7 {
            break;
        }
        step *= 2.0;
        loop {
            let w2: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - step * g).collect();
            let b2 = b - step * gb;
            let f2 = objective(&w2, b2);
            if f2 <= f - 0.5 * step * gnorm2 || step < 1e-12 {
                w = w2;
                b = b2;
                f = f2;
                break;
            }
            step *= 0.5;
        }
    }
    (w, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(Vec<f64>),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

enum Target<'a> {
    /// Class indices; leaves hold class frequencies.
    Class(&'a [usize], usize),
    /// Regression residuals; leaves hold `leaf_value(indices)`.
    Residual(&'a [f64]),
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    /// Sample indices sorted by each feature.
    order: &'a [Vec<usize>],
    target: Target<'a>,
    max_depth: Option<usize>,
    features_per_split: usize,
}

impl TreeBuilder<'_> {
    fn impurity_sum(&self, stats: &[f64], w: f64) -> f64 {
        match self.target {
            // weighted Gini: w · (1 − Σ p²)
            Target::Class(..) => w - stats.iter().map(|c| c * c).sum::<f64>() / w,
            // SSE: Σy² − (Σy)²/w
            Target::Residual(_) => stats[1] - stats[0] * stats[0] / w,
        }
    }

    fn stat_len(&self) -> usize {
        match self.target {
            Target::Class(_, k) => k,
            Target::Residual(_) => 2,
        }
    }

    fn add_stat(&self, stats: &mut [f64], i: usize, w: f64) {
        match self.target {
            Target::Class(y, _) => stats[y[i]] += w,
            Target::Residual(r) => {
                stats[0] += w * r[i];
                stats[1] += w * r[i] * r[i];
            }
        }
    }

    fn build(
        &self,
        counts: Vec<u32>,
        depth: usize,
        nodes: &mut Vec<Node>,
        rng: &mut ChaCha8Rng,
        leaf_value: &dyn Fn(&[u32]) -> Vec<f64>,
    ) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf(Vec::new()));
        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        let mut all = vec![0.0; self.stat_len()];
        for (i, &c) in counts.iter().enumerate() {
            if c > 0 {
                self.add_stat(&mut all, i, c as f64);
            }
        }
        let parent = self.impurity_sum(&all, total);
        let depth_ok = self.max_depth.map_or(true, |m| depth < m);
        let mut best: Option<(f64, usize, f64)> = None;
        if depth_ok && total >= 2.0 && parent > 1e-12 {
            let d = self.x[0].len();
            let features: Vec<usize> = if self.features_per_split >= d {
                (0..d).collect()
            } else {
                sample(rng, d, self.features_per_split).into_vec()
            };
            for f in features {
                let mut left = vec![0.0; self.stat_len()];
                let mut wl = 0.0;
                let mut prev: Option<f64> = None;
                for &i in &self.order[f] {
                    let c = counts[i];
                    if c == 0 {
                        continue;
                    }
                    let v = self.x[i][f];
                    if let Some(p) = prev {
                        if v > p {
                            let right: Vec<f64> = all.iter().zip(&left).map(|(a, l)| a - l).collect();
                            let score = self.impurity_sum(&left, wl) + self.impurity_sum(&right, total - wl);
                            if best.map_or(true, |(s, ..)| score < s - 1e-12) {
                                best = Some((score, f, 0.5 * (p + v)));
                            }
                        }
                    }
                    self.add_stat(&mut left, i, c as f64);
                    wl += c as f64;
                    prev = Some(v);
                }
            }
        }
        match best {
            Some((score, feature, threshold)) if score < parent - 1e-12 => {
                let mut lc = vec![0u32; counts.len()];
                let mut rc = vec![0u32; counts.len()];
                for (i, &c) in counts.iter().enumerate() {
                    if c > 0 {
                        if self.x[i][feature] <= threshold {
                            lc[i] = c;
                        } else {
                            rc[i] = c;
                        }
                    }
                }
                let left = self.build(lc, depth + 1, nodes, rng, leaf_value);
                let right = self.build(rc, depth + 1, nodes, rng, leaf_value);
                nodes[id] = Node::Split { feature, threshold, left, right };
            }
            _ => nodes[id] = Node::Leaf(leaf_value(&counts)),
        }
        id
    }
}

fn sorted_orders(x: &[Vec<f64>]) -> Vec<Vec<usize>> {
    (0..x[0].len())
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            idx
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    init: Vec<f64>,
    shrinkage: f64,
    /// `rounds × classes` regression trees.
    trees: Vec<Vec<Tree>>,
}

impl Boosted {
    fn raw(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.init.clone();
        for round in &self.trees {
            for (k, t) in round.iter().enumerate() {
                f[k] += self.shrinkage * t.leaf(x)[0];
            }
        }
        f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FittedClassifier {
    LinearSvm(OvrLinear),
    Logistic(OvrLinear),
    RandomForest(Forest),
    GradientBoosted(Boosted),
}

impl FittedClassifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            FittedClassifier::LinearSvm(_) => ClassifierKind::LinearSvm,
            FittedClassifier::Logistic(_) => ClassifierKind::Logistic,
            FittedClassifier::RandomForest(_) => ClassifierKind::RandomForest,
            FittedClassifier::GradientBoosted(_) => ClassifierKind::GradientBoosted,
        }
    }

    /// Class scores; larger is more likely.
    pub fn scores(&self, x: &[f32]) -> Vec<f64> {
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        match self {
            FittedClassifier::LinearSvm(m) | FittedClassifier::Logistic(m) => m.scores(&x),
            FittedClassifier::RandomForest(f) => {
                let mut acc = vec![0.0; f.classes];
                for t in &f.trees {
                    for (a, p) in acc.iter_mut().zip(t.leaf(&x)) {
                        *a += p;
                    }
                }
                acc.iter().map(|a| a / f.trees.len() as f64).collect()
            }
            FittedClassifier::GradientBoosted(b) => b.raw(&x),
        }
    }

    pub fn predict_index(&self, x: &[f32]) -> usize {
        crate::domain::argmax(&self.scores(x))
    }

    pub fn predict(&self, x: &[f32]) -> DiseaseLabel {
        DiseaseLabel::from_index(self.predict_index(x)).expect("three classes")
    }
}

fn check_inputs(x: &[Vec<f32>], y: &[DiseaseLabel]) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid(format!("{} samples with {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::shape("zero-dimensional features"));
    }
    if let Some((i, r)) = x.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(Error::shape(format!("sample {i} has {} features, expected {d}", r.len())));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier features".into()));
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::invalid("training labels contain a single class"));
    }
    Ok(())
}

pub fn fit_alt_classifier(
    kind: ClassifierKind,
    x: &[Vec<f32>],
    y: &[DiseaseLabel],
    params: &AltClassifierParams,
) -> Result<FittedClassifier> {
    check_inputs(x, y)?;
    let x: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let yi: Vec<usize> = y.iter().map(|l| l.index()).collect();
    let k = NUM_DISEASES;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    Ok(match kind {
        ClassifierKind::LinearSvm | ClassifierKind::Logistic => {
            let scaler = Scaler::fit(&x);
            let z: Vec<Vec<f64>> = x.iter().map(|r| scaler.apply(r)).collect();
            let mut weights = Vec::with_capacity(k);
            let mut bias = Vec::with_capacity(k);
            for c in 0..k {
                let t: Vec<f64> = yi.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
                let (w, b) = if kind == ClassifierKind::LinearSvm {
                    svm_binary(&z, &t, params.svm_c, &mut rng)
                } else {
                    logistic_binary(&z, &t, params.logistic_lambda)
                };
                weights.push(w);
                bias.push(b);
            }
            let m = OvrLinear { scaler, weights, bias };
            if kind == ClassifierKind::LinearSvm {
                FittedClassifier::LinearSvm(m)
            } else {
                FittedClassifier::Logistic(m)
            }
        }
        ClassifierKind::RandomForest => {
            let order = sorted_orders(&x);
            let d = x[0].len();
            let builder = TreeBuilder {
                x: &x,
                order: &order,
                target: Target::Class(&yi, k),
                max_depth: None,
                features_per_split: ((d as f64).sqrt().round() as usize).max(1),
            };
            let leaf = |counts: &[u32]| {
                let mut dist = vec![0.0; k];
                for (i, &c) in counts.iter().enumerate() {
                    dist[yi[i]] += c as f64;
                }
                let s: f64 = dist.iter().sum();
                dist.iter().map(|v| v / s).collect()
            };
            let trees = (0..params.forest_trees.max(1))
                .map(|_| {
                    let mut counts = vec![0u32; x.len()];
                    for _ in 0..x.len() {
                        counts[rng.gen_range(0..x.len())] += 1;
                    }
                    let mut nodes = Vec::new();
                    builder.build(counts, 0, &mut nodes, &mut rng, &leaf);
                    Tree { nodes }
                })
                .collect();
            FittedClassifier::RandomForest(Forest { trees, classes: k })
        }
        ClassifierKind::GradientBoosted => {
            let order = sorted_orders(&x);
            let n = x.len();
            let d = x[0].len();
            let prior: Vec<f64> = (0..k).map(|c| (yi.iter().filter(|&&l| l == c).count() as f64 + 1e-3) / n as f64).collect();
            let init: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
            let mut f: Vec<Vec<f64>> = vec![init.clone(); n];
            let mut trees = Vec::with_capacity(params.boost_rounds);
            let kf = k as f64;
            for _ in 0..params.boost_rounds {
                let probs: Vec<Vec<f64>> = f
                    .iter()
                    .map(|row| {
                        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                        let s: f64 = e.iter().sum();
                        e.into_iter().map(|v| v / s).collect()
                    })
                    .collect();
                let mut round = Vec::with_capacity(k);
                for c in 0..k {
                    let r: Vec<f64> = (0..n).map(|i| (yi[i] == c) as u8 as f64 - probs[i][c]).collect();
                    let builder = TreeBuilder {
                        x: &x,
                        order: &order,
                        target: Target::Residual(&r),
                        max_depth: Some(params.boost_depth),
                        features_per_split: d,
                    };
                    let leaf = |counts: &[u32]| {
                        let (mut num, mut den) = (0.0, 0.0);
                        for (i, &cnt) in counts.iter().enumerate() {
                            if cnt > 0 {
                                num += r[i];
                                den += r[i].abs() * (1.0 - r[i].abs());
                            }
                        }
                        vec![if den > 1e-12 { (kf - 1.0) / kf * num / den } else { 0.0 }]
                    };
                    let mut nodes = Vec::new();
                    builder.build(vec![1; n], 0, &mut nodes, &mut rng, &leaf);
                    let tree = Tree { nodes };
                    for (i, row) in x.iter().enumerate() {
                        f[i][c] += params.boost_shrinkage * tree.leaf(row)[0];
                    }
                    round.push(tree);
                }
                trees.push(round);
            }
            FittedClassifier::GradientBoosted(Boosted { init, shrinkage: params.boost_shrinkage, trees })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(centers: &[(f64, f64)], n: usize, spread: f64, seed: u64) -> (Vec<Vec<f32>>, Vec<DiseaseLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..n {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                x.push(vec![(cx + spread * a) as f32, (cy + spread * b) as f32]);
                y.push(DiseaseLabel::from_index(c).unwrap());
            }
        }
        (x, y)
    }

    fn accuracy(m: &FittedClassifier, x: &[Vec<f32>], y: &[DiseaseLabel]) -> f64 {
        x.iter().zip(y).filter(|(r, &l)| m.predict(r) == l).count() as f64 / x.len() as f64
    }

    #[test]
    fn svm_separates_two_blobs() {
        let (x, y) = blobs(&[(-3.0, 0.0), (3.0, 0.0)], 40, 0.7, 1);
        let m = fit_alt_classifier(ClassifierKind::LinearSvm, &x, &y, &AltClassifierParams::default()).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn every_kind_learns_three_blobs() {
        let centers = [(0.0, 3.0), (-2.6, -1.5), (2.6, -1.5)];
        let (x, y) = blobs(&centers, 40, 0.8, 2);
        let (xt, yt) = blobs(&centers, 100, 0.8, 3);
        for kind in ClassifierKind::ALL {
            let m = fit_alt_classifier(kind, &x, &y, &AltClassifierParams::default()).unwrap();
            assert!(accuracy(&m, &xt, &yt) >= 0.9, "{kind:?}");
        }
    }

    #[test]
    fn constant_labels_and_ragged_rows_are_rejected() {
        let x = vec![vec![0.0f32, 1.0], vec![1.0, 0.0]];
        let y = vec![DiseaseLabel::Ca; 2];
        assert!(fit_alt_classifier(ClassifierKind::Logistic, &x, &y, &AltClassifierParams::default()).is_err());
        let ragged = vec![vec![0.0f32, 1.0], vec![1.0]];
        let y2 = vec![DiseaseLabel::Ca, DiseaseLabel::Hcm];
        assert!(matches!(
            fit_alt_classifier(ClassifierKind::RandomForest, &ragged, &y2, &AltClassifierParams::default()),
            Err(Error::Shape(_))
        ));
    }
}
