//! Truncated 18-layer residual trunk and channel fusion of per-view maps.
//!
//! The trunk keeps the stem, the max-pool and the four stages of two basic
//! blocks; global pooling and the classifier are absent, so a 224×224 input
//! ends as a 7×7 map with `widths[3]` channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::domain::{canonical_view_order, EchoImage, FeatureMap, FusedFeature, ViewLabel};
use crate::error::{Error, Result};
use crate::init::he_normal;
use crate::tensor::{Real, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrunkConfig {
    /// Output channels of the four stages; the stem uses `widths[0]`.
    pub widths: [usize; 4],
}

impl TrunkConfig {
    pub fn resnet18() -> Self {
        Self { widths: [64, 128, 256, 512] }
    }

    pub fn tiny() -> Self {
        Self { widths: [4, 8, 16, 32] }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "resnet18" => Ok(Self::resnet18()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown trunk preset {other:?}"))),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.widths[3]
    }

    /// Spatial side of the output map for a square input of side `input`.
    pub fn out_side(&self, input: usize) -> usize {
        let mut s = conv_side(input, 7, 2, 3);
        s = conv_side(s, 3, 2, 1);
        for _ in 1..4 {
            s = conv_side(s, 3, 2, 1);
        }
        s
    }
}

fn conv_side(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

#[derive(Clone, Copy, Debug)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Debug)]
struct BlockIds {
    stride: usize,
    conv1: ParamId,
    bn1: BnIds,
    conv2: ParamId,
    bn2: BnIds,
    down: Option<(ParamId, BnIds)>,
}

/// Handles into a [`ParamStore`] for one trunk; the store may hold several trunks
/// under different name prefixes.
#[derive(Clone, Debug)]
pub struct ResTrunk {
    pub config: TrunkConfig,
    pub prefix: String,
    stem: ParamId,
    stem_bn: BnIds,
    blocks: Vec<BlockIds>,
}

/// Intermediate activations of one trunk pass.
pub struct TrunkOutput {
    /// Post-stem, post-pool map.
    pub stem: Var,
    /// Output of each basic block in order (8 for four stages).
    pub blocks: Vec<Var>,
    /// Final map `[1, C, h, w]`.
    pub features: Var,
}

enum Spec {
    Conv(usize, usize, usize),
    Bn(usize),
}

fn layout(cfg: &TrunkConfig) -> Vec<(String, Spec)> {
    let mut v = vec![("conv1".to_string(), Spec::Conv(cfg.widths[0], 3, 7)), ("bn1".into(), Spec::Bn(cfg.widths[0]))];
    let mut in_ch = cfg.widths[0];
    for (s, &w) in cfg.widths.iter().enumerate() {
        for b in 0..2 {
            let p = format!("layer{}.{b}", s + 1);
            let c_in = if b == 0 { in_ch } else { w };
            v.push((format!("{p}.conv1"), Spec::Conv(w, c_in, 3)));
            v.push((format!("{p}.bn1"), Spec::Bn(w)));
            v.push((format!("{p}.conv2"), Spec::Conv(w, w, 3)));
            v.push((format!("{p}.bn2"), Spec::Bn(w)));
            if b == 0 && (s > 0 || c_in != w) {
                v.push((format!("{p}.downsample.0"), Spec::Conv(w, c_in, 1)));
                v.push((format!("{p}.downsample.1"), Spec::Bn(w)));
            }
        }
        in_ch = w;
    }
    v
}

const BN_FIELDS: [(&str, bool); 4] =
    [("weight", true), ("bias", true), ("running_mean", false), ("running_var", false)];

impl ResTrunk {
    /// Adds freshly initialized trunk parameters named `{prefix}…` to `store`.
    pub fn init(config: TrunkConfig, store: &mut ParamStore<f32>, prefix: &str, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, spec) in layout(&config) {
            match spec {
                Spec::Conv(o, c, k) => {
                    let w = he_normal(&mut rng, o * c * k * k, c * k * k);
                    store.add(format!("{prefix}{name}.weight"), Tensor::from_vec(&[o, c, k, k], w)?, true);
                }
                Spec::Bn(c) => {
                    for (field, trainable) in BN_FIELDS {
                        let fill = if field == "weight" || field == "running_var" { 1.0 } else { 0.0 };
                        store.add(format!("{prefix}{name}.{field}"), Tensor::filled(&[c], fill), trainable);
                    }
                }
            }
        }
        Self::bind(config, store, prefix)
    }

    /// Resolves an existing trunk under `prefix`, checking names and shapes.
    pub fn bind<T: Real>(config: TrunkConfig, store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let get = |name: String, shape: &[usize]| -> Result<ParamId> {
            let id = store.id(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            let found = store.get(id).shape();
            if found != shape {
                return Err(Error::shape(format!("{name}: expected {shape:?}, found {found:?}")));
            }
            Ok(id)
        };
        let bn = |name: &str, c: usize| -> Result<BnIds> {
            Ok(BnIds {
                gamma: get(format!("{prefix}{name}.weight"), &[c])?,
                beta: get(format!("{prefix}{name}.bias"), &[c])?,
                mean: get(format!("{prefix}{name}.running_mean"), &[c])?,
                var: get(format!("{prefix}{name}.running_var"), &[c])?,
            })
        };
        let conv = |name: &str, o: usize, c: usize, k: usize| get(format!("{prefix}{name}.weight"), &[o, c, k, k]);
        let w = config.widths;
        let stem = conv("conv1", w[0], 3, 7)?;
        let stem_bn = bn("bn1", w[0])?;
        let mut blocks = Vec::new();
        let mut in_ch = w[0];
        for (s, &ch) in w.iter().enumerate() {
            for b in 0..2 {
                let p = format!("layer{}.{b}", s + 1);
                let c_in = if b == 0 { in_ch } else { ch };
                let stride = if b == 0 && s > 0 { 2 } else { 1 };
                let down = if b == 0 && (s > 0 || c_in != ch) {
                    Some((conv(&format!("{p}.downsample.0"), ch, c_in, 1)?, bn(&format!("{p}.downsample.1"), ch)?))
                } else {
                    None
                };
                blocks.push(BlockIds {
                    stride,
                    conv1: conv(&format!("{p}.conv1"), ch, c_in, 3)?,
                    bn1: bn(&format!("{p}.bn1"), ch)?,
                    conv2: conv(&format!("{p}.conv2"), ch, ch, 3)?,
                    bn2: bn(&format!("{p}.bn2"), ch)?,
                    down,
                });
            }
            in_ch = ch;
        }
        Ok(Self { config, prefix: prefix.to_string(), stem, stem_bn, blocks })
    }

    /// Records the trunk on `x: [N, 3, H, W]`. Training mode uses batch statistics
    /// and queues running-average updates on the graph.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, training: bool) -> TrunkOutput {
        let bn = |g: &mut Graph<'_, T>, x: Var, ids: BnIds| {
            let (gamma, beta) = (g.param(ids.gamma), g.param(ids.beta));
            g.batch_norm(x, gamma, beta, (ids.mean, ids.var), training)
        };
        let conv = |g: &mut Graph<'_, T>, x: Var, w: ParamId, stride: usize, pad: usize| {
            let w = g.param(w);
            g.conv2d(x, w, stride, pad)
        };
        let h = conv(g, x, self.stem, 2, 3);
        let h = bn(g, h, self.stem_bn);
        let h = g.relu(h);
        let stem = g.max_pool(h, 3, 2, 1);
        let mut cur = stem;
        let mut outs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let h = conv(g, cur, b.conv1, b.stride, 1);
            let h = bn(g, h, b.bn1);
            let h = g.relu(h);
            let h = conv(g, h, b.conv2, 1, 1);
            let h = bn(g, h, b.bn2);
            let shortcut = match b.down {
                Some((w, ids)) => {
                    let s = conv(g, cur, w, b.stride, 0);
                    bn(g, s, ids)
                }
                None => cur,
            };
            let sum = g.add(h, shortcut);
            cur = g.relu(sum);
            outs.push(cur);
        }
        TrunkOutput { stem, blocks: outs, features: cur }
    }
}

/// Replicates a grayscale image into three channels normalized with mean 0.5 and
/// standard deviation 0.5; returns `[1, 3, H, W]`.
pub fn to_three_channel<T: Real>(img: &EchoImage) -> Result<Tensor<T>> {
    if img.pixels.len() != img.width * img.height {
        return Err(Error::shape("pixel buffer does not match dimensions"));
    }
    let plane: Vec<T> = img.pixels.iter().map(|&p| T::of((p as f64 - 0.5) / 0.5)).collect();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::from_vec(&[1, 3, img.height, img.width], data)
}

/// A single trunk with its own parameters.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T: Real = f32> {
    pub trunk: ResTrunk,
    pub params: ParamStore<T>,
}

impl FeatureExtractor<f32> {
    pub fn new(config: TrunkConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let trunk = ResTrunk::init(config, &mut params, "", seed)?;
        Ok(Self { trunk, params })
    }
}

impl<T: Real> FeatureExtractor<T> {
    pub fn from_params(config: TrunkConfig, params: ParamStore<T>) -> Result<Self> {
        let trunk = ResTrunk::bind(config, &params, "")?;
        Ok(Self { trunk, params })
    }

    pub fn cast<U: Real>(&self) -> FeatureExtractor<U> {
        FeatureExtractor { trunk: self.trunk.clone(), params: self.params.cast() }
    }
}

pub(crate) fn map_from_tensor<T: Real>(t: &Tensor<T>, view: ViewLabel) -> Result<FeatureMap> {
    let s = t.shape();
    if !t.all_finite() {
        return Err(Error::NonFinite(format!("{view} trunk output")));
    }
    Ok(FeatureMap {
        view,
        channels: s[1],
        height: s[2],
        width: s[3],
        data: t.data().iter().map(|v| v.f64() as f32).collect(),
    })
}

/// Inference-mode trunk activation for one view image.
pub fn extract_features<T: Real>(ext: &FeatureExtractor<T>, img: &EchoImage, view: ViewLabel) -> Result<FeatureMap> {
    let mut g = Graph::new(&ext.params);
    let x = g.input(to_three_channel(img)?, false);
    let out = ext.trunk.forward(&mut g, x, false);
    map_from_tensor(g.value(out.features), view)
}

/// Channel-concatenates maps for `views`, in that order.
pub fn fuse_subset(maps: &[FeatureMap], views: &[ViewLabel], patient_id: &str) -> Result<FusedFeature> {
    if views.is_empty() {
        return Err(Error::invalid("empty view subset"));
    }
    for (i, m) in maps.iter().enumerate() {
        if maps[..i].iter().any(|o| o.view == m.view) {
            return Err(Error::DuplicateView(m.view));
        }
        if !views.contains(&m.view) {
            return Err(Error::invalid(format!("unexpected view {}", m.view)));
        }
    }
    let ordered: Vec<&FeatureMap> = views
        .iter()
        .map(|&v| maps.iter().find(|m| m.view == v).ok_or(Error::MissingView(v)))
        .collect::<Result<_>>()?;
    let first = ordered[0];
    for m in &ordered {
        if m.hwc() != first.hwc() || m.data.len() != m.channels * m.height * m.width {
            return Err(Error::shape(format!(
                "{} map is {:?}, {} map is {:?}",
                m.view,
                m.hwc(),
                first.view,
                first.hwc()
            )));
        }
    }
    let mut data = Vec::with_capacity(first.data.len() * ordered.len());
    for m in &ordered {
        data.extend_from_slice(&m.data);
    }
    Ok(FusedFeature {
        patient_id: patient_id.to_string(),
        views: views.to_vec(),
        channels: first.channels * ordered.len(),
        height: first.height,
        width: first.width,
        data,
    })
}

/// Fuses exactly the five canonical views in canonical order.
pub fn fuse_features(maps: &[FeatureMap], patient_id: &str) -> Result<FusedFeature> {
    fuse_subset(maps, &canonical_view_order(), patient_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_reach_seven_by_seven() {
        assert_eq!(TrunkConfig::resnet18().out_side(224), 7);
        assert_eq!(TrunkConfig::tiny().out_side(32), 1);
    }

    #[test]
    fn three_channel_normalization() {
        let t: Tensor<f32> = to_three_channel(&EchoImage::constant(0.5)).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
        let t: Tensor<f32> = to_three_channel(&EchoImage::constant(1.0)).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
        assert_eq!(t.shape(), &[1, 3, 224, 224]);
    }

    #[test]
    fn parameter_names_follow_layout() {
        let ext = FeatureExtractor::new(TrunkConfig::tiny(), 0).unwrap();
        assert!(ext.params.by_name("layer2.0.downsample.0.weight").is_some());
        assert!(ext.params.by_name("layer1.0.downsample.0.weight").is_none());
        assert_eq!(ext.params.by_name("layer4.1.bn2.running_var").unwrap().shape(), &[32]);
    }
}
