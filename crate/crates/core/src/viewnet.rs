//! Patch-based transformer for six-way view classification.
//!
//! Pre-norm encoder: `[cls; patches·Wₑ] + pos → depth × (x + MSA(LN x), x + MLP(LN x)) → LN → head(cls)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::domain::{EchoImage, Prediction, ViewLabel, IMAGE_SIZE, NUM_VIEW_CLASSES};
use crate::error::{Error, Result};
use crate::init::{fan_in_uniform, trunc_normal};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewNetConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    pub in_channels: usize,
    /// Feed each grayscale patch as a 16×16×3 replica instead of 16×16×1.
    #[serde(default)]
    pub replicate_to_3: bool,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_dropout() -> f64 {
    0.1
}

impl ViewNetConfig {
    fn with_dims(embed_dim: usize, depth: usize, num_heads: usize, mlp_ratio: f64) -> Self {
        Self {
            image_size: IMAGE_SIZE,
            patch_size: 16,
            embed_dim,
            depth,
            num_heads,
            mlp_ratio,
            num_classes: NUM_VIEW_CLASSES,
            in_channels: 1,
            replicate_to_3: false,
            dropout: default_dropout(),
        }
    }

    pub fn base() -> Self {
        Self::with_dims(768, 12, 12, 4.0)
    }

    pub fn tiny() -> Self {
        Self::with_dims(64, 4, 4, 2.0)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "base" => Ok(Self::base()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown viewnet preset {other:?}"))),
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_channels(&self) -> usize {
        if self.replicate_to_3 {
            3
        } else {
            self.in_channels
        }
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.patch_channels()
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!("image size {} not divisible by patch size {}", self.image_size, self.patch_size));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.num_heads));
        }
        if self.in_channels != 1 {
            return bad("only single-channel input is supported".into());
        }
        if self.depth == 0 || self.mlp_hidden() == 0 || self.num_classes < 2 {
            return bad("degenerate transformer dimensions".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BlockIds {
    norm1: (ParamId, ParamId),
    qkv: (ParamId, ParamId),
    proj: (ParamId, ParamId),
    norm2: (ParamId, ParamId),
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
struct Ids {
    patch: (ParamId, ParamId),
    cls: ParamId,
    pos: ParamId,
    blocks: Vec<BlockIds>,
    norm: (ParamId, ParamId),
    head: (ParamId, ParamId),
}

/// Parameter names and shapes in creation order.
fn layout(cfg: &ViewNetConfig) -> Vec<(String, Vec<usize>)> {
    let (d, h, pd) = (cfg.embed_dim, cfg.mlp_hidden(), cfg.patch_dim());
    let mut v = vec![
        ("patch_embed.weight".to_string(), vec![d, pd]),
        ("patch_embed.bias".into(), vec![d]),
        ("cls_token".into(), vec![1, d]),
        ("pos_embed".into(), vec![cfg.num_tokens(), d]),
    ];
    for i in 0..cfg.depth {
        let p = format!("blocks.{i}");
        v.extend([
            (format!("{p}.norm1.weight"), vec![d]),
            (format!("{p}.norm1.bias"), vec![d]),
            (format!("{p}.attn.qkv.weight"), vec![3 * d, d]),
            (format!("{p}.attn.qkv.bias"), vec![3 * d]),
            (format!("{p}.attn.proj.weight"), vec![d, d]),
            (format!("{p}.attn.proj.bias"), vec![d]),
            (format!("{p}.norm2.weight"), vec![d]),
            (format!("{p}.norm2.bias"), vec![d]),
            (format!("{p}.mlp.fc1.weight"), vec![h, d]),
            (format!("{p}.mlp.fc1.bias"), vec![h]),
            (format!("{p}.mlp.fc2.weight"), vec![d, h]),
            (format!("{p}.mlp.fc2.bias"), vec![d]),
        ]);
    }
    v.extend([
        ("norm.weight".to_string(), vec![d]),
        ("norm.bias".into(), vec![d]),
        ("head.weight".into(), vec![cfg.num_classes, d]),
        ("head.bias".into(), vec![cfg.num_classes]),
    ]);
    v
}

fn resolve<T: Real>(cfg: &ViewNetConfig, store: &ParamStore<T>) -> Result<Ids> {
    for (name, shape) in layout(cfg) {
        let t = store.by_name(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::shape(format!("{name}: expected {shape:?}, found {:?}", t.shape())));
        }
    }
    let id = |n: &str| store.id(n).expect("checked above");
    let pair = |p: &str| (id(&format!("{p}.weight")), id(&format!("{p}.bias")));
    Ok(Ids {
        patch: pair("patch_embed"),
        cls: id("cls_token"),
        pos: id("pos_embed"),
        blocks: (0..cfg.depth)
            .map(|i| BlockIds {
                norm1: pair(&format!("blocks.{i}.norm1")),
                qkv: pair(&format!("blocks.{i}.attn.qkv")),
                proj: pair(&format!("blocks.{i}.attn.proj")),
                norm2: pair(&format!("blocks.{i}.norm2")),
                fc1: pair(&format!("blocks.{i}.mlp.fc1")),
                fc2: pair(&format!("blocks.{i}.mlp.fc2")),
            })
            .collect(),
        norm: pair("norm"),
        head: pair("head"),
    })
}

/// Splits a square image into row-major patches, each flattened row-major
/// (channel-interleaved when `channels` is 3).
pub fn patchify(img: &EchoImage, patch_size: usize, channels: usize) -> Result<Vec<Vec<f32>>> {
    if patch_size == 0 || img.width != img.height || img.width % patch_size != 0 {
        return Err(Error::shape(format!(
            "{}x{} image cannot be tiled by {patch_size}x{patch_size} patches",
            img.width, img.height
        )));
    }
    if img.pixels.len() != img.width * img.height {
        return Err(Error::shape("pixel buffer does not match dimensions"));
    }
    let grid = img.width / patch_size;
    let mut out = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            let mut p = Vec::with_capacity(patch_size * patch_size * channels);
            for y in 0..patch_size {
                let row = (gy * patch_size + y) * img.width + gx * patch_size;
                for &v in &img.pixels[row..row + patch_size] {
                    p.extend(std::iter::repeat(v).take(channels));
                }
            }
            out.push(p);
        }
    }
    Ok(out)
}

/// Graph handles produced by one forward pass.
pub struct ForwardOutput {
    /// `[1, num_classes]`.
    pub logits: Var,
    /// Class-token representation after the final norm, `[1, embed_dim]`.
    pub cls: Var,
    /// One attention node per layer; see [`Graph::attention_probs`].
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ViewNet<T: Real = f32> {
    pub config: ViewNetConfig,
    pub params: ParamStore<T>,
    ids: Ids,
}

impl ViewNet<f32> {
    /// Randomly initialized network.
    pub fn new(config: ViewNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in layout(&config) {
            let n: usize = shape.iter().product();
            let data = if name == "cls_token" || name == "pos_embed" || name.starts_with("patch_embed.weight")
                || name == "head.weight"
            {
                trunc_normal(&mut rng, n, 0.02)
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else if name.contains("norm") {
                vec![1.0; n]
            } else {
                fan_in_uniform(&mut rng, n, shape[1])
            };
            store.add(name, Tensor::from_vec(&shape, data)?, true);
        }
        Self::from_params(config, store)
    }
}

impl<T: Real> ViewNet<T> {
    /// Wraps an existing parameter set, checking every tensor name and shape.
    pub fn from_params(config: ViewNetConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let ids = resolve(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    pub fn cast<U: Real>(&self) -> ViewNet<U> {
        ViewNet { config: self.config.clone(), params: self.params.cast(), ids: self.ids.clone() }
    }

    /// Normalized patch matrix `[num_patches, patch_dim]` for an image.
    pub fn input_tensor(&self, img: &EchoImage) -> Result<Tensor<T>> {
        let cfg = &self.config;
        if img.width != cfg.image_size || img.height != cfg.image_size {
            return Err(Error::shape(format!(
                "view classifier expects {0}x{0}, got {1}x{2}",
                cfg.image_size, img.width, img.height
            )));
        }
        let patches = patchify(img, cfg.patch_size, cfg.patch_channels())?;
        let data = patches.into_iter().flatten().map(|v| T::of((v as f64 - 0.5) / 0.5)).collect();
        Tensor::from_vec(&[cfg.num_patches(), cfg.patch_dim()], data)
    }

    /// Records a forward pass. Dropout is active only when `rng` is given.
    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        img: &EchoImage,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let ids = &self.ids;
        let x = g.input(self.input_tensor(img)?, false);
        let p = cfg.dropout;
        let mut drop = |g: &mut Graph<'p, T>, v: Var| -> Var {
            match rng.as_deref_mut() {
                Some(r) if p > 0.0 => {
                    let keep = T::of(1.0 / (1.0 - p));
                    let mask = (0..g.value(v).numel())
                        .map(|_| if r.gen::<f64>() < p { T::zero() } else { keep })
                        .collect();
                    g.dropout(v, mask)
                }
                _ => v,
            }
        };
        let lin = |g: &mut Graph<'p, T>, x: Var, (w, b): (ParamId, ParamId)| {
            let (w, b) = (g.param(w), g.param(b));
            g.linear(x, w, Some(b))
        };
        let norm = |g: &mut Graph<'p, T>, x: Var, (w, b): (ParamId, ParamId)| {
            let (w, b) = (g.param(w), g.param(b));
            g.layer_norm(x, w, b)
        };
        let check = |g: &Graph<'p, T>, v: Var, layer: &str| -> Result<()> {
            if g.value(v).all_finite() {
                Ok(())
            } else {
                Err(Error::NonFinite(layer.to_string()))
            }
        };

        let emb = lin(g, x, ids.patch);
        check(g, emb, "patch_embed")?;
        let cls = g.param(ids.cls);
        let seq = g.concat_rows(&[cls, emb]);
        let pos = g.param(ids.pos);
        let seq = g.add(seq, pos);
        let mut seq = drop(g, seq);
        let mut attention = Vec::with_capacity(cfg.depth);
        for (i, b) in ids.blocks.iter().enumerate() {
            let h = norm(g, seq, b.norm1);
            let qkv = lin(g, h, b.qkv);
            let a = g.attention(qkv, cfg.num_heads);
            attention.push(a);
            let a = lin(g, a, b.proj);
            let a = drop(g, a);
            seq = g.add(seq, a);
            let h = norm(g, seq, b.norm2);
            let h = lin(g, h, b.fc1);
            let h = g.gelu(h);
            let h = drop(g, h);
            let h = lin(g, h, b.fc2);
            let h = drop(g, h);
            seq = g.add(seq, h);
            check(g, seq, &format!("block {i}"))?;
        }
        let seq = norm(g, seq, ids.norm);
        let cls = g.select_row(seq, 0);
        let logits = lin(g, cls, ids.head);
        check(g, logits, "head")?;
        Ok(ForwardOutput { logits, cls, attention })
    }

    /// Inference-mode logits.
    pub fn logits(&self, img: &EchoImage) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, img, None)?;
        Ok(g.value(out.logits).data().iter().map(|v| v.f64()).collect())
    }
}

/// Inference-mode prediction over the six view classes.
pub fn vit_forward<T: Real>(net: &ViewNet<T>, img: &EchoImage) -> Result<Prediction> {
    Prediction::from_logits(net.logits(img)?)
}

pub fn predict_view<T: Real>(net: &ViewNet<T>, img: &EchoImage) -> Result<ViewLabel> {
    let p = vit_forward(net, img)?;
    p.view().ok_or_else(|| Error::invalid(format!("class index {} is not a view", p.label)))
}

/// Class-token representation before the head.
pub fn embed<T: Real>(net: &ViewNet<T>, img: &EchoImage) -> Result<Vec<f64>> {
    let mut g = Graph::new(&net.params);
    let out = net.forward(&mut g, img, None)?;
    Ok(g.value(out.cls).data().iter().map(|v| v.f64()).collect())
}

/// Per-layer attention probabilities, each `[heads, tokens, tokens]` flattened.
pub fn attention_maps<T: Real>(net: &ViewNet<T>, img: &EchoImage) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new(&net.params);
    let out = net.forward(&mut g, img, None)?;
    Ok(out
        .attention
        .iter()
        .map(|&a| g.attention_probs(a).expect("attention node").iter().map(|v| v.f64()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_count_is_197() {
        let cfg = ViewNetConfig::tiny();
        assert_eq!(cfg.num_tokens(), 197);
        let net = ViewNet::new(cfg, 0).unwrap();
        assert_eq!(net.params.by_name("pos_embed").unwrap().shape(), &[197, 64]);
    }

    #[test]
    fn checkerboard_patches() {
        let mut px = vec![0.0f32; IMAGE_SIZE * IMAGE_SIZE];
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                px[y * IMAGE_SIZE + x] = ((x / 16 + y / 16) % 2) as f32;
            }
        }
        let img = EchoImage::from_pixels(IMAGE_SIZE, IMAGE_SIZE, px).unwrap();
        let patches = patchify(&img, 16, 1).unwrap();
        assert_eq!(patches.len(), 196);
        for (k, p) in patches.iter().enumerate() {
            let expect = ((k % 14 + k / 14) % 2) as f32;
            assert!(p.iter().all(|&v| v == expect));
        }
        let rgb = patchify(&img, 16, 3).unwrap();
        assert_eq!(rgb[1].len(), 768);
    }

    #[test]
    fn rejects_wrong_shape_and_bad_config() {
        let net = ViewNet::new(ViewNetConfig::tiny(), 0).unwrap();
        let small = EchoImage::from_pixels(200, 200, vec![0.5; 40000]).unwrap();
        assert!(matches!(vit_forward(&net, &small), Err(Error::Shape(_))));
        let mut cfg = ViewNetConfig::tiny();
        cfg.num_heads = 3;
        assert!(ViewNet::new(cfg, 0).is_err());
    }

    #[test]
    fn non_finite_weights_name_the_layer() {
        let mut net = ViewNet::new(ViewNetConfig::tiny(), 0).unwrap();
        net.params.by_name_mut("blocks.1.mlp.fc2.bias").unwrap().data_mut()[0] = f32::NAN;
        match vit_forward(&net, &EchoImage::constant(0.3)) {
            Err(Error::NonFinite(layer)) => assert_eq!(layer, "block 1"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }
}
