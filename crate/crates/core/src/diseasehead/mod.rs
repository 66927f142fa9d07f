//! Pooling, the linear disease head, and the end-to-end disease model.

pub mod classical;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{adaptive_bin, Graph, ParamId, ParamStore, Var};
use crate::domain::{
    canonical_view_order, DiseaseLabel, FeatureMap, FusedFeature, PatientStudy, Prediction, ViewLabel, NUM_DISEASES,
};
use crate::error::{Error, Result};
use crate::featnet::{fuse_subset, map_from_tensor, to_three_channel, ResTrunk, TrunkConfig};
use crate::init::fan_in_uniform;
use crate::tensor::{Real, Tensor};

pub use classical::{fit_alt_classifier, AltClassifierParams, ClassifierKind, FittedClassifier};

/// Channel means of a fused map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledVector {
    pub patient_id: String,
    pub values: Vec<f32>,
}

/// Adaptive average pooling to 1×1 followed by flattening.
pub fn pool_and_flatten(f: &FusedFeature) -> Result<PooledVector> {
    let hw = f.height * f.width;
    if hw == 0 || f.data.len() != f.channels * hw {
        return Err(Error::shape(format!(
            "fused buffer of {} values does not match {}x{}x{}",
            f.data.len(),
            f.height,
            f.width,
            f.channels
        )));
    }
    let (y0, y1) = adaptive_bin(0, 1, f.height);
    let (x0, x1) = adaptive_bin(0, 1, f.width);
    let values = f
        .data
        .chunks(hw)
        .map(|plane| {
            let mut s = 0.0f32;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += plane[y * f.width + x];
                }
            }
            s / ((y1 - y0) * (x1 - x0)) as f32
        })
        .collect();
    Ok(PooledVector { patient_id: f.patient_id.clone(), values })
}

/// `logits = W·v + b` with `W: [classes, dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub classes: usize,
    pub dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LinearHead {
    pub fn new(classes: usize, dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != classes * dim || bias.len() != classes {
            return Err(Error::shape(format!("head {classes}x{dim} with {} weights, {} biases", weight.len(), bias.len())));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear head parameters".into()));
        }
        Ok(Self { classes, dim, weight, bias })
    }

    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { classes, dim, weight: vec![0.0; classes * dim], bias: vec![0.0; classes] }
    }
}

pub fn linear_forward(head: &LinearHead, v: &PooledVector) -> Result<Prediction> {
    if v.values.len() != head.dim {
        return Err(Error::shape(format!("head expects {} features, got {}", head.dim, v.values.len())));
    }
    let logits: Vec<f64> = (0..head.classes)
        .map(|k| {
            let row = &head.weight[k * head.dim..(k + 1) * head.dim];
            row.iter().zip(&v.values).map(|(&w, &x)| w as f64 * x as f64).sum::<f64>() + head.bias[k] as f64
        })
        .collect();
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("linear head output".into()));
    }
    Prediction::from_logits(logits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseModelConfig {
    pub trunk: TrunkConfig,
    /// Views fused, in fusion order.
    pub views: Vec<ViewLabel>,
    /// One trunk for all views instead of one per view.
    #[serde(default)]
    pub share_trunk: bool,
}

impl DiseaseModelConfig {
    pub fn new(trunk: TrunkConfig) -> Self {
        Self { trunk, views: canonical_view_order().to_vec(), share_trunk: false }
    }

    pub fn with_views(mut self, views: &[ViewLabel]) -> Self {
        self.views = views.to_vec();
        self
    }

    pub fn fused_channels(&self) -> usize {
        self.trunk.out_channels() * self.views.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Config("empty view subset".into()));
        }
        for (i, v) in self.views.iter().enumerate() {
            if !v.is_canonical() {
                return Err(Error::Config(format!("{v} is not a canonical view")));
            }
            if self.views[..i].contains(v) {
                return Err(Error::Config(format!("view {v} listed twice")));
            }
        }
        Ok(())
    }

    fn trunk_prefix(&self, view: ViewLabel) -> String {
        if self.share_trunk {
            "trunk.shared.".to_string()
        } else {
            format!("trunk.{view}.")
        }
    }
}

/// Per-view trunks, fusion, pooling and the linear head in one parameter store.
#[derive(Clone, Debug)]
pub struct DiseaseModel<T: Real = f32> {
    pub config: DiseaseModelConfig,
    pub params: ParamStore<T>,
    trunks: Vec<ResTrunk>,
    head: (ParamId, ParamId),
}

/// Graph handles of one disease forward pass.
pub struct DiseaseForward {
    /// Final trunk map per fused view, `[1, C, h, w]`.
    pub features: Vec<Var>,
    pub fused: Var,
    pub pooled: Var,
    /// `[1, 3]`.
    pub logits: Var,
}

pub const HEAD_PREFIX: &str = "head.";

impl DiseaseModel<f32> {
    pub fn new(config: DiseaseModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (k, &v) in config.views.iter().enumerate() {
            if config.share_trunk && k > 0 {
                break;
            }
            let trunk_seed = seed.wrapping_add(1 + k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            ResTrunk::init(config.trunk.clone(), &mut params, &config.trunk_prefix(v), trunk_seed)?;
        }
        let dim = config.fused_channels();
        let w = fan_in_uniform(&mut rng, NUM_DISEASES * dim, dim);
        params.add(format!("{HEAD_PREFIX}weight"), Tensor::from_vec(&[NUM_DISEASES, dim], w)?, true);
        params.add(format!("{HEAD_PREFIX}bias"), Tensor::zeros(&[NUM_DISEASES]), true);
        Self::from_params(config, params)
    }
}

impl<T: Real> DiseaseModel<T> {
    pub fn from_params(config: DiseaseModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let trunks = config
            .views
            .iter()
            .map(|&v| ResTrunk::bind(config.trunk.clone(), &params, &config.trunk_prefix(v)))
            .collect::<Result<Vec<_>>>()?;
        let dim = config.fused_channels();
        let get = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = params.id(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if params.get(id).shape() != shape {
                return Err(Error::shape(format!("{name}: expected {shape:?}, found {:?}", params.get(id).shape())));
            }
            Ok(id)
        };
        let head = (
            get(&format!("{HEAD_PREFIX}weight"), &[NUM_DISEASES, dim])?,
            get(&format!("{HEAD_PREFIX}bias"), &[NUM_DISEASES])?,
        );
        Ok(Self { config, params, trunks, head })
    }

    pub fn cast<U: Real>(&self) -> DiseaseModel<U> {
        DiseaseModel {
            config: self.config.clone(),
            params: self.params.cast(),
            trunks: self.trunks.clone(),
            head: self.head,
        }
    }

    /// Trunk used for the `k`-th fused view.
    pub fn trunk(&self, k: usize) -> &ResTrunk {
        &self.trunks[k]
    }

    /// Records the full study pass. `training` switches batch norm to batch statistics.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, study: &PatientStudy, training: bool) -> Result<DiseaseForward> {
        let mut features = Vec::with_capacity(self.config.views.len());
        for (k, &v) in self.config.views.iter().enumerate() {
            let img = study.view(v)?;
            let x = g.input(to_three_channel(img)?, false);
            features.push(self.trunks[k].forward(g, x, training).features);
        }
        self.forward_from_features(g, features)
    }

    /// Fusion, pooling and head on already recorded per-view maps.
    pub fn forward_from_features(&self, g: &mut Graph<'_, T>, features: Vec<Var>) -> Result<DiseaseForward> {
        for (k, &f) in features.iter().enumerate() {
            if !g.value(f).all_finite() {
                return Err(Error::NonFinite(format!("{} trunk output", self.config.views[k])));
            }
        }
        let fused = g.concat_channels(&features);
        let pooled4 = g.adaptive_avg_pool(fused, 1, 1);
        let pooled = g.reshape(pooled4, &[1, self.config.fused_channels()]);
        let (w, b) = (g.param(self.head.0), g.param(self.head.1));
        let logits = g.linear(pooled, w, Some(b));
        if !g.value(logits).all_finite() {
            return Err(Error::NonFinite("disease head".into()));
        }
        Ok(DiseaseForward { features, fused, pooled, logits })
    }

    /// Inference-mode logits over HCM, CA, NORMAL.
    pub fn logits(&self, study: &PatientStudy) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, study, false)?;
        Ok(g.value(out.logits).data().iter().map(|v| v.f64()).collect())
    }

    pub fn predict(&self, study: &PatientStudy) -> Result<Prediction> {
        Prediction::from_logits(self.logits(study)?)
    }

    pub fn predict_label(&self, study: &PatientStudy) -> Result<DiseaseLabel> {
        let p = self.predict(study)?;
        p.disease().ok_or_else(|| Error::invalid("disease index out of range"))
    }

    /// Inference-mode per-view maps.
    pub fn feature_maps(&self, study: &PatientStudy) -> Result<Vec<FeatureMap>> {
        let mut g = Graph::new(&self.params);
        self.config
            .views
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let x = g.input(to_three_channel(study.view(v)?)?, false);
                let f = self.trunks[k].forward(&mut g, x, false).features;
                map_from_tensor(g.value(f), v)
            })
            .collect()
    }

    pub fn fused(&self, study: &PatientStudy) -> Result<FusedFeature> {
        fuse_subset(&self.feature_maps(study)?, &self.config.views, &study.patient_id)
    }

    pub fn pooled(&self, study: &PatientStudy) -> Result<PooledVector> {
        pool_and_flatten(&self.fused(study)?)
    }

    /// Copy of the head parameters.
    pub fn head(&self) -> LinearHead {
        let w = self.params.get(self.head.0).data().iter().map(|v| v.f64() as f32).collect();
        let b = self.params.get(self.head.1).data().iter().map(|v| v.f64() as f32).collect();
        LinearHead { classes: NUM_DISEASES, dim: self.config.fused_channels(), weight: w, bias: b }
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        self.head
    }
}
