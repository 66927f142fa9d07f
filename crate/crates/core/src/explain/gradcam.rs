//! Gradient-weighted class activation maps over the feature trunks.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::diseasehead::DiseaseModel;
use crate::domain::{DiseaseLabel, PatientStudy, ViewLabel, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::featnet::to_three_channel;
use crate::ingest::resize_bilinear;
use crate::tensor::{Real, Tensor};

/// Nonnegative map on the image grid, scaled so its maximum is 1 (or all zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub view: Option<ViewLabel>,
    pub target: String,
}

impl Heatmap {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Which trunk activation the map is taken from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamLayer {
    /// Post-stem, post-pool map.
    Stem,
    /// Output of residual stage 1..=4.
    Stage(usize),
    /// Final stage output (the fused 7×7 map of that view).
    #[default]
    Final,
    /// The globally pooled vector; has no spatial extent and is rejected.
    Pooled,
}

/// Core computation from an activation `[1, C, h, w]` (or `[C, h, w]`) and the
/// gradient of the target score with respect to it.
pub fn grad_cam_from_maps<T: Real>(activation: &Tensor<T>, gradient: &Tensor<T>, out_side: usize) -> Result<Vec<f64>> {
    let s = activation.shape();
    let (c, h, w) = match *s {
        [1, c, h, w] | [c, h, w] => (c, h, w),
        _ => return Err(Error::invalid(format!("layer activation {s:?} has no spatial grid"))),
    };
    if gradient.shape() != s {
        return Err(Error::shape(format!("gradient {:?} vs activation {s:?}", gradient.shape())));
    }
    let hw = h * w;
    let (a, g) = (activation.data(), gradient.data());
    let mut cam = vec![0.0f64; hw];
    for k in 0..c {
        let gk = &g[k * hw..(k + 1) * hw];
        let weight = gk.iter().map(|v| v.f64()).sum::<f64>() / hw as f64;
        if weight == 0.0 {
            continue;
        }
        for (o, av) in cam.iter_mut().zip(&a[k * hw..(k + 1) * hw]) {
            *o += weight * av.f64();
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let up: Vec<f32> = cam.iter().map(|&v| v as f32).collect();
    let up = if h == out_side && w == out_side { up } else { resize_bilinear(&up, w, h, out_side, out_side) };
    let mut values: Vec<f64> = up.into_iter().map(|v| (v as f64).max(0.0)).collect();
    let m = values.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        for v in &mut values {
            *v /= m;
        }
    }
    Ok(values)
}

/// Backpropagates the `target` entry of `logits` (`[1, K]`) to `activation` on an
/// already recorded graph; the generic hook behind [`grad_cam`].
pub fn grad_cam_on_graph<T: Real>(g: &Graph<'_, T>, activation: Var, logits: Var, target: usize) -> Result<Vec<f64>> {
    let shape = g.value(logits).shape().to_vec();
    let k = *shape.last().unwrap_or(&0);
    if target >= k {
        return Err(Error::invalid(format!("target {target} out of range for {k} scores")));
    }
    let mut seed = Tensor::zeros(&shape);
    seed.data_mut()[target] = T::one();
    let grads = g.backward(logits, seed);
    let act = g.value(activation);
    let zero;
    let grad = match grads.get(activation) {
        Some(t) => t,
        None => {
            zero = Tensor::zeros(act.shape());
            &zero
        }
    };
    grad_cam_from_maps(act, grad, IMAGE_SIZE)
}

/// Heatmap for one view of a study with respect to the `target` disease score,
/// using inference-mode batch norm.
pub fn grad_cam<T: Real>(
    model: &DiseaseModel<T>,
    study: &PatientStudy,
    view: ViewLabel,
    target: DiseaseLabel,
    layer: CamLayer,
) -> Result<Heatmap> {
    let k = model
        .config
        .views
        .iter()
        .position(|&v| v == view)
        .ok_or_else(|| Error::invalid(format!("view {view} is not fused by this model")))?;
    if layer == CamLayer::Pooled {
        return Err(Error::invalid("pooled layer has no spatial activations"));
    }
    if let CamLayer::Stage(s) = layer {
        if !(1..=4).contains(&s) {
            return Err(Error::invalid(format!("stage {s} outside 1..=4")));
        }
    }
    let mut g = Graph::new(&model.params);
    let mut features = Vec::with_capacity(model.config.views.len());
    let mut hooked = None;
    for (j, &v) in model.config.views.iter().enumerate() {
        let x = g.input(to_three_channel(study.view(v)?)?, false);
        let out = model.trunk(j).forward(&mut g, x, false);
        if j == k {
            hooked = Some(match layer {
                CamLayer::Stem => out.stem,
                CamLayer::Stage(s) => out.blocks[2 * s - 1],
                _ => out.features,
            });
        }
        features.push(out.features);
    }
    let fwd = model.forward_from_features(&mut g, features)?;
    let values = grad_cam_on_graph(&g, hooked.expect("view index checked"), fwd.logits, target.index())?;
    Ok(Heatmap { width: IMAGE_SIZE, height: IMAGE_SIZE, values, view: Some(view), target: target.to_string() })
}
