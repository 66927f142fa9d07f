//! Training loops for both stages, the loss, and fold generation.
//!
//! One epoch is one pass over the shuffled training set. Each batch is split
//! into per-sample graphs evaluated in parallel; their gradients are summed in
//! sample order, so results do not depend on thread scheduling.

pub mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{BnUpdate, Grads, Graph, ParamStore};
use crate::diseasehead::DiseaseModel;
use crate::domain::{argmax, EchoImage, PatientStudy, ViewLabel};
use crate::error::{Error, Result};
use crate::featnet::BN_MOMENTUM;
use crate::viewnet::ViewNet;

pub use optim::{Adam, Optimizer, Sgd};

/// `weight · (−log softmax(logits)[target])`, max-shifted.
pub fn cross_entropy(logits: &[f64], target: usize, weight: f64) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::invalid(format!("target {target} out of range for {} logits", logits.len())));
    }
    if logits.iter().any(|v| !v.is_finite()) || !weight.is_finite() {
        return Err(Error::NonFinite("cross-entropy input".into()));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    Ok(weight * (lse - logits[target]))
}

fn default_clip() -> Option<f64> {
    Some(5.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewTrainConfig {
    /// SGD follows the published recipe; Adam (β 0.9/0.999, ε 1e-8, same weight decay) is an option.
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
}

impl Default for ViewTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            lr: 0.0005,
            batch_size: 24,
            weight_decay: 0.0005,
            momentum: 0.9,
            epochs: 30,
            seed: 0,
            clip_norm: default_clip(),
        }
    }
}

impl ViewTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::Config("view training needs lr ≥ 0 and batch_size ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseTrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Scalar multiplier on the cross-entropy.
    pub loss_weight: f64,
    /// Per-class multipliers (HCM, CA, NORMAL) used instead of `loss_weight` when set.
    #[serde(default)]
    pub class_weights: Option<[f64; 3]>,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    /// Train only the linear head.
    #[serde(default)]
    pub freeze_trunk: bool,
}

impl Default for DiseaseTrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 1,
            loss_weight: 0.1,
            class_weights: None,
            epochs: 50,
            seed: 0,
            clip_norm: default_clip(),
            freeze_trunk: false,
        }
    }
}

impl DiseaseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::Config("disease training needs lr ≥ 0 and batch_size ≥ 1".into()));
        }
        Ok(())
    }

    fn weight_for(&self, target: usize) -> f64 {
        self.class_weights.map_or(self.loss_weight, |w| w[target])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were kept (highest validation accuracy, earliest on ties).
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.records[e - 1].val_accuracy)
    }
}

struct SampleResult {
    loss: f64,
    grads: Grads<f32>,
    correct: bool,
    bn: Vec<BnUpdate<f32>>,
}

/// What the shared loop needs from a model.
trait Trainable: Sync {
    type Sample: Sync;
    fn store(&self) -> &ParamStore<f32>;
    fn store_mut(&mut self) -> &mut ParamStore<f32>;
    fn label(&self, s: &Self::Sample) -> Result<usize>;
    fn sample_step(&self, s: &Self::Sample, target: usize, seed: u64) -> Result<SampleResult>;
    fn predict(&self, s: &Self::Sample) -> Result<usize>;
}

struct ViewTask<'a> {
    net: &'a mut ViewNet,
}

fn view_label(img: &EchoImage) -> Result<usize> {
    img.view
        .map(ViewLabel::index)
        .ok_or_else(|| Error::invalid(format!("image {:?} has no view label", img.source_path)))
}

impl Trainable for ViewTask<'_> {
    type Sample = EchoImage;

    fn store(&self) -> &ParamStore<f32> {
        &self.net.params
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.net.params
    }

    fn label(&self, s: &EchoImage) -> Result<usize> {
        view_label(s)
    }

    fn sample_step(&self, s: &EchoImage, target: usize, seed: u64) -> Result<SampleResult> {
        let net: &ViewNet = self.net;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new(&net.params);
        let out = net.forward(&mut g, s, Some(&mut rng))?;
        let loss = g.cross_entropy(out.logits, target, 1.0);
        let logits: Vec<f64> = g.value(out.logits).data().iter().map(|&v| v as f64).collect();
        let grads = g.param_grads(&g.backward_scalar(loss));
        Ok(SampleResult {
            loss: g.value(loss).data()[0] as f64,
            grads,
            correct: argmax(&logits) == target,
            bn: Vec::new(),
        })
    }

    fn predict(&self, s: &EchoImage) -> Result<usize> {
        Ok(argmax(&self.net.logits(s)?))
    }
}

struct DiseaseTask<'a> {
    model: &'a mut DiseaseModel,
    cfg: &'a DiseaseTrainConfig,
}

impl Trainable for DiseaseTask<'_> {
    type Sample = PatientStudy;

    fn store(&self) -> &ParamStore<f32> {
        &self.model.params
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.model.params
    }

    fn label(&self, s: &PatientStudy) -> Result<usize> {
        Ok(s.disease.index())
    }

    fn sample_step(&self, s: &PatientStudy, target: usize, _seed: u64) -> Result<SampleResult> {
        let model: &DiseaseModel = self.model;
        let mut g = Graph::new(&model.params);
        let out = model.forward(&mut g, s, true)?;
        let loss = g.cross_entropy(out.logits, target, self.cfg.weight_for(target) as f32);
        let logits: Vec<f64> = g.value(out.logits).data().iter().map(|&v| v as f64).collect();
        let mut grads = g.param_grads(&g.backward_scalar(loss));
        if self.cfg.freeze_trunk {
            let (w, b) = model.head_ids();
            grads.retain(|id| id == w || id == b);
        }
        let bn = if self.cfg.freeze_trunk { Vec::new() } else { g.bn_updates().to_vec() };
        Ok(SampleResult { loss: g.value(loss).data()[0] as f64, grads, correct: argmax(&logits) == target, bn })
    }

    fn predict(&self, s: &PatientStudy) -> Result<usize> {
        Ok(argmax(&self.model.logits(s)?))
    }
}

struct LoopConfig {
    epochs: usize,
    batch_size: usize,
    seed: u64,
    clip_norm: Option<f64>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn accuracy<M: Trainable>(model: &M, data: &[M::Sample], labels: &[usize]) -> Result<f64> {
    let hits: Vec<bool> =
        data.par_iter().zip(labels).map(|(s, &l)| model.predict(s).map(|p| p == l)).collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len().max(1) as f64)
}

fn fit<M: Trainable>(
    model: &mut M,
    opt: &mut dyn Optimizer<f32>,
    cfg: &LoopConfig,
    train: &[M::Sample],
    val: &[M::Sample],
) -> Result<TrainLog> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be nonempty"));
    }
    let train_labels: Vec<usize> = train.iter().map(|s| model.label(s)).collect::<Result<_>>()?;
    let val_labels: Vec<usize> = val.iter().map(|s| model.label(s)).collect::<Result<_>>()?;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<SampleResult> = {
                let m: &M = model;
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let seed = mix(mix(cfg.seed, epoch as u64), (b * cfg.batch_size + j) as u64 + 1);
                        m.sample_step(&train[i], train_labels[i], seed)
                    })
                    .collect::<Result<_>>()?
            };
            let mut grads = Grads::empty(model.store().len());
            let mut batch_loss = 0.0;
            for r in &results {
                grads.accumulate(&r.grads);
                batch_loss += r.loss;
                correct += r.correct as usize;
            }
            grads.scale(1.0 / batch.len() as f32);
            if !batch_loss.is_finite() || !grads.all_finite() {
                let last_good = best.map(|(_, p)| p).unwrap_or_else(|| model.store().clone());
                return Err(Error::Diverged { epoch, last_good: Box::new(last_good) });
            }
            if let Some(c) = cfg.clip_norm {
                grads.clip_global_norm(c as f32);
            }
            loss_sum += batch_loss;
            opt.step(model.store_mut(), &grads);
            for r in &results {
                model.store_mut().apply_bn_updates(&r.bn, BN_MOMENTUM as f32);
            }
        }
        let val_accuracy = accuracy(model, val, &val_labels)?;
        log.records.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: loss {:.4} train {:.3} val {:.3}", loss_sum / train.len() as f64, correct as f64 / train.len() as f64, val_accuracy);
        if best.as_ref().map_or(true, |(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, model.store().clone()));
            log.best_epoch = Some(epoch);
        }
    }
    if let Some((_, params)) = best {
        *model.store_mut() = params;
    }
    Ok(log)
}

/// SGD-with-momentum training of the view classifier; keeps the best-validation weights.
pub fn train_view_model(
    cfg: &ViewTrainConfig,
    net: &mut ViewNet,
    train: &[EchoImage],
    val: &[EchoImage],
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut opt: Box<dyn Optimizer<f32>> = match cfg.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay)),
        OptimizerKind::Adam => {
            let mut a = Adam::new(cfg.lr, 0.9, 0.999, 1e-8);
            a.weight_decay = cfg.weight_decay;
            Box::new(a)
        }
    };
    let lc = LoopConfig { epochs: cfg.epochs, batch_size: cfg.batch_size, seed: cfg.seed, clip_norm: cfg.clip_norm };
    fit(&mut ViewTask { net }, opt.as_mut(), &lc, train, val)
}

/// Joint Adam training of the trunks and the head; keeps the best-validation weights.
pub fn train_disease_model(
    cfg: &DiseaseTrainConfig,
    model: &mut DiseaseModel,
    train: &[PatientStudy],
    val: &[PatientStudy],
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let lc = LoopConfig { epochs: cfg.epochs, batch_size: cfg.batch_size, seed: cfg.seed, clip_norm: cfg.clip_norm };
    fit(&mut DiseaseTask { model, cfg }, &mut opt, &lc, train, val)
}

/// Stratified k-fold partition of indices: returns `(train, val)` index lists.
///
/// Within each class, items are shuffled and dealt round-robin; the dealing
/// position carries over between classes so fold sizes differ by at most one.
pub fn kfold_indices(labels: &[usize], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs k ≥ 2"));
    }
    if labels.len() < k {
        return Err(Error::invalid(format!("{} items cannot form {k} folds", labels.len())));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for &c in &classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, c as u64)));
        for i in idx {
            folds[pos % k].push(i);
            pos += 1;
        }
    }
    Ok(folds
        .into_iter()
        .map(|mut val| {
            val.sort_unstable();
            let train = (0..labels.len()).filter(|i| val.binary_search(i).is_err()).collect();
            (train, val)
        })
        .collect())
}

/// Patient-level stratified folds over studies.
pub fn kfold_split(studies: &[PatientStudy], k: usize, seed: u64) -> Result<Vec<(Vec<PatientStudy>, Vec<PatientStudy>)>> {
    let labels: Vec<usize> = studies.iter().map(|s| s.disease.index()).collect();
    let pick = |idx: &[usize]| idx.iter().map(|&i| studies[i].clone()).collect::<Vec<_>>();
    Ok(kfold_indices(&labels, k, seed)?.into_iter().map(|(t, v)| (pick(&t), pick(&v))).collect())
}
