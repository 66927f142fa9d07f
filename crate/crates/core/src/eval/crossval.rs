//! Fold-level evaluation and the standard disease training recipe used by the harnesses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diseasehead::{DiseaseModel, DiseaseModelConfig};
use crate::domain::{DiseaseLabel, PatientStudy};
use crate::error::{Error, Result};
use crate::eval::metrics::{EvalReport, MicroMetrics};
use crate::ingest::{expand_minority_class, split_dataset, AugParams, SplitSpec};
use crate::train::{kfold_split, train_disease_model, DiseaseTrainConfig, TrainLog};

pub const DISEASE_NAMES: [&str; 3] = ["HCM", "CA", "NORMAL"];

/// Anything that maps a study to a disease label.
pub trait StudyClassifier: Send + Sync {
    fn classify(&self, study: &PatientStudy) -> Result<DiseaseLabel>;
}

impl StudyClassifier for DiseaseModel {
    fn classify(&self, study: &PatientStudy) -> Result<DiseaseLabel> {
        self.predict_label(study)
    }
}

/// Predicts the same label for every study.
#[derive(Clone, Copy, Debug)]
pub struct ConstantClassifier(pub DiseaseLabel);

impl StudyClassifier for ConstantClassifier {
    fn classify(&self, _: &PatientStudy) -> Result<DiseaseLabel> {
        Ok(self.0)
    }
}

/// Evaluates `model` on `studies`.
pub fn evaluate_studies<M: StudyClassifier + ?Sized>(
    model: &M,
    studies: &[PatientStudy],
    fold: Option<usize>,
) -> Result<EvalReport> {
    let preds: Vec<usize> = studies.par_iter().map(|s| model.classify(s).map(|l| l.index())).collect::<Result<_>>()?;
    let truths: Vec<usize> = studies.iter().map(|s| s.disease.index()).collect();
    EvalReport::from_predictions(&preds, &truths, &DISEASE_NAMES, fold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    pub folds: Vec<EvalReport>,
    /// Fold means of the micro metrics.
    pub mean: MicroMetrics,
    /// Population standard deviation of the fold micro-F1 values.
    pub std_f1: f64,
    /// Summed confusion over all validation folds.
    pub pooled: EvalReport,
}

impl CrossValReport {
    pub fn from_folds(folds: Vec<EvalReport>) -> Result<Self> {
        let k = folds.len();
        if k == 0 {
            return Err(Error::invalid("no folds to aggregate"));
        }
        let mean_of = |f: fn(&MicroMetrics) -> f64| folds.iter().map(|r| f(&r.micro)).sum::<f64>() / k as f64;
        let mean = MicroMetrics { precision: mean_of(|m| m.precision), recall: mean_of(|m| m.recall), f1: mean_of(|m| m.f1) };
        let std_f1 = (folds.iter().map(|r| (r.micro.f1 - mean.f1).powi(2)).sum::<f64>() / k as f64).sqrt();
        let mut cm = folds[0].confusion.clone();
        for r in &folds[1..] {
            cm.add(&r.confusion)?;
        }
        let names: Vec<&str> = folds[0].class_names.iter().map(String::as_str).collect();
        let pooled = EvalReport::from_confusion(cm, &names, None)?;
        Ok(Self { k, folds, mean, std_f1, pooled })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-fold rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,micro_precision,micro_recall,micro_f1\n");
        for (i, r) in self.folds.iter().enumerate() {
            out.push_str(&format!("{i},{:.6},{:.6},{:.6}\n", r.micro.precision, r.micro.recall, r.micro.f1));
        }
        out.push_str(&format!("mean,{:.6},{:.6},{:.6}\n", self.mean.precision, self.mean.recall, self.mean.f1));
        out
    }
}

/// Trains one model per fold with `factory(fold, train_part)` and scores it on
/// the held-out fold. Folds run concurrently; a failing fold is reported with its id.
pub fn crossval_report<M, F>(factory: F, studies: &[PatientStudy], k: usize, seed: u64) -> Result<CrossValReport>
where
    M: StudyClassifier,
    F: Fn(usize, &[PatientStudy]) -> Result<M> + Sync,
{
    let folds = kfold_split(studies, k, seed)?;
    let reports = folds
        .par_iter()
        .enumerate()
        .map(|(i, (train, val))| {
            let wrap = |e| Error::Fold { fold: i, source: Box::new(e) };
            let model = factory(i, train).map_err(wrap)?;
            evaluate_studies(&model, val, Some(i)).map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    CrossValReport::from_folds(reports)
}

/// Disease training recipe: inner 8:2 train/validation split of the given
/// studies, optional CA expansion, then [`train_disease_model`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseRecipe {
    pub model: DiseaseModelConfig,
    pub train: DiseaseTrainConfig,
    /// Apply the six-fold CA augmentation to the training part.
    pub expand_ca: bool,
    /// Also expand CA in the validation part.
    pub augment_val_ca: bool,
    pub aug: AugParams,
}

impl DiseaseRecipe {
    pub fn new(model: DiseaseModelConfig, train: DiseaseTrainConfig) -> Self {
        Self { model, train, expand_ca: false, augment_val_ca: false, aug: AugParams::default() }
    }

    fn expand(&self, studies: Vec<PatientStudy>) -> Result<Vec<PatientStudy>> {
        let (ca, mut rest): (Vec<_>, Vec<_>) = studies.into_iter().partition(|s| s.disease == DiseaseLabel::Ca);
        rest.extend(expand_minority_class(&ca, &self.aug)?);
        Ok(rest)
    }

    /// Fits a model on `studies`; `salt` varies the split and initialization seeds.
    pub fn fit(&self, studies: &[PatientStudy], salt: u64) -> Result<(DiseaseModel, TrainLog)> {
        let seed = self.train.seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9));
        let mut parts = split_dataset(studies, |s| s.disease.index(), &SplitSpec::disease_8_2(seed))?;
        let val = parts.pop().unwrap_or_default();
        let mut train = parts.pop().unwrap_or_default();
        if self.expand_ca {
            train = self.expand(train)?;
        }
        let val = if self.expand_ca && self.augment_val_ca { self.expand(val)? } else { val };
        let mut model = DiseaseModel::new(self.model.clone(), seed)?;
        let cfg = DiseaseTrainConfig { seed, ..self.train.clone() };
        let log = train_disease_model(&cfg, &mut model, &train, &val)?;
        Ok((model, log))
    }
}
