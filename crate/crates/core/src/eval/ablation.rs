//! View-subset and classifier ablation drivers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diseasehead::{fit_alt_classifier, AltClassifierParams, ClassifierKind, DiseaseModel};
use crate::domain::{DiseaseLabel, PatientStudy, ViewLabel};
use crate::error::{Error, Result};
use crate::eval::crossval::{crossval_report, evaluate_studies, CrossValReport, DiseaseRecipe, DISEASE_NAMES};
use crate::eval::metrics::EvalReport;
use crate::train::kfold_split;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub views: Vec<ViewLabel>,
    pub report: CrossValReport,
}

fn model_name(n: usize) -> String {
    let word = ["single", "two", "three", "four", "five"].get(n.wrapping_sub(1)).copied().unwrap_or("multi");
    format!("{word}-view model")
}

/// One cross-validation per view subset. `factory(subset, fold, train)` builds
/// a model whose fusion width follows the subset.
pub fn view_ablation<M, F>(
    subsets: &[Vec<ViewLabel>],
    studies: &[PatientStudy],
    k: usize,
    seed: u64,
    factory: F,
) -> Result<Vec<AblationRow>>
where
    M: crate::eval::crossval::StudyClassifier,
    F: Fn(&[ViewLabel], usize, &[PatientStudy]) -> Result<M> + Sync,
{
    subsets
        .iter()
        .map(|views| {
            if views.is_empty() {
                return Err(Error::Config("empty view subset".into()));
            }
            let report = crossval_report(|fold, train| factory(views, fold, train), studies, k, seed)?;
            Ok(AblationRow { views: views.clone(), report })
        })
        .collect()
}

/// [`view_ablation`] with the standard recipe, swapping the model's view list per subset.
pub fn view_ablation_with_recipe(
    subsets: &[Vec<ViewLabel>],
    studies: &[PatientStudy],
    k: usize,
    seed: u64,
    recipe: &DiseaseRecipe,
) -> Result<Vec<AblationRow>> {
    view_ablation(subsets, studies, k, seed, |views, fold, train| {
        let mut r = recipe.clone();
        r.model = r.model.with_views(views);
        r.fit(train, fold as u64).map(|(m, _)| m)
    })
}

/// `model,views,micro_f1,precision,recall`, one line per subset.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("model,views,micro_f1,precision,recall\n");
    for r in rows {
        let views: Vec<&str> = r.views.iter().map(|v| v.as_str()).collect();
        out.push_str(&format!(
            "{},\"{}\",{:.4},{:.4},{:.4}\n",
            model_name(r.views.len()),
            views.join(", "),
            r.report.mean.f1,
            r.report.mean.precision,
            r.report.mean.recall
        ));
    }
    out
}

/// The standard subsets: each single view, the paired A4C+PLAX model, the three- and
/// four-view variants extending it, and all five views.
pub fn default_subsets() -> Vec<Vec<ViewLabel>> {
    use ViewLabel::*;
    vec![
        vec![A4c],
        vec![Plax],
        vec![A4c, Plax],
        vec![A4c, Plax, PsaxMv],
        vec![A4c, Plax, PsaxMp],
        vec![A4c, Plax, PsaxAc],
        vec![A4c, Plax, PsaxMv, PsaxMp],
        vec![A4c, Plax, PsaxMv, PsaxAc],
        vec![A4c, Plax, PsaxMp, PsaxAc],
        vec![A4c, Plax, PsaxMv, PsaxMp, PsaxAc],
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRow {
    pub classifier: String,
    pub report: CrossValReport,
}

/// Per fold, trains one disease model with `factory`, then scores its linear head
/// and each alternate classifier fitted on the model's pooled training vectors.
pub fn classifier_ablation<F>(
    factory: F,
    studies: &[PatientStudy],
    k: usize,
    seed: u64,
    kinds: &[ClassifierKind],
    params: &AltClassifierParams,
) -> Result<Vec<ClassifierRow>>
where
    F: Fn(usize, &[PatientStudy]) -> Result<DiseaseModel> + Sync,
{
    let folds = kfold_split(studies, k, seed)?;
    let per_fold: Vec<Vec<EvalReport>> = folds
        .par_iter()
        .enumerate()
        .map(|(i, (train, val))| {
            let wrap = |e| Error::Fold { fold: i, source: Box::new(e) };
            let model = factory(i, train).map_err(wrap)?;
            let pooled = |set: &[PatientStudy]| -> Result<Vec<Vec<f32>>> {
                set.par_iter().map(|s| model.pooled(s).map(|p| p.values)).collect()
            };
            let (xtr, xva) = (pooled(train).map_err(wrap)?, pooled(val).map_err(wrap)?);
            let ytr: Vec<DiseaseLabel> = train.iter().map(|s| s.disease).collect();
            let truths: Vec<usize> = val.iter().map(|s| s.disease.index()).collect();
            let mut reports = Vec::with_capacity(kinds.len() + 1);
            for &kind in kinds {
                let clf = fit_alt_classifier(kind, &xtr, &ytr, params).map_err(wrap)?;
                let preds: Vec<usize> = xva.iter().map(|x| clf.predict_index(x)).collect();
                reports.push(EvalReport::from_predictions(&preds, &truths, &DISEASE_NAMES, Some(i)).map_err(wrap)?);
            }
            reports.push(evaluate_studies(&model, val, Some(i)).map_err(wrap)?);
            Ok(reports)
        })
        .collect::<Result<_>>()?;
    let names = kinds.iter().map(|k| k.as_str().to_string()).chain(std::iter::once("LINEAR_NETWORK".to_string()));
    names
        .enumerate()
        .map(|(j, classifier)| {
            let folds = per_fold.iter().map(|f| f[j].clone()).collect();
            Ok(ClassifierRow { classifier, report: CrossValReport::from_folds(folds)? })
        })
        .collect()
}

/// `classifier,micro_f1,precision,recall`.
pub fn classifier_csv(rows: &[ClassifierRow]) -> String {
    let mut out = String::from("classifier,micro_f1,precision,recall\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4}\n",
            r.classifier, r.report.mean.f1, r.report.mean.precision, r.report.mean.recall
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_follow_subset_size() {
        assert_eq!(model_name(1), "single-view model");
        assert_eq!(model_name(5), "five-view model");
        assert_eq!(default_subsets().last().unwrap().len(), 5);
    }
}
