//! Effect of a view-routing mistake on the disease prediction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diseasehead::DiseaseModel;
use crate::domain::{argmax, DiseaseLabel, FusedFeature, PatientStudy, ViewLabel};
use crate::error::{Error, Result};
use crate::train::TrainLog;

/// The default corruption: PSAX_MV content routed to the PSAX_MP slot and back.
pub const MV_MP_SWAP: (ViewLabel, ViewLabel) = (ViewLabel::PsaxMv, ViewLabel::PsaxMp);

/// Scores are pre-softmax logits of the study's true class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationRow {
    pub patient_id: String,
    pub target: DiseaseLabel,
    pub original_score: f64,
    pub corrupted_score: f64,
    pub original_label: DiseaseLabel,
    pub corrupted_label: DiseaseLabel,
}

impl PropagationRow {
    pub fn flipped(&self) -> bool {
        self.original_label != self.corrupted_label
    }

    pub fn decreased(&self) -> bool {
        self.corrupted_score < self.original_score
    }
}

/// Copy of `study` with the images of slots `a` and `b` exchanged.
pub fn swap_slots(study: &PatientStudy, swap: (ViewLabel, ViewLabel)) -> PatientStudy {
    let mut s = study.clone();
    s.swap_views(swap.0, swap.1);
    s
}

/// Fused tensors before and after the swap.
pub fn fused_before_after(
    model: &DiseaseModel,
    study: &PatientStudy,
    swap: (ViewLabel, ViewLabel),
) -> Result<(FusedFeature, FusedFeature)> {
    Ok((model.fused(study)?, model.fused(&swap_slots(study, swap))?))
}

fn label(logits: &[f64]) -> Result<DiseaseLabel> {
    DiseaseLabel::from_index(argmax(logits)).ok_or_else(|| Error::invalid("disease index out of range"))
}

/// Reruns every study with the two slots swapped. `log` must come from the
/// training run that produced `model`.
pub fn view_error_propagation(
    model: &DiseaseModel,
    log: &TrainLog,
    studies: &[PatientStudy],
    swap: (ViewLabel, ViewLabel),
) -> Result<Vec<PropagationRow>> {
    if log.records.is_empty() {
        return Err(Error::invalid("error analysis needs a trained model (no completed epoch)"));
    }
    studies
        .par_iter()
        .map(|s| {
            let before = model.logits(s)?;
            let after = model.logits(&swap_slots(s, swap))?;
            let t = s.disease.index();
            Ok(PropagationRow {
                patient_id: s.patient_id.clone(),
                target: s.disease,
                original_score: before[t],
                corrupted_score: after[t],
                original_label: label(&before)?,
                corrupted_label: label(&after)?,
            })
        })
        .collect()
}

/// Table with one column per patient: scores before/after and labels before/after.
pub fn propagation_csv(rows: &[PropagationRow]) -> String {
    let mut out = String::from("patient_id,target,original_score,corrupted_score,original_label,corrupted_label,flipped\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{},{},{}\n",
            r.patient_id,
            r.target,
            r.original_score,
            r.corrupted_score,
            r.original_label,
            r.corrupted_label,
            r.flipped()
        ));
    }
    out
}
