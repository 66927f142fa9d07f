//! Metrics, cross-validation, ablation drivers and the routing-error experiment.

pub mod ablation;
pub mod crossval;
pub mod metrics;
pub mod propagation;

pub use ablation::{
    ablation_csv, classifier_ablation, classifier_csv, default_subsets, view_ablation, view_ablation_with_recipe,
    AblationRow, ClassifierRow,
};
pub use crossval::{
    crossval_report, evaluate_studies, ConstantClassifier, CrossValReport, DiseaseRecipe, StudyClassifier,
    DISEASE_NAMES,
};
pub use metrics::{
    accuracy_per_class, confusion, f1_from, f1_per_class, micro_metrics, precision_per_class, recall_per_class,
    ClassMetrics, ConfusionMatrix, EvalReport, MicroMetrics,
};
pub use propagation::{
    fused_before_after, propagation_csv, swap_slots, view_error_propagation, PropagationRow, MV_MP_SWAP,
};

/// Names of the six view classes in index order.
pub const VIEW_NAMES: [&str; 6] = ["A4C", "PLAX", "PSAX_MV", "PSAX_MP", "PSAX_AC", "OTHER"];
