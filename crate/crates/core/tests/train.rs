use echopipe::diseasehead::{DiseaseModel, DiseaseModelConfig};
use echopipe::domain::PatientStudy;
use echopipe::featnet::TrunkConfig;
use echopipe::ingest::synth_cohort;
use echopipe::train::{cross_entropy, kfold_indices, train_disease_model, DiseaseTrainConfig};
use proptest::prelude::*;

fn quick(epochs: usize, lr: f64) -> DiseaseTrainConfig {
    DiseaseTrainConfig { epochs, lr, ..DiseaseTrainConfig::default() }
}

#[test]
fn zero_learning_rate_leaves_weights_alone() {
    let studies = synth_cohort(2, 3);
    let mut model = DiseaseModel::new(DiseaseModelConfig::new(TrunkConfig::tiny()), 1).unwrap();
    let before = model.clone();
    let log = train_disease_model(&quick(1, 0.0), &mut model, &studies, &studies).unwrap();
    assert_eq!(log.records.len(), 1);
    for (a, b) in before.params.entries().iter().zip(model.params.entries()) {
        if a.trainable {
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        }
    }
}

#[test]
fn small_cohort_is_memorized() {
    let studies: Vec<PatientStudy> = synth_cohort(5, 21);
    let mut model = DiseaseModel::new(DiseaseModelConfig::new(TrunkConfig::tiny()), 2).unwrap();
    let log = train_disease_model(&quick(12, 0.01), &mut model, &studies, &studies).unwrap();
    let best = log.best_val_accuracy().unwrap();
    assert!(best >= 0.9, "{:?}", log.records);
    let hits = studies.iter().filter(|s| model.predict_label(s).unwrap() == s.disease).count();
    assert!(hits as f64 / studies.len() as f64 >= 0.9);
    assert_eq!(log.records.len(), 12);
}

#[test]
fn weighted_cross_entropy() {
    let l = cross_entropy(&[0.0, 0.0, 0.0], 1, 0.1).unwrap();
    assert!((l - 0.1 * 3f64.ln()).abs() < 1e-12);
    assert!(cross_entropy(&[0.0, 0.0], 2, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_and_stratify(labels in prop::collection::vec(0usize..3, 10..120), k in 2usize..6, seed in any::<u64>()) {
        let folds = kfold_indices(&labels, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, v)| v.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (train, val) in &folds {
            prop_assert_eq!(train.len() + val.len(), labels.len());
            prop_assert!(train.iter().all(|i| val.binary_search(i).is_err()));
        }
        for c in 0..3 {
            let counts: Vec<usize> = folds.iter().map(|(_, v)| v.iter().filter(|&&i| labels[i] == c).count()).collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        let sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
