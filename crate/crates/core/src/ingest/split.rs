//! Stratified, seeded dataset partitioning.
//!
//! Per class, part `i` receives `floor(n · ratio_i)` items and the leftover
//! goes to the remainder part (the validation split, index 1, by default).
//! With this rule an 8:1:1 split of 1,417 items yields 1133/143/141.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StratifyBy {
    View,
    Disease,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: Vec<f64>,
    pub seed: u64,
    pub stratify_by: StratifyBy,
    /// Part that absorbs the per-class rounding remainder.
    #[serde(default = "default_remainder_part")]
    pub remainder_part: usize,
}

fn default_remainder_part() -> usize {
    1
}

impl SplitSpec {
    /// Train/validation/test at 8:1:1, stratified per view.
    pub fn views_8_1_1(seed: u64) -> Self {
        Self { ratios: vec![0.8, 0.1, 0.1], seed, stratify_by: StratifyBy::View, remainder_part: 1 }
    }

    /// Train/validation at 8:2, stratified per disease (patient-level).
    pub fn disease_8_2(seed: u64) -> Self {
        Self { ratios: vec![0.8, 0.2], seed, stratify_by: StratifyBy::Disease, remainder_part: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("split ratios must be nonnegative and finite"));
        }
        let s: f64 = self.ratios.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {s}, expected 1")));
        }
        if self.remainder_part >= self.ratios.len() {
            return Err(Error::invalid("remainder part out of range"));
        }
        Ok(())
    }

    /// Part sizes for a class of `n` items.
    pub fn part_sizes(&self, n: usize) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.ratios.iter().map(|r| (n as f64 * r + 1e-9).floor() as usize).collect();
        let used: usize = sizes.iter().sum();
        sizes[self.remainder_part] += n - used;
        sizes
    }
}

/// Partitions item indices by class label; deterministic for a given seed.
pub fn split_indices(labels: &[usize], spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut parts = vec![Vec::new(); spec.ratios.len()];
    for &class in &classes {
        let mut idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        idx.shuffle(&mut rng);
        let mut start = 0;
        for (p, size) in spec.part_sizes(idx.len()).into_iter().enumerate() {
            parts[p].extend_from_slice(&idx[start..start + size]);
            start += size;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Splits `items` into `spec.ratios.len()` stratified parts.
pub fn split_dataset<T: Clone>(items: &[T], label: impl Fn(&T) -> usize, spec: &SplitSpec) -> Result<Vec<Vec<T>>> {
    let labels: Vec<usize> = items.iter().map(label).collect();
    let parts = split_indices(&labels, spec)?;
    Ok(parts.into_iter().map(|p| p.into_iter().map(|i| items[i].clone()).collect()).collect())
}
