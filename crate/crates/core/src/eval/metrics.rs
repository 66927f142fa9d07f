//! Confusion matrices and the per-class and micro-averaged metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self { counts: vec![vec![0; k]; k] }
    }

    /// Wraps raw counts; rejects non-square input.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::shape(format!("confusion matrix must be square and nonempty, got {k} rows")));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Number of samples whose true class is `i`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.counts[i][i]
    }

    pub fn fp(&self, i: usize) -> u64 {
        (0..self.classes()).filter(|&t| t != i).map(|t| self.counts[t][i]).sum()
    }

    pub fn fn_(&self, i: usize) -> u64 {
        self.support(i) - self.tp(i)
    }

    pub fn tn(&self, i: usize) -> u64 {
        self.total() - self.tp(i) - self.fp(i) - self.fn_(i)
    }

    /// Row-normalized rates; empty rows stay zero.
    pub fn rates(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::shape(format!("cannot add {}-class and {}-class matrices", self.classes(), other.classes())));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = String::from("true\\pred");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(names.get(i).copied().unwrap_or("?"));
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(preds: &[usize], truths: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", preds.len(), truths.len())));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (n, (&p, &t)) in preds.iter().zip(truths).enumerate() {
        if p >= k || t >= k {
            return Err(Error::invalid(format!("sample {n}: label out of range for {k} classes")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_nonempty(cm: &ConfusionMatrix) -> Result<()> {
    if cm.total() == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    Ok(())
}

/// One-vs-rest accuracy `(TP+TN)/(TP+TN+FP+FN)` for class `i`.
pub fn accuracy_per_class(cm: &ConfusionMatrix, i: usize) -> Result<f64> {
    check_nonempty(cm)?;
    Ok(ratio(cm.tp(i) + cm.tn(i), cm.total()))
}

pub fn precision_per_class(cm: &ConfusionMatrix, i: usize) -> f64 {
    ratio(cm.tp(i), cm.tp(i) + cm.fp(i))
}

pub fn recall_per_class(cm: &ConfusionMatrix, i: usize) -> f64 {
    ratio(cm.tp(i), cm.tp(i) + cm.fn_(i))
}

/// Harmonic mean of two rates, 0 when both vanish.
pub fn f1_from(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn f1_per_class(cm: &ConfusionMatrix, i: usize) -> f64 {
    f1_from(precision_per_class(cm, i), recall_per_class(cm, i))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// TP, FP and FN pooled over classes before taking ratios.
pub fn micro_metrics(cm: &ConfusionMatrix) -> Result<MicroMetrics> {
    check_nonempty(cm)?;
    let k = cm.classes();
    let tp: u64 = (0..k).map(|i| cm.tp(i)).sum();
    let fp: u64 = (0..k).map(|i| cm.fp(i)).sum();
    let fn_: u64 = (0..k).map(|i| cm.fn_(i)).sum();
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(MicroMetrics { precision, recall, f1: f1_from(precision, recall) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Metrics of one evaluated set (a fold, or a held-out split).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold: Option<usize>,
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub micro: MicroMetrics,
    pub n: u64,
}

impl EvalReport {
    pub fn from_confusion(cm: ConfusionMatrix, names: &[&str], fold: Option<usize>) -> Result<Self> {
        if names.len() != cm.classes() {
            return Err(Error::invalid(format!("{} class names for {} classes", names.len(), cm.classes())));
        }
        let per_class = (0..cm.classes())
            .map(|i| {
                Ok(ClassMetrics {
                    class: names[i].to_string(),
                    support: cm.support(i),
                    precision: precision_per_class(&cm, i),
                    recall: recall_per_class(&cm, i),
                    f1: f1_per_class(&cm, i),
                    accuracy: accuracy_per_class(&cm, i)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            fold,
            class_names: names.iter().map(|s| s.to_string()).collect(),
            micro: micro_metrics(&cm)?,
            n: cm.total(),
            confusion: cm,
            per_class,
        })
    }

    pub fn from_predictions(preds: &[usize], truths: &[usize], names: &[&str], fold: Option<usize>) -> Result<Self> {
        Self::from_confusion(confusion(preds, truths, names.len())?, names, fold)
    }

    /// Overall accuracy, `trace / total`.
    pub fn accuracy(&self) -> f64 {
        ratio(self.confusion.trace(), self.confusion.total())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per class plus a `micro` row.
    pub fn to_csv(&self) -> String {
        let fold = self.fold.map(|f| f.to_string()).unwrap_or_default();
        let mut out = String::from("fold,class,support,precision,recall,f1,accuracy\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{fold},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                c.class, c.support, c.precision, c.recall, c.f1, c.accuracy
            ));
        }
        out.push_str(&format!(
            "{fold},micro,{},{:.6},{:.6},{:.6},{:.6}\n",
            self.n,
            self.micro.precision,
            self.micro.recall,
            self.micro.f1,
            self.accuracy()
        ));
        out
    }
}
