//! Classification metrics: confusion matrix, per-class and macro
//! accuracy/precision/recall/F1 via one-vs-rest reduction, and ROC/AUC.

use serde::Serialize;

use crate::error::Error;
use crate::Result;

/// K×K counts; rows are true categories, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Shape(format!(
                "{} counts for a {k}x{k} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.k).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, predicted)).sum()
    }

    /// One-vs-rest reduction for category `k`: (TP, FN, FP, TN).
    pub fn one_vs_rest(&self, k: usize) -> (u64, u64, u64, u64) {
        let tp = self.get(k, k);
        let fn_ = self.row_sum(k) - tp;
        let fp = self.col_sum(k) - tp;
        let tn = self.total() - tp - fn_ - fp;
        (tp, fn_, fp, tn)
    }
}

/// Per-category metrics; a `None` marks a zero-denominator value, reported
/// as undefined rather than guessed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted means over classes where the metric is defined.
    pub macro_accuracy: Option<f64>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    /// trace / total, reported separately from the one-vs-rest accuracies.
    pub overall_accuracy: f64,
    /// One warning per undefined cell excluded from a macro average.
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

fn macro_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Applies the one-vs-rest reductions and the standard four formulas.
pub fn metrics(confusion: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::Config("metrics over an empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(confusion.k());
    let mut warnings = Vec::new();
    for k in 0..confusion.k() {
        let (tp, fn_, fp, tn) = confusion.one_vs_rest(k);
        let accuracy = ratio(tp + tn, total);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        for (name, v) in [
            ("precision", precision),
            ("recall", recall),
            ("f1", f1),
        ] {
            if v.is_none() {
                warnings.push(format!(
                    "category {k}: {name} undefined (zero denominator), excluded from macro"
                ));
            }
        }
        per_class.push(ClassMetrics {
            accuracy,
            precision,
            recall,
            f1,
        });
    }
    let trace: u64 = (0..confusion.k()).map(|k| confusion.get(k, k)).sum();
    Ok(MetricsReport {
        macro_accuracy: macro_mean(per_class.iter().map(|c| c.accuracy)),
        macro_precision: macro_mean(per_class.iter().map(|c| c.precision)),
        macro_recall: macro_mean(per_class.iter().map(|c| c.recall)),
        macro_f1: macro_mean(per_class.iter().map(|c| c.f1)),
        overall_accuracy: trace as f64 / total as f64,
        per_class,
        warnings,
    })
}

/// One ROC point: the (FPR, TPR) reached once scores >= `threshold` are
/// called positive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// One-vs-rest ROC for scores of a single category. The threshold sweep
/// visits each distinct score once; AUC accumulates trapezoids with an
/// integer numerator, so it equals pair counting (ties at half credit)
/// exactly. Undefined when either class is absent.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<RocCurve> {
    if scores.len() != positives.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let p: u64 = positives.iter().filter(|&&b| b).count() as u64;
    let n: u64 = positives.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::Config(
            "roc needs at least one positive and one negative".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("roc scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    // area numerator: sum of dFP * (TP_prev + TP_cur) over sweep steps,
    // equal to 2*wins + ties of the positive-outranks-negative count
    let mut area2: u64 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        let (tp_prev, fp_prev) = (tp, fp);
        while i < order.len() && scores[order[i]] == score {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp_prev) * (tp_prev + tp);
        points.push(RocPoint {
            threshold: score,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    Ok(RocCurve {
        points,
        auc: area2 as f64 / (2 * p * n) as f64,
    })
}

/// Per-category ROC over full softmax rows plus the macro AUC. Categories
/// with a single class present are flagged and skipped.
pub fn roc_auc_per_category(
    score_rows: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
) -> Result<(Vec<Option<RocCurve>>, Option<f64>, Vec<String>)> {
    if score_rows.len() != labels.len() {
        return Err(Error::Shape("score rows and labels differ in length".into()));
    }
    let mut curves = Vec::with_capacity(num_classes);
    let mut warnings = Vec::new();
    for k in 0..num_classes {
        let scores: Vec<f64> = score_rows.iter().map(|r| r[k]).collect();
        let positives: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        match roc_auc(&scores, &positives) {
            Ok(curve) => curves.push(Some(curve)),
            Err(_) => {
                warnings.push(format!(
                    "category {k}: auc undefined (single-class labels)"
                ));
                curves.push(None);
            }
        }
    }
    let macro_auc = macro_mean(curves.iter().map(|c| c.as_ref().map(|c| c.auc)));
    Ok((curves, macro_auc, warnings))
}
