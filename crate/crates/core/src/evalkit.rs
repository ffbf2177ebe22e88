//! Confusion-matrix metrics: per-class precision/recall/F1, accuracy,
//! the generalized multiclass Matthews Correlation Coefficient, and the
//! harmful-vs-neutral binary collapse.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::taxonomy::Category;

/// A square gold-vs-predicted count matrix. Rows are gold classes, columns
/// are predicted classes. For taxonomy scoring the axes follow the
/// canonical category order (Neutral last); the type itself works for any
/// class count so the MCC machinery can be checked on small matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty matrix: no scored records")]
    EmptyMatrix,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> ConfusionMatrix {
        assert!(n >= 1, "matrix needs at least one class");
        ConfusionMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> ConfusionMatrix {
        let n = rows.len();
        let mut m = ConfusionMatrix::zeros(n);
        for (g, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            for (p, &c) in row.iter().enumerate() {
                m.counts[g * n + p] = c;
            }
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, gold: usize, predicted: usize) -> u64 {
        self.counts[gold * self.n + predicted]
    }

    pub fn add(&mut self, gold: usize, predicted: usize) {
        self.counts[gold * self.n + predicted] += 1;
    }

    pub fn cell(&self, gold: Category, predicted: Category) -> u64 {
        debug_assert_eq!(self.n, Category::COUNT);
        self.get(gold.index(), predicted.index())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        (0..self.n).map(|p| self.get(gold, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.n).map(|g| self.get(g, predicted)).sum()
    }

    pub fn diagonal_sum(&self) -> u64 {
        (0..self.n).map(|k| self.get(k, k)).sum()
    }
}

/// Builds the 12x12 taxonomy confusion matrix from (gold, predicted) pairs.
pub fn build_confusion(records: &[(Category, Category)]) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::zeros(Category::COUNT);
    for (gold, predicted) in records {
        m.add(gold.index(), predicted.index());
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a 0/0 ratio was coerced to 0.0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-class precision, recall, F1 and support. 0/0 cells come back as 0.0
/// with the degenerate flag set.
pub fn per_class_prf(m: &ConfusionMatrix) -> BTreeMap<Category, ClassMetrics> {
    assert_eq!(m.classes(), Category::COUNT);
    let mut out = BTreeMap::new();
    for category in Category::ALL {
        let k = category.index();
        let diag = m.get(k, k);
        let (precision, p_deg) = ratio(diag, m.col_sum(k));
        let (recall, r_deg) = ratio(diag, m.row_sum(k));
        let (f1, f_deg) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        out.insert(
            category,
            ClassMetrics {
                precision,
                recall,
                f1,
                support: m.row_sum(k),
                degenerate: p_deg || r_deg || f_deg,
            },
        );
    }
    out
}

/// Generalized K-class MCC (the R_K statistic). With c the diagonal sum,
/// s the grand total, t_k the gold counts, and p_k the predicted counts:
///
///   mcc = (c*s - sum_k p_k*t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2))
///
/// Either denominator factor being zero (a constant predictor or a single
/// gold class) yields 0.0 by convention.
pub fn multiclass_mcc(m: &ConfusionMatrix) -> f64 {
    let s = m.total() as f64;
    let c = m.diagonal_sum() as f64;
    let mut sum_pt = 0.0;
    let mut sum_p2 = 0.0;
    let mut sum_t2 = 0.0;
    for k in 0..m.classes() {
        let t = m.row_sum(k) as f64;
        let p = m.col_sum(k) as f64;
        sum_pt += p * t;
        sum_p2 += p * p;
        sum_t2 += t * t;
    }
    let den = (s * s - sum_p2) * (s * s - sum_t2);
    if den <= 0.0 {
        return 0.0;
    }
    (c * s - sum_pt) / den.sqrt()
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    let total = m.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    Ok(m.diagonal_sum() as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Collapses the 12-class matrix to detected-harmful vs Neutral. Any
/// harmful prediction on a harmful gold comment counts as a true positive,
/// even when the specific harmful category is wrong.
pub fn binary_collapse(m: &ConfusionMatrix) -> BinaryCounts {
    assert_eq!(m.classes(), Category::COUNT);
    let neutral = Category::Neutral.index();
    let mut counts = BinaryCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for g in 0..m.classes() {
        for p in 0..m.classes() {
            let c = m.get(g, p);
            match (g == neutral, p == neutral) {
                (false, false) => counts.tp += c,
                (false, true) => counts.fn_ += c,
                (true, false) => counts.fp += c,
                (true, true) => counts.tn += c,
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub degenerate: bool,
}

/// Binary precision/recall/F1 and the closed-form binary MCC, with the
/// 0/0 -> 0.0 convention.
pub fn binary_prf(counts: BinaryCounts) -> BinaryMetrics {
    let BinaryCounts { tp, fp, fn_, tn } = counts;
    let (precision, p_deg) = ratio(tp, tp + fp);
    let (recall, r_deg) = ratio(tp, tp + fn_);
    let (f1, f_deg) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    let den = (tp + fp) as f64 * (tp + fn_) as f64 * (tn + fp) as f64 * (tn + fn_) as f64;
    let (mcc, m_deg) = if den == 0.0 {
        (0.0, true)
    } else {
        (
            (tp as f64 * tn as f64 - fp as f64 * fn_ as f64) / den.sqrt(),
            false,
        )
    };
    BinaryMetrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
        mcc,
        degenerate: p_deg || r_deg || f_deg || m_deg,
    }
}

/// The full metric suite for one scored run.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<Category, ClassMetrics>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mcc: f64,
    pub binary: BinaryMetrics,
    pub total: u64,
}

pub fn metrics_report(m: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let per_class = per_class_prf(m);
    let macro_f1 = per_class.values().map(|v| v.f1).sum::<f64>() / per_class.len() as f64;
    Ok(MetricsReport {
        accuracy: accuracy(m)?,
        macro_f1,
        mcc: multiclass_mcc(m),
        binary: binary_prf(binary_collapse(m)),
        total: m.total(),
        per_class,
    })
}

/// Percentage rounded half-up to two decimals, matching report tables.
pub fn percent(rate: f64) -> f64 {
    ((rate * 10000.0) + 0.5).floor() / 100.0
}

impl MetricsReport {
    /// Aligned plain-text table: one row per class plus the summary block.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>10} {:>10} {:>9}",
            "Category", "Precision", "Recall", "F1", "Support"
        );
        for (category, m) in &self.per_class {
            let _ = writeln!(
                s,
                "{:<24} {:>9.2}% {:>9.2}% {:>9.2}% {:>9}",
                category.canonical_name(),
                percent(m.precision),
                percent(m.recall),
                percent(m.f1),
                m.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "accuracy  {:>8.2}%", percent(self.accuracy));
        let _ = writeln!(s, "macro F1  {:>8.2}%", percent(self.macro_f1));
        let _ = writeln!(s, "MCC       {:>9.3}", self.mcc);
        let _ = writeln!(
            s,
            "binary    P {:.2}%  R {:.2}%  F1 {:.2}%  MCC {:.3}  (tp {} fp {} fn {} tn {})",
            percent(self.binary.precision),
            percent(self.binary.recall),
            percent(self.binary.f1),
            self.binary.mcc,
            self.binary.tp,
            self.binary.fp,
            self.binary.fn_,
            self.binary.tn
        );
        s
    }
}
