//! Classification evaluation: confusion matrices, one-vs-rest metrics,
//! ROC curves with trapezoid AUC, and the per-class report table.
//!
//! Percentages round half-up to two decimals. A note on the per-class
//! accuracy column: published versions of this table carry an "Accuracy (%)"
//! whose definition is not reproducible from the per-class counts under the
//! standard one-vs-rest accuracy; the report here emits the one-vs-rest
//! accuracy `(TP+TN)/(TP+TN+FP+FN)` in that column, and the `identified` and
//! `correct` columns expose `TP/identified` for readers who want the other
//! reading.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// Float provides round/abs on f64 in no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("eval: class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("eval: class {0} absent from the labels")]
    ClassAbsent(usize),
    #[error("eval: {got} scores for {expected} labels")]
    LengthMismatch { got: usize, expected: usize },
    #[error("eval: need {expected} names, got {got}")]
    NameCountMismatch { got: usize, expected: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

/// `counts[i][j]`: samples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

/// One-vs-rest reduction for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: alloc::vec![0; k * k],
        }
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(k);
        for (truth, pred) in pairs {
            cm.record(truth, pred)?;
        }
        Ok(cm)
    }

    /// Direct construction from per-class one-vs-rest counts, for reports
    /// built from published tallies rather than raw predictions.
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::LengthMismatch {
                got: counts.len(),
                expected: k * k,
            });
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        for idx in [truth, pred] {
            if idx >= self.k {
                return Err(Error::ClassOutOfRange {
                    index: idx,
                    classes: self.k,
                });
            }
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sum of the diagonal: correctly classified samples.
    pub fn correct(&self) -> u64 {
        (0..self.k).map(|i| self.count(i, i)).sum()
    }

    /// One-vs-rest counts for class `c`.
    pub fn per_class_counts(&self, c: usize) -> ClassCounts {
        let tp = self.count(c, c);
        let mut fp = 0;
        let mut fn_ = 0;
        for other in 0..self.k {
            if other != c {
                fp += self.count(other, c);
                fn_ += self.count(c, other);
            }
        }
        let tn = self.total() - tp - fp - fn_;
        ClassCounts { tp, fp, fn_, tn }
    }

    /// Samples whose true class is `c` (the report's `identified` column).
    pub fn class_total(&self, c: usize) -> u64 {
        (0..self.k).map(|j| self.count(c, j)).sum()
    }

    pub fn to_csv(&self, names: &[String]) -> Result<String> {
        if names.len() != self.k {
            return Err(Error::NameCountMismatch {
                got: names.len(),
                expected: self.k,
            });
        }
        let mut out = String::from("true\\predicted");
        for name in names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..self.k {
            out.push_str(&names[i]);
            for j in 0..self.k {
                out.push_str(&format!(",{}", self.count(i, j)));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Per-class metrics as fractions in `[0, 1]`. Ratios with a zero
/// denominator are reported as 0 with the matching `*_defined` flag false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

/// Accuracy `(TP+TN)/total`, precision `TP/(TP+FP)`, recall `TP/(TP+FN)`,
/// F1 `2PR/(P+R)` for one class of the confusion matrix.
pub fn metrics(cm: &ConfusionMatrix, c: usize) -> ClassMetrics {
    let ClassCounts { tp, fp, fn_, tn } = cm.per_class_counts(c);
    let (accuracy, _) = ratio(tp + tn, tp + tn + fp + fn_);
    let (precision, precision_defined) = ratio(tp, tp + fp);
    let (recall, recall_defined) = ratio(tp, tp + fn_);
    let (f1, f1_defined) = if precision_defined && recall_defined && precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), true)
    } else {
        (0.0, false)
    };
    ClassMetrics {
        accuracy,
        precision,
        recall,
        f1,
        precision_defined,
        recall_defined,
        f1_defined,
    }
}

/// Fraction -> percentage, rounded half-up to two decimals.
pub fn pct(fraction: f64) -> f64 {
    (fraction * 10_000.0).round() / 100.0
}

pub fn fmt_pct(fraction: f64) -> String {
    format!("{:.2}", pct(fraction))
}

/// One-vs-rest ROC for class `c`: `(fpr, tpr)` points from a threshold sweep
/// over the unique scores, from `(0,0)` to `(1,1)`.
pub fn roc_curve(scores: &[f64], labels: &[usize], c: usize) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            got: scores.len(),
            expected: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l == c).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(Error::ClassAbsent(c));
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    thresholds.dedup();

    let mut points = alloc::vec![(0.0, 0.0)];
    for t in thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                if l == c {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = if neg == 0 { 0.0 } else { fp as f64 / neg as f64 };
        points.push((fpr, tpr));
    }
    if *points.last().expect("nonempty") != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    Ok(points)
}

/// Trapezoid area under `(fpr, tpr)` points sorted by fpr.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        area += (x1 - x0) * (y0 + y1) * 0.5;
    }
    area
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (fpr, tpr) in points {
        out.push_str(&format!("{fpr},{tpr}\n"));
    }
    out
}

/// Per-class report in the published column layout:
/// `id,class,identified,correct,accuracy,precision,f1,recall`, one row per
/// class plus a totals row. Percentages carry two decimals.
pub fn report_table(cm: &ConfusionMatrix, names: &[String]) -> Result<String> {
    if names.len() != cm.k() {
        return Err(Error::NameCountMismatch {
            got: names.len(),
            expected: cm.k(),
        });
    }
    let mut out = String::from("id,class,identified,correct,accuracy,precision,f1,recall\n");
    for c in 0..cm.k() {
        let m = metrics(cm, c);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c + 1,
            names[c],
            cm.class_total(c),
            cm.count(c, c),
            fmt_pct(m.accuracy),
            fmt_pct(m.precision),
            fmt_pct(m.f1),
            fmt_pct(m.recall),
        ));
    }
    let total = cm.total();
    let overall = if total == 0 {
        0.0
    } else {
        cm.correct() as f64 / total as f64
    };
    let o = fmt_pct(overall);
    out.push_str(&format!(
        "-,-,{},{},{o},{o},{o},{o}\n",
        total,
        cm.correct()
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    /// 2x2 matrix with the given one-vs-rest counts for class 0.
    fn cm_from(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(2, alloc::vec![tp, fn_, fp, tn]).unwrap()
    }

    #[test]
    fn per_class_counts_definition() {
        let cm = ConfusionMatrix::from_counts(2, alloc::vec![3, 1, 2, 4]).unwrap();
        let c = cm.per_class_counts(0);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 2, 1, 4));
        assert_eq!(c.tp + c.fp + c.fn_ + c.tn, cm.total());
    }

    #[test]
    fn diagonal_matrix_has_no_errors() {
        let cm = ConfusionMatrix::from_counts(3, alloc::vec![5, 0, 0, 0, 7, 0, 0, 0, 2])
            .unwrap();
        for c in 0..3 {
            let counts = cm.per_class_counts(c);
            assert_eq!(counts.fp, 0);
            assert_eq!(counts.fn_, 0);
            let m = metrics(&cm, c);
            assert_eq!(pct(m.accuracy), 100.0);
            assert_eq!(pct(m.precision), 100.0);
        }
    }

    #[test]
    fn published_hygrocybe_row_reproduces() {
        // TP 104, FP 6, FN 8
        let cm = cm_from(104, 6, 8, 1318);
        let m = metrics(&cm, 0);
        assert!((pct(m.precision) - 94.55).abs() <= 0.01);
        assert!((pct(m.recall) - 92.86).abs() <= 0.01);
        assert!((pct(m.f1) - 93.69).abs() <= 0.01);
    }

    #[test]
    fn published_morchella_row_reproduces() {
        // TP 27, FP 1, FN 2
        let cm = cm_from(27, 1, 2, 469);
        let m = metrics(&cm, 0);
        assert!((pct(m.precision) - 96.43).abs() <= 0.01);
        assert!((pct(m.recall) - 93.10).abs() <= 0.01);
        assert!((pct(m.f1) - 94.74).abs() <= 0.01);
    }

    #[test]
    fn overall_accuracy_386_of_499() {
        assert_eq!(pct(386.0 / 499.0), 77.35);
    }

    #[test]
    fn degenerate_ratios_are_zero_with_flags() {
        // nothing predicted as class 0, nothing truly class 0
        let cm = ConfusionMatrix::from_counts(2, alloc::vec![0, 0, 0, 5]).unwrap();
        let m = metrics(&cm, 0);
        assert_eq!(m.precision, 0.0);
        assert!(!m.precision_defined);
        assert!(!m.recall_defined);
        assert!(!m.f1_defined);
    }

    #[test]
    fn recall_times_support_recovers_tp() {
        let cm = cm_from(104, 6, 8, 1318);
        let m = metrics(&cm, 0);
        let c = cm.per_class_counts(0);
        assert!((m.recall * (c.tp + c.fn_) as f64 - c.tp as f64).abs() < 1e-9);
    }

    #[test]
    fn roc_perfect_separation_has_auc_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [0, 0, 1, 1];
        let points = roc_curve(&scores, &labels, 0).unwrap();
        assert_eq!(points.first(), Some(&(0.0, 0.0)));
        assert_eq!(points.last(), Some(&(1.0, 1.0)));
        assert!((auc(&points) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_all_equal_scores_has_auc_half() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let labels = [0, 1, 0, 1];
        let points = roc_curve(&scores, &labels, 0).unwrap();
        assert!((auc(&points) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn roc_matches_pair_counting_oracle() {
        // AUC equals P(score+ > score-) + 0.5 P(equal)
        let scores = [0.9, 0.4, 0.4, 0.1];
        let labels = [0, 0, 1, 1];
        let points = roc_curve(&scores, &labels, 0).unwrap();
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, (&sp, &lp)) in scores.iter().zip(&labels).enumerate() {
            let _ = i;
            if lp != 0 {
                continue;
            }
            for (&sn, &ln) in scores.iter().zip(&labels) {
                if ln == 0 {
                    continue;
                }
                pairs += 1.0;
                if sp > sn {
                    num += 1.0;
                } else if sp == sn {
                    num += 0.5;
                }
            }
        }
        assert!((auc(&points) - num / pairs).abs() < 1e-12);
    }

    #[test]
    fn roc_monotone_and_bounded() {
        let scores = [0.3, 0.7, 0.2, 0.9, 0.5, 0.5];
        let labels = [1, 0, 1, 0, 0, 1];
        let points = roc_curve(&scores, &labels, 0).unwrap();
        let a = auc(&points);
        assert!((0.0..=1.0).contains(&a));
        for w in points.windows(2) {
            assert!(w[1].0 >= w[0].0);
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn roc_absent_class_errors() {
        assert!(matches!(
            roc_curve(&[0.5, 0.4], &[1, 1], 0),
            Err(Error::ClassAbsent(0))
        ));
    }

    #[test]
    fn report_has_k_plus_one_rows_and_totals() {
        let cm = ConfusionMatrix::from_counts(2, alloc::vec![3, 1, 2, 4]).unwrap();
        let names = alloc::vec!["x".to_string(), "y".to_string()];
        let table = report_table(&cm, &names).unwrap();
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(rows.len(), 1 + 2 + 1); // header + k + totals
        assert!(rows[3].starts_with("-,-,10,7,70.00,70.00,70.00,70.00"));
    }

    #[test]
    fn metrics_invariant_under_class_relabeling() {
        let cm = ConfusionMatrix::from_counts(
            3,
            alloc::vec![5, 1, 0, 2, 7, 1, 0, 3, 4],
        )
        .unwrap();
        // swap classes 0 and 2 in both axes
        let perm = [2usize, 1, 0];
        let mut swapped = ConfusionMatrix::new(3);
        for i in 0..3 {
            for j in 0..3 {
                for _ in 0..cm.count(i, j) {
                    swapped.record(perm[i], perm[j]).unwrap();
                }
            }
        }
        for c in 0..3 {
            assert_eq!(metrics(&cm, c), metrics(&swapped, perm[c]));
        }
    }
}
