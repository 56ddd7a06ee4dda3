//! Confusion matrices and precision / recall / F1 over a fixed label set.
//!
//! Undefined ratios (0/0) are 0, and classes with no support in either gold
//! or predictions still count toward the macro mean with F1 = 0.

use serde::Serialize;
use thiserror::Error;

use crate::taxonomy::{Label, Level};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold has {gold} labels, predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("label {label} is not at the {level} level")]
    LevelMismatch { label: Label, level: Level },
}

/// `counts[gold][pred]`, indexed by label code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub level: Level,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn empty(level: Level) -> Self {
        let c = level.class_count();
        ConfusionMatrix {
            level,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, gold: Label, pred: Label) -> u64 {
        self.counts[gold.code()][pred.code()]
    }

    /// Grid with gold labels down the rows and predictions across the columns.
    pub fn to_tsv(&self) -> String {
        let labels = self.level.labels();
        let mut out = String::from("gold\\pred");
        for l in &labels {
            out.push('\t');
            out.push_str(&l.to_string());
        }
        out.push('\n');
        for (l, row) in labels.iter().zip(&self.counts) {
            out.push_str(&l.to_string());
            for n in row {
                out.push_str(&format!("\t{n}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(level: Level, gold: &[Label], pred: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::empty(level);
    for (&g, &p) in gold.iter().zip(pred) {
        for label in [g, p] {
            if label.level() != level {
                return Err(MetricsError::LevelMismatch { label, level });
            }
        }
        cm.counts[g.code()][p.code()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub level: Level,
    /// Indexed by label code.
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn prf_report(cm: &ConfusionMatrix) -> MetricsReport {
    let c = cm.counts.len();
    let mut per_class = Vec::with_capacity(c);
    let mut correct = 0;
    for k in 0..c {
        let tp = cm.counts[k][k];
        let predicted: u64 = (0..c).map(|g| cm.counts[g][k]).sum();
        let support: u64 = cm.counts[k].iter().sum();
        correct += tp;
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassScores {
            precision,
            recall,
            f1,
            support,
        });
    }
    let macro_f1 = if c == 0 {
        0.0
    } else {
        per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64
    };
    let total = cm.total();
    MetricsReport {
        level: cm.level,
        per_class,
        macro_f1,
        accuracy: ratio(correct, total),
        total,
    }
}

impl MetricsReport {
    pub fn f1(&self, label: Label) -> f64 {
        self.per_class[label.code()].f1
    }

    pub fn render_table(&self) -> String {
        let labels = self.level.labels();
        let width = labels
            .iter()
            .map(|l| l.to_string().len())
            .max()
            .unwrap_or(0)
            .max("macro-F1".len());
        let mut out = format!(
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "label", "precision", "recall", "f1", "support"
        );
        for (l, s) in labels.iter().zip(&self.per_class) {
            out.push_str(&format!(
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
                l.to_string(),
                s.precision,
                s.recall,
                s.f1,
                s.support
            ));
        }
        out.push_str(&format!("{:<width$}  {:>9.4}\n", "accuracy", self.accuracy));
        out.push_str(&format!("{:<width$}  {:>9.4}\n", "macro-F1", self.macro_f1));
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label\tprecision\trecall\tf1\tsupport\n");
        for (l, s) in self.level.labels().iter().zip(&self.per_class) {
            out.push_str(&format!(
                "{}\t{:.4}\t{:.4}\t{:.4}\t{}\n",
                l, s.precision, s.recall, s.f1, s.support
            ));
        }
        out.push_str(&format!("macro\t\t\t{:.4}\t{}\n", self.macro_f1, self.total));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::ClarityLabel;

    const A: Label = Label::Clarity(ClarityLabel::Ambivalent);
    const CR: Label = Label::Clarity(ClarityLabel::ClearReply);
    const CNR: Label = Label::Clarity(ClarityLabel::ClearNonReply);

    #[test]
    fn identity_and_off_diagonal() {
        let cm = confusion_matrix(Level::Clarity, &[A, CR, CNR], &[A, CR, CNR]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.counts[i][j], u64::from(i == j));
            }
        }
        let cm = confusion_matrix(Level::Clarity, &[A, A], &[CR, CR]).unwrap();
        assert_eq!(cm.get(A, CR), 2);
        assert_eq!(cm.total(), 2);
        assert_eq!(confusion_matrix(Level::Evasion, &[], &[]).unwrap().total(), 0);
    }

    #[test]
    fn shape_errors() {
        assert_eq!(
            confusion_matrix(Level::Clarity, &[A], &[]),
            Err(MetricsError::LengthMismatch { gold: 1, pred: 0 })
        );
        assert!(matches!(
            confusion_matrix(Level::Evasion, &[A], &[A]),
            Err(MetricsError::LevelMismatch { .. })
        ));
    }

    #[test]
    fn perfect_scores() {
        let cm = confusion_matrix(Level::Clarity, &[A, CR, CNR], &[A, CR, CNR]).unwrap();
        let r = prf_report(&cm);
        assert!(r.per_class.iter().all(|s| s.f1 == 1.0));
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn worked_example() {
        let cm = confusion_matrix(Level::Clarity, &[A, A, CR, CNR], &[A, CR, CR, CNR]).unwrap();
        let r = prf_report(&cm);
        assert!((r.f1(A) - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1(CR) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.f1(CNR), 1.0);
        assert_eq!(format!("{:.4}", r.macro_f1), "0.7778");
    }

    #[test]
    fn absent_class_pulls_macro_down() {
        let cm = confusion_matrix(Level::Clarity, &[A, CR], &[A, CR]).unwrap();
        let r = prf_report(&cm);
        assert_eq!(r.f1(CNR), 0.0);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn renderings() {
        let cm = confusion_matrix(Level::Clarity, &[A, CR], &[A, A]).unwrap();
        let tsv = cm.to_tsv();
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.contains("Ambivalent\t0\t1\t0"));
        let r = prf_report(&cm);
        assert!(r.render_table().contains("macro-F1"));
        assert!(r.to_tsv().starts_with("label\tprecision"));
    }
}
