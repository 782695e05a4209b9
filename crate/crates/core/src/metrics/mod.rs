//! Evaluation metrics: multi-class confusion matrix, one-vs-rest accuracy /
//! sensitivity / precision / F1 with a 95% CI on sensitivity, ROC and PR
//! curves with AUC, and PCA projection of feature embeddings.

pub mod export;
pub mod pca;
pub mod roc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pca::{pca_project, PcaResult};
pub use roc::{roc_pr_curves, CurveSet};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// counts[true][predicted]
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(preds: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::dim("prediction count", labels.len(), preds.len()));
        }
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&p, &t) in preds.iter().zip(labels.iter()) {
            if p >= classes || t >= classes {
                return Err(Error::Data(format!(
                    "class index out of range: pred {p}, label {t}, classes {classes}"
                )));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// One-vs-rest (TP, FP, FN, TN) for a class.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let total = self.total();
        let tp = self.counts[class][class];
        let fp: u64 = (0..self.classes())
            .filter(|&t| t != class)
            .map(|t| self.counts[t][class])
            .sum();
        let fn_: u64 = (0..self.classes())
            .filter(|&p| p != class)
            .map(|p| self.counts[class][p])
            .sum();
        let tn = total - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }
}

/// Per-class one-vs-rest rates, in percent. Absent entries mean the rate is
/// undefined for this evaluation (no positives / no predicted positives).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassScores {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    /// 95% CI on sensitivity via the normal approximation (z = 1.96).
    pub sensitivity_ci95: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scores {
    pub per_class: Vec<ClassScores>,
    /// Unweighted means over classes where the rate is defined.
    pub macro_accuracy: f64,
    pub macro_sensitivity: Option<f64>,
    pub macro_precision: Option<f64>,
    pub macro_f1: Option<f64>,
    /// Headline accuracy trace(cm)/total; differs from the one-vs-rest
    /// per-class accuracy, both are reported.
    pub overall_accuracy: f64,
    /// True when some per-class rate was undefined and excluded from the
    /// macro averages.
    pub has_undefined: bool,
}

const Z95: f64 = 1.96;

pub fn classification_scores(cm: &ConfusionMatrix) -> Result<Scores> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(cm.classes());
    let mut has_undefined = false;
    for c in 0..cm.classes() {
        let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
        let accuracy = (tp + tn) as f64 / total as f64 * 100.0;
        let sensitivity = if tp + fn_ > 0 {
            Some(tp as f64 / (tp + fn_) as f64 * 100.0)
        } else {
            has_undefined = true;
            None
        };
        let precision = if tp + fp > 0 {
            Some(tp as f64 / (tp + fp) as f64 * 100.0)
        } else {
            has_undefined = true;
            None
        };
        let f1 = match (precision, sensitivity) {
            (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        let sensitivity_ci95 = sensitivity.map(|sen_pct| {
            let sen = sen_pct / 100.0;
            let se = (sen * (1.0 - sen) / (tp + fn_) as f64).sqrt();
            (
                ((sen - Z95 * se) * 100.0).max(0.0),
                ((sen + Z95 * se) * 100.0).min(100.0),
            )
        });
        per_class.push(ClassScores {
            accuracy,
            sensitivity,
            precision,
            f1,
            sensitivity_ci95,
        });
    }
    let mean_opt = |xs: Vec<Option<f64>>| {
        let defined: Vec<f64> = xs.into_iter().flatten().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    };
    Ok(Scores {
        macro_accuracy: per_class.iter().map(|c| c.accuracy).sum::<f64>() / cm.classes() as f64,
        macro_sensitivity: mean_opt(per_class.iter().map(|c| c.sensitivity).collect()),
        macro_precision: mean_opt(per_class.iter().map(|c| c.precision).collect()),
        macro_f1: mean_opt(per_class.iter().map(|c| c.f1).collect()),
        overall_accuracy: cm.trace() as f64 / total as f64 * 100.0,
        per_class,
        has_undefined,
    })
}

/// Full evaluation bundle, serializable to JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub matrix: ConfusionMatrix,
    pub scores: Scores,
    pub curves: CurveSet,
    pub sample_count: usize,
    /// Echo of the run configuration this report came from.
    pub config_echo: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal_and_100() {
        let preds = [0, 1, 2, 3, 4, 2];
        let cm = ConfusionMatrix::from_predictions(&preds, &preds, 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(cm.counts[i][j], 0);
                }
            }
        }
        let s = classification_scores(&cm).unwrap();
        assert_eq!(s.overall_accuracy, 100.0);
        for c in s.per_class {
            assert_eq!(c.accuracy, 100.0);
            assert_eq!(c.sensitivity, Some(100.0));
        }
    }

    #[test]
    fn single_sample_single_cell() {
        let cm = ConfusionMatrix::from_predictions(&[1], &[3], 5).unwrap();
        assert_eq!(cm.counts[3][1], 1);
        assert_eq!(cm.total(), 1);
        assert_eq!(
            cm.counts.iter().flatten().filter(|&&v| v > 0).count(),
            1
        );
    }

    #[test]
    fn hand_tallied_binary_rates() {
        // TP=2 FN=1 FP=1 TN=6 for class 0 in a 10-sample binary confusion
        let labels = [0, 0, 0, 1, 1, 1, 1, 1, 1, 1];
        let preds = [0, 0, 1, 0, 1, 1, 1, 1, 1, 1];
        let cm = ConfusionMatrix::from_predictions(&preds, &labels, 2).unwrap();
        let (tp, fp, fn_, tn) = cm.one_vs_rest(0);
        assert_eq!((tp, fp, fn_, tn), (2, 1, 1, 6));
        let s = classification_scores(&cm).unwrap();
        let c0 = &s.per_class[0];
        assert!((c0.sensitivity.unwrap() - 66.66666666666667).abs() < 1e-9);
        assert!((c0.precision.unwrap() - 66.66666666666667).abs() < 1e-9);
        assert!((c0.accuracy - 80.0).abs() < 1e-9);
        assert!((c0.f1.unwrap() - 66.66666666666667).abs() < 1e-9);
    }

    #[test]
    fn undefined_sensitivity_is_flagged_and_excluded() {
        // class 2 never appears in labels
        let labels = [0, 0, 1, 1];
        let preds = [0, 1, 1, 1];
        let cm = ConfusionMatrix::from_predictions(&preds, &labels, 3).unwrap();
        let s = classification_scores(&cm).unwrap();
        assert!(s.per_class[2].sensitivity.is_none());
        assert!(s.has_undefined);
        assert!(s.macro_sensitivity.is_some());
    }

    #[test]
    fn f1_stays_between_zero_and_arithmetic_mean() {
        let labels = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let preds = [0, 0, 1, 1, 0, 1, 1, 1, 1, 0];
        let cm = ConfusionMatrix::from_predictions(&preds, &labels, 2).unwrap();
        let s = classification_scores(&cm).unwrap();
        for c in &s.per_class {
            if let (Some(f1), Some(p), Some(sen)) = (c.f1, c.precision, c.sensitivity) {
                assert!(f1 >= 0.0);
                assert!(f1 <= (p + sen) / 2.0 + 1e-12);
            }
        }
    }
}
