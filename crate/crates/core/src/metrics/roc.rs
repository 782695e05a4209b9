//! One-vs-rest ROC and PR curves. ROC-AUC integrates by trapezoid (equal
//! scores collapse into one sweep point, which reproduces the rank-sum
//! statistic with ties at 1/2). PR-AUC uses right-continuous step
//! interpolation to avoid the optimistic trapezoid bias.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false positive rate, true positive rate), threshold descending.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrCurve {
    /// (recall, precision), threshold descending.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveSet {
    /// Per class; None when the class has no positives (or no negatives)
    /// in the evaluated split.
    pub roc: Vec<Option<RocCurve>>,
    pub pr: Vec<Option<PrCurve>>,
    pub macro_roc_auc: Option<f64>,
    pub macro_pr_auc: Option<f64>,
}

/// Build one-vs-rest curves for every class from per-sample probability
/// rows. `probs[i][c]` is the score of class c for sample i.
pub fn roc_pr_curves(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<CurveSet> {
    if probs.len() != labels.len() {
        return Err(Error::dim("probability rows", labels.len(), probs.len()));
    }
    let mut roc = Vec::with_capacity(classes);
    let mut pr = Vec::with_capacity(classes);
    for c in 0..classes {
        let scores: Vec<f64> = probs.iter().map(|row| row[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        roc.push(roc_curve(&scores, &positive));
        pr.push(pr_curve(&scores, &positive));
    }
    let mean = |aucs: Vec<Option<f64>>| {
        let defined: Vec<f64> = aucs.into_iter().flatten().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    };
    Ok(CurveSet {
        macro_roc_auc: mean(roc.iter().map(|r| r.as_ref().map(|r| r.auc)).collect()),
        macro_pr_auc: mean(pr.iter().map(|p| p.as_ref().map(|p| p.auc)).collect()),
        roc,
        pr,
    })
}

/// Indices sorted by score descending; equal scores grouped together.
fn sweep_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let order = sweep_order(scores);
    let mut points = vec![(0.0, 0.0)];
    let mut auc = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_fpr, mut prev_tpr) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        // advance through the whole tie group at this threshold
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / n_pos as f64;
        let fpr = fp as f64 / n_neg as f64;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        points.push((fpr, tpr));
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    Some(RocCurve { points, auc })
}

pub fn pr_curve(scores: &[f64], positive: &[bool]) -> Option<PrCurve> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let order = sweep_order(scores);
    let mut points = Vec::new();
    let mut auc = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        auc += (recall - prev_recall) * precision;
        points.push((recall, precision));
        prev_recall = recall;
    }
    Some(PrCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::mann_whitney_auc;
    use rand::{Rng, SeedableRng};

    #[test]
    fn separated_scores_have_unit_auc() {
        let scores = [0.9, 0.85, 0.2, 0.1];
        let pos = [true, true, false, false];
        let roc = roc_curve(&scores, &pos).unwrap();
        let pr = pr_curve(&scores, &pos).unwrap();
        assert!((roc.auc - 1.0).abs() < 1e-12);
        assert!((pr.auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_half_roc_auc() {
        let scores = [0.3; 6];
        let pos = [true, false, true, false, false, true];
        let roc = roc_curve(&scores, &pos).unwrap();
        assert!((roc.auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn roc_auc_matches_rank_sum_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = 30;
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 8.0).round() / 8.0).collect();
            let pos: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            if pos.iter().all(|&p| p) || pos.iter().all(|&p| !p) {
                continue;
            }
            let roc = roc_curve(&scores, &pos).unwrap();
            let want = mann_whitney_auc(&scores, &pos).unwrap();
            assert!((roc.auc - want).abs() <= 1e-9, "{} vs {want}", roc.auc);
        }
    }

    #[test]
    fn roc_auc_invariant_under_monotone_transform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen_range(0.01..0.99)).collect();
        let pos: Vec<bool> = (0..40).map(|_| rng.gen_bool(0.5)).collect();
        let base = roc_curve(&scores, &pos).unwrap().auc;
        let squashed: Vec<f64> = scores.iter().map(|&s| (5.0 * s).exp() / 100.0).collect();
        let after = roc_curve(&squashed, &pos).unwrap().auc;
        assert!((base - after).abs() < 1e-12);
    }

    #[test]
    fn absent_class_yields_none_and_flagged_macro() {
        let probs = vec![vec![0.7, 0.2, 0.1], vec![0.4, 0.5, 0.1]];
        let labels = vec![0, 1];
        let set = roc_pr_curves(&probs, &labels, 3).unwrap();
        assert!(set.roc[2].is_none());
        assert!(set.pr[2].is_none());
        assert!(set.macro_roc_auc.is_some());
    }
}
