//! Training engine: seeded epoch loop over batches of 16, fused softmax
//! cross-entropy with optional inverse-frequency class weights, Adam with
//! the step-decay schedule, best-checkpoint retention, and evaluation.

pub mod checkpoint;
pub mod optim;
pub mod split;

use std::path::Path;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{classification_scores, roc_pr_curves, ConfusionMatrix, EvalReport};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

pub use optim::{adam_step, lr_at_epoch, OptimConfig, OptimState};
pub use split::{split_dataset, Splits};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub weight_decay: f64,
    /// false = decoupled weight decay, true = classic L2 into the gradient.
    pub coupled_weight_decay: bool,
    /// Weight the loss by inverse class frequency (normalized to mean 1).
    pub class_weighting: bool,
    /// Stop once validation accuracy (percent) reaches this value.
    pub early_stop_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let o = OptimConfig::default();
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            seed: 0,
            lr0: o.lr0,
            decay_factor: o.decay_factor,
            decay_every: o.decay_every,
            weight_decay: o.weight_decay,
            coupled_weight_decay: o.coupled_weight_decay,
            class_weighting: true,
            early_stop_val_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr0: self.lr0,
            decay_factor: self.decay_factor,
            decay_every: self.decay_every,
            weight_decay: self.weight_decay,
            coupled_weight_decay: self.coupled_weight_decay,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: f64,
    pub optim_state: OptimState,
    pub warnings: Vec<String>,
}

/// Inverse-frequency class weights normalized so present classes average 1.
pub fn inverse_frequency_weights(labels: &[usize], classes: usize) -> Vec<f32> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let total: usize = counts.iter().sum();
    let mut weights: Vec<f32> = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                total as f32 / (classes as f32 * c as f32)
            }
        })
        .collect();
    let present: Vec<f32> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    if !present.is_empty() {
        let mean = present.iter().sum::<f32>() / present.len() as f32;
        for w in weights.iter_mut() {
            *w /= mean;
        }
    }
    for w in weights.iter_mut() {
        if *w == 0.0 {
            *w = 1.0;
        }
    }
    weights
}

/// Stack samples into one (B, 3, H, W) tensor.
pub fn batch_tensor(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("empty batch".into()))?;
    let (c, h, w) = (
        first.image.shape().c(),
        first.image.shape().h(),
        first.image.shape().w(),
    );
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        if s.image.shape() != first.image.shape() {
            return Err(Error::dim(
                "batch image size",
                first.image.len(),
                s.image.len(),
            ));
        }
        data.extend_from_slice(s.image.data());
    }
    Tensor::from_vec(Shape::nchw(samples.len(), c, h, w), data)
}

fn mix_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((epoch as u64) << 20)
        .wrapping_add(batch as u64)
}

/// Train in place. Per epoch: seeded shuffle, batches of `batch_size`,
/// forward → loss → backward → Adam at the scheduled rate; validation
/// metrics recorded; the best-validation-accuracy parameters are saved to
/// `best_path` when given. A non-finite loss aborts naming epoch/batch.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &Model,
    ps: &mut ParamStore<f32>,
    samples: &[Sample],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    config_echo: &str,
    best_path: Option<&Path>,
) -> Result<TrainOutcome> {
    if train_idx.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let classes = model.config.num_classes;
    let weights: Option<Vec<f32>> = if cfg.class_weighting {
        let labels: Vec<usize> = train_idx.iter().map(|&i| samples[i].label).collect();
        Some(inverse_frequency_weights(&labels, classes))
    } else {
        None
    };

    let optim_cfg = cfg.optim();
    let mut state = OptimState::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut warnings = Vec::new();
    let mut best_epoch = None;
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut order: Vec<usize> = train_idx.to_vec();

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, &optim_cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch, usize::MAX));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() == 1 {
                warnings.push(format!(
                    "epoch {epoch}: dropping trailing batch of 1 sample (batch statistics degenerate)"
                ));
                continue;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| samples[i].label).collect();
            let x = batch_tensor(&batch)?;
            let mut g = Graph::<f32>::train(mix_seed(cfg.seed, epoch, bi));
            let xv = g.leaf(x, false);
            let out = model.forward(&mut g, ps, xv)?;
            let loss = g.cross_entropy(out.logits, &labels, weights.as_deref())?;
            let loss_val = g.value(loss).data()[0] as f64;
            if !loss_val.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {bi}"
                )));
            }
            g.backward(loss)?;
            let grads = g.param_grads();
            adam_step(ps, &grads, &mut state, &optim_cfg, lr)?;
            for (id, value) in g.take_stat_updates() {
                ps.set_value(id, value);
            }
            loss_sum += loss_val;
            batches += 1;
        }
        let train_loss = if batches > 0 { loss_sum / batches as f64 } else { f64::NAN };

        let (val_acc, val_f1) = if val_idx.is_empty() {
            (f64::NAN, None)
        } else {
            let report = evaluate(model, ps, samples, val_idx, cfg.batch_size, config_echo)?;
            (report.scores.overall_accuracy, report.scores.macro_f1)
        };
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_acc,
            val_f1,
        });
        if val_acc.is_finite() && val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = Some(epoch);
            if let Some(path) = best_path {
                checkpoint::save_checkpoint(path, ps, config_echo, Some(&state))?;
            }
        }
        if let Some(stop_at) = cfg.early_stop_val_acc {
            if val_acc.is_finite() && val_acc >= stop_at {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_acc,
        optim_state: state,
        warnings,
    })
}

/// Eval-mode class probabilities for the indexed samples, in index order.
pub fn predict_probs(
    model: &Model,
    ps: &ParamStore<f32>,
    samples: &[Sample],
    idx: &[usize],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut probs = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
        let x = batch_tensor(&batch)?;
        let mut g = Graph::<f32>::inference();
        let xv = g.leaf(x, false);
        let (p, _) = model.classify(&mut g, ps, xv)?;
        let pt = g.value(p);
        let k = pt.shape().c();
        for n in 0..chunk.len() {
            probs.push((0..k).map(|c| pt.at(n, c, 0, 0) as f64).collect());
        }
    }
    Ok(probs)
}

/// Deterministic argmax with first-index tie-breaking.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode metrics over a split.
pub fn evaluate(
    model: &Model,
    ps: &ParamStore<f32>,
    samples: &[Sample],
    idx: &[usize],
    batch_size: usize,
    config_echo: &str,
) -> Result<EvalReport> {
    if idx.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let probs = predict_probs(model, ps, samples, idx, batch_size)?;
    let labels: Vec<usize> = idx.iter().map(|&i| samples[i].label).collect();
    let preds: Vec<usize> = probs.iter().map(|row| argmax(row)).collect();
    let classes = model.config.num_classes;
    let matrix = ConfusionMatrix::from_predictions(&preds, &labels, classes)?;
    let scores = classification_scores(&matrix)?;
    let curves = roc_pr_curves(&probs, &labels, classes)?;
    Ok(EvalReport {
        matrix,
        scores,
        curves,
        sample_count: idx.len(),
        config_echo: serde_json::from_str(config_echo).unwrap_or(serde_json::Value::Null),
    })
}

/// Penultimate (pooled, pre-classifier) features per sample, index order.
pub fn extract_features(
    model: &Model,
    ps: &ParamStore<f32>,
    samples: &[Sample],
    idx: &[usize],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut features = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
        let x = batch_tensor(&batch)?;
        let mut g = Graph::<f32>::inference();
        let xv = g.leaf(x, false);
        let out = model.forward(&mut g, ps, xv)?;
        let pt = g.value(out.penultimate);
        let c = pt.shape().c();
        for n in 0..chunk.len() {
            features.push((0..c).map(|ci| pt.at(n, ci, 0, 0) as f64).collect());
        }
    }
    Ok(features)
}

/// History CSV: epoch, lr, train_loss, val_acc, val_f1.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,lr,train_loss,val_acc,val_f1")?;
    for r in history {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.train_loss,
            r.val_acc,
            r.val_f1.map_or(String::new(), |v| v.to_string())
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_frequency_weights_mean_one() {
        let labels = [0, 0, 0, 0, 1, 1, 2, 2, 2, 2, 2, 2];
        let w = inverse_frequency_weights(&labels, 3);
        let mean: f32 = w.iter().sum::<f32>() / 3.0;
        assert!((mean - 1.0).abs() < 1e-6);
        assert!(w[1] > w[0] && w[0] > w[2]);
    }

    #[test]
    fn argmax_breaks_ties_at_first_index() {
        assert_eq!(argmax(&[0.2, 0.2, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
