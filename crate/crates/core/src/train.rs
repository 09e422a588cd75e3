//! Mini-batch SGD with teacher forcing.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{backward, Example, LossAndGrads, SeqModel};
use crate::rng::SeededRng;
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            epochs: 30,
            batch: 8,
            seed: 0,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured during the epoch.
    pub epoch_loss: Vec<f64>,
}

/// Computes per-example losses and gradients for a batch, in batch order.
pub trait BatchGradients {
    fn batch(&self, model: &SeqModel, batch: &[&Example]) -> Result<Vec<LossAndGrads>>;
}

/// Evaluates examples one after another.
pub struct Sequential;

impl BatchGradients for Sequential {
    fn batch(&self, model: &SeqModel, batch: &[&Example]) -> Result<Vec<LossAndGrads>> {
        batch.iter().map(|ex| backward(model, ex)).collect()
    }
}

/// Train in place with a sequential gradient evaluator.
pub fn train(model: &mut SeqModel, corpus: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, corpus, cfg, &Sequential, |_, _| {})
}

/// Train in place. Per-example gradients are summed in batch order, so the
/// result does not depend on how `grads` schedules its work.
pub fn train_with<G, P>(
    model: &mut SeqModel,
    corpus: &[Example],
    cfg: &TrainConfig,
    grads: &G,
    mut progress: P,
) -> Result<TrainReport>
where
    G: BatchGradients + ?Sized,
    P: FnMut(usize, f64),
{
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidConfig("batch must be at least 1".into()));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &corpus[i]).collect();
            let results = grads.batch(model, &batch)?;
            let mut total: Vec<Option<Mat>> = alloc::vec![None; model.tensors().len()];
            let mut batch_loss = 0.0;
            for r in results {
                if !r.loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                batch_loss += r.loss;
                for (t, g) in total.iter_mut().zip(r.grads) {
                    if let Some(g) = g {
                        match t {
                            Some(t) => t.add_assign(&g),
                            None => *t = Some(g),
                        }
                    }
                }
            }
            epoch_loss += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            let mut scale = cfg.lr * inv;
            if let Some(max) = cfg.clip_norm {
                let norm = libm::sqrt(
                    total.iter().flatten().map(|g| g.data.iter().map(|v| v * v).sum::<f64>()).sum::<f64>(),
                ) * inv;
                if norm > max {
                    scale *= max / norm;
                }
            }
            for (p, g) in model.tensors_mut().iter_mut().zip(&total) {
                if let Some(g) = g {
                    for (w, d) in p.data.iter_mut().zip(&g.data) {
                        *w -= scale * d;
                    }
                }
            }
            if !model.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "parameters diverged at epoch {epoch}, step {step}"
                )));
            }
        }
        let mean = epoch_loss / corpus.len() as f64;
        report.epoch_loss.push(mean);
        progress(epoch, mean);
    }
    Ok(report)
}
