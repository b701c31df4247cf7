//! Mini-batch training with early stopping.

use std::ops::Range;

use ndarray::Array3;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Architecture, DropoutMasks, Model};
use super::optim::{clip_global_norm, Optimizer};
use super::{LossSums, ModelConfig, Variant};
use crate::dataset::{batches, Batch, WindowSet, WindowSets};
use crate::exec::Exec;
use crate::{Error, Result};

/// Sequences per gradient chunk. Chunking is fixed so the floating-point
/// summation order, and therefore the result, does not depend on how many
/// threads run the chunks.
pub const GRADIENT_CHUNK: usize = 8;
const EVAL_CHUNK: usize = 64;

/// Patience counter on a monitored loss; lower is better, and only a
/// strict decrease counts as an improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, waited: 0 }
    }

    /// Record the loss of `epoch` (1-based). Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.waited = 0;
            (true, false)
        } else {
            self.waited += 1;
            (false, self.patience > 0 && self.waited >= self.patience)
        }
    }
}

/// Losses reported by one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub train_loss: f64,
    pub train_mae: Vec<f64>,
    pub val_loss: f64,
    pub val_mae: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Normalized-space MAE per label feature.
    pub train_mae: Vec<f64>,
    pub val_mae: Vec<f64>,
}

/// Result of [`fit_loop`].
#[derive(Debug, Clone)]
pub struct FitSummary<S> {
    pub history: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub restored_best: bool,
    pub state: S,
}

/// Generic epoch loop: runs `epoch_fn` up to `max_epochs` times, tracks the
/// validation loss and, when `patience > 0`, stops after `patience`
/// consecutive non-improving epochs and restores the state saved at the
/// best epoch. With `patience == 0` all epochs run and the final state is
/// kept.
pub fn fit_loop<S: Clone>(
    max_epochs: usize,
    patience: usize,
    mut state: S,
    mut epoch_fn: impl FnMut(usize, &mut S) -> Result<EpochOutcome>,
) -> Result<FitSummary<S>> {
    let mut stopper = EarlyStopping::new(patience);
    let mut best_state: Option<S> = None;
    let mut history = Vec::new();
    let mut stopped_epoch = 0;
    for epoch in 1..=max_epochs {
        let out = epoch_fn(epoch, &mut state)?;
        if !out.train_loss.is_finite() || !out.val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: out.train_loss,
            val_loss: out.val_loss,
            train_mae: out.train_mae,
            val_mae: out.val_mae,
        });
        stopped_epoch = epoch;
        let (improved, stop) = stopper.observe(epoch, out.val_loss);
        if improved && patience > 0 {
            best_state = Some(state.clone());
        }
        if stop {
            break;
        }
    }
    let restored_best = best_state.is_some();
    if let Some(best) = best_state {
        state = best;
    }
    Ok(FitSummary { history, stopped_epoch, best_epoch: stopper.best_epoch, restored_best, state })
}

/// A trained model with its training history.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub restored_best: bool,
}

/// Loss and metrics of a model over a window set, normalized space.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mse: f64,
    pub mae: Vec<f64>,
}

fn chunks(len: usize, size: usize) -> Vec<Range<usize>> {
    (0..len.div_ceil(size)).map(|k| k * size..((k + 1) * size).min(len)).collect()
}

/// Mean-squared-error gradient of a batch plus its loss sums. Chunks of
/// [`GRADIENT_CHUNK`] sequences run through `exec`; chunk gradients are
/// added in chunk order.
pub fn batch_gradient(
    model: &Model,
    batch: &Batch,
    masks: Option<&DropoutMasks>,
    exec: Exec,
) -> Result<(Vec<f64>, LossSums)> {
    let b = batch.len();
    let scale = 2.0 / (b * model.arch.label_width * model.arch.n_label) as f64;
    let parts = chunks(b, GRADIENT_CHUNK);
    let results = exec.map(&parts, |r| -> Result<(Vec<f64>, LossSums)> {
        let sub = batch.rows(r.clone());
        let sub_masks = masks.map(|m| m.rows(r.clone()));
        let (pred, tape) = model.forward(&sub, sub_masks.as_ref())?;
        let mut sums = LossSums::new(model.arch.n_label);
        sums.add(pred.view(), sub.label.view());
        let dpred: Array3<f64> = (&pred - &sub.label) * scale;
        Ok((model.backward(&tape, &dpred, sub_masks.as_ref()), sums))
    });
    let mut grads = vec![0.0; model.n_params()];
    let mut sums = LossSums::new(model.arch.n_label);
    for r in results {
        let (g, s) = r?;
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        sums.merge(&s);
    }
    Ok((grads, sums))
}

/// Inference-mode loss and per-feature MAE over every window of a set.
pub fn evaluate(model: &Model, windows: &WindowSet, exec: Exec) -> Result<Evaluation> {
    let parts = chunks(windows.len(), EVAL_CHUNK);
    let results = exec.map(&parts, |r| -> Result<LossSums> {
        let batch = windows.batch(&r.clone().collect::<Vec<_>>());
        let pred = model.predict(&batch)?;
        let mut sums = LossSums::new(model.arch.n_label);
        sums.add(pred.view(), batch.label.view());
        Ok(sums)
    });
    let mut sums = LossSums::new(model.arch.n_label);
    for r in results {
        sums.merge(&r?);
    }
    let (mse, mae) = sums.finish();
    Ok(Evaluation { mse, mae })
}

/// Train a model from scratch on `windows.train`, monitoring
/// `windows.validation`. Deterministic for a given config and seed.
pub fn train(config: &ModelConfig, windows: &WindowSets, exec: Exec) -> Result<TrainedModel> {
    config.validate()?;
    if windows.train.is_empty() || windows.validation.is_empty() {
        return Err(Error::InsufficientLength {
            required: 1,
            actual: windows.train.len().min(windows.validation.len()),
        });
    }
    if windows.train.spec != config.window || windows.train.frame.combo != config.combo {
        return Err(Error::ShapeMismatch {
            expected: format!("{} windows {}", config.combo, config.window),
            actual: format!("{} windows {}", windows.train.frame.combo, windows.train.spec),
        });
    }
    let arch = Architecture::from_config(config);
    let model = Model::init(arch.clone(), config.seed);

    if config.variant == Variant::Baseline {
        let tr = evaluate(&model, &windows.train, exec)?;
        let va = evaluate(&model, &windows.validation, exec)?;
        let record =
            EpochRecord { epoch: 1, train_loss: tr.mse, val_loss: va.mse, train_mae: tr.mae, val_mae: va.mae };
        return Ok(TrainedModel {
            config: config.clone(),
            model,
            history: vec![record],
            stopped_epoch: 1,
            best_epoch: 1,
            restored_best: false,
        });
    }

    // Separate streams for batch order and dropout keep either unaffected
    // by the other's configuration.
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4521);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4452_4f50_4f55_5421);
    let opt = Optimizer::new(config.optimizer, config.learning_rate, model.n_params());

    let summary = fit_loop(config.max_epochs, config.patience, (model, opt), |_epoch, (model, opt)| {
        let mut sums = LossSums::new(arch.n_label);
        for idx in batches(&windows.train, config.batch_size, Some(order_rng.next_u64())) {
            let batch = windows.train.batch(&idx);
            let masks = DropoutMasks::sample(&arch, batch.len(), config.dropout, &mut drop_rng);
            let (mut grads, s) = batch_gradient(model, &batch, masks.as_ref(), exec)?;
            if !s.sq.is_finite() {
                return Ok(EpochOutcome { train_loss: f64::NAN, train_mae: s.abs, val_loss: f64::NAN, val_mae: vec![] });
            }
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            match opt.step(model.params_mut(), &grads) {
                Err(Error::NonFinite(_)) => {
                    return Ok(EpochOutcome { train_loss: f64::NAN, train_mae: s.abs, val_loss: f64::NAN, val_mae: vec![] })
                }
                other => other?,
            }
            sums.merge(&s);
        }
        let (train_loss, train_mae) = sums.finish();
        let val = evaluate(model, &windows.validation, exec)?;
        Ok(EpochOutcome { train_loss, train_mae, val_loss: val.mse, val_mae: val.mae })
    })?;

    Ok(TrainedModel {
        config: config.clone(),
        model: summary.state.0,
        history: summary.history,
        stopped_epoch: summary.stopped_epoch,
        best_epoch: summary.best_epoch,
        restored_best: summary.restored_best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scripted(losses: &[f64], patience: usize) -> FitSummary<usize> {
        fit_loop(100.min(losses.len()), patience, 0usize, |epoch, state| {
            *state = epoch;
            Ok(EpochOutcome { train_loss: 0.0, train_mae: vec![], val_loss: losses[epoch - 1], val_mae: vec![] })
        })
        .unwrap()
    }

    #[test]
    fn patience_trace_stops_at_epoch_seven() {
        let s = scripted(&[1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95, 0.5, 0.4], 5);
        assert_eq!(s.stopped_epoch, 7);
        assert_eq!(s.best_epoch, 2);
        assert_eq!(s.state, 2);
        assert!(s.restored_best);
        assert_eq!(s.history.len(), 7);
    }

    #[test]
    fn decreasing_loss_runs_all_epochs() {
        let losses: Vec<f64> = (0..100).map(|k| 1.0 / (k + 1) as f64).collect();
        let s = scripted(&losses, 5);
        assert_eq!(s.stopped_epoch, 100);
        assert_eq!(s.state, 100);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let s = scripted(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.1], 5);
        assert_eq!(s.stopped_epoch, 6);
        assert_eq!(s.best_epoch, 1);
    }

    #[test]
    fn zero_patience_keeps_final_state() {
        let s = scripted(&[1.0, 2.0, 3.0], 0);
        assert_eq!(s.stopped_epoch, 3);
        assert_eq!(s.state, 3);
        assert!(!s.restored_best);
    }

    #[test]
    fn non_finite_loss_reports_epoch() {
        let r = fit_loop(10, 5, (), |epoch, _| {
            Ok(EpochOutcome {
                train_loss: if epoch == 3 { f64::NAN } else { 1.0 },
                train_mae: vec![],
                val_loss: 1.0,
                val_mae: vec![],
            })
        });
        assert!(matches!(r, Err(Error::Diverged { epoch: 3 })));
    }

    #[test]
    fn chunking_covers_range() {
        assert_eq!(chunks(17, 8), vec![0..8, 8..16, 16..17]);
        assert!(chunks(0, 8).is_empty());
    }
}
