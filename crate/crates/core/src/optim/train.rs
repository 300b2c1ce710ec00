use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::optim::checkpoint::{EpochRecord, ModelCheckpoint, TrainingMetadata};
use crate::optim::sgd::{clip_global_norm, sgd_momentum_step, OptimizerState};

/// Direction in which the validation metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Accuracy-like metrics.
    Maximize,
    /// Error-like metrics such as reconstruction MSE.
    Minimize,
}

impl Selection {
    fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            Selection::Maximize => candidate > best,
            Selection::Minimize => candidate < best,
        }
    }
}

/// A training problem: a model, its loss and its data splits.
pub trait Objective {
    /// Number of training samples; batches index into `0..train_len()`.
    fn train_len(&self) -> usize;

    /// Mean loss over the batch and its gradient with respect to every parameter.
    fn loss_and_grad(&self, params: &ParamSet<f32>, batch: &[usize]) -> Result<(f64, ParamSet<f32>)>;

    /// Validation metric for the current parameters.
    fn validate(&self, params: &ParamSet<f32>) -> Result<f64>;

    fn selection(&self) -> Selection;
}

/// Mini-batch SGD with per-epoch shuffling, validation-driven model selection
/// and early stopping. Returns the parameters of the best validation epoch;
/// among tied epochs the latest wins, but only a strict improvement resets
/// the patience counter.
pub fn train_loop<O: Objective>(
    objective: &O,
    mut params: ParamSet<f32>,
    architecture: serde_json::Value,
    mut state: OptimizerState<f32>,
    seed: u64,
) -> Result<ModelCheckpoint> {
    let config = state.config.clone();
    config.validate()?;
    let n = objective.train_len();
    if n == 0 {
        return Err(Error::Empty("training split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let selection = objective.selection();

    let mut best: Option<(f64, usize, ParamSet<f32>)> = None;
    let mut history = Vec::new();
    let mut steps = 0usize;
    let mut since_best = 0usize;

    'epochs: for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|cap| steps >= cap) {
                break;
            }
            let (loss, mut grads) = objective.loss_and_grad(&params, batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step: steps,
                    value: loss,
                });
            }
            if let Some(max_norm) = config.clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            sgd_momentum_step(&mut params, &grads, &mut state)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        if seen == 0 {
            break;
        }
        let val = objective.validate(&params)?;
        let train_loss = loss_sum / seen as f64;
        log::info!("epoch {epoch}: train loss {train_loss:.6}, val {val:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: val,
        });
        let (improved, tied) = match &best {
            None => (true, false),
            Some((b, _, _)) => (selection.improves(val, *b), val == *b),
        };
        if improved || tied {
            best = Some((val, epoch, params.clone()));
        }
        if improved {
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience || config.max_steps.is_some_and(|cap| steps >= cap) {
            break 'epochs;
        }
    }

    let (_, best_epoch, best_params) = best.unwrap_or((f64::NAN, 0, params));
    Ok(ModelCheckpoint {
        architecture,
        metadata: TrainingMetadata {
            epoch: best_epoch,
            seed,
            steps,
            history,
            removable: Vec::new(),
        },
        params: best_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimConfig;
    use crate::tensor::Tensor;

    /// Least squares fit of a single weight to targets `3·x`.
    struct LineFit {
        xs: Vec<f32>,
        val_sequence: Option<Vec<f64>>,
        calls: std::cell::Cell<usize>,
    }

    impl Objective for LineFit {
        fn train_len(&self) -> usize {
            self.xs.len()
        }

        fn loss_and_grad(&self, params: &ParamSet<f32>, batch: &[usize]) -> Result<(f64, ParamSet<f32>)> {
            let w = params.get("w")?.data()[0];
            let mut loss = 0.0;
            let mut g = 0.0;
            for &i in batch {
                let x = self.xs[i];
                let r = w * x - 3.0 * x;
                loss += (r * r) as f64;
                g += 2.0 * r * x;
            }
            let m = batch.len() as f32;
            let mut grads = ParamSet::new();
            grads.insert("w", Tensor::new(&[1], vec![g / m])?);
            Ok((loss / batch.len() as f64, grads))
        }

        fn validate(&self, params: &ParamSet<f32>) -> Result<f64> {
            let k = self.calls.get();
            self.calls.set(k + 1);
            match &self.val_sequence {
                Some(seq) => Ok(seq[k.min(seq.len() - 1)]),
                None => Ok(-((params.get("w")?.data()[0] - 3.0).abs() as f64)),
            }
        }

        fn selection(&self) -> Selection {
            Selection::Maximize
        }
    }

    fn problem(val_sequence: Option<Vec<f64>>) -> LineFit {
        LineFit {
            xs: (0..10).map(|i| i as f32 * 0.1).collect(),
            val_sequence,
            calls: std::cell::Cell::new(0),
        }
    }

    fn init() -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(&[1], vec![0.0]).unwrap());
        p
    }

    fn run(obj: &LineFit, config: OptimConfig, seed: u64) -> ModelCheckpoint {
        let params = init();
        let state = OptimizerState::new(config, &params);
        train_loop(obj, params, serde_json::json!({}), state, seed).unwrap()
    }

    fn config() -> OptimConfig {
        OptimConfig {
            learning_rate: 0.1,
            batch_size: 3,
            max_epochs: 50,
            ..OptimConfig::cae()
        }
    }

    #[test]
    fn converges_on_line_fit() {
        let ckpt = run(&problem(None), config(), 1);
        let w = ckpt.params.get("w").unwrap().data()[0];
        assert!((w - 3.0).abs() < 1e-2, "w = {w}");
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let ckpt = run(&problem(None), OptimConfig { patience: 0, ..config() }, 1);
        assert_eq!(ckpt.metadata.history.len(), 1);
        assert_eq!(ckpt.metadata.epoch, 1);
    }

    #[test]
    fn returns_best_validation_epoch() {
        let obj = problem(Some(vec![0.1, 0.5, 0.3, 0.2, 0.4]));
        let ckpt = run(&obj, OptimConfig { patience: 3, ..config() }, 1);
        assert_eq!(ckpt.metadata.history.len(), 5);
        assert_eq!(ckpt.metadata.epoch, 2);
        let best = ckpt.metadata.history[ckpt.metadata.epoch - 1].val_metric;
        assert!(ckpt.metadata.history.iter().all(|r| r.val_metric <= best));
    }

    #[test]
    fn ties_keep_the_later_epoch_without_extending_patience() {
        let obj = problem(Some(vec![0.1, 0.5, 0.3, 0.5, 0.5, 0.2]));
        let ckpt = run(&obj, OptimConfig { patience: 3, ..config() }, 1);
        assert_eq!(ckpt.metadata.history.len(), 5);
        assert_eq!(ckpt.metadata.epoch, 5);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = run(&problem(None), config(), 9).to_bytes().unwrap();
        let b = run(&problem(None), config(), 9).to_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_cap_is_respected() {
        let ckpt = run(&problem(None), OptimConfig { max_steps: Some(5), ..config() }, 1);
        assert_eq!(ckpt.metadata.steps, 5);
    }

    #[test]
    fn divergence_is_reported() {
        let obj = problem(None);
        let params = init();
        let state = OptimizerState::new(
            OptimConfig {
                learning_rate: 1e6,
                momentum: 0.0,
                ..config()
            },
            &params,
        );
        let err = train_loop(&obj, params, serde_json::json!({}), state, 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let obj = LineFit {
            xs: vec![],
            val_sequence: None,
            calls: std::cell::Cell::new(0),
        };
        let params = init();
        let state = OptimizerState::new(config(), &params);
        assert!(matches!(
            train_loop(&obj, params, serde_json::json!({}), state, 1),
            Err(Error::Empty(_))
        ));
    }
}
