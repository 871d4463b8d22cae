//! Mini-batch training with per-epoch validation and best-Score selection.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{sample_loss, LossWeights};
use super::optim::{add_l2_gradient, Adam, OptimizerConfig};
use crate::encoder::DialogueContext;
use crate::error::{MogError, Result};
use crate::evaluation::{evaluate, EvalSet};
use crate::model::{MogNet, Session};
use crate::tensor::{ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            seed: 1,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Samples with the experts each one trains.
#[derive(Clone, Debug, Default)]
pub struct TrainSet {
    pub samples: Vec<DialogueContext>,
    pub assignment: Vec<Vec<usize>>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample combined loss over the epoch (before the update it fed).
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub valid_bleu: Option<f64>,
    pub valid_inform: Option<f64>,
    pub valid_success: Option<f64>,
    pub valid_score: Option<f64>,
    pub valid_ppl: Option<f64>,
    pub best: bool,
}

#[derive(Clone, Debug)]
pub struct BestModel {
    pub epoch: usize,
    pub score: Option<f64>,
    pub params: ParamStore,
}

/// Owns the live model and optimizer for a training run.
pub struct Trainer<'d> {
    pub model: MogNet,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub best: Option<BestModel>,
    pub log: Vec<EpochLog>,
    pub config: TrainConfig,
    pub weights: LossWeights,
    train: &'d TrainSet,
    valid: Option<&'d EvalSet>,
}

type SampleGrads = (Vec<(ParamId, Vec<f64>)>, f64);

impl<'d> Trainer<'d> {
    pub fn new(
        model: MogNet,
        config: TrainConfig,
        weights: LossWeights,
        train: &'d TrainSet,
        valid: Option<&'d EvalSet>,
    ) -> Result<Self> {
        config.optimizer.validate()?;
        if config.batch_size == 0 {
            return Err(MogError::Config("train.batch_size must be positive".into()));
        }
        if train.samples.is_empty() || train.samples.len() != train.assignment.len() {
            return Err(MogError::invalid("training set is empty or its assignment is incomplete"));
        }
        if weights.mu.len() != model.experts() {
            return Err(MogError::invalid("one mu weight per expert is required"));
        }
        let adam = Adam::new(config.optimizer.clone(), &model.params);
        Ok(Trainer {
            model,
            adam,
            epoch: 0,
            best: None,
            log: Vec::new(),
            config,
            weights,
            train,
            valid,
        })
    }

    /// Continues from saved state after `epoch` completed epochs.
    pub fn resume(&mut self, adam: Adam, epoch: usize, best: Option<BestModel>) -> Result<()> {
        if adam.m.len() != self.model.params.len() {
            return Err(MogError::state("optimizer state does not match the model"));
        }
        self.adam = adam;
        self.epoch = epoch;
        self.best = best;
        Ok(())
    }

    /// Sample order for a given epoch; a pure function of seed and epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.samples.len()).collect();
        let seed = self.config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch as u64;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    fn sample_grads(&self, i: usize) -> Result<SampleGrads> {
        let mut sess = Session::new(&self.model);
        let out = sample_loss(&mut sess, &self.train.samples[i], &self.train.assignment[i], &self.weights)?;
        let loss = sess.tape.scalar(out.total);
        let grads = sess.tape.backward(out.total)?;
        Ok((grads.params().map(|(id, g)| (id, g.to_vec())).collect(), loss))
    }

    /// Forward, backward, L2, clip and Adam over one batch. Returns the mean
    /// per-sample loss.
    pub fn train_batch(&mut self, batch: &[usize]) -> Result<f64> {
        let results: Vec<Result<SampleGrads>> = batch.par_iter().map(|&i| self.sample_grads(i)).collect();
        let scale = 1.0 / batch.len() as f64;
        let params = &mut self.model.params;
        params.zero_grad();
        let mut loss = 0.0;
        for r in results {
            let (grads, l) = r?;
            loss += l;
            for (id, g) in grads {
                params.get_mut(id).accumulate_grad(&g, scale);
            }
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            let tensor = params.first_non_finite().map_or("loss".to_string(), |(n, _)| n.to_string());
            return Err(MogError::NumericalAbort {
                tensor,
                detail: format!("batch loss is {loss}"),
            });
        }
        add_l2_gradient(params, self.config.optimizer.l2_weight);
        if let Some((name, kind)) = params.first_non_finite() {
            return Err(MogError::NumericalAbort {
                tensor: name.to_string(),
                detail: format!("non-finite {kind}"),
            });
        }
        self.adam.update(params)?;
        if let Some((name, kind)) = params.first_non_finite() {
            return Err(MogError::NumericalAbort {
                tensor: name.to_string(),
                detail: format!("non-finite {kind} after update"),
            });
        }
        Ok(loss)
    }

    /// Runs one epoch, validates, and updates the best snapshot.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch + 1;
        let order = self.epoch_order(epoch);
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            total += self.train_batch(batch)? * batch.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let eval = match self.valid {
            Some(v) => Some(evaluate(&self.model, v, &self.weights, false)?),
            None => None,
        };
        let score = eval.as_ref().map(|e| e.score);
        let improved = match (&self.best, score) {
            (None, _) => true,
            (Some(b), Some(s)) => b.score.is_none_or(|bs| s > bs),
            (Some(_), None) => true,
        };
        if improved {
            self.best = Some(BestModel {
                epoch,
                score,
                params: self.model.params.clone(),
            });
        }
        self.epoch = epoch;
        let entry = EpochLog {
            epoch,
            train_loss,
            valid_loss: eval.as_ref().map(|e| e.loss),
            valid_bleu: eval.as_ref().map(|e| e.bleu),
            valid_inform: eval.as_ref().map(|e| e.inform),
            valid_success: eval.as_ref().map(|e| e.success),
            valid_score: score,
            valid_ppl: eval.as_ref().map(|e| e.ppl),
            best: improved,
        };
        info!(
            "epoch {epoch}: train loss {train_loss:.4}{}",
            score.map_or(String::new(), |s| format!(", valid score {s:.2}"))
        );
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// The selected model: the best snapshot, or the live model before any epoch.
    pub fn best_model(&self) -> Result<MogNet> {
        match &self.best {
            Some(b) => MogNet::from_params(self.model.config.clone(), b.params.clone()),
            None => Ok(self.model.clone()),
        }
    }

    /// Mean per-sample training loss at the current parameters.
    pub fn training_loss(&self) -> Result<f64> {
        let losses: Vec<Result<f64>> = (0..self.train.samples.len())
            .into_par_iter()
            .map(|i| {
                let mut sess = Session::new(&self.model);
                let out = sample_loss(&mut sess, &self.train.samples[i], &self.train.assignment[i], &self.weights)?;
                Ok(sess.tape.scalar(out.total))
            })
            .collect();
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / self.train.samples.len() as f64)
    }
}
