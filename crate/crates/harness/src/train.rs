//! Mini-batch training of the regression layers with Adam, a step learning
//! rate schedule and early stopping. The backbone is not trained.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rpr_core::loss::{total_loss_var, LossWeights};
use rpr_core::model::{Checkpoint, RprNetwork};
use rpr_core::tape::Tape;
use rpr_core::{RigidTransform, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::prepare::PreparedFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Factor applied to the learning rate every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a decrease of the epoch loss before stopping.
    pub patience: usize,
    /// Hard cap on optimizer steps over the whole run.
    pub max_steps: Option<usize>,
    pub loss: LossWeights,
    /// Seed of the pair shuffling.
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lr_decay: 0.7,
            decay_every: 10,
            batch_size: 6,
            max_epochs: 50,
            patience: 3,
            max_steps: None,
            loss: LossWeights::default(),
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("train.lr must be > 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("train.lr_decay must lie in (0, 1]");
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("train.decay_every, batch_size and max_epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam coefficients must satisfy 0 <= beta < 1, eps > 0");
        }
        self.loss.validate()?;
        Ok(())
    }

    /// Learning rate of the 1-based `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let k = (epoch.max(1) - 1) / self.decay_every;
        self.lr * self.lr_decay.powi(k as i32)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            beta1,
            beta2,
            eps,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// A training sample: indices into the prepared frames and `T^q_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub query: usize,
    pub reference: usize,
    pub t_gt: RigidTransform,
}

/// Loss of one pair and its gradient with respect to every network
/// parameter, in parameter order.
pub fn pair_loss_and_grad(
    net: &RprNetwork,
    frames: &[PreparedFrame],
    pair: &TrainPair,
    weights: &LossWeights,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let reference = &frames[pair.reference];
    let query = &frames[pair.query];
    let input = reference.pair_input(query)?;
    let mut tape = Tape::new();
    let bound = net.params().bind(&mut tape, true);
    let est = net.forward_tape(&mut tape, &bound, &input)?;
    let loss = total_loss_var(&mut tape, est.t1, est.t2, &pair.t_gt, weights)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss);
    let g = bound
        .vars()
        .iter()
        .zip(net.params().tensors())
        .map(|(&v, t)| grads.tensor(v, t).into_data())
        .collect();
    Ok((value, g))
}

/// Mean loss and gradient over `batch`. Pairs run in parallel; the sum is
/// taken in batch order, so the result does not depend on the thread count.
pub fn batch_loss_and_grad(
    net: &RprNetwork,
    frames: &[PreparedFrame],
    pairs: &[TrainPair],
    batch: &[usize],
    weights: &LossWeights,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let per_pair: Vec<(f64, Vec<Vec<f64>>)> = batch
        .par_iter()
        .map(|&i| pair_loss_and_grad(net, frames, &pairs[i], weights))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad: Vec<Vec<f64>> = net.params().tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for (l, g) in &per_pair {
        loss += l * scale;
        for (acc, gi) in grad.iter_mut().zip(g) {
            acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b * scale);
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the batch losses of the epoch.
    pub loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Stops when the epoch loss fails to improve on the best so far for
/// `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> EarlyStop {
        EarlyStop {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records an epoch loss; returns whether it is a new best.
    pub fn update(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale > 0 && self.stale >= self.patience
    }

    pub fn stale(&self) -> usize {
        self.stale
    }
}

/// Where checkpoints go: `epoch-XXX.ckpt` after every epoch and
/// `best.ckpt` whenever the epoch loss improves.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub dir: PathBuf,
    pub backbone: String,
}

impl CheckpointSink {
    fn write(&self, net: &RprNetwork, cfg: &TrainConfig, epoch: usize, loss: f64, name: &str) -> Result<()> {
        let mut ck = Checkpoint::from_network(net, &self.backbone);
        let extra = &mut ck.meta.extra;
        extra.insert("epoch".into(), epoch.into());
        extra.insert("epoch_loss".into(), loss.into());
        extra.insert(
            "train".into(),
            serde_json::to_value(cfg).map_err(|e| HarnessError::Config(e.to_string()))?,
        );
        ck.save(&self.dir.join(name))?;
        Ok(())
    }

    pub fn epoch_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch-{epoch:03}.ckpt"))
    }

    pub fn best_path(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
}

/// Trains `net` on `pairs`. Each epoch visits the pairs in a fresh
/// permutation drawn from `cfg.seed`; the loss of a batch is the mean pair
/// loss. Stops after `cfg.max_epochs`, after `cfg.patience` epochs without
/// a new best epoch loss, or when `cfg.max_steps` is reached.
pub fn train(
    cfg: &TrainConfig,
    net: &mut RprNetwork,
    frames: &[PreparedFrame],
    pairs: &[TrainPair],
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(HarnessError::NoPairs);
    }
    if let Some(s) = sink {
        std::fs::create_dir_all(&s.dir)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.params().tensors(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut out = TrainOutcome {
        history: Vec::new(),
        best_epoch: 0,
        best_loss: f64::INFINITY,
        steps: 0,
        stopped_early: false,
    };
    let mut stop = EarlyStop::new(cfg.patience);
    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| out.steps >= m) {
                break;
            }
            let (loss, grad) = batch_loss_and_grad(net, frames, pairs, batch, &cfg.loss)?;
            if !loss.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
                let ids = batch
                    .iter()
                    .map(|&i| format!("{}->{}", frames[pairs[i].query].id, frames[pairs[i].reference].id))
                    .collect();
                log::error!("non-finite loss in epoch {epoch}");
                return Err(HarnessError::NonFiniteLoss { epoch, batch: ids });
            }
            adam.step(net.params_mut().tensors_mut(), &grad, lr);
            sum += loss;
            batches += 1;
            out.steps += 1;
        }
        if batches == 0 {
            break;
        }
        let loss = sum / batches as f64;
        log::info!("epoch {epoch}: loss {loss:.6} lr {lr:.3e} steps {}", out.steps);
        out.history.push(EpochStats {
            epoch,
            lr,
            loss,
            steps: out.steps,
        });
        if let Some(s) = sink {
            s.write(net, cfg, epoch, loss, &format!("epoch-{epoch:03}.ckpt"))?;
        }
        if stop.update(loss) {
            out.best_loss = loss;
            out.best_epoch = epoch;
            if let Some(s) = sink {
                s.write(net, cfg, epoch, loss, "best.ckpt")?;
            }
        } else if stop.should_stop() {
            log::info!("early stop after epoch {epoch}: no decrease for {} epochs", stop.stale());
            out.stopped_early = true;
            break;
        }
    }
    Ok(out)
}

/// Writes the training history next to the checkpoints.
pub fn write_history(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let json = serde_json::to_string_pretty(outcome).map_err(|e| HarnessError::Config(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}
