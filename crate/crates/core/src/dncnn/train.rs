//! Mini-batch training with the step-decay Adam schedule.
//!
//! The loop is deliberately single-threaded and allocation-stable: batches
//! are assembled in a fixed order from seeded shuffles, so a given dataset,
//! configuration, and seed always produce bit-identical weights.

use ndarray::Array4;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::PatchDataset;
use crate::error::{Error, Result};
use crate::util::substream;

use super::network::{Network, NetworkModel};
use super::{Adam, NetConfig};

/// Optimization hyperparameters. Defaults follow the full-scale schedule:
/// 140 epochs, batch 32, Adam at 1e-3 decimated every 20 epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// The learning rate is divided by `lr_decay_factor` every
    /// `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Fraction of pairs reserved for validation before training starts.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 140,
            batch_size: 32,
            lr0: 1e-3,
            lr_decay_every: 20,
            lr_decay_factor: 10.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size, and lr_decay_every must be positive".into(),
            ));
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay_factor > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config(
                "lr0, lr_decay_factor, and eps must be positive".into(),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in [0, 0.5], got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Step-decay schedule: lr0 / factor^floor(epoch / every).
pub fn lr_for_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 / cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)
}

/// One row of the training log. Losses are mean per-sample sum-squared error
/// over the respective split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The network frozen at the best validation epoch, with the dataset's
    /// normalization bounds attached.
    pub model: NetworkModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Zero-model baseline on the validation split: mean per-sample
    /// Σ‖y − x‖². Absent when validation_fraction is 0.
    pub val_baseline: Option<f64>,
}

/// Stacks the listed pairs into (noisy, clean) batch tensors.
fn batch_tensors(ds: &PatchDataset, idx: &[usize]) -> (Array4<f32>, Array4<f32>) {
    let shape = (idx.len(), ds.channels, ds.patch, ds.patch);
    let plen = ds.patch_len();
    let mut noisy = Vec::with_capacity(idx.len() * plen);
    let mut clean = Vec::with_capacity(idx.len() * plen);
    for &i in idx {
        noisy.extend_from_slice(&ds.pairs[i].noisy);
        clean.extend_from_slice(&ds.pairs[i].clean);
    }
    (
        Array4::from_shape_vec(shape, noisy).expect("pair length checked"),
        Array4::from_shape_vec(shape, clean).expect("pair length checked"),
    )
}

/// Mean per-sample Σ‖y − x‖² with R = 0: what the loss would be if the
/// network predicted no noise at all.
fn zero_model_loss(ds: &PatchDataset, idx: &[usize]) -> f64 {
    let mut total = 0.0f64;
    for &i in idx {
        for (y, x) in ds.pairs[i].noisy.iter().zip(&ds.pairs[i].clean) {
            let d = f64::from(y - x);
            total += d * d;
        }
    }
    total / idx.len() as f64
}

/// Validation loss in inference mode, evaluated in fixed-size chunks.
fn validation_loss(net: &Network<f32>, ds: &PatchDataset, idx: &[usize], chunk: usize) -> Result<f64> {
    let mut total = 0.0f64;
    for part in idx.chunks(chunk) {
        let (noisy, clean) = batch_tensors(ds, part);
        total += net.loss_infer(&noisy, &clean)?;
    }
    Ok(total / idx.len() as f64)
}

/// Trains a fresh network on the dataset and returns the model with the best
/// validation loss, together with the per-epoch log.
///
/// Determinism: the validation split, the per-epoch shuffles, and the weight
/// initialization each use their own substream of `cfg.seed`; batches run in
/// shuffle order on one thread. Trailing pairs that do not fill a whole batch
/// are skipped that epoch (they re-enter the next shuffle).
pub fn train(ds: &PatchDataset, net_cfg: &NetConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    net_cfg.validate()?;
    cfg.validate()?;
    if ds.pairs.is_empty() {
        return Err(Error::Input("dataset has no patch pairs".into()));
    }
    if ds.channels != net_cfg.in_channels || ds.channels != net_cfg.out_channels {
        return Err(Error::Config(format!(
            "dataset has {} channels but the network is configured for {} in / {} out",
            ds.channels, net_cfg.in_channels, net_cfg.out_channels
        )));
    }
    if ds.patch < net_cfg.kernel {
        return Err(Error::Config(format!(
            "patch size {} is smaller than the {} kernel",
            ds.patch, net_cfg.kernel
        )));
    }
    let plen = ds.patch_len();
    if let Some((i, _)) = ds
        .pairs
        .iter()
        .enumerate()
        .find(|(_, p)| p.noisy.len() != plen || p.clean.len() != plen)
    {
        return Err(Error::Input(format!("pair {i} has an inconsistent patch length")));
    }

    let n = ds.pairs.len();
    let n_val = (cfg.validation_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(cfg.seed, [0, 0, 0]));
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    if train_idx.len() < cfg.batch_size {
        return Err(Error::Input(format!(
            "training split of {} pairs is smaller than one batch of {}",
            train_idx.len(),
            cfg.batch_size
        )));
    }

    let val_baseline = (!val_idx.is_empty()).then(|| zero_model_loss(ds, val_idx));
    let mut net = Network::<f32>::init(net_cfg, cfg.seed)?;
    let mut adam = Adam::with_hyper(net.param_count(), cfg.beta1, cfg.beta2, cfg.eps);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_for_epoch(cfg, epoch);
        train_idx.shuffle(&mut substream(cfg.seed, [1, epoch as u64, 0]));
        let mut train_total = 0.0f64;
        let mut trained = 0usize;
        for batch in train_idx.chunks_exact(cfg.batch_size) {
            let (noisy, clean) = batch_tensors(ds, batch);
            let (loss, grads) = net.loss_and_grad(&noisy, &clean)?;
            let mut params = net.param_slices_mut();
            adam.step(lr, &mut params, &grads.slices())?;
            train_total += loss;
            trained += batch.len();
        }
        let train_loss = train_total / trained as f64;
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            Some(validation_loss(&net, ds, val_idx, cfg.batch_size)?)
        };
        let selection = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| selection < *b) {
            best = Some((selection, epoch, net.clone()));
        }
        log.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        log::info!(
            "epoch {epoch}: lr {lr:.2e}, train {train_loss:.6}, val {}",
            val_loss.map_or("-".into(), |v| format!("{v:.6}"))
        );
    }
    let (_, best_epoch, best_net) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model: NetworkModel {
            net: best_net,
            norm: ds.norm,
        },
        log,
        best_epoch,
        val_baseline,
    })
}
