//! From-scratch residual denoising network.
//!
//! The stack is the classic residual denoiser: Conv+ReLU, then (depth - 2)
//! blocks of Conv+BatchNorm+ReLU, then a final Conv. The network predicts the
//! noise component R(y) of a normalized intensity patch y, so the restored
//! patch is y - R(y). Everything is implemented on plain `ndarray` tensors
//! with hand-written backward passes; there is no autodiff framework behind
//! this module, which is why every layer carries a finite-difference gradient
//! test.
//!
//! Layers are generic over [`Real`] (f32 or f64). Production weights are f32;
//! the gradient-check tests instantiate the same code at f64 so the
//! finite-difference comparison is not limited by storage precision.

mod adam;
mod checkpoint;
mod infer;
mod network;
mod ops;
mod train;

pub use adam::Adam;
pub use checkpoint::{read_model, write_model};
pub use infer::{despeckle_raster, InferParams, InferReport};
pub use network::{
    network_forward, ConvParams, Gradients, Mode, Network, NetworkModel, Tape,
};
pub use ops::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, conv2d_backward, conv2d_forward,
    relu, relu_backward, BnCache, BnParams,
};
pub use train::{lr_for_epoch, train, EpochLog, TrainConfig, TrainOutcome};


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type for network tensors. `f32` in production, `f64` in
/// gradient-check tests.
pub trait Real: ndarray::NdFloat + std::iter::Sum + Default {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Architecture hyperparameters. Defaults follow the full-scale residual
/// denoiser (19 layers of 64 3x3 filters over the 4 intensity bands); the
/// tests run much smaller configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Total number of convolution layers, including first and last.
    pub depth: usize,
    /// Feature maps in the hidden layers.
    pub width: usize,
    /// Spatial kernel size (odd, same-padded).
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            depth: 19,
            width: 64,
            kernel: 3,
            in_channels: 4,
            out_channels: 4,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 {
            return Err(Error::Config(format!(
                "network depth must be at least 3, got {}",
                self.depth
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if self.width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(
                "width and channel counts must be at least 1".into(),
            ));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "bn_epsilon must be positive, got {}",
                self.bn_epsilon
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config(format!(
                "bn_momentum must lie in (0, 1), got {}",
                self.bn_momentum
            )));
        }
        Ok(())
    }

    /// Input channel count of conv layer `i`.
    pub fn layer_in(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            self.width
        }
    }

    /// Output channel count of conv layer `i`.
    pub fn layer_out(&self, i: usize) -> usize {
        if i + 1 == self.depth {
            self.out_channels
        } else {
            self.width
        }
    }

    /// Whether conv layer `i` carries a bias. Only the first and last do;
    /// batch norm absorbs the bias in between.
    pub fn layer_has_bias(&self, i: usize) -> bool {
        i == 0 || i + 1 == self.depth
    }

    /// Side length of the network's receptive field (all layers same-padded).
    pub fn receptive_field(&self) -> usize {
        self.depth * (self.kernel - 1) + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_the_full_scale_stack() {
        let cfg = NetConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.depth, cfg.width, cfg.kernel), (19, 64, 3));
        assert_eq!((cfg.in_channels, cfg.out_channels), (4, 4));
        assert_eq!(cfg.receptive_field(), 39);
    }

    #[test]
    fn layer_taxonomy() {
        let cfg = NetConfig {
            depth: 5,
            width: 8,
            ..Default::default()
        };
        assert_eq!(cfg.layer_in(0), 4);
        assert_eq!(cfg.layer_out(0), 8);
        assert_eq!(cfg.layer_in(2), 8);
        assert_eq!(cfg.layer_out(4), 4);
        assert!(cfg.layer_has_bias(0));
        assert!(!cfg.layer_has_bias(1));
        assert!(!cfg.layer_has_bias(3));
        assert!(cfg.layer_has_bias(4));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |f: fn(&mut NetConfig)| {
            let mut c = NetConfig::default();
            f(&mut c);
            c.validate().unwrap_err()
        };
        bad(|c| c.depth = 2);
        bad(|c| c.kernel = 4);
        bad(|c| c.width = 0);
        bad(|c| c.bn_momentum = 1.0);
        bad(|c| c.bn_epsilon = 0.0);
    }
}
