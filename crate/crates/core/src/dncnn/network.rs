//! The residual denoising layer stack and its backward pass.
//!
//! Layer taxonomy for `depth` conv layers:
//!   layer 0:            Conv (bias) + ReLU
//!   layers 1..depth-1:  Conv (no bias) + BatchNorm + ReLU
//!   layer depth-1:      Conv (bias)
//!
//! The network maps a normalized intensity tensor y to the predicted noise
//! residual R(y); the restored tensor is y - R(y). Because every convolution
//! is same-padded, the stack is fully convolutional: any H×W input yields an
//! H×W residual, which is what tiled inference relies on.

use ndarray::{Array1, Array4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::util::substream;

use super::ops::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, conv2d_backward, conv2d_forward,
    relu, relu_backward, BnCache, BnParams,
};
use super::{NetConfig, Real};

/// One convolution layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// F×C×k×k filter bank.
    pub w: Array4<T>,
    /// Per-filter bias; absent on layers followed by batch norm.
    pub b: Option<Array1<T>>,
}

/// The full layer stack. `bns[i]` belongs to conv layer `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetConfig,
    pub convs: Vec<ConvParams<T>>,
    pub bns: Vec<BnParams<T>>,
}

/// Forward-pass mode: training uses batch statistics and updates the running
/// averages; inference uses the frozen running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Intermediate values kept by the training-mode forward pass.
pub struct Tape<T> {
    /// Input to each conv layer (the previous activation).
    conv_in: Vec<Array4<T>>,
    bn_caches: Vec<BnCache<T>>,
}

/// Per-parameter gradients, shaped exactly like [`Network`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub convs: Vec<(Array4<T>, Option<Array1<T>>)>,
    /// (grad_gamma, grad_beta) per batch-norm layer.
    pub bns: Vec<(Array1<T>, Array1<T>)>,
}

impl<T: Real> Network<T> {
    /// Zero-weight network: the residual is identically 0, so the restored
    /// output equals the input.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let mut convs = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let (ci, co) = (config.layer_in(i), config.layer_out(i));
            convs.push(ConvParams {
                w: Array4::zeros((co, ci, k, k)),
                b: config.layer_has_bias(i).then(|| Array1::zeros(co)),
            });
        }
        let bns = (1..config.depth - 1)
            .map(|i| BnParams::identity(config.layer_out(i)))
            .collect();
        Ok(Network {
            config: *config,
            convs,
            bns,
        })
    }

    /// Kaiming-style initialization: conv weights ~ N(0, 2/fan_in), biases 0,
    /// batch norm at identity. Each layer draws from its own substream of
    /// `seed`, so the initialization is independent of build or thread
    /// configuration.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for (i, conv) in net.convs.iter_mut().enumerate() {
            let fan_in = (config.layer_in(i) * config.kernel * config.kernel) as f64;
            let std = (2.0 / fan_in).sqrt();
            let mut rng = substream(seed, [2, i as u64, 0]);
            for v in conv.w.iter_mut() {
                *v = T::from_f64(std * rng.sample::<f64, _>(StandardNormal));
            }
        }
        Ok(net)
    }

    /// Flat views of every trainable parameter in a fixed order (conv weights
    /// and biases first, then batch-norm gamma/beta). The same order is used
    /// by [`Gradients::slices`], so an optimizer can zip the two.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for conv in &mut self.convs {
            out.push(conv.w.as_slice_mut().expect("standard layout"));
            if let Some(b) = &mut conv.b {
                out.push(b.as_slice_mut().expect("standard layout"));
            }
        }
        for bn in &mut self.bns {
            out.push(bn.gamma.as_slice_mut().expect("standard layout"));
            out.push(bn.beta.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let conv: usize = self
            .convs
            .iter()
            .map(|c| c.w.len() + c.b.as_ref().map_or(0, |b| b.len()))
            .sum();
        let bn: usize = self.bns.iter().map(|b| b.gamma.len() + b.beta.len()).sum();
        conv + bn
    }

    fn check_input(&self, x: &Array4<T>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.config.in_channels {
            return Err(Error::Geometry(format!(
                "network expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        if h < self.config.kernel || w < self.config.kernel {
            return Err(Error::Geometry(format!(
                "input {h}x{w} is smaller than the {0}x{0} kernel",
                self.config.kernel
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass: batch norm uses running statistics, no
    /// tape is kept, the model is not mutated.
    pub fn forward_infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        self.check_input(x)?;
        let cfg = &self.config;
        let z = conv2d_forward(x, &self.convs[0].w, self.convs[0].b.as_ref())?;
        let mut a = relu(&z);
        for i in 1..cfg.depth - 1 {
            let z = conv2d_forward(&a, &self.convs[i].w, None)?;
            let b = batchnorm_infer(&z, &self.bns[i - 1], cfg.bn_epsilon)?;
            a = relu(&b);
        }
        conv2d_forward(&a, &self.convs[cfg.depth - 1].w, self.convs[cfg.depth - 1].b.as_ref())
    }

    /// Training-mode forward pass: batch norm uses batch statistics and
    /// updates the running averages; returns the residual and the tape for
    /// [`Network::backward`].
    pub fn forward_train(&mut self, x: &Array4<T>) -> Result<(Array4<T>, Tape<T>)> {
        self.check_input(x)?;
        let cfg = self.config;
        let mut conv_in = Vec::with_capacity(cfg.depth);
        let mut bn_caches = Vec::with_capacity(cfg.depth - 2);
        conv_in.push(x.clone());
        let z = conv2d_forward(x, &self.convs[0].w, self.convs[0].b.as_ref())?;
        let mut a = relu(&z);
        for i in 1..cfg.depth - 1 {
            conv_in.push(a.clone());
            let z = conv2d_forward(&a, &self.convs[i].w, None)?;
            let (b, cache) =
                batchnorm_forward(&z, &mut self.bns[i - 1], cfg.bn_epsilon, cfg.bn_momentum)?;
            bn_caches.push(cache);
            a = relu(&b);
        }
        conv_in.push(a.clone());
        let out = conv2d_forward(&a, &self.convs[cfg.depth - 1].w, self.convs[cfg.depth - 1].b.as_ref())?;
        Ok((
            out,
            Tape {
                conv_in,
                bn_caches,
            },
        ))
    }

    /// Backpropagates `grad_out` (the gradient of a scalar loss with respect
    /// to the network output) through the tape.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &Array4<T>) -> Result<Gradients<T>> {
        let cfg = &self.config;
        let last = cfg.depth - 1;
        let mut conv_grads: Vec<(Array4<T>, Option<Array1<T>>)> = Vec::with_capacity(cfg.depth);
        let mut bn_grads: Vec<(Array1<T>, Array1<T>)> = Vec::with_capacity(cfg.depth - 2);

        let (mut g, gw, gb) =
            conv2d_backward(grad_out, &tape.conv_in[last], &self.convs[last].w, true)?;
        conv_grads.push((gw, gb));
        for i in (1..cfg.depth - 1).rev() {
            // ReLU mask: its input was positive iff the stored activation is.
            g = relu_backward(&g, &tape.conv_in[i + 1]);
            let (gx, ggamma, gbeta) = batchnorm_backward(&g, &tape.bn_caches[i - 1], &self.bns[i - 1]);
            bn_grads.push((ggamma, gbeta));
            let (gx2, gw, _) = conv2d_backward(&gx, &tape.conv_in[i], &self.convs[i].w, false)?;
            conv_grads.push((gw, None));
            g = gx2;
        }
        g = relu_backward(&g, &tape.conv_in[1]);
        let (_, gw, gb) = conv2d_backward(&g, &tape.conv_in[0], &self.convs[0].w, true)?;
        conv_grads.push((gw, gb));

        conv_grads.reverse();
        bn_grads.reverse();
        Ok(Gradients {
            convs: conv_grads,
            bns: bn_grads,
        })
    }

    /// Residual loss and gradients over one batch: loss = Σ‖R(y) − (y − x)‖²
    /// where y is the noisy batch and x the clean batch. Training-mode
    /// forward, so running statistics advance.
    pub fn loss_and_grad(&mut self, noisy: &Array4<T>, clean: &Array4<T>) -> Result<(f64, Gradients<T>)> {
        if noisy.dim() != clean.dim() {
            return Err(Error::Geometry(format!(
                "noisy batch {:?} and clean batch {:?} differ",
                noisy.dim(),
                clean.dim()
            )));
        }
        let (residual, tape) = self.forward_train(noisy)?;
        let mut loss = 0.0f64;
        let mut grad = Array4::<T>::zeros(residual.raw_dim());
        {
            let r = residual.as_slice().unwrap();
            let y = noisy.as_slice().unwrap();
            let x = clean.as_slice().unwrap();
            let g = grad.as_slice_mut().unwrap();
            for i in 0..r.len() {
                let diff = r[i].as_f64() - (y[i].as_f64() - x[i].as_f64());
                loss += diff * diff;
                g[i] = T::from_f64(2.0 * diff);
            }
        }
        let grads = self.backward(&tape, &grad)?;
        Ok((loss, grads))
    }

    /// Loss only, in inference mode (no tape, no running-stat updates).
    pub fn loss_infer(&self, noisy: &Array4<T>, clean: &Array4<T>) -> Result<f64> {
        let residual = self.forward_infer(noisy)?;
        let r = residual.as_slice().unwrap();
        let y = noisy.as_slice().unwrap();
        let x = clean.as_slice().unwrap();
        let mut loss = 0.0f64;
        for i in 0..r.len() {
            let diff = r[i].as_f64() - (y[i].as_f64() - x[i].as_f64());
            loss += diff * diff;
        }
        Ok(loss)
    }
}

impl<T: Real> Gradients<T> {
    /// Flat gradient views in the same order as [`Network::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for (gw, gb) in &self.convs {
            out.push(gw.as_slice().expect("standard layout"));
            if let Some(gb) = gb {
                out.push(gb.as_slice().expect("standard layout"));
            }
        }
        for (gg, gb) in &self.bns {
            out.push(gg.as_slice().expect("standard layout"));
            out.push(gb.as_slice().expect("standard layout"));
        }
        out
    }
}

/// A trained network bundled with the normalization bounds it was trained
/// under. Inference must use exactly these bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub net: Network<f32>,
    pub norm: NormStats,
}

/// Convenience entry matching the module-level naming: residual R(y) for a
/// batch, in the requested mode.
pub fn network_forward<T: Real>(
    net: &mut Network<T>,
    x: &Array4<T>,
    mode: Mode,
) -> Result<Array4<T>> {
    match mode {
        Mode::Infer => net.forward_infer(x),
        Mode::Train => net.forward_train(x).map(|(out, _)| out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dncnn::testutil::{max_rel_err, randn};

    fn tiny_config() -> NetConfig {
        NetConfig {
            depth: 3,
            width: 2,
            kernel: 3,
            in_channels: 2,
            out_channels: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_network_residual_is_zero() {
        let cfg = NetConfig {
            depth: 4,
            width: 3,
            ..Default::default()
        };
        let net = Network::<f32>::zeros(&cfg).unwrap();
        let x = randn((1, 4, 8, 8), 30).mapv(|v| v as f32);
        let r = net.forward_infer(&x).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        // Despeckled estimate y - R(y) equals the input.
        let restored = &x - &r;
        assert_eq!(restored, x);
    }

    #[test]
    fn fully_convolutional_shape_audit() {
        let cfg = NetConfig {
            depth: 4,
            width: 3,
            ..Default::default()
        };
        let mut net = Network::<f64>::init(&cfg, 7).unwrap();
        for (h, w) in [(3, 3), (10, 7), (64, 64), (5, 33)] {
            let x = randn((2, 4, h, w), 31);
            let r = network_forward(&mut net, &x, Mode::Infer).unwrap();
            assert_eq!(r.dim(), (2, 4, h, w));
            let r = network_forward(&mut net, &x, Mode::Train).unwrap();
            assert_eq!(r.dim(), (2, 4, h, w));
        }
        let too_small = randn((1, 4, 2, 8), 32);
        assert!(net.forward_infer(&too_small).is_err());
    }

    #[test]
    fn zero_model_loss_identities() {
        let cfg = tiny_config();
        let mut net = Network::<f64>::zeros(&cfg).unwrap();
        let y = randn((2, 2, 6, 6), 33);
        // Clean equals noisy: residual target is 0 and R = 0, so loss = 0.
        let (loss, _) = net.loss_and_grad(&y, &y.clone()).unwrap();
        assert_eq!(loss, 0.0);
        // General pair: loss collapses to Σ‖y − x‖².
        let x = randn((2, 2, 6, 6), 34);
        let (loss, _) = net.loss_and_grad(&y, &x).unwrap();
        let direct: f64 = y
            .iter()
            .zip(x.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!((loss - direct).abs() < 1e-9 * direct.max(1.0));
    }

    #[test]
    fn full_network_gradient_matches_finite_differences() {
        let cfg = tiny_config();
        // Seed chosen so every ReLU preactivation stays clear of 0 at the
        // finite-difference step size; a kink crossing would corrupt the
        // numerical derivative, not the analytic one.
        let net0 = Network::<f64>::init(&cfg, 53).unwrap();
        let y = randn((2, 2, 8, 8), 153) * 0.5;
        let x = randn((2, 2, 8, 8), 253) * 0.5;

        let (_, grads) = net0.clone().loss_and_grad(&y, &x).unwrap();
        let analytic: Vec<f64> = grads.slices().into_iter().flatten().copied().collect();

        // Finite differences over every parameter, via the flat ordering.
        let mut fd = Vec::with_capacity(analytic.len());
        const H: f64 = 1e-3;
        for idx in 0..net0.param_count() {
            let eval = |delta: f64| -> f64 {
                let mut net = net0.clone();
                {
                    let mut slices = net.param_slices_mut();
                    let mut seen = 0usize;
                    for s in slices.iter_mut() {
                        if idx < seen + s.len() {
                            s[idx - seen] += delta;
                            break;
                        }
                        seen += s.len();
                    }
                }
                let (loss, _) = net.loss_and_grad(&y, &x).unwrap();
                loss
            };
            fd.push((eval(H) - eval(-H)) / (2.0 * H));
        }
        let err = max_rel_err(&analytic, &fd);
        assert!(err < 1e-4, "full-network gradient deviation {err}");
    }

    #[test]
    fn projection_loss_gradient_matches_finite_differences() {
        let cfg = tiny_config();
        // Seed chosen away from ReLU kinks, as in the full-network check.
        let net = Network::<f64>::init(&cfg, 43).unwrap();
        let y = randn((1, 2, 6, 6), 343) * 0.5;
        // Check the backward pass against a fixed projection loss Σ R⊙P,
        // which exercises it independently of the residual-loss wiring.
        let proj = randn((1, 2, 6, 6), 443);
        let mut net_t = net.clone();
        let (_, tape) = net_t.forward_train(&y).unwrap();
        let grads = net_t.backward(&tape, &proj).unwrap();
        let analytic: Vec<f64> = grads.slices().into_iter().flatten().copied().collect();

        let mut fd = Vec::new();
        const H: f64 = 1e-3;
        for idx in 0..net.param_count() {
            let eval = |delta: f64| -> f64 {
                let mut n2 = net.clone();
                {
                    let mut slices = n2.param_slices_mut();
                    let mut seen = 0usize;
                    for s in slices.iter_mut() {
                        if idx < seen + s.len() {
                            s[idx - seen] += delta;
                            break;
                        }
                        seen += s.len();
                    }
                }
                let (r, _) = n2.forward_train(&y).unwrap();
                (r * &proj).sum()
            };
            fd.push((eval(H) - eval(-H)) / (2.0 * H));
        }
        let err = max_rel_err(&analytic, &fd);
        assert!(err < 1e-4, "projection gradient deviation {err}");
    }

    #[test]
    fn infer_mode_does_not_mutate_the_model() {
        let cfg = tiny_config();
        let net = Network::<f64>::init(&cfg, 44).unwrap();
        let before = net.clone();
        let x = randn((1, 2, 6, 6), 40);
        net.forward_infer(&x).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn train_mode_advances_running_stats() {
        let cfg = tiny_config();
        let mut net = Network::<f64>::init(&cfg, 45).unwrap();
        let before = net.bns[0].running_mean.clone();
        let x = randn((2, 2, 6, 6), 41);
        net.forward_train(&x).unwrap();
        assert_ne!(net.bns[0].running_mean, before);
    }
}
