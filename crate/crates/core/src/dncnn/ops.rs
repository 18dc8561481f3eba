//! Tensor primitives: same-padded convolution, batch normalization, and ReLU,
//! each with an exact analytic backward pass.
//!
//! Convolution is evaluated as im2col followed by a matrix product, one batch
//! sample at a time; the backward pass reuses the same column matrix. All
//! reductions (bias gradients, batch statistics) accumulate in f64 regardless
//! of the tensor scalar type, so f32 training does not lose batch statistics
//! to cancellation.
//!
//! Tensors are `ndarray` arrays in N×C×H×W layout; weights are F×C×k×k.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, Axis, Zip};

use crate::error::{Error, Result};

use super::Real;

/// Unrolls one C×H×W sample into a (C·k·k) × (H·W) column matrix for a
/// same-padded k×k correlation. Rows are indexed by (channel, kh, kw).
fn im2col<T: Real>(x: &[T], channels: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    debug_assert_eq!(x.len(), channels * hw);
    debug_assert_eq!(col.len(), channels * k * k * hw);
    for c in 0..channels {
        let xc = &x[c * hw..(c + 1) * hw];
        for kh in 0..k {
            for kw in 0..k {
                let row = ((c * k + kh) * k + kw) * hw;
                let lo = pad.saturating_sub(kw);
                let hi = (w + pad).saturating_sub(kw).min(w);
                for oh in 0..h {
                    let dst = &mut col[row + oh * w..row + (oh + 1) * w];
                    let ih = oh + kh;
                    if ih < pad || ih >= h + pad {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &xc[(ih - pad) * w..(ih - pad + 1) * w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if hi > lo {
                        let s0 = lo + kw - pad;
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-adds a column matrix back onto the C×H×W
/// sample gradient.
fn col2im_add<T: Real>(col: &[T], channels: usize, h: usize, w: usize, k: usize, gx: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for c in 0..channels {
        for kh in 0..k {
            for kw in 0..k {
                let row = ((c * k + kh) * k + kw) * hw;
                let lo = pad.saturating_sub(kw);
                let hi = (w + pad).saturating_sub(kw).min(w);
                if hi <= lo {
                    continue;
                }
                let s0 = lo + kw - pad;
                for oh in 0..h {
                    let ih = oh + kh;
                    if ih < pad || ih >= h + pad {
                        continue;
                    }
                    let src = &col[row + oh * w + lo..row + oh * w + hi];
                    let dst =
                        &mut gx[c * hw + (ih - pad) * w + s0..c * hw + (ih - pad) * w + s0 + hi - lo];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Real>(
    x: &Array4<T>,
    w: &Array4<T>,
    b: Option<&Array1<T>>,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, wid) = x.dim();
    let (f, wc, k, k2) = w.dim();
    if wc != c || k != k2 {
        return Err(Error::Geometry(format!(
            "conv weight {f}x{wc}x{k}x{k2} does not match input with {c} channels"
        )));
    }
    if k == 0 || k % 2 == 0 {
        return Err(Error::Geometry(format!("conv kernel must be odd, got {k}")));
    }
    if let Some(b) = b {
        if b.len() != f {
            return Err(Error::Geometry(format!(
                "conv bias has {} entries for {f} filters",
                b.len()
            )));
        }
    }
    Ok((n, c, h, wid, f, k))
}

/// Same-padded cross-correlation plus optional bias: N×C×H×W → N×F×H×W.
pub fn conv2d_forward<T: Real>(
    x: &Array4<T>,
    w: &Array4<T>,
    b: Option<&Array1<T>>,
) -> Result<Array4<T>> {
    let (n, c, h, wid, f, k) = check_conv_shapes(x, w, b)?;
    let hw = h * wid;
    let ckk = c * k * k;
    let mut out = Array4::<T>::zeros((n, f, h, wid));
    let w_mat = w.view().into_shape_with_order((f, ckk)).expect("weights are contiguous");
    let mut col = Array2::<T>::zeros((ckk, hw));
    let x_slice = x.as_slice().expect("owned tensors are standard layout");
    for i in 0..n {
        im2col(
            &x_slice[i * c * hw..(i + 1) * c * hw],
            c,
            h,
            wid,
            k,
            col.as_slice_mut().unwrap(),
        );
        let mut out_i = out
            .index_axis_mut(Axis(0), i)
            .into_shape_with_order((f, hw))
            .expect("sample views are contiguous");
        general_mat_mul(T::one(), &w_mat, &col, T::zero(), &mut out_i);
    }
    if let Some(b) = b {
        for i in 0..n {
            for fi in 0..f {
                out.index_axis_mut(Axis(0), i)
                    .index_axis_mut(Axis(0), fi)
                    .mapv_inplace(|v| v + b[fi]);
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weights, and
/// (when present) bias.
pub fn conv2d_backward<T: Real>(
    grad_out: &Array4<T>,
    x: &Array4<T>,
    w: &Array4<T>,
    has_bias: bool,
) -> Result<(Array4<T>, Array4<T>, Option<Array1<T>>)> {
    let (n, c, h, wid, f, k) = check_conv_shapes(x, w, None)?;
    if grad_out.dim() != (n, f, h, wid) {
        return Err(Error::Geometry(format!(
            "grad_out shape {:?} does not match forward output {:?}",
            grad_out.dim(),
            (n, f, h, wid)
        )));
    }
    let hw = h * wid;
    let ckk = c * k * k;
    let w_mat = w.view().into_shape_with_order((f, ckk)).unwrap();

    let grad_b = if has_bias {
        let mut gb = Array1::<T>::zeros(f);
        for fi in 0..f {
            let mut acc = 0.0f64;
            for i in 0..n {
                for v in grad_out.index_axis(Axis(0), i).index_axis(Axis(0), fi).iter() {
                    acc += v.as_f64();
                }
            }
            gb[fi] = T::from_f64(acc);
        }
        Some(gb)
    } else {
        None
    };

    let mut grad_w_mat = Array2::<T>::zeros((f, ckk));
    let mut grad_x = Array4::<T>::zeros((n, c, h, wid));
    let mut col = Array2::<T>::zeros((ckk, hw));
    let mut grad_col = Array2::<T>::zeros((ckk, hw));
    let x_slice = x.as_slice().unwrap();
    let gx_slice_len = c * hw;
    for i in 0..n {
        im2col(
            &x_slice[i * c * hw..(i + 1) * c * hw],
            c,
            h,
            wid,
            k,
            col.as_slice_mut().unwrap(),
        );
        let go_mat = grad_out
            .index_axis(Axis(0), i)
            .into_shape_with_order((f, hw))
            .unwrap();
        general_mat_mul(T::one(), &go_mat, &col.t(), T::one(), &mut grad_w_mat);
        general_mat_mul(T::one(), &w_mat.t(), &go_mat, T::zero(), &mut grad_col);
        col2im_add(
            grad_col.as_slice().unwrap(),
            c,
            h,
            wid,
            k,
            &mut grad_x.as_slice_mut().unwrap()[i * gx_slice_len..(i + 1) * gx_slice_len],
        );
    }
    let grad_w = grad_w_mat.into_shape_with_order((f, c, k, k)).unwrap();
    Ok((grad_x, grad_w, grad_b))
}

/// Batch-normalization parameters and running statistics for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Real> BnParams<T> {
    /// Identity initialization: gamma 1, beta 0, running stats (0, 1).
    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Values saved by the training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Array4<T>,
    inv_std: Vec<f64>,
}

/// Training-mode forward: normalize by the per-channel batch mean and biased
/// variance, apply the affine (gamma, beta), and fold the batch statistics
/// into the running averages with `running = (1 - momentum)·running +
/// momentum·batch`. Running variance stores the biased batch variance.
pub fn batchnorm_forward<T: Real>(
    x: &Array4<T>,
    params: &mut BnParams<T>,
    epsilon: f64,
    momentum: f64,
) -> Result<(Array4<T>, BnCache<T>)> {
    let (n, c, h, w) = x.dim();
    if params.channels() != c {
        return Err(Error::Geometry(format!(
            "batch norm over {} channels applied to {c}-channel input",
            params.channels()
        )));
    }
    let m = n * h * w;
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "batch normalization needs at least 2 samples per channel, got {m}"
        )));
    }
    let hw = h * w;
    let x_slice = x.as_slice().unwrap();
    let mut y = Array4::<T>::zeros((n, c, h, w));
    let mut xhat = Array4::<T>::zeros((n, c, h, w));
    let mut inv_std = vec![0.0f64; c];
    {
        let y_slice = y.as_slice_mut().unwrap();
        let xhat_slice = xhat.as_slice_mut().unwrap();
        for ci in 0..c {
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for i in 0..n {
                for &v in &x_slice[(i * c + ci) * hw..(i * c + ci + 1) * hw] {
                    let v = v.as_f64();
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / m as f64;
            let var = (sum_sq / m as f64 - mean * mean).max(0.0);
            let istd = 1.0 / (var + epsilon).sqrt();
            inv_std[ci] = istd;
            let gamma = params.gamma[ci].as_f64();
            let beta = params.beta[ci].as_f64();
            for i in 0..n {
                let base = (i * c + ci) * hw;
                for j in base..base + hw {
                    let xh = (x_slice[j].as_f64() - mean) * istd;
                    xhat_slice[j] = T::from_f64(xh);
                    y_slice[j] = T::from_f64(gamma * xh + beta);
                }
            }
            let rm = params.running_mean[ci].as_f64();
            let rv = params.running_var[ci].as_f64();
            params.running_mean[ci] = T::from_f64((1.0 - momentum) * rm + momentum * mean);
            params.running_var[ci] = T::from_f64((1.0 - momentum) * rv + momentum * var);
        }
    }
    Ok((y, BnCache { xhat, inv_std }))
}

/// Inference-mode forward using the frozen running statistics.
pub fn batchnorm_infer<T: Real>(
    x: &Array4<T>,
    params: &BnParams<T>,
    epsilon: f64,
) -> Result<Array4<T>> {
    let (n, c, h, w) = x.dim();
    if params.channels() != c {
        return Err(Error::Geometry(format!(
            "batch norm over {} channels applied to {c}-channel input",
            params.channels()
        )));
    }
    let hw = h * w;
    let x_slice = x.as_slice().unwrap();
    let mut y = Array4::<T>::zeros((n, c, h, w));
    let y_slice = y.as_slice_mut().unwrap();
    for ci in 0..c {
        let istd = 1.0 / (params.running_var[ci].as_f64() + epsilon).sqrt();
        let mean = params.running_mean[ci].as_f64();
        let gamma = params.gamma[ci].as_f64();
        let beta = params.beta[ci].as_f64();
        for i in 0..n {
            let base = (i * c + ci) * hw;
            for j in base..base + hw {
                y_slice[j] = T::from_f64(gamma * (x_slice[j].as_f64() - mean) * istd + beta);
            }
        }
    }
    Ok(y)
}

/// Gradients of the training-mode forward: returns (grad_x, grad_gamma,
/// grad_beta). The grad_x expression folds the dependence of the batch
/// statistics on every sample.
pub fn batchnorm_backward<T: Real>(
    grad_y: &Array4<T>,
    cache: &BnCache<T>,
    params: &BnParams<T>,
) -> (Array4<T>, Array1<T>, Array1<T>) {
    let (n, c, h, w) = grad_y.dim();
    let hw = h * w;
    let m = (n * h * w) as f64;
    let gy_slice = grad_y.as_slice().unwrap();
    let xhat_slice = cache.xhat.as_slice().unwrap();
    let mut grad_x = Array4::<T>::zeros((n, c, h, w));
    let mut grad_gamma = Array1::<T>::zeros(c);
    let mut grad_beta = Array1::<T>::zeros(c);
    let gx_slice = grad_x.as_slice_mut().unwrap();
    for ci in 0..c {
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for i in 0..n {
            let base = (i * c + ci) * hw;
            for j in base..base + hw {
                let g = gy_slice[j].as_f64();
                s1 += g;
                s2 += g * xhat_slice[j].as_f64();
            }
        }
        grad_beta[ci] = T::from_f64(s1);
        grad_gamma[ci] = T::from_f64(s2);
        let scale = params.gamma[ci].as_f64() * cache.inv_std[ci];
        for i in 0..n {
            let base = (i * c + ci) * hw;
            for j in base..base + hw {
                let g = gy_slice[j].as_f64();
                let xh = xhat_slice[j].as_f64();
                gx_slice[j] = T::from_f64(scale * (g - s1 / m - xh * s2 / m));
            }
        }
    }
    (grad_x, grad_gamma, grad_beta)
}

/// Elementwise max(0, x).
pub fn relu<T: Real>(x: &Array4<T>) -> Array4<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward mask: gradient passes where the pre-activation was strictly
/// positive. The subgradient at exactly 0 is taken as 0.
pub fn relu_backward<T: Real>(grad_y: &Array4<T>, x: &Array4<T>) -> Array4<T> {
    Zip::from(grad_y)
        .and(x)
        .map_collect(|&g, &xv| if xv > T::zero() { g } else { T::zero() })
}
