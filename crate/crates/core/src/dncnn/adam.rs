//! Adam optimizer over the network's flat parameter ordering.
//!
//! Moment estimates are kept in f64 regardless of the parameter scalar type,
//! so f32 models do not lose the second-moment accumulation to rounding.

use crate::error::{Error, Result};

use super::Real;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    /// Optimizer state for `len` parameters with the standard defaults
    /// (0.9, 0.999, 1e-8).
    pub fn new(len: usize) -> Self {
        Self::with_hyper(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Number of update steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. `params` and `grads` must follow the same
    /// flat ordering (and total length) as the optimizer state.
    pub fn step<T: Real>(
        &mut self,
        lr: f64,
        params: &mut [&mut [T]],
        grads: &[&[T]],
    ) -> Result<()> {
        let total: usize = params.iter().map(|s| s.len()).sum();
        let total_g: usize = grads.iter().map(|s| s.len()).sum();
        if total != self.m.len() || total_g != self.m.len() || params.len() != grads.len() {
            return Err(Error::Input(format!(
                "optimizer state holds {} parameters, got {total} params / {total_g} grads",
                self.m.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut off = 0usize;
        for (p_slice, g_slice) in params.iter_mut().zip(grads) {
            for (p, g) in p_slice.iter_mut().zip(g_slice.iter()) {
                let g = g.as_f64();
                let m = &mut self.m[off];
                let v = &mut self.v[off];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = T::from_f64(p.as_f64() - lr * mhat / (vhat.sqrt() + self.eps));
                off += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = vec![1.0f64, -2.0, 3.5];
        let g = vec![0.0f64; 3];
        let mut adam = Adam::new(3);
        for _ in 0..5 {
            adam.step(0.1, &mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn single_step_matches_a_scripted_reference() {
        // By hand, from zero moments with gradient g:
        //   m1 = (1-b1)g, v1 = (1-b2)g², mhat = g, vhat = g²,
        //   Δp = -lr·g/(|g| + eps).
        let g0 = 0.37f64;
        let lr = 0.01;
        let mut p = vec![2.0f64];
        let mut adam = Adam::new(1);
        adam.step(lr, &mut [&mut p], &[&[g0][..]]).unwrap();
        let expected = 2.0 - lr * g0 / (g0.abs() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{} vs {expected}", p[0]);
    }

    #[test]
    fn constant_gradient_step_approaches_lr_sign() {
        let mut p = vec![0.0f64];
        let g = vec![-0.003f64];
        let lr = 0.05;
        let mut adam = Adam::new(1);
        let mut prev = p[0];
        let mut last_step = 0.0;
        for _ in 0..500 {
            adam.step(lr, &mut [&mut p], &[&g]).unwrap();
            last_step = p[0] - prev;
            prev = p[0];
        }
        // Steps converge to -lr·sign(g) = +lr.
        assert!((last_step - lr).abs() < 1e-3 * lr, "step {last_step}");
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut p = vec![0.0f64; 2];
        let g = vec![0.0f64; 3];
        let mut adam = Adam::new(2);
        assert!(adam.step(0.1, &mut [&mut p], &[&g]).is_err());
    }

    #[test]
    fn works_on_f32_with_f64_moments() {
        let mut p = vec![1.0f32];
        let g = vec![1e-4f32];
        let mut adam = Adam::new(1);
        for _ in 0..10 {
            adam.step(0.001, &mut [&mut p], &[&g]).unwrap();
        }
        // Ten near-sign steps of 1e-3 each.
        assert!((p[0] - (1.0 - 10.0 * 0.001)).abs() < 1e-4);
    }
}
