//! Omnibus Wishart equality test over a temporal stack.
//!
//! The likelihood-ratio statistic for equality of k multilooked dual-pol
//! covariance matrices (p = 2, n equivalent looks) is
//!
//! ```text
//! ln Q = n (p k ln k + sum_i ln|C_i| - k ln|sum_i C_i|),   ln Q <= 0,
//! ```
//!
//! and the change probability uses Box's chi-square mixture approximation
//!
//! ```text
//! P(-2 rho ln Q <= z) ~= P(chi2(f) <= z) + w2 [P(chi2(f+4) <= z) - P(chi2(f) <= z)]
//! ```
//!
//! with f = (k-1) p^2 and the rho/w2 expressions implemented in
//! [`OmnibusParams`]. w2 is legitimately negative for usual parameters, and
//! the approximation is asymptotic, so probabilities are clamped to [0, 1].
//!
//! Thresholding happens on the *no-change* probability 1 - P: at the usual
//! significance of 1e-10 the interesting tail is far below f64 resolution
//! around 1.0, so 1 - P is computed directly from upper-tail chi-square
//! survival functions instead of subtracting.

use crate::error::{Error, Result};
use crate::polsar::{boxcar_multilook, Cov2};
use crate::raster::{MaskRaster, TemporalStack};
use crate::util::par_rows;

/// Polarimetric dimension: dual-pol covariance matrices.
pub const P_DIM: usize = 2;

// ---------------------------------------------------------------------------
// Chi-square CDF via the regularized incomplete gamma function.
// ---------------------------------------------------------------------------

/// ln Gamma(x) for x > 0, Lanczos approximation (g = 7, 9 terms).
/// Absolute accuracy is well below 1e-13 over the range used here.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (std::f64::consts::TAU).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x) by series expansion.
/// Valid for x < a + 1 where the series converges quickly.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = 1.0;
    loop {
        term *= x / (a + n);
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
        n += 1.0;
        debug_assert!(n < 1e6, "series failed to converge");
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction.
/// Valid for x >= a + 1.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const FPMIN: f64 = f64::MIN_POSITIVE / f64::EPSILON;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    let mut i = 1.0;
    loop {
        let an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 3e-16 {
            break;
        }
        i += 1.0;
        debug_assert!(i < 1e6, "continued fraction failed to converge");
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed on the
/// branch that keeps tiny tail values accurate.
fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Chi-square CDF: P(chi2(f) <= z) = P(f/2, z/2).
pub fn chi2_cdf(z: f64, f: u32) -> Result<f64> {
    if f == 0 {
        return Err(Error::Input("chi-square needs at least 1 degree of freedom".into()));
    }
    if !(z >= 0.0) {
        return Err(Error::Input(format!("chi-square CDF needs z >= 0, got {z}")));
    }
    Ok(gamma_p(f as f64 / 2.0, z / 2.0))
}

/// Chi-square survival function 1 - CDF, accurate deep into the upper tail.
pub fn chi2_sf(z: f64, f: u32) -> Result<f64> {
    if f == 0 {
        return Err(Error::Input("chi-square needs at least 1 degree of freedom".into()));
    }
    if !(z >= 0.0) {
        return Err(Error::Input(format!("chi-square SF needs z >= 0, got {z}")));
    }
    Ok(gamma_q(f as f64 / 2.0, z / 2.0))
}

// ---------------------------------------------------------------------------
// Omnibus test.
// ---------------------------------------------------------------------------

/// Validated parameters of the omnibus test.
#[derive(Debug, Clone, Copy)]
pub struct OmnibusParams {
    k: usize,
    n: f64,
    significance: f64,
    rho: f64,
    omega2: f64,
}

impl OmnibusParams {
    /// `k` epochs, `n` equivalent looks of each multilooked matrix, and the
    /// significance level of the change decision.
    pub fn new(k: usize, n: f64, significance: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("omnibus test needs k >= 2 epochs, got {k}")));
        }
        if !(n > 0.0) {
            return Err(Error::Config(format!("equivalent looks must be positive, got {n}")));
        }
        if !(significance > 0.0 && significance < 1.0) {
            return Err(Error::Config(format!(
                "significance must lie in (0, 1), got {significance}"
            )));
        }
        let p = P_DIM as f64;
        let kf = k as f64;
        let rho = 1.0 - (2.0 * p * p - 1.0) / (6.0 * (kf - 1.0) * p) * (kf / n - 1.0 / (n * kf));
        if !(rho > 0.0) {
            return Err(Error::Config(format!(
                "rho = {rho} is not positive; n = {n} is too small for k = {k}"
            )));
        }
        let omega2 = (p * p * (p * p - 1.0)) / (24.0 * p * p)
            * (kf / (n * n) - 1.0 / ((n * kf) * (n * kf)))
            - (p * p * (kf - 1.0) / 4.0) * (1.0 - 1.0 / rho).powi(2);
        Ok(OmnibusParams {
            k,
            n,
            significance,
            rho,
            omega2,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn significance(&self) -> f64 {
        self.significance
    }

    /// Degrees of freedom f = (k-1) p^2.
    pub fn f(&self) -> u32 {
        ((self.k - 1) * P_DIM * P_DIM) as u32
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn omega2(&self) -> f64 {
        self.omega2
    }
}

/// Test statistic ln Q for k multilooked covariance matrices.
pub fn omnibus_lnq(mats: &[Cov2], n: f64) -> Result<f64> {
    let k = mats.len();
    if k < 2 {
        return Err(Error::Config(format!("omnibus test needs k >= 2 matrices, got {k}")));
    }
    let mut sum_ln_det = 0.0;
    let mut total = Cov2::zero();
    for (epoch, c) in mats.iter().enumerate() {
        let det = c.det();
        if !(det > 0.0) {
            return Err(Error::SingularEpoch { epoch, det });
        }
        sum_ln_det += det.ln();
        total.c11 += c.c11;
        total.c22 += c.c22;
        total.c12 += c.c12;
    }
    let det_total = total.det();
    if !(det_total > 0.0) {
        return Err(Error::Input(format!(
            "sum of covariances is singular (determinant {det_total:.6e})"
        )));
    }
    let kf = k as f64;
    Ok(n * (P_DIM as f64 * kf * kf.ln() + sum_ln_det - kf * det_total.ln()))
}

/// No-change probability 1 - P(-2 rho ln Q <= z), kept accurate in the deep
/// tail by working with survival functions throughout.
pub fn no_change_probability(lnq: f64, params: &OmnibusParams) -> Result<f64> {
    if lnq > 1e-6 {
        return Err(Error::Input(format!("ln Q must be <= 0, got {lnq}")));
    }
    let z = (-2.0 * params.rho * lnq).max(0.0);
    let f = params.f();
    let q_f = chi2_sf(z, f)?;
    let q_f4 = chi2_sf(z, f + 4)?;
    // 1 - [P_f + w2 (P_{f+4} - P_f)] = Q_f - w2 (Q_f - Q_{f+4})
    Ok((q_f - params.omega2 * (q_f - q_f4)).clamp(0.0, 1.0))
}

/// Change probability P(-2 rho ln Q <= z), clamped to [0, 1].
pub fn change_probability(lnq: f64, params: &OmnibusParams) -> Result<f64> {
    Ok(1.0 - no_change_probability(lnq, params)?)
}

/// Per-pixel omnibus change mask over a temporal stack.
#[derive(Debug, Clone)]
pub struct ChangeMask {
    pub height: usize,
    pub width: usize,
    /// true = changed.
    pub changed: Vec<bool>,
    /// Change probability per pixel (f64 in memory; files store f32).
    pub prob: Vec<f64>,
    pub significance: f64,
    /// Pixels flagged as changed because a multilooked matrix was singular.
    pub singular: usize,
}

impl ChangeMask {
    pub fn changed_ratio(&self) -> f64 {
        self.changed.iter().filter(|&&c| c).count() as f64 / self.changed.len().max(1) as f64
    }

    pub fn to_mask_raster(&self) -> MaskRaster {
        MaskRaster::new(
            self.height,
            self.width,
            self.changed.iter().map(|&c| u8::from(c)).collect(),
        )
    }

    pub fn prob_f32(&self) -> Vec<f32> {
        self.prob.iter().map(|&p| p as f32).collect()
    }
}

/// Multilooks every epoch with a sliding `win_az` x `win_rg` boxcar, then
/// evaluates the omnibus test at every pixel at full resolution (the mask
/// stays aligned with training patches).
///
/// Pixels where any multilooked matrix is singular are marked changed
/// (conservative) and counted instead of failing the whole raster.
pub fn change_mask(
    stack: &TemporalStack,
    win_az: usize,
    win_rg: usize,
    params: &OmnibusParams,
    threads: usize,
) -> Result<ChangeMask> {
    let k = stack.len();
    if k < 2 {
        return Err(Error::Config(format!("change detection needs k >= 2 epochs, got {k}")));
    }
    if k != params.k() {
        return Err(Error::Config(format!(
            "params expect k = {} epochs but the stack has {k}",
            params.k()
        )));
    }
    let height = stack.height();
    let width = stack.width();
    let looked: Vec<_> = stack
        .epochs
        .iter()
        .map(|e| boxcar_multilook(e, win_az, win_rg))
        .collect::<Result<_>>()?;

    // (probability, singular flag) per pixel; the mask threshold is applied
    // afterwards so it provably reproduces from prob + significance.
    let mut cells = vec![(0.0f64, false); height * width];
    par_rows(threads, height, width, &mut cells, |rows, out| {
        let mut mats = vec![Cov2::zero(); k];
        for (i, r) in rows.clone().enumerate() {
            for c in 0..width {
                let px = r * width + c;
                for (m, epoch) in mats.iter_mut().zip(&looked) {
                    *m = Cov2::new(epoch.c11[px], epoch.c22[px], epoch.c12[px]);
                }
                out[i * width + c] = match omnibus_lnq(&mats, params.n()) {
                    Ok(lnq) => {
                        let surv = no_change_probability(lnq.min(0.0), params)
                            .expect("lnq clamped to the valid range");
                        (1.0 - surv, false)
                    }
                    Err(_) => (1.0, true),
                };
            }
        }
    });

    let threshold = 1.0 - params.significance();
    let mut mask = ChangeMask {
        height,
        width,
        changed: Vec::with_capacity(cells.len()),
        prob: Vec::with_capacity(cells.len()),
        significance: params.significance(),
        singular: 0,
    };
    for (p, singular) in cells {
        mask.singular += usize::from(singular);
        mask.changed.push(p > threshold);
        mask.prob.push(p);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{self, ChangeScript, CovSpec, SceneSpec};
    use num_complex::Complex64;

    /// Closed-form chi-square CDF for even dof:
    /// 1 - exp(-z/2) * sum_{m < f/2} (z/2)^m / m!.
    fn chi2_cdf_even_oracle(z: f64, f: u32) -> f64 {
        assert_eq!(f % 2, 0);
        let half = z / 2.0;
        let mut term = 1.0;
        let mut sum = 0.0;
        for m in 0..(f / 2) {
            if m > 0 {
                term *= half / m as f64;
            }
            sum += term;
        }
        1.0 - (-half).exp() * sum
    }

    #[test]
    fn chi2_cdf_matches_even_dof_closed_form() {
        for f in [2u32, 4, 6, 8, 12, 28] {
            for i in 0..300 {
                let z = 0.1 * (i as f64) + 0.05;
                let got = chi2_cdf(z, f).unwrap();
                let want = chi2_cdf_even_oracle(z, f);
                assert!(
                    (got - want).abs() < 1e-12,
                    "f={f}, z={z}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn chi2_cdf_known_values() {
        assert_eq!(chi2_cdf(0.0, 4).unwrap(), 0.0);
        // f = 4, z = 4: 1 - e^-2 (1 + 2).
        let want = 1.0 - (-2.0f64).exp() * 3.0;
        assert!((chi2_cdf(4.0, 4).unwrap() - want).abs() < 1e-14);
        assert!((want - 0.593994).abs() < 1e-6);
        // Median of chi2(2) is 2 ln 2.
        assert!((chi2_cdf(2.0 * 2.0f64.ln(), 2).unwrap() - 0.5).abs() < 1e-14);
        // Odd dof: P(chi2(1) <= 1) = P(|Z| <= 1) = 0.6826894921370859.
        assert!((chi2_cdf(1.0, 1).unwrap() - 0.682_689_492_137_085_9).abs() < 1e-12);
    }

    #[test]
    fn chi2_cdf_is_monotone_and_saturates() {
        let mut last = 0.0;
        for i in 0..200 {
            let v = chi2_cdf(0.5 * i as f64, 5).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert!(chi2_cdf(1e4, 5).unwrap() > 1.0 - 1e-15);
        assert!(chi2_cdf(-1.0, 5).is_err());
        assert!(chi2_cdf(1.0, 0).is_err());
    }

    #[test]
    fn chi2_sf_keeps_tiny_tails() {
        // Q must underflow gracefully instead of rounding through 1 - P.
        let q = chi2_sf(200.0, 4).unwrap();
        assert!(q > 0.0 && q < 1e-38, "sf(200, 4) = {q}");
        let p = chi2_cdf(3.0, 4).unwrap();
        let q3 = chi2_sf(3.0, 4).unwrap();
        assert!((p + q3 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identical_epochs_give_zero_lnq() {
        let c = Cov2::new(2.0, 1.0, Complex64::new(0.4, -0.3));
        for k in [2, 3, 8] {
            let lnq = omnibus_lnq(&vec![c; k], 13.0).unwrap();
            assert!(lnq.abs() < 1e-9, "k={k}: {lnq}");
        }
    }

    #[test]
    fn hand_derived_lnq_example() {
        // k = 2, n = 1, C1 = diag(1,1), C2 = diag(4,4):
        // ln Q = 2*2*ln 2 + ln 16 - 2 ln 25 = 8 ln 2 - 2 ln 25.
        let lnq = omnibus_lnq(&[Cov2::diag(1.0, 1.0), Cov2::diag(4.0, 4.0)], 1.0).unwrap();
        let want = 8.0 * 2.0f64.ln() - 2.0 * 25.0f64.ln();
        assert!((lnq - want).abs() < 1e-12, "{lnq} vs {want}");
        assert!(lnq < 0.0);
    }

    #[test]
    fn lnq_is_scale_invariant_and_permutation_invariant() {
        let mats = [
            Cov2::new(2.0, 1.0, Complex64::new(0.5, 0.25)),
            Cov2::new(1.5, 1.25, Complex64::new(-0.25, 0.1)),
            Cov2::new(3.0, 0.75, Complex64::new(0.0, 0.6)),
        ];
        let base = omnibus_lnq(&mats, 7.0).unwrap();
        let scaled: Vec<Cov2> = mats
            .iter()
            .map(|c| Cov2::new(3.7 * c.c11, 3.7 * c.c22, 3.7 * c.c12))
            .collect();
        assert!((omnibus_lnq(&scaled, 7.0).unwrap() - base).abs() < 1e-9);
        let permuted = [mats[2], mats[0], mats[1]];
        assert!((omnibus_lnq(&permuted, 7.0).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn singular_epoch_is_identified() {
        let mats = [Cov2::diag(1.0, 1.0), Cov2::diag(1.0, 0.0)];
        match omnibus_lnq(&mats, 1.0).unwrap_err() {
            Error::SingularEpoch { epoch, .. } => assert_eq!(epoch, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn params_match_hand_derivation() {
        let params = OmnibusParams::new(2, 40.0, 1e-10).unwrap();
        assert_eq!(params.f(), 4);
        // rho = 1 - (7/12)(0.05 - 1/80) = 313/320.
        assert!((params.rho() - 0.978125).abs() < 1e-12);
        // w2 = (1/8)(2/1600 - 1/6400) - (1 - 1/rho)^2 = 7/51200 - 49/97969.
        let want = 7.0 / 51200.0 - 49.0 / 97969.0;
        assert!((params.omega2() - want).abs() < 1e-15, "{}", params.omega2());
        assert!((params.omega2() + 3.634e-4).abs() < 1e-7);
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(OmnibusParams::new(1, 40.0, 1e-10).is_err());
        assert!(OmnibusParams::new(2, 0.0, 1e-10).is_err());
        assert!(OmnibusParams::new(2, 40.0, 0.0).is_err());
        assert!(OmnibusParams::new(2, 40.0, 1.0).is_err());
        // k/n large enough drives rho negative.
        assert!(OmnibusParams::new(200, 0.2, 1e-10).is_err());
    }

    #[test]
    fn probability_is_zero_at_lnq_zero_and_monotone() {
        let params = OmnibusParams::new(4, 40.0, 1e-10).unwrap();
        assert_eq!(change_probability(0.0, &params).unwrap(), 0.0);
        let mut last = -1.0;
        for i in 0..100 {
            let lnq = -0.2 * i as f64;
            let p = change_probability(lnq, &params).unwrap();
            assert!(p >= last, "not monotone at lnq={lnq}");
            assert!((0.0..=1.0).contains(&p));
            last = p;
        }
        assert!(change_probability(0.5, &params).is_err(), "positive lnq");
    }

    #[test]
    fn no_change_probability_resolves_deep_tail() {
        let params = OmnibusParams::new(8, 76.0, 1e-10).unwrap();
        // A strong change: the survival probability must come out far below
        // 1e-10 yet not collapse to zero through cancellation against 1.0.
        let surv = no_change_probability(-200.0, &params).unwrap();
        assert!(surv > 0.0 && surv < 1e-30, "survival {surv}");
        let p = change_probability(-200.0, &params).unwrap();
        assert!(p > 1.0 - 1e-10);
    }

    fn flat_stack(k: usize, seed: u64) -> TemporalStack {
        let spec = SceneSpec {
            height: 48,
            width: 48,
            background: CovSpec {
                c11: 1.0,
                c22: 0.5,
                c12_re: 0.2,
                c12_im: -0.1,
            },
            regions: Vec::new(),
            point_targets: Vec::new(),
        };
        let dates = (0..k).map(|i| format!("2021-02-{:02}", 1 + i)).collect();
        sim::simulate_stack(&spec, &ChangeScript::still(k), dates, seed, 1)
            .unwrap()
            .0
    }

    #[test]
    fn change_mask_on_still_stack_is_quiet() {
        let stack = flat_stack(4, 31);
        let params = OmnibusParams::new(4, 25.0, 1e-10).unwrap();
        let mask = change_mask(&stack, 5, 5, &params, 1).unwrap();
        assert_eq!(mask.singular, 0);
        assert!(
            mask.changed_ratio() < 0.01,
            "false alarms {}",
            mask.changed_ratio()
        );
        // Threshold invariant: mask reproduces from prob + significance.
        for (i, &p) in mask.prob.iter().enumerate() {
            assert_eq!(mask.changed[i], p > 1.0 - mask.significance);
        }
    }

    #[test]
    fn change_mask_scale_invariance() {
        let stack = flat_stack(3, 77);
        let params = OmnibusParams::new(3, 25.0, 0.01).unwrap();
        let mask_a = change_mask(&stack, 5, 5, &params, 1).unwrap();
        let mut scaled = stack.clone();
        for e in &mut scaled.epochs {
            for i in 0..e.len() {
                e.c11[i] *= 123.0;
                e.c22[i] *= 123.0;
                e.c12[i] *= 123.0;
            }
        }
        let mask_b = change_mask(&scaled, 5, 5, &params, 1).unwrap();
        assert_eq!(mask_a.changed, mask_b.changed);
    }

    #[test]
    fn singular_pixels_are_flagged_not_fatal() {
        // Window 1x1 keeps matrices rank one: determinants are zero up to
        // rounding, so pixels either hit the singular path or produce huge
        // negative lnq. Both must flag the pixel changed without erroring.
        let stack = flat_stack(2, 5);
        let params = OmnibusParams::new(2, 1.0, 1e-10).unwrap();
        let mask = change_mask(&stack, 1, 1, &params, 1).unwrap();
        assert!(mask.singular > 0, "no singular pixel seen");
        assert!(mask.changed.iter().all(|&c| c));
    }
}
