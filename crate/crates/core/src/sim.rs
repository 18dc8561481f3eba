//! Complex-Wishart speckle simulator.
//!
//! Fully developed speckle is modelled as a circular complex Gaussian
//! scattering vector: a single-look draw is s = L z with L the Cholesky
//! factor of the ground-truth covariance and z a pair of independent
//! standard circular complex Gaussians, returning the rank-1 matrix s s^H.
//! The expectation over draws equals the truth, and n-sample averages are
//! n-look Wishart samples.
//!
//! Pixels are spatially independent (no correlated speckle) — a deliberate
//! simplification: real SAR sample correlation lowers the effective number
//! of looks of a multilook window, which the simulator makes no attempt to
//! reproduce.
//!
//! Every pixel draws from its own RNG substream keyed by
//! (seed, epoch, row, col), so output is bit-identical for any thread count.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polsar::Cov2;
use crate::raster::{C2Raster, MaskRaster, TemporalStack};
use crate::util::{par_rows, substream};

/// JSON-facing covariance value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovSpec {
    pub c11: f64,
    pub c22: f64,
    #[serde(default)]
    pub c12_re: f64,
    #[serde(default)]
    pub c12_im: f64,
}

impl CovSpec {
    pub fn to_cov(self) -> Cov2 {
        Cov2::new(self.c11, self.c22, Complex64::new(self.c12_re, self.c12_im))
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }

    fn check_within(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if self.row + self.height > height || self.col + self.width > width {
            return Err(Error::Config(format!(
                "{what} rectangle {}+{}x{}+{} exceeds scene {}x{}",
                self.row, self.height, self.col, self.width, height, width
            )));
        }
        Ok(())
    }
}

/// A rectangular patch of constant ground truth painted over the background.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub rect: Rect,
    pub cov: CovSpec,
}

/// A deterministic point scatterer: its covariance is added to the truth at
/// one pixel (change events still override the pixel entirely).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointTarget {
    pub row: usize,
    pub col: usize,
    pub cov: CovSpec,
}

/// Ground-truth description of a scene: a background covariance covering the
/// whole grid, rectangular regions painted over it in order, and optional
/// point targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: CovSpec,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub point_targets: Vec<PointTarget>,
}

/// Scripted truth replacements: each event repaints a rectangle with a new
/// covariance from its epoch onward.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeScript {
    pub epochs: usize,
    #[serde(default)]
    pub events: Vec<ChangeEvent>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeEvent {
    pub epoch: usize,
    pub rect: Rect,
    pub cov: CovSpec,
}

impl ChangeScript {
    /// A script with no events: every epoch repeats the base scene.
    pub fn still(epochs: usize) -> Self {
        ChangeScript {
            epochs,
            events: Vec::new(),
        }
    }

    pub fn validate(&self, scene: &SceneSpec) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("change script needs at least 1 epoch".into()));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.epoch >= self.epochs {
                return Err(Error::Config(format!(
                    "event {i} epoch {} outside 0..{}",
                    e.epoch, self.epochs
                )));
            }
            e.rect.check_within(scene.height, scene.width, "event")?;
            check_truth(e.cov.to_cov(), &format!("event {i}"))?;
        }
        Ok(())
    }
}

/// Truth values must be strictly positive definite so the Cholesky factor
/// exists and multilooked determinants stay positive.
fn check_truth(c: Cov2, what: &str) -> Result<()> {
    if !(c.c11 > 0.0 && c.c22 > 0.0 && c.det() > 0.0) {
        return Err(Error::Config(format!(
            "{what} covariance must be strictly positive definite: c11={}, c22={}, det={}",
            c.c11,
            c.c22,
            c.det()
        )));
    }
    Ok(())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene must be at least 1x1".into()));
        }
        check_truth(self.background.to_cov(), "background")?;
        for (i, r) in self.regions.iter().enumerate() {
            r.rect.check_within(self.height, self.width, "region")?;
            check_truth(r.cov.to_cov(), &format!("region {i}"))?;
        }
        for (i, t) in self.point_targets.iter().enumerate() {
            if t.row >= self.height || t.col >= self.width {
                return Err(Error::Config(format!(
                    "point target {i} at ({}, {}) outside scene {}x{}",
                    t.row, t.col, self.height, self.width
                )));
            }
        }
        Ok(())
    }

    /// Per-pixel truth of the base scene (row-major).
    pub fn truth_field(&self) -> Result<Vec<Cov2>> {
        self.validate()?;
        let mut field = vec![self.background.to_cov(); self.height * self.width];
        for region in &self.regions {
            let cov = region.cov.to_cov();
            for r in region.rect.row..region.rect.row + region.rect.height {
                for c in region.rect.col..region.rect.col + region.rect.width {
                    field[r * self.width + c] = cov;
                }
            }
        }
        for t in &self.point_targets {
            let i = t.row * self.width + t.col;
            let add = t.cov.to_cov();
            field[i] = Cov2::new(
                field[i].c11 + add.c11,
                field[i].c22 + add.c22,
                field[i].c12 + add.c12,
            );
            check_truth(field[i], &format!("point target at ({}, {})", t.row, t.col))?;
        }
        Ok(field)
    }

    /// Truth at `epoch` with all change events up to and including it applied.
    pub fn truth_for_epoch(&self, script: &ChangeScript, epoch: usize) -> Result<Vec<Cov2>> {
        let mut field = self.truth_field()?;
        for event in script.events.iter().filter(|e| e.epoch <= epoch) {
            let cov = event.cov.to_cov();
            for r in event.rect.row..event.rect.row + event.rect.height {
                for c in event.rect.col..event.rect.col + event.rect.width {
                    field[r * self.width + c] = cov;
                }
            }
        }
        Ok(field)
    }
}

/// Draws one single-look covariance sample s s^H from a PSD truth.
pub fn sample_single_look(truth: Cov2, rng: &mut impl Rng) -> Result<Cov2> {
    if !truth.is_psd() {
        return Err(Error::Input(format!(
            "Cholesky factorization needs a PSD matrix: c11={}, c22={}, det={}",
            truth.c11,
            truth.c22,
            truth.det()
        )));
    }
    // Lower Cholesky factor of [[c11, c12], [conj(c12), c22]]; the rank
    // deficient cases (zero row/column) degrade gracefully to zero factors.
    let l11 = truth.c11.sqrt();
    let l21 = if l11 > 0.0 {
        truth.c12.conj() / l11
    } else {
        Complex64::new(0.0, 0.0)
    };
    let l22 = (truth.c22 - l21.norm_sqr()).max(0.0).sqrt();

    // Circular complex standard Gaussians: each part has variance 1/2 so
    // E|z|^2 = 1.
    let mut cnorm = || -> Complex64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    };
    let z1 = cnorm();
    let z2 = cnorm();
    let s1 = z1 * l11;
    let s2 = l21 * z1 + l22 * z2;
    Ok(Cov2 {
        c11: s1.norm_sqr(),
        c22: s2.norm_sqr(),
        c12: s1 * s2.conj(),
    })
}

fn sample_field(
    truth: &[Cov2],
    height: usize,
    width: usize,
    seed: u64,
    epoch: usize,
    threads: usize,
) -> C2Raster {
    let mut samples = vec![Cov2::zero(); height * width];
    par_rows(threads, height, width, &mut samples, |rows, out| {
        for (i, r) in rows.clone().enumerate() {
            for c in 0..width {
                let mut rng = substream(seed, [epoch as u64, r as u64, c as u64]);
                // Truth is PSD by scene validation, so the draw cannot fail.
                out[i * width + c] =
                    sample_single_look(truth[r * width + c], &mut rng).expect("validated truth");
            }
        }
    });
    let mut c2 = C2Raster::zeros(height, width);
    for (i, s) in samples.into_iter().enumerate() {
        c2.c11[i] = s.c11;
        c2.c22[i] = s.c22;
        c2.c12[i] = s.c12;
    }
    c2
}

/// Simulates one single-look epoch of the base scene.
pub fn simulate_scene(spec: &SceneSpec, seed: u64, threads: usize) -> Result<C2Raster> {
    let truth = spec.truth_field()?;
    Ok(sample_field(&truth, spec.height, spec.width, seed, 0, threads))
}

/// Simulates `script.epochs` independent speckle realizations with scripted
/// truth changes, plus the ground-truth change mask (1 where the truth
/// differs between any pair of epochs).
pub fn simulate_stack(
    spec: &SceneSpec,
    script: &ChangeScript,
    dates: Vec<String>,
    seed: u64,
    threads: usize,
) -> Result<(TemporalStack, MaskRaster)> {
    script.validate(spec)?;
    if dates.len() != script.epochs {
        return Err(Error::Config(format!(
            "{} dates supplied for {} epochs",
            dates.len(),
            script.epochs
        )));
    }
    let mut epochs = Vec::with_capacity(script.epochs);
    let mut gt = MaskRaster::zeros(spec.height, spec.width);
    let base = spec.truth_for_epoch(script, 0)?;
    for e in 0..script.epochs {
        let truth = spec.truth_for_epoch(script, e)?;
        for (m, (a, b)) in gt.data.iter_mut().zip(truth.iter().zip(&base)) {
            if a != b {
                *m = 1;
            }
        }
        epochs.push(sample_field(&truth, spec.height, spec.width, seed, e, threads));
    }
    Ok((TemporalStack::new(epochs, dates)?, gt))
}
