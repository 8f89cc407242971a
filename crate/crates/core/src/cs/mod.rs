//! Compressed-sensing comparator: l1-wavelet regularized SENSE solved by the
//! monotone variant of FISTA.
//!
//! The problem is posed over wavelet coefficients `c` with `x = W^T c`:
//! `min_c 1/2 ||A W^T c - y||^2 + lambda ||c||_1`. `W` is orthonormal on the
//! padded grid, so the proximal step is exact complex soft-thresholding.
//! Data are divided by `max |A^H y|` before solving and rescaled afterwards,
//! making `lambda` relative to a unit-peak image.

mod wavelet;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RimError};
use crate::mri::{adjoint_op, forward_op, CoilSet};
use crate::numcore::ComplexImage;
use crate::sampling::SamplingMask;

pub use wavelet::{dwt2, idwt2, Wavelet2d, DB4};

/// Power iterations used to estimate the Lipschitz constant.
pub const POWER_ITERATIONS: usize = 20;
/// Consecutive candidate-objective increases treated as divergence.
pub const DIVERGENCE_RUN: usize = 5;

fn default_lambda() -> f64 {
    0.005
}
fn default_iters() -> usize {
    60
}
fn default_levels() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            max_iters: default_iters(),
            levels: default_levels(),
        }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || self.max_iters == 0 || self.levels == 0 {
            return Err(RimError::Config(format!(
                "CS needs lambda > 0, max_iters >= 1 and levels >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `sign(c) max(|c| - tau, 0)` with the phase kept.
pub fn soft_threshold(c: Complex64, tau: f64) -> Complex64 {
    let m = c.norm();
    if m <= tau {
        Complex64::new(0.0, 0.0)
    } else {
        c * ((m - tau) / m)
    }
}

/// Largest eigenvalue of `A^H A` by power iteration from a fixed start.
pub fn lipschitz_estimate(coils: &CoilSet, mask: &SamplingMask, iterations: usize) -> Result<f64> {
    let (h, w) = coils.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(0x11_9517);
    let mut v = ComplexImage::from_fn(h, w, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let n = v.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        v = v.scale(1.0 / n);
        let av = adjoint_op(&forward_op(&v, coils, mask)?, coils, mask)?;
        lambda = v.dot(&av)?.re;
        v = av;
    }
    Ok(lambda)
}

/// Per-iteration trace of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CsReport {
    pub image: ComplexImage,
    /// Objective of the retained iterate after each iteration (normalized
    /// data scale).
    pub objective: Vec<f64>,
    pub lipschitz: f64,
}

struct Problem<'a> {
    coils: &'a CoilSet,
    mask: &'a SamplingMask,
    wavelet: Wavelet2d,
    y: Vec<ComplexImage>,
    lambda: f64,
}

impl Problem<'_> {
    fn residual(&self, c: &ComplexImage) -> Result<Vec<ComplexImage>> {
        let ax = forward_op(&self.wavelet.inverse(c)?, self.coils, self.mask)?;
        ax.iter().zip(&self.y).map(|(a, b)| a.sub(b)).collect()
    }

    fn objective(&self, c: &ComplexImage) -> Result<f64> {
        let r = self.residual(c)?;
        let data: f64 = r.iter().map(ComplexImage::norm_sqr).sum();
        let l1: f64 = c.data().iter().map(|v| v.norm()).sum();
        Ok(0.5 * data + self.lambda * l1)
    }

    fn gradient(&self, c: &ComplexImage) -> Result<ComplexImage> {
        self.wavelet.forward(&adjoint_op(&self.residual(c)?, self.coils, self.mask)?)
    }
}

/// Full solve with the objective trace.
pub fn cs_solve(coils: &CoilSet, mask: &SamplingMask, config: &CsConfig) -> Result<CsReport> {
    config.validate()?;
    let (h, w) = coils.shape();
    let measured = coils.measurements()?;
    let x0 = adjoint_op(measured, coils, mask)?;
    let scale = x0.max_magnitude();
    if scale == 0.0 {
        return Ok(CsReport {
            image: x0,
            objective: vec![0.0; config.max_iters],
            lipschitz: 0.0,
        });
    }
    let lipschitz = lipschitz_estimate(coils, mask, POWER_ITERATIONS)?;
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(RimError::Numerical(format!("Lipschitz estimate {lipschitz}")));
    }
    let problem = Problem {
        coils,
        mask,
        wavelet: Wavelet2d::new(h, w, config.levels)?,
        y: measured.iter().map(|m| m.scale(1.0 / scale)).collect(),
        lambda: config.lambda,
    };
    let step = 1.0 / lipschitz;
    let mut x = problem.wavelet.forward(&x0.scale(1.0 / scale))?;
    let mut x_prev;
    let mut fx = problem.objective(&x)?;
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut objective = Vec::with_capacity(config.max_iters);
    let mut last_candidate = f64::INFINITY;
    let mut rising = 0usize;
    for _ in 0..config.max_iters {
        let g = problem.gradient(&yk)?;
        let z = yk
            .zip_map(&g, |a, b| a - b * step)?
            .map(|v| soft_threshold(v, config.lambda * step));
        let fz = problem.objective(&z)?;
        if !fz.is_finite() {
            return Err(RimError::Numerical("CS objective is not finite".into()));
        }
        rising = if fz > last_candidate { rising + 1 } else { 0 };
        if rising >= DIVERGENCE_RUN {
            return Err(RimError::Numerical(format!(
                "CS objective increased {DIVERGENCE_RUN} consecutive iterations"
            )));
        }
        last_candidate = fz;
        let next = if fz <= fx { z.clone() } else { x.clone() };
        x_prev = std::mem::replace(&mut x, next);
        fx = fx.min(fz);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let (a, b) = (t / t_next, (t - 1.0) / t_next);
        yk = ComplexImage::from_fn(x.height(), x.width(), |r, c| {
            let xi = x.get(r, c);
            xi + (z.get(r, c) - xi) * a + (xi - x_prev.get(r, c)) * b
        });
        t = t_next;
        objective.push(fx);
    }
    Ok(CsReport {
        image: problem.wavelet.inverse(&x)?.scale(scale),
        objective,
        lipschitz,
    })
}

/// Reconstruction after `max_iters` monotone FISTA iterations.
pub fn cs_reconstruct(coils: &CoilSet, mask: &SamplingMask, config: &CsConfig) -> Result<ComplexImage> {
    Ok(cs_solve(coils, mask, config)?.image)
}
