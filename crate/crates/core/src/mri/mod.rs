//! Multi-coil SENSE forward model `y_c = P F S_c x`, its adjoint, the data
//! log-likelihood gradient, coil sensitivity synthesis and noise injection.
//!
//! Coil maps are applied as `S_c` in the forward direction and `S_c^H` in
//! the adjoint. Masks are diagonal, so `P^T` is the same zeroing operator on
//! the full grid.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RimError};
use crate::numcore::fft::transform_in_place;
use crate::numcore::{ComplexImage, LinearMap, Tensor};
use crate::sampling::SamplingMask;

/// Combined sensitivity magnitude below which a pixel is treated as outside
/// the coil support.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

/// Coil sensitivity maps with optional per-coil k-space measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSet {
    pub sensitivities: Vec<ComplexImage>,
    pub measurements: Option<Vec<ComplexImage>>,
}

/// Complex Gaussian noise: `sigma` per real and imaginary component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl CoilSet {
    pub fn new(sensitivities: Vec<ComplexImage>) -> Result<Self> {
        let first = sensitivities
            .first()
            .ok_or_else(|| RimError::Contract("a coil set needs at least one coil".into()))?;
        let (h, w) = first.shape();
        for s in &sensitivities {
            s.ensure_shape(h, w)?;
        }
        Ok(Self {
            sensitivities,
            measurements: None,
        })
    }

    pub fn with_measurements(mut self, y: Vec<ComplexImage>) -> Result<Self> {
        if y.len() != self.coil_count() {
            return Err(RimError::shape(format!(
                "{} measurement sets for {} coils",
                y.len(),
                self.coil_count()
            )));
        }
        let (h, w) = self.shape();
        for m in &y {
            m.ensure_shape(h, w)?;
        }
        self.measurements = Some(y);
        Ok(self)
    }

    pub fn coil_count(&self) -> usize {
        self.sensitivities.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.sensitivities[0].shape()
    }

    pub fn measurements(&self) -> Result<&[ComplexImage]> {
        self.measurements
            .as_deref()
            .ok_or_else(|| RimError::Contract("coil set carries no measurements".into()))
    }

    /// Per-pixel `sum_c |S_c|^2`.
    pub fn combined_power(&self) -> Vec<f64> {
        let (h, w) = self.shape();
        let mut acc = vec![0.0; h * w];
        for s in &self.sensitivities {
            for (a, v) in acc.iter_mut().zip(s.data()) {
                *a += v.norm_sqr();
            }
        }
        acc
    }

    /// Scales the maps so that `sum_c S_c^H S_c = 1` on the support and zeroes
    /// them elsewhere.
    pub fn normalize(&mut self) {
        let power = self.combined_power();
        for s in &mut self.sensitivities {
            for (v, p) in s.data_mut().iter_mut().zip(&power) {
                if p.sqrt() > SUPPORT_THRESHOLD {
                    *v /= p.sqrt();
                } else {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    fn check(&self, h: usize, w: usize, mask: &SamplingMask) -> Result<()> {
        if self.shape() != (h, w) {
            return Err(RimError::shape(format!(
                "coil maps are {:?} but the image is {h}x{w}",
                self.shape()
            )));
        }
        mask.ensure_shape(h, w)
    }
}

/// Coil images to k-space, masked: `P F (S_c x)`.
pub fn forward_op(x: &ComplexImage, coils: &CoilSet, mask: &SamplingMask) -> Result<Vec<ComplexImage>> {
    let (h, w) = x.shape();
    coils.check(h, w, mask)?;
    coils
        .sensitivities
        .iter()
        .map(|s| {
            let mut buf: Vec<Complex64> = s.data().iter().zip(x.data()).map(|(a, b)| a * b).collect();
            transform_in_place(&mut buf, h, w, false);
            for (v, &keep) in buf.iter_mut().zip(mask.pattern()) {
                if !keep {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            ComplexImage::from_vec(h, w, buf)
        })
        .collect()
}

/// `sum_c S_c^H F^-1 P^T y_c`, the exact adjoint of [`forward_op`].
pub fn adjoint_op(y: &[ComplexImage], coils: &CoilSet, mask: &SamplingMask) -> Result<ComplexImage> {
    let (h, w) = coils.shape();
    coils.check(h, w, mask)?;
    if y.len() != coils.coil_count() {
        return Err(RimError::shape(format!(
            "{} k-space sets for {} coils",
            y.len(),
            coils.coil_count()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for (yc, s) in y.iter().zip(&coils.sensitivities) {
        yc.ensure_shape(h, w)?;
        for ((b, v), &keep) in buf.iter_mut().zip(yc.data()).zip(mask.pattern()) {
            *b = if keep { *v } else { Complex64::new(0.0, 0.0) };
        }
        transform_in_place(&mut buf, h, w, true);
        for ((o, b), sv) in out.iter_mut().zip(&buf).zip(s.data()) {
            *o += sv.conj() * b;
        }
    }
    ComplexImage::from_vec(h, w, out)
}

/// Zero-filled estimate `x_0`: the adjoint applied to the measurements.
pub fn zero_filled(coils: &CoilSet, mask: &SamplingMask) -> Result<ComplexImage> {
    adjoint_op(coils.measurements()?, coils, mask)
}

/// Data log-likelihood gradient `(1/sigma^2) A^H (A x - y)`.
///
/// This is the gradient of `(1/(2 sigma^2)) ||A x - y||^2`; the factor two of
/// the unhalved objective is absorbed into `1/sigma^2`.
pub fn loglik_gradient(
    x: &ComplexImage,
    coils: &CoilSet,
    mask: &SamplingMask,
    sigma: f64,
) -> Result<ComplexImage> {
    if !(sigma > 0.0) {
        return Err(RimError::Contract(format!("sigma must be positive, got {sigma}")));
    }
    let y = coils.measurements()?;
    let ax = forward_op(x, coils, mask)?;
    let residual: Vec<ComplexImage> = ax
        .iter()
        .zip(y)
        .map(|(a, b)| a.sub(b))
        .collect::<Result<_>>()?;
    Ok(adjoint_op(&residual, coils, mask)?.scale(1.0 / (sigma * sigma)))
}

/// `(1/(2 sigma^2)) sum_c ||P F S_c x - y_c||^2`, whose gradient is
/// [`loglik_gradient`].
pub fn data_fidelity(x: &ComplexImage, coils: &CoilSet, mask: &SamplingMask, sigma: f64) -> Result<f64> {
    let y = coils.measurements()?;
    let ax = forward_op(x, coils, mask)?;
    let mut acc = 0.0;
    for (a, b) in ax.iter().zip(y) {
        for (i, (u, v)) in a.data().iter().zip(b.data()).enumerate() {
            if mask.pattern()[i] {
                acc += (u - v).norm_sqr();
            }
        }
    }
    Ok(acc / (2.0 * sigma * sigma))
}

/// Smooth synthetic receive maps: Gaussian magnitude lobes centered on points
/// spread around the image border, each with a linear phase ramp, normalized
/// to unit combined power.
pub fn synth_sensitivities(height: usize, width: usize, coil_count: usize, seed: u64) -> Result<CoilSet> {
    if coil_count == 0 {
        return Err(RimError::Config("coil count must be at least one".into()));
    }
    if height == 0 || width == 0 {
        return Err(RimError::shape("sensitivity grid must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    let spread = 0.6 * height.max(width) as f64;
    let maps = (0..coil_count)
        .map(|c| {
            let angle = 2.0 * PI * c as f64 / coil_count as f64 + rng.random_range(-0.2..0.2);
            let py = cy + 0.55 * height as f64 * angle.sin();
            let px = cx + 0.55 * width as f64 * angle.cos();
            let ky = rng.random_range(-0.5..0.5) / height as f64;
            let kx = rng.random_range(-0.5..0.5) / width as f64;
            let phi0 = rng.random_range(-PI..PI);
            ComplexImage::from_fn(height, width, |y, x| {
                let (dy, dx) = (y as f64 - py, x as f64 - px);
                let mag = (-(dy * dy + dx * dx) / (2.0 * spread * spread)).exp();
                let phase = phi0 + 2.0 * PI * (ky * y as f64 + kx * x as f64);
                Complex64::from_polar(mag, phase)
            })
        })
        .collect();
    let mut set = CoilSet::new(maps)?;
    set.normalize();
    Ok(set)
}

/// Adds independent complex Gaussian noise at sampled k-space positions.
pub fn add_noise(y: &[ComplexImage], mask: &SamplingMask, spec: NoiseSpec) -> Result<Vec<ComplexImage>> {
    if !(spec.sigma >= 0.0) {
        return Err(RimError::Config(format!("noise sigma must be >= 0, got {}", spec.sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    y.iter()
        .map(|yc| {
            mask.ensure_shape(yc.height(), yc.width())?;
            let mut out = yc.clone();
            if spec.sigma > 0.0 {
                for (v, &keep) in out.data_mut().iter_mut().zip(mask.pattern()) {
                    if keep {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        *v += Complex64::new(re, im) * spec.sigma;
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Simulated acquisition: forward model, optional noise, measurements attached.
pub fn simulate(
    x: &ComplexImage,
    sensitivities: &CoilSet,
    mask: &SamplingMask,
    noise: Option<NoiseSpec>,
) -> Result<CoilSet> {
    let mut y = forward_op(x, sensitivities, mask)?;
    if let Some(spec) = noise {
        y = add_noise(&y, mask, spec)?;
    }
    CoilSet::new(sensitivities.sensitivities.clone())?.with_measurements(y)
}

/// `x -> (1/sigma^2) A^H A x` on two-channel tensors; self-adjoint.
pub struct NormalMap {
    coils: CoilSet,
    mask: SamplingMask,
    inv_var: f64,
}

impl NormalMap {
    pub fn new(coils: &CoilSet, mask: &SamplingMask, sigma: f64) -> Self {
        Self {
            coils: CoilSet {
                sensitivities: coils.sensitivities.clone(),
                measurements: None,
            },
            mask: mask.clone(),
            inv_var: 1.0 / (sigma * sigma),
        }
    }
}

impl LinearMap for NormalMap {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let img = x.to_complex()?;
        let ax = forward_op(&img, &self.coils, &self.mask)?;
        let out = adjoint_op(&ax, &self.coils, &self.mask)?.scale(self.inv_var);
        Ok(Tensor::from_complex(&out))
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        self.apply(y)
    }
}

/// `x -> A x` from a two-channel image tensor to a `2c`-channel k-space stack.
pub struct ForwardMap {
    coils: CoilSet,
    mask: SamplingMask,
}

impl ForwardMap {
    pub fn new(coils: &CoilSet, mask: &SamplingMask) -> Self {
        Self {
            coils: CoilSet {
                sensitivities: coils.sensitivities.clone(),
                measurements: None,
            },
            mask: mask.clone(),
        }
    }
}

impl LinearMap for ForwardMap {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Tensor::from_complex_stack(&forward_op(&x.to_complex()?, &self.coils, &self.mask)?)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        let stack = y.to_complex_stack()?;
        Ok(Tensor::from_complex(&adjoint_op(&stack, &self.coils, &self.mask)?))
    }
}

/// The log-likelihood gradient as an affine map of the estimate, for use on
/// a [`crate::numcore::Graph`]: returns the map and the constant offset
/// `-(1/sigma^2) A^H y`.
pub fn gradient_operator(
    coils: &CoilSet,
    mask: &SamplingMask,
    sigma: f64,
) -> Result<(Arc<dyn LinearMap>, Tensor)> {
    if !(sigma > 0.0) {
        return Err(RimError::Contract(format!("sigma must be positive, got {sigma}")));
    }
    let back = adjoint_op(coils.measurements()?, coils, mask)?.scale(-1.0 / (sigma * sigma));
    Ok((Arc::new(NormalMap::new(coils, mask, sigma)), Tensor::from_complex(&back)))
}
