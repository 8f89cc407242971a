//! Training of the RIM: time-weighted multi-step losses, ADAM, patch
//! augmentation and weighted sampling across datasets.
//!
//! Each training sample is re-acquired on the fly: the reference and coil
//! maps are augmented together, a fresh Gaussian mask is drawn and the
//! measurements are synthesized from the forward model. Seeds for every
//! random choice derive from the configured seed and the step index, so a
//! run is a pure function of its configuration.

mod adam;
mod augment;
mod sampler;

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RimError};
use crate::metrics;
use crate::mri::{self, CoilSet, NoiseSpec};
use crate::numcore::{derive_seed, ComplexImage, Graph, Tape, Tensor};
use crate::rim::RimModel;
use crate::sampling::{gaussian_mask, SamplingMask};

pub use adam::{Adam, AdamHyper};
pub use augment::{augment, AugmentToggles, Transform};
pub use sampler::{weighted_sampler, WeightedSampler, WEIGHT_SUM_TOLERANCE};

/// Patch side used for training in the original work.
pub const PAPER_PATCH: usize = 190;
/// Desk-scale default patch side.
pub const DEFAULT_PATCH: usize = 64;

const STREAM_AUGMENT: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_SAMPLER: u64 = 4;
const STREAM_ACCEL: u64 = 5;
/// Base seed for validation masks; independent of the training seed.
pub const VALIDATION_SEED: u64 = 0x5EED_0F_7A11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    L1,
    L2,
}

impl fmt::Display for LossNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossNorm::L1 => "l1",
            LossNorm::L2 => "l2",
        })
    }
}

impl FromStr for LossNorm {
    type Err = RimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossNorm::L1),
            "l2" => Ok(LossNorm::L2),
            other => Err(RimError::Config(format!("unknown loss '{other}' (expected l1 or l2)"))),
        }
    }
}

/// Loss norm together with the per-step weights `w_1 .. w_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub norm: LossNorm,
    pub weights: Vec<f64>,
}

/// `w_tau = 10^{-(t - tau)/(t - 1)}`; a single step has weight 1.
pub fn loss_weights(t: usize) -> Vec<f64> {
    match t {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (1..=t)
            .map(|tau| 10f64.powf(-((t - tau) as f64) / ((t - 1) as f64)))
            .collect(),
    }
}

impl LossSpec {
    pub fn new(norm: LossNorm, time_steps: usize) -> Self {
        Self {
            norm,
            weights: loss_weights(time_steps),
        }
    }

    /// Loss of a sequence of estimates on plain images.
    pub fn evaluate(&self, estimates: &[ComplexImage], reference: &ComplexImage) -> Result<f64> {
        match self.norm {
            LossNorm::L1 => loss_l1(estimates, reference, &self.weights),
            LossNorm::L2 => loss_l2(estimates, reference, &self.weights),
        }
    }
}

fn weighted_loss(
    estimates: &[ComplexImage],
    reference: &ComplexImage,
    weights: &[f64],
    per_pixel: impl Fn(num_complex::Complex64) -> f64,
) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != weights.len() {
        return Err(RimError::shape(format!(
            "{} estimates for {} weights",
            estimates.len(),
            weights.len()
        )));
    }
    let (h, w) = reference.shape();
    let mut total = 0.0;
    for (x, wt) in estimates.iter().zip(weights) {
        x.ensure_shape(h, w)?;
        let r: f64 = x.data().iter().zip(reference.data()).map(|(a, b)| per_pixel(a - b)).sum();
        total += wt * r;
    }
    Ok(total / (reference.len() * estimates.len()) as f64)
}

/// `(1/(n t)) sum_tau w_tau ||x_tau - x||^2`.
pub fn loss_l2(estimates: &[ComplexImage], reference: &ComplexImage, weights: &[f64]) -> Result<f64> {
    weighted_loss(estimates, reference, weights, |d| d.norm_sqr())
}

/// `(1/(n t)) sum_tau w_tau sum_pixels |x_tau - x|`.
pub fn loss_l1(estimates: &[ComplexImage], reference: &ComplexImage, weights: &[f64]) -> Result<f64> {
    weighted_loss(estimates, reference, weights, |d| d.norm())
}

/// Records the loss on a tape; `estimates` are two-channel nodes.
pub fn loss_on_tape(tape: &mut Tape, estimates: &[crate::numcore::Var], reference: &ComplexImage, spec: &LossSpec) -> Result<crate::numcore::Var> {
    if estimates.is_empty() || estimates.len() != spec.weights.len() {
        return Err(RimError::shape(format!(
            "{} estimates for {} weights",
            estimates.len(),
            spec.weights.len()
        )));
    }
    let target = tape.input(Tensor::from_complex(reference));
    let norm = (reference.len() * estimates.len()) as f64;
    let mut terms = Vec::with_capacity(estimates.len());
    for (x, w) in estimates.iter().zip(&spec.weights) {
        let residual = tape.sub(x, &target)?;
        let term = match spec.norm {
            LossNorm::L2 => tape.sum_squares(residual),
            LossNorm::L1 => tape.sum_modulus(residual)?,
        };
        terms.push(tape.scale(term, w / norm));
    }
    tape.sum(&terms)
}

/// A fully sampled training example: reference image and coil maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub reference: ComplexImage,
    pub coils: CoilSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<Sample>,
}

/// Undersampled, optionally noisy acquisition of a sample. The noise standard
/// deviation is `noise_fraction` times the mean reference magnitude.
pub fn acquire(
    sample: &Sample,
    acceleration: f64,
    mask_seed: u64,
    noise_fraction: f64,
    noise_seed: u64,
) -> Result<(CoilSet, SamplingMask)> {
    let (h, w) = sample.reference.shape();
    let mask = gaussian_mask(h, w, acceleration, mask_seed)?;
    let noise = (noise_fraction > 0.0).then(|| NoiseSpec {
        sigma: noise_fraction * mean_magnitude(&sample.reference),
        seed: noise_seed,
    });
    let coils = mri::simulate(&sample.reference, &sample.coils, &mask, noise)?;
    Ok((coils, mask))
}

pub fn mean_magnitude(img: &ComplexImage) -> f64 {
    img.data().iter().map(|c| c.norm()).sum::<f64>() / img.len() as f64
}

/// Training loss and its gradient with respect to every parameter block.
pub fn loss_gradient(
    model: &RimModel,
    coils: &CoilSet,
    mask: &SamplingMask,
    reference: &ComplexImage,
    spec: &LossSpec,
    sigma: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let params: Vec<_> = model.params.iter().map(|p| tape.leaf(p.clone())).collect();
    let estimates = model.unroll_on(&mut tape, &params, coils, mask, sigma)?;
    let root = loss_on_tape(&mut tape, &estimates, reference, spec)?;
    let loss = tape.value(root).data()[0];
    let mut grads = tape.backward(root)?;
    Ok((loss, params.iter().map(|&p| grads.take(p)).collect()))
}

/// Training loss evaluated without recording a tape.
pub fn evaluate_loss(
    model: &RimModel,
    coils: &CoilSet,
    mask: &SamplingMask,
    reference: &ComplexImage,
    spec: &LossSpec,
    sigma: f64,
) -> Result<f64> {
    spec.evaluate(&model.forward(coils, mask, sigma)?, reference)
}

fn default_lr() -> f64 {
    1e-3
}
fn default_one() -> usize {
    1
}
fn default_epochs() -> usize {
    10
}
fn default_steps() -> usize {
    100
}
fn default_patch() -> usize {
    DEFAULT_PATCH
}
fn default_accels() -> Vec<f64> {
    vec![4.0]
}
fn default_sigma() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_patience() -> usize {
    5
}
fn default_decay() -> f64 {
    0.1
}

/// Training hyper-parameters. Every field has a declared default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_one")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_steps")]
    pub steps_per_epoch: usize,
    /// Square patch side, clamped to each image.
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default)]
    pub augment: AugmentToggles,
    /// Sampling weights per dataset; empty means equal proportions.
    #[serde(default)]
    pub dataset_weights: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Accelerations drawn uniformly per training sample.
    #[serde(default = "default_accels")]
    pub accelerations: Vec<f64>,
    /// k-space noise as a fraction of the mean reference magnitude.
    #[serde(default)]
    pub noise_fraction: f64,
    /// Fixed scaling of the log-likelihood gradient fed to the network.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Draw a new mask for every training sample; otherwise one mask per
    /// image shape is reused throughout.
    #[serde(default = "default_true")]
    pub resample_masks: bool,
    #[serde(default = "default_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_decay")]
    pub plateau_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_count: usize) -> Result<()> {
        let bad = |m: String| Err(RimError::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return bad("batch size and patch size must be positive".into());
        }
        if self.accelerations.is_empty() || self.accelerations.iter().any(|r| !(*r >= 1.0)) {
            return bad(format!("accelerations {:?} must be non-empty and >= 1", self.accelerations));
        }
        if !(self.sigma > 0.0) || !(self.noise_fraction >= 0.0) {
            return bad("sigma must be > 0 and noise fraction >= 0".into());
        }
        if !(self.plateau_decay > 0.0 && self.plateau_decay <= 1.0) {
            return bad(format!("plateau decay {} must lie in (0, 1]", self.plateau_decay));
        }
        if !self.dataset_weights.is_empty() && self.dataset_weights.len() != dataset_count {
            return bad(format!(
                "{} dataset weights for {dataset_count} datasets",
                self.dataset_weights.len()
            ));
        }
        Ok(())
    }

    fn weights(&self, dataset_count: usize) -> Vec<f64> {
        if self.dataset_weights.is_empty() {
            vec![1.0 / dataset_count as f64; dataset_count]
        } else {
            self.dataset_weights.clone()
        }
    }
}

/// Losses and validation scores after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ssim: f64,
    pub val_psnr: f64,
    pub learning_rate: f64,
}

pub const CURVE_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_ssim,val_psnr";

pub fn curve_to_csv(curve: &[EpochRecord]) -> String {
    let mut out = format!("{CURVE_CSV_HEADER}\n");
    for r in curve {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.val_ssim, r.val_psnr
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (training loss when no
    /// validation set is given).
    pub best: RimModel,
    pub last: RimModel,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
    /// Mean batch loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Rim(#[from] RimError),
    /// Non-finite loss or gradient. `checkpoint` holds the last finite
    /// parameters for diagnosis.
    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        checkpoint: Box<RimModel>,
    },
}

impl From<TrainError> for RimError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Rim(e) => e,
            d @ TrainError::Diverged { .. } => RimError::Numerical(d.to_string()),
        }
    }
}

/// Validation statistics: mean loss, SSIM and PSNR of the final estimate.
pub fn validate(
    model: &RimModel,
    validation: &[Sample],
    spec: &LossSpec,
    config: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    let per: Vec<(f64, f64, f64)> = validation
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let accel = config.accelerations[i % config.accelerations.len()];
            let (coils, mask) = acquire(
                s,
                accel,
                derive_seed(VALIDATION_SEED, STREAM_MASK, i as u64),
                config.noise_fraction,
                derive_seed(VALIDATION_SEED, STREAM_NOISE, i as u64),
            )?;
            let est = model.forward(&coils, &mask, config.sigma)?;
            let loss = spec.evaluate(&est, &s.reference)?;
            let (ssim, psnr) = metrics::compare(est.last().expect("t >= 1"), &s.reference)?;
            Ok((loss, ssim, psnr))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok(per.iter().fold((0.0, 0.0, 0.0), |acc, v| {
        (acc.0 + v.0 / n, acc.1 + v.1 / n, acc.2 + v.2 / n)
    }))
}

fn sample_gradient(
    model: &RimModel,
    sample: &Sample,
    spec: &LossSpec,
    config: &TrainConfig,
    step: u64,
    slot: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let index = step * config.batch_size as u64 + slot;
    let patch = augment(
        sample,
        config.patch_size,
        derive_seed(config.seed, STREAM_AUGMENT, index),
        config.augment,
    )?;
    let pick = derive_seed(config.seed, STREAM_ACCEL, index) % config.accelerations.len() as u64;
    let (coils, mask) = acquire(
        &patch,
        config.accelerations[pick as usize],
        derive_seed(config.seed, STREAM_MASK, if config.resample_masks { index } else { 0 }),
        config.noise_fraction,
        derive_seed(config.seed, STREAM_NOISE, index),
    )?;
    loss_gradient(model, &coils, &mask, &patch.reference, spec, config.sigma)
}

/// Trains `model` in place of a copy and returns the best and final
/// parameters with the loss history.
pub fn train(
    model: &RimModel,
    datasets: &[Dataset],
    validation: &[Sample],
    spec: &LossSpec,
    config: &TrainConfig,
) -> std::result::Result<TrainOutcome, TrainError> {
    config.validate(datasets.len())?;
    if spec.weights.len() != model.config.time_steps {
        return Err(RimError::Config(format!(
            "loss has {} weights but the model unrolls {} steps",
            spec.weights.len(),
            model.config.time_steps
        ))
        .into());
    }
    let mut sampler = weighted_sampler(
        datasets,
        &config.weights(datasets.len()),
        derive_seed(config.seed, STREAM_SAMPLER, 0),
    )?;
    let mut current = model.clone();
    let mut adam = Adam::new(
        &current.params,
        AdamHyper {
            learning_rate: config.learning_rate,
            ..AdamHyper::default()
        },
    );
    let mut best = (f64::INFINITY, current.clone(), 0usize);
    let mut stale = 0usize;
    let mut curve = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::with_capacity(config.epochs * config.steps_per_epoch);

    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..config.steps_per_epoch {
            let step = step_losses.len();
            let picks: Vec<(usize, usize)> = sampler.by_ref().take(config.batch_size).collect();
            let results: Vec<(f64, Vec<Tensor>)> = picks
                .par_iter()
                .enumerate()
                .map(|(slot, &(d, i))| {
                    sample_gradient(&current, &datasets[d].samples[i], spec, config, step as u64, slot as u64)
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / results.len() as f64;
            let mut loss = 0.0;
            let mut grads: Vec<Tensor> = current.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            for (l, g) in &results {
                loss += scale * l;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.axpy(scale, gi);
                }
            }
            if !loss.is_finite() || !grads.iter().all(Tensor::is_finite) {
                return Err(TrainError::Diverged {
                    step,
                    reason: format!("loss {loss}"),
                    checkpoint: Box::new(current),
                });
            }
            adam.step(&mut current.params, &grads)?;
            step_losses.push(loss);
            epoch_loss += loss;
        }
        let train_loss = epoch_loss / config.steps_per_epoch.max(1) as f64;
        let (val_loss, val_ssim, val_psnr) = if validation.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            validate(&current, validation, spec, config)?
        };
        let score = if validation.is_empty() { train_loss } else { val_loss };
        if score < best.0 {
            best = (score, current.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau_patience {
                adam.hyper.learning_rate *= config.plateau_decay;
                stale = 0;
            }
        }
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_ssim,
            val_psnr,
            learning_rate: adam.hyper.learning_rate,
        });
    }
    if curve.is_empty() {
        best.1 = current.clone();
    }
    Ok(TrainOutcome {
        best: best.1,
        last: current,
        best_epoch: best.2,
        curve,
        step_losses,
    })
}

#[cfg(test)]
mod tests;
