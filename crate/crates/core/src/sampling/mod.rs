//! Variable-density Gaussian undersampling with a fully sampled calibration
//! ellipse around the k-space center.

mod io;

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RimError};

pub use io::{decode_mask, encode_mask, read_mask, write_mask};

pub const DEFAULT_FWHM_FRACTION: f64 = 0.7;
pub const DEFAULT_ELLIPSE_FRACTION: f64 = 0.02;

/// Binary k-space inclusion pattern `P` with its generation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    pattern: Vec<bool>,
    pub acceleration: f64,
    pub seed: u64,
    pub fwhm_fraction: f64,
    pub ellipse_fraction: f64,
}

impl SamplingMask {
    /// Every k-space location sampled.
    pub fn full(height: usize, width: usize) -> Self {
        Self::from_pattern(height, width, vec![true; height * width], 1.0, 0)
            .expect("pattern length matches")
    }

    pub fn from_pattern(
        height: usize,
        width: usize,
        pattern: Vec<bool>,
        acceleration: f64,
        seed: u64,
    ) -> Result<Self> {
        if pattern.len() != height * width {
            return Err(RimError::shape(format!(
                "mask pattern of {} entries for a {height}x{width} grid",
                pattern.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pattern,
            acceleration,
            seed,
            fwhm_fraction: DEFAULT_FWHM_FRACTION,
            ellipse_fraction: DEFAULT_ELLIPSE_FRACTION,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pattern(&self) -> &[bool] {
        &self.pattern
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.pattern[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.pattern.iter().filter(|&&b| b).count()
    }

    /// Rejects a mask generated for a different grid.
    pub fn ensure_shape(&self, height: usize, width: usize) -> Result<()> {
        if self.shape() != (height, width) {
            return Err(RimError::shape(format!(
                "mask is {}x{} but data is {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Number of samples kept at acceleration `r`.
pub fn sample_budget(height: usize, width: usize, acceleration: f64) -> usize {
    ((height * width) as f64 / acceleration).round() as usize
}

/// Grid points of the calibration ellipse. Half-axes are `fraction` of each
/// half-axis of the grid, floored at one sample; a point belongs to the
/// ellipse when its pixel footprint (half a pixel around its center) reaches
/// inside, so a unit half-axis covers the central 3x3 block.
pub fn calibration_region(height: usize, width: usize, fraction: f64) -> Vec<(usize, usize)> {
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let ay = (fraction * height as f64 / 2.0).max(1.0) + 0.5;
    let ax = (fraction * width as f64 / 2.0).max(1.0) + 0.5;
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let dy = (y as f64 - cy) / ay;
            let dx = (x as f64 - cx) / ax;
            if dy * dy + dx * dx <= 1.0 {
                out.push((y, x));
            }
        }
    }
    out
}

/// FWHM of a Gaussian expressed as a multiple of its standard deviation.
pub fn fwhm_to_sigma_factor() -> f64 {
    2.0 * (2.0 * LN_2).sqrt()
}

/// Variable-density random mask with default density and calibration settings.
pub fn gaussian_mask(height: usize, width: usize, acceleration: f64, seed: u64) -> Result<SamplingMask> {
    gaussian_mask_with(
        height,
        width,
        acceleration,
        seed,
        DEFAULT_FWHM_FRACTION,
        DEFAULT_ELLIPSE_FRACTION,
    )
}

/// Variable-density random mask.
///
/// The calibration ellipse is always included; the rest of the budget is
/// drawn from a centered Gaussian with per-axis FWHM of `fwhm_fraction` times
/// the axis length, rounding each draw to the nearest grid point and
/// redrawing on collisions or draws that land outside the grid.
pub fn gaussian_mask_with(
    height: usize,
    width: usize,
    acceleration: f64,
    seed: u64,
    fwhm_fraction: f64,
    ellipse_fraction: f64,
) -> Result<SamplingMask> {
    if height == 0 || width == 0 {
        return Err(RimError::shape("mask grid must be non-empty"));
    }
    if !(acceleration > 1.0) || !acceleration.is_finite() {
        return Err(RimError::Config(format!(
            "acceleration must be a finite value above 1, got {acceleration}"
        )));
    }
    if !(fwhm_fraction > 0.0) || !(ellipse_fraction >= 0.0) {
        return Err(RimError::Config("mask density parameters must be positive".into()));
    }
    let budget = sample_budget(height, width, acceleration);
    let ellipse = calibration_region(height, width, ellipse_fraction);
    if ellipse.len() > budget {
        return Err(RimError::InfeasibleMask {
            ellipse: ellipse.len(),
            budget,
        });
    }

    let mut pattern = vec![false; height * width];
    for &(y, x) in &ellipse {
        pattern[y * width + x] = true;
    }
    let mut taken = ellipse.len();

    let factor = fwhm_to_sigma_factor();
    let (sy, sx) = (fwhm_fraction * height as f64 / factor, fwhm_fraction * width as f64 / factor);
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Rejection stalls once the far tails are all that is left; past this
    // many draws the remainder is finished by exact weighted sampling.
    let draw_cap = 64 * budget + 10_000;
    let mut draws = 0usize;
    while taken < budget && draws < draw_cap {
        draws += 1;
        let zy: f64 = rng.sample(StandardNormal);
        let zx: f64 = rng.sample(StandardNormal);
        let y = (cy + sy * zy).round();
        let x = (cx + sx * zx).round();
        if y < 0.0 || x < 0.0 || y >= height as f64 || x >= width as f64 {
            continue;
        }
        let idx = y as usize * width + x as usize;
        if !pattern[idx] {
            pattern[idx] = true;
            taken += 1;
        }
    }
    if taken < budget {
        // Efraimidis-Spirakis keys: sequential weighted draws without replacement.
        let mut keyed: Vec<(f64, usize)> = (0..height * width)
            .filter(|&i| !pattern[i])
            .map(|i| {
                let dy = ((i / width) as f64 - cy) / sy;
                let dx = ((i % width) as f64 - cx) / sx;
                let log_w = -0.5 * (dy * dy + dx * dx);
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                (u.ln() / log_w.exp().max(f64::MIN_POSITIVE), i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in keyed.iter().take(budget - taken) {
            pattern[i] = true;
        }
    }

    Ok(SamplingMask {
        height,
        width,
        pattern,
        acceleration,
        seed,
        fwhm_fraction,
        ellipse_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_budget_and_calibration_block() {
        for seed in 0..5 {
            let m = gaussian_mask(64, 64, 4.0, seed).unwrap();
            assert_eq!(m.count(), 1024);
            for y in 31..=33 {
                for x in 31..=33 {
                    assert!(m.get(y, x), "({y},{x}) seed {seed}");
                }
            }
        }
    }

    #[test]
    fn degenerate_full_sampling() {
        let m = gaussian_mask(16, 12, 1.0001, 3).unwrap();
        assert_eq!(m.count(), 16 * 12);
        assert!(m.pattern().iter().all(|&b| b));
    }

    #[test]
    fn infeasible_budget() {
        let err = gaussian_mask(8, 8, 32.0, 0).unwrap_err();
        assert!(matches!(err, RimError::InfeasibleMask { ellipse: 9, budget: 2 }));
    }

    #[test]
    fn acceleration_at_or_below_one_rejected() {
        assert!(matches!(gaussian_mask(8, 8, 1.0, 0), Err(RimError::Config(_))));
        assert!(gaussian_mask(8, 8, f64::NAN, 0).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = gaussian_mask(40, 48, 6.0, 17).unwrap();
        let b = gaussian_mask(40, 48, 6.0, 17).unwrap();
        let c = gaussian_mask(40, 48, 6.0, 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pattern(), c.pattern());
    }

    #[test]
    fn larger_grids_widen_the_ellipse() {
        let region = calibration_region(256, 256, 0.02);
        // half-axis 2.56 samples plus the half-pixel footprint
        assert!(region.contains(&(128, 131)));
        assert!(!region.contains(&(128, 132)));
        assert!(region.contains(&(131, 128)));
    }

    #[test]
    fn fwhm_factor() {
        assert!((fwhm_to_sigma_factor() - 2.354820045).abs() < 1e-9);
    }
}
