use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mri::CoilSet;
use crate::numcore::ComplexImage;

use super::Sample;

/// Which random augmentations are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentToggles {
    pub crop: bool,
    pub rotate: bool,
    pub flip: bool,
}

impl Default for AugmentToggles {
    fn default() -> Self {
        Self {
            crop: true,
            rotate: true,
            flip: true,
        }
    }
}

impl AugmentToggles {
    pub const NONE: Self = Self {
        crop: false,
        rotate: false,
        flip: false,
    };
}

/// Crop window followed by optional row/column reversal and `rotations`
/// quarter turns counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub flip_rows: bool,
    pub flip_cols: bool,
    pub rotations: u8,
}

impl Transform {
    /// Draws a transform for an `h x w` image. The patch is clamped to the
    /// image; without the crop toggle the window is centered.
    pub fn draw(h: usize, w: usize, patch: usize, seed: u64, toggles: AugmentToggles) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ph, pw) = (patch.min(h), patch.min(w));
        let (top, left) = if toggles.crop {
            (rng.random_range(0..=h - ph), rng.random_range(0..=w - pw))
        } else {
            ((h - ph) / 2, (w - pw) / 2)
        };
        let (flip_rows, flip_cols) = if toggles.flip {
            (rng.random_bool(0.5), rng.random_bool(0.5))
        } else {
            (false, false)
        };
        let rotations = if toggles.rotate { rng.random_range(0..4u8) } else { 0 };
        Self {
            top,
            left,
            height: ph,
            width: pw,
            flip_rows,
            flip_cols,
            rotations,
        }
    }

    pub fn apply(&self, img: &ComplexImage) -> Result<ComplexImage> {
        let mut out = img.crop(self.top, self.left, self.height, self.width)?;
        let (h, w) = out.shape();
        if self.flip_rows {
            out = ComplexImage::from_fn(h, w, |y, x| out.get(h - 1 - y, x));
        }
        if self.flip_cols {
            out = ComplexImage::from_fn(h, w, |y, x| out.get(y, w - 1 - x));
        }
        for _ in 0..self.rotations % 4 {
            let (h, w) = out.shape();
            out = ComplexImage::from_fn(w, h, |y, x| out.get(x, w - 1 - y));
        }
        Ok(out)
    }
}

/// Applies one random transform identically to the reference and every coil
/// map. Measurements are dropped; they must be re-synthesized afterwards.
pub fn augment(sample: &Sample, patch: usize, seed: u64, toggles: AugmentToggles) -> Result<Sample> {
    let (h, w) = sample.reference.shape();
    let t = Transform::draw(h, w, patch, seed, toggles);
    let maps = sample
        .coils
        .sensitivities
        .iter()
        .map(|s| t.apply(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        reference: t.apply(&sample.reference)?,
        coils: CoilSet::new(maps)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn ramp(h: usize, w: usize) -> ComplexImage {
        ComplexImage::from_fn(h, w, |y, x| Complex64::new((y * w + x) as f64, -(x as f64)))
    }

    fn sample(h: usize, w: usize) -> Sample {
        Sample {
            reference: ramp(h, w),
            coils: CoilSet::new(vec![ramp(h, w).scale(0.5), ramp(h, w).map(|c| c.conj())]).unwrap(),
        }
    }

    #[test]
    fn toggles_off_is_a_central_crop() {
        let s = sample(12, 10);
        let out = augment(&s, 6, 99, AugmentToggles::NONE).unwrap();
        assert_eq!(out.reference, s.reference.crop(3, 2, 6, 6).unwrap());
        let full = augment(&s, 64, 99, AugmentToggles::NONE).unwrap();
        assert_eq!(full.reference, s.reference);
    }

    #[test]
    fn double_flip_and_full_turn_are_identity() {
        let img = ramp(5, 7);
        let flip = |rows, cols, rotations| Transform {
            top: 0,
            left: 0,
            height: 5,
            width: 7,
            flip_rows: rows,
            flip_cols: cols,
            rotations,
        };
        for (r, c) in [(true, false), (false, true)] {
            let once = flip(r, c, 0).apply(&img).unwrap();
            assert_eq!(flip(r, c, 0).apply(&once).unwrap(), img);
        }
        let square = ramp(6, 6);
        let quarter = Transform {
            height: 6,
            width: 6,
            ..flip(false, false, 1)
        };
        let mut turned = square.clone();
        for k in 0..4 {
            assert_eq!(turned == square, k == 0);
            turned = quarter.apply(&turned).unwrap();
        }
        assert_eq!(turned, square);
        let tall = flip(false, false, 1).apply(&img).unwrap();
        assert_eq!(tall.shape(), (7, 5));
        assert_eq!(tall.get(0, 0), img.get(0, 6));
    }

    #[test]
    fn same_transform_for_reference_and_coils() {
        let s = sample(9, 9);
        for seed in 0..20 {
            let out = augment(&s, 5, seed, AugmentToggles::default()).unwrap();
            let t = Transform::draw(9, 9, 5, seed, AugmentToggles::default());
            assert_eq!(out.reference, t.apply(&s.reference).unwrap());
            assert_eq!(out.coils.sensitivities[1], t.apply(&s.coils.sensitivities[1]).unwrap());
            assert_eq!(out, augment(&s, 5, seed, AugmentToggles::default()).unwrap());
        }
    }

    fn dihedral_signature(t: &Transform) -> Vec<u64> {
        let probe = ComplexImage::from_fn(2, 2, |y, x| Complex64::new((2 * y + x) as f64, 0.0));
        let t = Transform {
            top: 0,
            left: 0,
            height: 2,
            width: 2,
            ..*t
        };
        t.apply(&probe).unwrap().data().iter().map(|c| c.re as u64).collect()
    }

    #[test]
    fn dihedral_elements_are_uniform() {
        let n = 10_000usize;
        let mut counts = std::collections::BTreeMap::new();
        for seed in 0..n as u64 {
            let t = Transform::draw(8, 8, 8, seed, AugmentToggles::default());
            *counts.entry(dihedral_signature(&t)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        let p = 1.0 / 8.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for (_, c) in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd, "{c}");
        }
    }
}
