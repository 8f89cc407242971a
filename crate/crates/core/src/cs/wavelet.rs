//! Periodized orthonormal Daubechies-4 (eight-tap) wavelet transform,
//! multilevel and separable in two dimensions. Inputs that are not a multiple
//! of `2^levels` are zero-padded, so the forward map is an isometry and the
//! inverse crops back.

use num_complex::Complex64;

use crate::error::{Result, RimError};
use crate::numcore::ComplexImage;

/// Scaling (low-pass reconstruction) filter.
pub const DB4: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

fn highpass() -> [f64; 8] {
    std::array::from_fn(|n| if n % 2 == 0 { 1.0 } else { -1.0 } * DB4[7 - n])
}

/// One analysis level on a strided line of even length `n`.
fn analyze(line: &mut [Complex64], scratch: &mut Vec<Complex64>) {
    let n = line.len();
    let g = highpass();
    scratch.clear();
    scratch.resize(n, Complex64::new(0.0, 0.0));
    for k in 0..n / 2 {
        let (mut a, mut d) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for (j, (&h, &gj)) in DB4.iter().zip(&g).enumerate() {
            let v = line[(2 * k + j) % n];
            a += v * h;
            d += v * gj;
        }
        scratch[k] = a;
        scratch[n / 2 + k] = d;
    }
    line.copy_from_slice(scratch);
}

/// Transpose of [`analyze`].
fn synthesize(line: &mut [Complex64], scratch: &mut Vec<Complex64>) {
    let n = line.len();
    let g = highpass();
    scratch.clear();
    scratch.resize(n, Complex64::new(0.0, 0.0));
    for k in 0..n / 2 {
        let (a, d) = (line[k], line[n / 2 + k]);
        for (j, (&h, &gj)) in DB4.iter().zip(&g).enumerate() {
            scratch[(2 * k + j) % n] += a * h + d * gj;
        }
    }
    line.copy_from_slice(scratch);
}

/// Multilevel 2-D transform for a fixed image shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wavelet2d {
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    padded: (usize, usize),
}

impl Wavelet2d {
    pub fn new(height: usize, width: usize, levels: usize) -> Result<Self> {
        if height == 0 || width == 0 || levels == 0 || levels > 16 {
            return Err(RimError::Config(format!(
                "wavelet transform of {height}x{width} with {levels} levels"
            )));
        }
        let block = 1usize << levels;
        let pad = |n: usize| n.div_ceil(block) * block;
        Ok(Self {
            height,
            width,
            levels,
            padded: (pad(height), pad(width)),
        })
    }

    /// Shape of the coefficient array.
    pub fn coefficient_shape(&self) -> (usize, usize) {
        self.padded
    }

    fn sweep(&self, data: &mut [Complex64], inverse: bool) {
        let (ph, pw) = self.padded;
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        let pass = |line: &mut [Complex64], scratch: &mut Vec<Complex64>| {
            if inverse {
                synthesize(line, scratch)
            } else {
                analyze(line, scratch)
            }
        };
        let levels: Vec<usize> = if inverse {
            (0..self.levels).rev().collect()
        } else {
            (0..self.levels).collect()
        };
        for level in levels {
            let (h, w) = (ph >> level, pw >> level);
            // rows then columns forward; the transpose runs columns first
            for stage in 0..2 {
                if (stage == 0) != inverse {
                    for y in 0..h {
                        pass(&mut data[y * pw..y * pw + w], &mut scratch);
                    }
                } else {
                    for x in 0..w {
                        line.clear();
                        line.extend((0..h).map(|y| data[y * pw + x]));
                        pass(&mut line, &mut scratch);
                        for (y, v) in line.iter().enumerate() {
                            data[y * pw + x] = *v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, img: &ComplexImage) -> Result<ComplexImage> {
        img.ensure_shape(self.height, self.width)?;
        let (ph, pw) = self.padded;
        let mut c = ComplexImage::from_fn(ph, pw, |y, x| {
            if y < self.height && x < self.width {
                img.get(y, x)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        self.sweep(c.data_mut(), false);
        Ok(c)
    }

    pub fn inverse(&self, coeffs: &ComplexImage) -> Result<ComplexImage> {
        let (ph, pw) = self.padded;
        coeffs.ensure_shape(ph, pw)?;
        let mut c = coeffs.clone();
        self.sweep(c.data_mut(), true);
        c.crop(0, 0, self.height, self.width)
    }
}

/// Forward transform of a whole image.
pub fn dwt2(img: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    Wavelet2d::new(img.height(), img.width(), levels)?.forward(img)
}

/// Inverse of [`dwt2`] for an image of the given shape.
pub fn idwt2(coeffs: &ComplexImage, height: usize, width: usize, levels: usize) -> Result<ComplexImage> {
    Wavelet2d::new(height, width, levels)?.inverse(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> ComplexImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexImage::from_fn(h, w, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn filter_is_orthonormal_with_four_vanishing_moments() {
        let norm: f64 = DB4.iter().map(|h| h * h).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((DB4.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-12);
        let g = highpass();
        for p in 0..4 {
            let m: f64 = g.iter().enumerate().map(|(n, v)| v * (n as f64).powi(p)).sum();
            assert!(m.abs() < 1e-9, "moment {p}: {m}");
        }
    }

    #[test]
    fn perfect_reconstruction_and_energy() {
        for (h, w) in [(32, 32), (64, 48), (30, 21)] {
            let x = random(h, w, (h * w) as u64);
            let c = dwt2(&x, 3).unwrap();
            assert!((c.norm() - x.norm()).abs() < 1e-10 * x.norm());
            let back = idwt2(&c, h, w, 3).unwrap();
            assert!(back.sub(&x).unwrap().norm() < 1e-10 * x.norm());
        }
    }

    #[test]
    fn constant_image_has_no_detail() {
        let x = ComplexImage::from_fn(32, 32, |_, _| Complex64::new(0.7, -0.2));
        let c = dwt2(&x, 3).unwrap();
        for y in 0..32 {
            for xx in 0..32 {
                if y >= 4 || xx >= 4 {
                    assert!(c.get(y, xx).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn inverse_is_the_adjoint() {
        let t = Wavelet2d::new(24, 20, 2).unwrap();
        let x = random(24, 20, 1);
        let (ph, pw) = t.coefficient_shape();
        let c = random(ph, pw, 2);
        let lhs = t.forward(&x).unwrap().dot(&c).unwrap();
        let rhs = x.dot(&t.inverse(&c).unwrap()).unwrap();
        assert!((lhs - rhs).norm() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_any_size(h in 1usize..40, w in 1usize..40, levels in 1usize..4, seed in 0u64..1000) {
            let x = random(h, w, seed);
            let back = idwt2(&dwt2(&x, levels).unwrap(), h, w, levels).unwrap();
            prop_assert!(back.sub(&x).unwrap().norm() <= 1e-10 * x.norm().max(1.0));
        }
    }
}
