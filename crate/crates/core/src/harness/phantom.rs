//! Synthetic complex phantoms: the modified Shepp-Logan head, random smooth
//! ellipse sets, and the ellipse sets with band-limited texture. All carry a
//! smooth phase map and have maximum magnitude 1.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RimError};
use crate::numcore::{fft2_centered, ifft2_centered, ComplexImage};

/// Smallest supported phantom side.
pub const MIN_PHANTOM_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    SheppLogan,
    Ellipses,
    Textured,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 3] = [PhantomKind::SheppLogan, PhantomKind::Ellipses, PhantomKind::Textured];

    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::SheppLogan => "shepp-logan",
            PhantomKind::Ellipses => "ellipses",
            PhantomKind::Textured => "textured",
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhantomKind {
    type Err = RimError;

    fn from_str(s: &str) -> Result<Self> {
        PhantomKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| RimError::Config(format!("unknown phantom kind '{s}'")))
    }
}

/// Ellipse in normalized coordinates `[-1, 1]^2`, `theta` in radians.
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    value: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    theta: f64,
}

/// Modified Shepp-Logan parameters (Toft's contrast-enhanced variant).
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn shepp_logan() -> Vec<Ellipse> {
    SHEPP_LOGAN
        .iter()
        .map(|&(value, a, b, x0, y0, deg)| Ellipse {
            value,
            a,
            b,
            x0,
            y0,
            theta: deg.to_radians(),
        })
        .collect()
}

fn random_ellipses(rng: &mut ChaCha8Rng) -> Vec<Ellipse> {
    let mut set = vec![Ellipse {
        value: rng.random_range(0.6..0.9),
        a: rng.random_range(0.65..0.85),
        b: rng.random_range(0.75..0.92),
        x0: rng.random_range(-0.04..0.04),
        y0: rng.random_range(-0.04..0.04),
        theta: rng.random_range(-0.2..0.2),
    }];
    for _ in 0..rng.random_range(5..10) {
        let r: f64 = rng.random_range(0.0..0.45);
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        set.push(Ellipse {
            value: rng.random_range(-0.35..0.4),
            a: rng.random_range(0.05..0.3),
            b: rng.random_range(0.05..0.3),
            x0: r * phi.cos(),
            y0: r * phi.sin(),
            theta: rng.random_range(0.0..PI),
        });
    }
    set
}

/// Sum of ellipse indicators with a linear edge ramp `edge` wide in
/// normalized radius (zero gives hard edges).
fn rasterize(set: &[Ellipse], size: usize, edge: f64) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let half = size as f64 / 2.0;
    for (i, v) in out.iter_mut().enumerate() {
        let (py, px) = (i / size, i % size);
        let u = (px as f64 + 0.5 - half) / half;
        let w = -(py as f64 + 0.5 - half) / half;
        for e in set {
            let (s, c) = e.theta.sin_cos();
            let (dx, dy) = (u - e.x0, w - e.y0);
            let xr = (c * dx + s * dy) / e.a;
            let yr = (-s * dx + c * dy) / e.b;
            let r = (xr * xr + yr * yr).sqrt();
            let weight = if edge > 0.0 {
                ((1.0 - r) / edge + 0.5).clamp(0.0, 1.0)
            } else if r <= 1.0 {
                1.0
            } else {
                0.0
            };
            *v += e.value * weight;
        }
    }
    out
}

/// Zero-mean, unit-variance texture with spectrum confined to the annulus
/// `lo < |k| / (N/2) < hi`.
fn band_limited_texture(size: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let noise = ComplexImage::from_fn(size, size, |_, _| Complex64::new(rng.sample(StandardNormal), 0.0));
    let mut k = fft2_centered(&noise)?;
    let half = size as f64 / 2.0;
    for y in 0..size {
        for x in 0..size {
            let r = ((y as f64 - half).powi(2) + (x as f64 - half).powi(2)).sqrt() / half;
            if r <= lo || r >= hi {
                k.set(y, x, Complex64::new(0.0, 0.0));
            }
        }
    }
    let tex: Vec<f64> = ifft2_centered(&k)?.data().iter().map(|c| c.re).collect();
    let mean = tex.iter().sum::<f64>() / tex.len() as f64;
    let sd = (tex.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tex.len() as f64).sqrt();
    Ok(tex.into_iter().map(|v| (v - mean) / sd.max(f64::MIN_POSITIVE)).collect())
}

/// Smooth phase: a random low-order polynomial in normalized coordinates.
fn phase_map(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let c: [f64; 5] = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
    let half = size as f64 / 2.0;
    (0..size * size)
        .map(|i| {
            let u = ((i % size) as f64 + 0.5 - half) / half;
            let v = ((i / size) as f64 + 0.5 - half) / half;
            c[0] + c[1] * u + c[2] * v + c[3] * u * v + c[4] * (u * u + v * v)
        })
        .collect()
}

/// `size x size` phantom of the given kind, deterministic under `seed`.
pub fn gen_phantom(kind: PhantomKind, size: usize, seed: u64) -> Result<ComplexImage> {
    if size < MIN_PHANTOM_SIZE {
        return Err(RimError::Config(format!(
            "phantom size {size} is below the minimum {MIN_PHANTOM_SIZE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edge = 1.5 / size as f64;
    let magnitude: Vec<f64> = match kind {
        PhantomKind::SheppLogan => rasterize(&shepp_logan(), size, 0.0),
        PhantomKind::Ellipses | PhantomKind::Textured => {
            let set = random_ellipses(&mut rng);
            let base = rasterize(&set, size, edge);
            if kind == PhantomKind::Textured {
                let support = rasterize(&set[..1], size, edge);
                let tex = band_limited_texture(size, 0.15, 0.6, &mut rng)?;
                base.iter()
                    .zip(&support)
                    .zip(&tex)
                    .map(|((b, s), t)| b + 0.12 * s / set[0].value * t)
                    .collect()
            } else {
                base
            }
        }
    };
    let phase = phase_map(size, &mut rng);
    let peak = magnitude.iter().fold(0.0f64, |m, v| m.max(v.max(0.0)));
    if !(peak > 0.0) {
        return Err(RimError::Numerical("phantom has no positive magnitude".into()));
    }
    let data = magnitude
        .iter()
        .zip(&phase)
        .map(|(m, p)| Complex64::from_polar(m.max(0.0) / peak, *p))
        .collect();
    ComplexImage::from_vec(size, size, data)
}

/// Fraction of k-space energy beyond `radius` (relative to half the side).
pub fn high_frequency_fraction(img: &ComplexImage, radius: f64) -> Result<f64> {
    let k = fft2_centered(img)?;
    let (h, w) = k.shape();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut high = 0.0;
    for y in 0..h {
        for x in 0..w {
            let r = (((y as f64 - cy) / cy).powi(2) + ((x as f64 - cx) / cx).powi(2)).sqrt();
            if r > radius {
                high += k.get(y, x).norm_sqr();
            }
        }
    }
    Ok(high / k.norm_sqr())
}
