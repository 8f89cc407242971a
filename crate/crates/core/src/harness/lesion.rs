//! Lesion simulation: a band-limited Gaussian bump is added to a base image,
//! the result is acquired at several accelerations with noise, reconstructed
//! by each method, and the lesion contrast measured at its center is
//! compared with the contrast in the noiseless fully sampled image.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cs::{cs_reconstruct, CsConfig};
use crate::error::{Result, RimError};
use crate::harness::volume::{write_volume, Volume};
use crate::mri::{simulate, synth_sensitivities, zero_filled, NoiseSpec};
use crate::numcore::{derive_seed, ComplexImage};
use crate::rim::RimModel;
use crate::sampling::{gaussian_mask, SamplingMask};
use crate::training::mean_magnitude;

fn default_sigma() -> f64 {
    1.0
}
fn default_factors() -> Vec<f64> {
    vec![0.0, 1.0, 1.25, 1.5, 1.75, 2.0]
}
fn default_noise() -> f64 {
    0.05
}
fn default_accels() -> Vec<f64> {
    vec![4.0, 6.0, 8.0]
}
fn default_seeds() -> usize {
    10
}
fn default_coils() -> usize {
    4
}
fn default_inner() -> f64 {
    3.0
}
fn default_outer() -> f64 {
    6.0
}
fn default_rim_sigma() -> f64 {
    1.0
}

/// Lesion experiment parameters. An acceleration of 1 means full sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionSpec {
    /// `(row, column)` of the lesion center.
    pub center: (usize, usize),
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Lesion amplitude relative to the surrounding mean magnitude.
    #[serde(default = "default_factors")]
    pub factors: Vec<f64>,
    /// Noise standard deviation relative to the mean image magnitude.
    #[serde(default = "default_noise")]
    pub noise_fraction: f64,
    #[serde(default = "default_accels")]
    pub accelerations: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub mask_seeds: usize,
    #[serde(default = "default_coils")]
    pub coils: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_inner")]
    pub inner_radius: f64,
    #[serde(default = "default_outer")]
    pub outer_radius: f64,
    /// Log-likelihood scaling passed to the RIM.
    #[serde(default = "default_rim_sigma")]
    pub rim_sigma: f64,
    #[serde(default)]
    pub cs: Option<CsConfig>,
}

impl LesionSpec {
    pub fn at(center: (usize, usize)) -> Self {
        toml::from_str(&format!("center = [{}, {}]", center.0, center.1)).expect("defaults")
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let bad = |m: String| Err(RimError::Config(m));
        if self.center.0 >= h || self.center.1 >= w {
            return bad(format!("lesion center {:?} outside the {h}x{w} image", self.center));
        }
        if !(self.sigma > 0.0) || self.factors.iter().any(|f| !(*f >= 0.0)) {
            return bad("lesion sigma must be > 0 and factors >= 0".into());
        }
        if !(self.noise_fraction >= 0.0) || self.mask_seeds == 0 || self.coils == 0 {
            return bad("noise >= 0, at least one mask seed and one coil required".into());
        }
        if !(self.inner_radius >= 0.0 && self.outer_radius > self.inner_radius) {
            return bad("annulus radii must satisfy 0 <= inner < outer".into());
        }
        if self.accelerations.iter().any(|a| !(*a >= 1.0)) {
            return bad(format!("accelerations {:?} must be >= 1", self.accelerations));
        }
        Ok(())
    }
}

fn annulus(h: usize, w: usize, center: (usize, usize), inner: f64, outer: f64) -> impl Iterator<Item = (usize, usize)> {
    (0..h).flat_map(move |y| (0..w).map(move |x| (y, x))).filter(move |&(y, x)| {
        let r = ((y as f64 - center.0 as f64).powi(2) + (x as f64 - center.1 as f64).powi(2)).sqrt();
        r >= inner && r <= outer
    })
}

/// Mean magnitude over `inner <= r <= outer` around `center`.
pub fn annulus_mean(img: &ComplexImage, center: (usize, usize), inner: f64, outer: f64) -> f64 {
    let (h, w) = img.shape();
    let (sum, n) = annulus(h, w, center, inner, outer).fold((0.0, 0usize), |(s, n), (y, x)| (s + img.get(y, x).norm(), n + 1));
    sum / n.max(1) as f64
}

/// Center magnitude minus the surrounding annulus mean.
pub fn measured_intensity(img: &ComplexImage, center: (usize, usize), inner: f64, outer: f64) -> f64 {
    img.get(center.0, center.1).norm() - annulus_mean(img, center, inner, outer)
}

/// Samples of a Gaussian of width `sigma` centered at `c`, band-limited to the
/// grid: the sum of its continuous spectrum over the `n` grid frequencies.
fn bump_1d(n: usize, c: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|y| {
            (0..n)
                .map(|k| {
                    let f = (k as f64 - (n / 2) as f64) / n as f64;
                    (-2.0 * PI * PI * sigma * sigma * f * f).exp() * (2.0 * PI * f * (y as f64 - c as f64)).cos()
                })
                .sum::<f64>()
        })
        .collect()
}

/// Band-limited Gaussian bump with value exactly 1 at `center`.
pub fn lesion_bump(h: usize, w: usize, center: (usize, usize), sigma: f64) -> ComplexImage {
    let by = bump_1d(h, center.0, sigma);
    let bx = bump_1d(w, center.1, sigma);
    let peak = by[center.0] * bx[center.1];
    ComplexImage::from_fn(h, w, |y, x| Complex64::new(by[y] * bx[x] / peak, 0.0))
}

/// Adds `amplitude * bump`, aligned with the local phase of `base`.
pub fn insert_lesion(base: &ComplexImage, center: (usize, usize), sigma: f64, amplitude: f64) -> ComplexImage {
    let (h, w) = base.shape();
    let bump = lesion_bump(h, w, center, sigma);
    base.zip_map(&bump, |b, g| {
        let phase = if b.norm() > 0.0 { b / b.norm() } else { Complex64::new(1.0, 0.0) };
        b + phase * (g.re * amplitude)
    })
    .expect("same shape")
}

/// Pixel whose surrounding disc of radius `outer` is most uniform among those
/// with a bright neighborhood (mean at least half the image maximum).
pub fn suggest_center(img: &ComplexImage, outer: f64) -> Option<(usize, usize)> {
    let (h, w) = img.shape();
    let peak = img.max_magnitude();
    let margin = outer.ceil() as usize;
    let mut best: Option<((usize, usize), f64)> = None;
    for y in margin..h.saturating_sub(margin) {
        for x in margin..w.saturating_sub(margin) {
            let vals: Vec<f64> = annulus(h, w, (y, x), 0.0, outer).map(|(a, b)| img.get(a, b).norm()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            if mean < 0.5 * peak {
                continue;
            }
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt() / mean;
            if best.is_none_or(|(_, s)| sd < s) {
                best = Some(((y, x), sd));
            }
        }
    }
    best.map(|(c, _)| c)
}

/// A reconstruction method under study.
pub enum Method<'a> {
    ZeroFilled,
    Cs(CsConfig),
    Rim { name: String, model: &'a RimModel },
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::ZeroFilled => "zero-filled".into(),
            Method::Cs(_) => "cs".into(),
            Method::Rim { name, .. } => name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionRow {
    pub method: String,
    pub acceleration: f64,
    pub factor: f64,
    /// Amplitude of the inserted bump.
    pub simulated: f64,
    /// Contrast of the noiseless, fully sampled lesion image.
    pub reference: f64,
    pub measured_mean: f64,
    pub measured_std: f64,
    pub bias_mean: f64,
    pub bias_std: f64,
    pub count: usize,
}

pub const LESION_CSV_HEADER: &str =
    "method,acceleration,factor,simulated,reference,measured_mean,measured_std,bias_mean,bias_std,count";

pub fn lesion_to_csv(rows: &[LesionRow]) -> String {
    let mut out = format!("{LESION_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.acceleration,
            r.factor,
            r.simulated,
            r.reference,
            r.measured_mean,
            r.measured_std,
            r.bias_mean,
            r.bias_std,
            r.count
        );
    }
    out
}

/// Reconstruction of the largest lesion with the first mask seed.
#[derive(Debug, Clone)]
pub struct LesionPanel {
    pub method: String,
    pub acceleration: f64,
    pub factor: f64,
    pub image: ComplexImage,
}

#[derive(Debug, Clone)]
pub struct LesionReport {
    pub rows: Vec<LesionRow>,
    pub panels: Vec<LesionPanel>,
    pub surrounding_mean: f64,
    pub noise_sigma: f64,
}

impl LesionReport {
    pub fn row(&self, method: &str, acceleration: f64, factor: f64) -> Option<&LesionRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.acceleration == acceleration && r.factor == factor)
    }
}

fn mask_for(h: usize, w: usize, acceleration: f64, seed: u64) -> Result<SamplingMask> {
    if acceleration <= 1.0 {
        Ok(SamplingMask::full(h, w))
    } else {
        gaussian_mask(h, w, acceleration, seed)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Runs the full study. Noise and masks are shared across factors and
/// methods so that differences isolate the lesion and the method.
pub fn lesion_study(base: &ComplexImage, spec: &LesionSpec, methods: &[Method]) -> Result<LesionReport> {
    let (h, w) = base.shape();
    spec.validate(h, w)?;
    let (c, r0, r1) = (spec.center, spec.inner_radius, spec.outer_radius);
    let surrounding = annulus_mean(base, c, r0, r1);
    let sens = synth_sensitivities(h, w, spec.coils, spec.seed)?;
    let noise_sigma = spec.noise_fraction * mean_magnitude(base);
    let top = spec.factors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rows = Vec::new();
    let mut panels = Vec::new();
    for &factor in &spec.factors {
        let amplitude = factor * surrounding;
        let lesion = insert_lesion(base, c, spec.sigma, amplitude);
        let reference = measured_intensity(&lesion, c, r0, r1);
        for (ai, &accel) in spec.accelerations.iter().enumerate() {
            let mut measured: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
            for s in 0..spec.mask_seeds {
                let mask = mask_for(h, w, accel, derive_seed(spec.seed, 1 + ai as u64, s as u64))?;
                let noise = (noise_sigma > 0.0).then(|| NoiseSpec {
                    sigma: noise_sigma,
                    seed: derive_seed(spec.seed, 100 + ai as u64, s as u64),
                });
                let coils = simulate(&lesion, &sens, &mask, noise)?;
                for (mi, method) in methods.iter().enumerate() {
                    let est = match method {
                        Method::ZeroFilled => zero_filled(&coils, &mask)?,
                        Method::Cs(cfg) => cs_reconstruct(&coils, &mask, cfg)?,
                        Method::Rim { model, .. } => model.reconstruct(&coils, &mask, spec.rim_sigma)?,
                    };
                    measured[mi].push(measured_intensity(&est, c, r0, r1));
                    if s == 0 && factor == top {
                        panels.push(LesionPanel {
                            method: method.name(),
                            acceleration: accel,
                            factor,
                            image: est,
                        });
                    }
                }
            }
            for (method, m) in methods.iter().zip(&measured) {
                let (mm, ms) = mean_std(m);
                let bias: Vec<f64> = m.iter().map(|v| v - reference).collect();
                let (bm, bs) = mean_std(&bias);
                rows.push(LesionRow {
                    method: method.name(),
                    acceleration: accel,
                    factor,
                    simulated: amplitude,
                    reference,
                    measured_mean: mm,
                    measured_std: ms,
                    bias_mean: bm,
                    bias_std: bs,
                    count: m.len(),
                });
            }
        }
    }
    Ok(LesionReport {
        rows,
        panels,
        surrounding_mean: surrounding,
        noise_sigma,
    })
}

/// 8-bit grayscale PNG of `|img| / peak`, clipped to `[0, 1]`.
pub fn write_png(path: impl AsRef<Path>, img: &ComplexImage, peak: f64) -> Result<()> {
    let (h, w) = img.shape();
    let pixels: Vec<u8> = img
        .data()
        .iter()
        .map(|c| ((c.norm() / peak).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let file = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| RimError::Io(std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

/// Writes each panel as `<method>_R<accel>.png` plus a float volume dump.
pub fn write_panels(dir: impl AsRef<Path>, panels: &[LesionPanel], peak: f64) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for p in panels {
        let stem = format!("{}_R{}", p.method.replace(['/', '@'], "-"), p.acceleration);
        write_png(dir.join(format!("{stem}.png")), &p.image, peak)?;
        let mut vol = Volume::from_image(&p.image);
        vol.info.modality = "lesion-panel".into();
        vol.info.provenance.insert("method".into(), p.method.clone());
        vol.info.provenance.insert("factor".into(), p.factor.to_string());
        write_volume(dir.join(format!("{stem}.rimv")), &vol)?;
        names.push(stem);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::phantom::{gen_phantom, PhantomKind};

    fn base() -> (ComplexImage, (usize, usize)) {
        let img = gen_phantom(PhantomKind::Ellipses, 48, 3).unwrap();
        let c = suggest_center(&img, 6.0).unwrap();
        (img, c)
    }

    #[test]
    fn bump_is_unit_peaked_and_near_gaussian() {
        let b = lesion_bump(32, 32, (16, 15), 1.0);
        assert!((b.get(16, 15).re - 1.0).abs() < 1e-14);
        // the clipped spectral tail shifts samples by a few parts in a thousand
        assert!((b.get(16, 16).re - (-0.5f64).exp()).abs() < 5e-3);
        assert!((b.get(18, 15).re - (-2.0f64).exp()).abs() < 5e-3);
        assert!(b.get(0, 0).re.abs() < 1e-3);
    }

    #[test]
    fn factor_zero_noiseless_full_sampling_is_unbiased() {
        let (img, c) = base();
        let spec = LesionSpec {
            factors: vec![0.0],
            noise_fraction: 0.0,
            accelerations: vec![1.0],
            mask_seeds: 2,
            ..LesionSpec::at(c)
        };
        let rep = lesion_study(&img, &spec, &[Method::ZeroFilled]).unwrap();
        assert!(rep.rows[0].bias_mean.abs() < 1e-10);
    }

    #[test]
    fn fully_sampled_delta_is_linear_in_amplitude() {
        let (img, c) = base();
        let m0 = measured_intensity(&img, c, 3.0, 6.0);
        let d1 = measured_intensity(&insert_lesion(&img, c, 1.0, 0.3), c, 3.0, 6.0) - m0;
        let d2 = measured_intensity(&insert_lesion(&img, c, 1.0, 0.6), c, 3.0, 6.0) - m0;
        assert!((d2 - 2.0 * d1).abs() < 1e-8);
        assert!(d1 > 0.25);
    }

    #[test]
    fn noisy_full_sampling_stays_within_noise() {
        let (img, c) = base();
        let spec = LesionSpec {
            accelerations: vec![1.0],
            mask_seeds: 10,
            ..LesionSpec::at(c)
        };
        let rep = lesion_study(&img, &spec, &[Method::ZeroFilled]).unwrap();
        for r in &rep.rows {
            let se = r.measured_std / (r.count as f64).sqrt();
            assert!(r.bias_mean.abs() <= 3.0 * se.max(rep.noise_sigma * 0.1), "{r:?}");
        }
    }

    #[test]
    fn zero_filling_underestimates_at_eight_fold() {
        let (img, c) = base();
        let spec = LesionSpec {
            factors: vec![1.5],
            accelerations: vec![8.0],
            ..LesionSpec::at(c)
        };
        let rep = lesion_study(&img, &spec, &[Method::ZeroFilled]).unwrap();
        assert!(rep.rows[0].bias_mean < 0.0, "{:?}", rep.rows[0]);
    }

    #[test]
    fn center_outside_is_a_config_error() {
        let (img, _) = base();
        assert!(matches!(
            lesion_study(&img, &LesionSpec::at((48, 3)), &[Method::ZeroFilled]),
            Err(RimError::Config(_))
        ));
    }

    #[test]
    fn panels_and_csv_are_written() {
        let (img, c) = base();
        let spec = LesionSpec {
            factors: vec![0.0, 1.0],
            accelerations: vec![4.0],
            mask_seeds: 2,
            ..LesionSpec::at(c)
        };
        let rep = lesion_study(&img, &spec, &[Method::ZeroFilled]).unwrap();
        assert_eq!(rep.panels.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let names = write_panels(dir.path(), &rep.panels, 1.0).unwrap();
        assert!(dir.path().join(format!("{}.png", names[0])).exists());
        let csv = lesion_to_csv(&rep.rows);
        assert_eq!(csv.lines().count(), 3);
    }
}
