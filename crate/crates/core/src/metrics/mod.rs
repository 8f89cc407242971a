//! Image quality metrics on magnitude images: SSIM over 7x7 uniform windows,
//! PSNR, and an SNR estimate from a thresholded image and peripheral k-space.

use std::fmt::Write as _;

use crate::error::{Result, RimError};
use crate::numcore::ComplexImage;

/// Side of the square SSIM window.
pub const SSIM_WINDOW: usize = 7;
/// Side of the k-space corner square used for the noise level.
pub const SNR_NOISE_PATCH: usize = 32;

/// Real 2-D image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Magnitude {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Magnitude {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(RimError::shape(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn of(img: &ComplexImage) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            data: img.magnitude(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn check(&self, other: &Self) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(RimError::shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Mean structural similarity over all fully contained 7x7 windows (the
/// window shrinks to the image for smaller inputs). Variances and covariance
/// use the unbiased `1/(N-1)` normalization.
pub fn ssim(a: &Magnitude, b: &Magnitude, dynamic_range: f64) -> Result<f64> {
    a.check(b)?;
    if !(dynamic_range > 0.0) {
        return Err(RimError::Contract("dynamic range must be positive".into()));
    }
    let (h, w) = (a.height, a.width);
    let win = SSIM_WINDOW.min(h).min(w);
    if win < 2 {
        return Err(RimError::shape("images too small for SSIM"));
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);

    // summed-area tables of a, b, a^2, b^2, ab
    let stride = w + 1;
    let mut tables = vec![vec![0.0f64; (h + 1) * stride]; 5];
    for y in 0..h {
        let mut row = [0.0f64; 5];
        for x in 0..w {
            let (u, v) = (a.data[y * w + x], b.data[y * w + x]);
            let vals = [u, v, u * u, v * v, u * v];
            for k in 0..5 {
                row[k] += vals[k];
                tables[k][(y + 1) * stride + x + 1] = tables[k][y * stride + x + 1] + row[k];
            }
        }
    }
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - win {
        for x in 0..=w - win {
            let s = |k: usize| {
                let t = &tables[k];
                t[(y + win) * stride + x + win] - t[y * stride + x + win] - t[(y + win) * stride + x]
                    + t[y * stride + x]
            };
            let (sa, sb, saa, sbb, sab) = (s(0), s(1), s(2), s(3), s(4));
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa - n * ma * ma) / (n - 1.0);
            let vb = (sbb - n * mb * mb) / (n - 1.0);
            let cov = (sab - n * ma * mb) / (n - 1.0);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `10 log10(peak^2 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Magnitude, b: &Magnitude, peak: f64) -> Result<f64> {
    a.check(b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// SSIM and PSNR of an estimate against a reference after dividing both
/// magnitudes by the reference maximum (dynamic range and peak are then 1).
pub fn compare(estimate: &ComplexImage, reference: &ComplexImage) -> Result<(f64, f64)> {
    let peak = reference.max_magnitude();
    if !(peak > 0.0) {
        return Err(RimError::Numerical("reference image is identically zero".into()));
    }
    let a = Magnitude::of(estimate).scale(1.0 / peak);
    let b = Magnitude::of(reference).scale(1.0 / peak);
    Ok((ssim(&a, &b, 1.0)?, psnr(&a, &b, 1.0)?))
}

/// Otsu's threshold over a 256-bin histogram spanning the data range.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return lo;
    }
    const BINS: usize = 256;
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in values {
        hist[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += i as f64 * c as f64;
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    lo + (best_bin + 1) as f64 * width
}

/// Signal: mean magnitude above the Otsu threshold. Noise: median k-space
/// magnitude in the `patch x patch` square at the `(0, 0)` corner.
pub fn snr_estimate(image: &Magnitude, kspace: &ComplexImage, patch: usize) -> Result<f64> {
    let (kh, kw) = kspace.shape();
    if patch == 0 || kh < 2 * patch || kw < 2 * patch {
        return Err(RimError::shape(format!(
            "k-space {kh}x{kw} is smaller than twice the {patch}x{patch} noise patch"
        )));
    }
    let threshold = otsu_threshold(&image.data);
    let fg: Vec<f64> = image.data.iter().copied().filter(|&v| v > threshold).collect();
    let signal = if fg.is_empty() {
        0.0
    } else {
        fg.iter().sum::<f64>() / fg.len() as f64
    };
    let mut corner: Vec<f64> = (0..patch)
        .flat_map(|y| (0..patch).map(move |x| (y, x)))
        .map(|(y, x)| kspace.get(y, x).norm())
        .collect();
    corner.sort_by(f64::total_cmp);
    let mid = corner.len() / 2;
    let noise = if corner.len() % 2 == 0 {
        0.5 * (corner[mid - 1] + corner[mid])
    } else {
        corner[mid]
    };
    if !(signal > 0.0) || !(noise > 0.0) {
        return Err(RimError::Numerical(format!(
            "SNR undefined (signal {signal}, noise {noise})"
        )));
    }
    Ok(signal / noise)
}

/// One evaluated reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub model: String,
    pub dataset: String,
    pub acceleration: f64,
    pub slice: usize,
    pub seed: u64,
    pub ssim: f64,
    pub psnr: f64,
    pub snr: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str = "model,dataset,acceleration,slice,seed,ssim,psnr,snr";

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.model,
            self.dataset,
            self.acceleration,
            self.slice,
            self.seed,
            fmt_float(self.ssim),
            fmt_float(self.psnr),
            self.snr.map(fmt_float).unwrap_or_default()
        )
    }
}

pub fn records_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(h: usize, w: usize, seed: u64) -> Magnitude {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Magnitude::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Window-by-window SSIM with explicit sums.
    fn ssim_oracle(a: &Magnitude, b: &Magnitude, l: f64) -> f64 {
        let (h, w, k) = (a.height, a.width, SSIM_WINDOW);
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let mut acc = Vec::new();
        for y in 0..=h - k {
            for x in 0..=w - k {
                let pa: Vec<f64> = (0..k * k).map(|i| a.data[(y + i / k) * w + x + i % k]).collect();
                let pb: Vec<f64> = (0..k * k).map(|i| b.data[(y + i / k) * w + x + i % k]).collect();
                let n = (k * k) as f64;
                let ma = pa.iter().sum::<f64>() / n;
                let mb = pb.iter().sum::<f64>() / n;
                let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (n - 1.0);
                let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (n - 1.0);
                let cov = pa.iter().zip(&pb).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / (n - 1.0);
                acc.push(
                    ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)),
                );
            }
        }
        acc.iter().sum::<f64>() / acc.len() as f64
    }

    #[test]
    fn ssim_matches_loop_oracle() {
        for seed in 0..3 {
            let a = random(32, 32, seed);
            let b = random(32, 32, seed + 100);
            let fast = ssim(&a, &b, 1.0).unwrap();
            assert!((fast - ssim_oracle(&a, &b, 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_scaling() {
        let a = random(20, 24, 1);
        let b = random(20, 24, 2);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b, 1.0).unwrap();
        assert!((ab - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        let alpha = 3.7;
        let scaled = ssim(&a.scale(alpha), &b.scale(alpha), alpha).unwrap();
        assert!((scaled - ab).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn inverted_structure_scores_below_one() {
        let a = random(16, 16, 3);
        let inv = Magnitude::new(16, 16, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &inv, 1.0).unwrap() < 1.0);
    }

    #[test]
    fn psnr_arithmetic() {
        let a = Magnitude::new(1, 4, vec![0.0; 4]).unwrap();
        let b = Magnitude::new(1, 4, vec![0.01; 4]).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 40.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let c = Magnitude::new(1, 4, vec![0.02; 4]).unwrap();
        let drop = psnr(&a, &b, 1.0).unwrap() - psnr(&a, &c, 1.0).unwrap();
        assert!((drop - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!((drop - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = random(32, 32, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..1024).map(|_| rng.sample(StandardNormal)).collect();
        let mut last = f64::INFINITY;
        for level in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let b = Magnitude::new(32, 32, a.data.iter().zip(&noise).map(|(v, n)| v + level * n).collect()).unwrap();
            let p = psnr(&a, &b, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(ssim(&random(8, 8, 0), &random(8, 9, 0), 1.0).is_err());
        assert!(psnr(&random(8, 8, 0), &random(9, 8, 0), 1.0).is_err());
    }

    fn complex_noise(h: usize, w: usize, sigma: f64, seed: u64) -> ComplexImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexImage::from_fn(h, w, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * sigma
        })
    }

    #[test]
    fn pure_noise_has_low_snr() {
        let img = complex_noise(64, 64, 1.0, 1);
        let k = crate::numcore::fft2_centered(&img).unwrap();
        let snr = snr_estimate(&Magnitude::of(&img), &k, 32).unwrap();
        assert!(snr < 3.0, "{snr}");
    }

    #[test]
    fn snr_is_scale_invariant() {
        let img = ComplexImage::from_fn(64, 64, |y, x| {
            let inside = (y as f64 - 32.0).powi(2) + (x as f64 - 32.0).powi(2) < 400.0;
            Complex64::new(if inside { 1.0 } else { 0.0 }, 0.0)
        })
        .add(&complex_noise(64, 64, 0.05, 2))
        .unwrap();
        let k = crate::numcore::fft2_centered(&img).unwrap();
        let s1 = snr_estimate(&Magnitude::of(&img), &k, 32).unwrap();
        let s2 = snr_estimate(&Magnitude::of(&img.scale(7.5)), &k.scale(7.5), 32).unwrap();
        assert!((s1 - s2).abs() < 1e-9 * s1);
    }

    #[test]
    fn degenerate_snr_inputs() {
        let zero = ComplexImage::zeros(64, 64);
        assert!(matches!(
            snr_estimate(&Magnitude::of(&zero), &zero, 32),
            Err(RimError::Numerical(_))
        ));
        let small = ComplexImage::zeros(40, 64);
        assert!(matches!(
            snr_estimate(&Magnitude::of(&small), &small, 32),
            Err(RimError::InvalidShape(_))
        ));
    }

    #[test]
    fn otsu_separates_two_levels() {
        let mut v = vec![0.1; 100];
        v.extend(vec![0.9; 50]);
        let t = otsu_threshold(&v);
        assert!(t > 0.1 && t < 0.9);
    }

    #[test]
    fn csv_layout() {
        let r = MetricsRecord {
            model: "IRIM".into(),
            dataset: "textured".into(),
            acceleration: 4.0,
            slice: 2,
            seed: 9,
            ssim: 0.5,
            psnr: f64::INFINITY,
            snr: None,
        };
        assert_eq!(records_to_csv(&[r]), format!("{METRICS_CSV_HEADER}\nIRIM,textured,4,2,9,0.5,inf,\n"));
    }
}
