//! Runs the wavelet compressed-sensing baseline over a range of
//! regularization weights and reports the objective trace.

use rim_core::cs::{cs_solve, CsConfig};
use rim_core::harness::{gen_phantom, PhantomKind};
use rim_core::metrics::compare;
use rim_core::mri::{simulate, synth_sensitivities, zero_filled, NoiseSpec};
use rim_core::sampling::gaussian_mask;

fn main() -> rim_core::Result<()> {
    let x = gen_phantom(PhantomKind::Textured, 64, 3)?;
    let coils = synth_sensitivities(64, 64, 4, 3)?;
    let mask = gaussian_mask(64, 64, 4.0, 3)?;
    let acquired = simulate(&x, &coils, &mask, Some(NoiseSpec { sigma: 0.005, seed: 3 }))?;
    let (_, zf) = compare(&zero_filled(&acquired, &mask)?, &x)?;
    println!("zero-filled: {zf:.2} dB");
    for lambda in [1e-4, 1e-3, 5e-3, 2e-2] {
        let config = CsConfig {
            lambda,
            ..CsConfig::default()
        };
        let report = cs_solve(&acquired, &mask, &config)?;
        let (ssim, psnr) = compare(&report.image, &x)?;
        println!(
            "lambda {lambda:<7}: SSIM {ssim:.3}, PSNR {psnr:.2} dB, objective {:.4} -> {:.4} over {} iterations",
            report.objective[0],
            report.objective.last().copied().unwrap_or(f64::NAN),
            report.objective.len()
        );
    }
    Ok(())
}
