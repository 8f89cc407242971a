//! Image-quality metrics on a phantom under increasing noise, plus the
//! background-patch SNR estimate.

use rim_core::harness::{gen_phantom, PhantomKind};
use rim_core::metrics::{compare, snr_estimate, Magnitude, SNR_NOISE_PATCH};
use rim_core::mri::{add_noise, forward_op, synth_sensitivities};
use rim_core::numcore::{fft2_centered, ifft2_centered};
use rim_core::sampling::SamplingMask;

fn main() -> rim_core::Result<()> {
    let x = gen_phantom(PhantomKind::SheppLogan, 128, 0)?;
    let full = SamplingMask::full(128, 128);
    let coils = synth_sensitivities(128, 128, 1, 0)?;
    let clean = forward_op(&x, &coils, &full)?;
    for sigma in [0.0, 0.01, 0.03, 0.1] {
        let k = if sigma > 0.0 {
            add_noise(&clean, &full, rim_core::mri::NoiseSpec { sigma, seed: 1 })?.remove(0)
        } else {
            fft2_centered(&x)?
        };
        let img = ifft2_centered(&k)?;
        let (ssim, psnr) = compare(&img, &x)?;
        let snr = snr_estimate(&Magnitude::of(&img), &k, SNR_NOISE_PATCH)?;
        println!("sigma {sigma:<5}: SSIM {ssim:.4}  PSNR {psnr:>7.2} dB  SNR {snr:.1}");
    }
    Ok(())
}
