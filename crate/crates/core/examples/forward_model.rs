//! Simulates a multi-coil acquisition and checks the SENSE operator pair:
//! the adjoint identity and the zero-filled estimate at several accelerations.

use rim_core::harness::{gen_phantom, PhantomKind};
use rim_core::metrics::compare;
use rim_core::mri::{adjoint_op, forward_op, simulate, synth_sensitivities, zero_filled, NoiseSpec};
use rim_core::sampling::gaussian_mask;

fn main() -> rim_core::Result<()> {
    let x = gen_phantom(PhantomKind::SheppLogan, 64, 0)?;
    let coils = synth_sensitivities(64, 64, 4, 0)?;
    let mask = gaussian_mask(64, 64, 4.0, 0)?;

    let y = forward_op(&x, &coils, &mask)?;
    let back = adjoint_op(&y, &coils, &mask)?;
    let lhs: f64 = y.iter().map(|k| k.data().iter().map(|v| v.norm_sqr()).sum::<f64>()).sum();
    let rhs = x.data().iter().zip(back.data()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
    println!("<Ax, Ax> = {lhs:.10}, <x, A^H A x> = {rhs:.10}");

    for accel in [2.0, 4.0, 8.0] {
        let mask = gaussian_mask(64, 64, accel, 0)?;
        let noise = NoiseSpec { sigma: 0.01, seed: 1 };
        let acquired = simulate(&x, &coils, &mask, Some(noise))?;
        let (ssim, psnr) = compare(&zero_filled(&acquired, &mask)?, &x)?;
        println!("R={accel}: zero-filled SSIM {ssim:.3}, PSNR {psnr:.2} dB");
    }
    Ok(())
}
