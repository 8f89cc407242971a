//! Generates each phantom family and a set of sampling masks, and prints
//! how the masks concentrate samples near the k-space center.

use rim_core::harness::{gen_phantom, PhantomKind};
use rim_core::sampling::gaussian_mask;

fn main() -> rim_core::Result<()> {
    for kind in PhantomKind::ALL {
        let img = gen_phantom(kind, 64, 0)?;
        let peak = img.max_magnitude();
        println!("{kind:>12}: 64x64, peak magnitude {peak:.3}");
    }
    for accel in [4.0, 6.0, 8.0, 10.0] {
        let mask = gaussian_mask(64, 64, accel, 0)?;
        let center = (24..40).flat_map(|y| (24..40).map(move |x| (y, x))).filter(|&(y, x)| mask.get(y, x)).count();
        println!(
            "R={accel:>4}: {} samples, {:.0}% of the central 16x16 block sampled",
            mask.count(),
            100.0 * center as f64 / 256.0
        );
    }
    let mask = gaussian_mask(32, 32, 4.0, 1)?;
    for y in 0..32 {
        let row: String = (0..32).map(|x| if mask.get(y, x) { '#' } else { '.' }).collect();
        println!("{row}");
    }
    Ok(())
}
