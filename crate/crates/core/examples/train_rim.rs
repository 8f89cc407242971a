//! Trains a small IRIM on textured phantoms and compares it with zero filling
//! on held-out phantoms. Pass a step count as the first argument for a longer
//! run (default 200).

use rim_core::harness::{gen_phantom, PhantomKind};
use rim_core::metrics::compare;
use rim_core::mri::{synth_sensitivities, zero_filled};
use rim_core::rim::{CellKind, RimConfig, RimModel};
use rim_core::training::{acquire, train, Dataset, LossNorm, LossSpec, Sample, TrainConfig};

fn phantoms(count: u64, offset: u64) -> rim_core::Result<Vec<Sample>> {
    (offset..offset + count)
        .map(|i| {
            Ok(Sample {
                reference: gen_phantom(PhantomKind::Textured, 48, i)?,
                coils: synth_sensitivities(48, 48, 4, i)?,
            })
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let train_set = vec![Dataset {
        name: "textured".into(),
        samples: phantoms(50, 0)?,
    }];
    let held_out = phantoms(4, 1000)?;
    let config = TrainConfig {
        epochs: 4,
        steps_per_epoch: steps.div_ceil(4),
        batch_size: 2,
        patch_size: 32,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let model = RimModel::init(RimConfig::new(CellKind::IndRnn, 16, 6)?, 0)?;
    let spec = LossSpec::new(LossNorm::L1, 6);
    let outcome = train(&model, &train_set, &held_out, &spec, &config)?;
    for e in &outcome.curve {
        println!(
            "epoch {}: train {:.4}  val {:.4}  SSIM {:.3}  PSNR {:.2} dB",
            e.epoch, e.train_loss, e.val_loss, e.val_ssim, e.val_psnr
        );
    }
    for (i, s) in held_out.iter().enumerate() {
        let (coils, mask) = acquire(s, 4.0, 7 + i as u64, 0.0, 0)?;
        let zf = compare(&zero_filled(&coils, &mask)?, &s.reference)?.1;
        let rim = compare(&outcome.best.reconstruct(&coils, &mask, 1.0)?, &s.reference)?.1;
        println!("held-out {i}: zero-filled {zf:.2} dB, IRIM {rim:.2} dB");
    }
    Ok(())
}
