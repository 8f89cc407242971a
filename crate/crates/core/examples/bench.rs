//! Times single-slice inference for the three cells over a small grid.

use rim_core::harness::{bench_inference, BenchConfig};

fn main() -> rim_core::Result<()> {
    let config = BenchConfig {
        time_steps: vec![4, 8],
        features: vec![16, 32],
        repetitions: 20,
        size: 32,
        ..BenchConfig::default()
    };
    bench_inference(&config, |r| {
        println!(
            "{:>4} t={:<2} F={:<3} {:8.3} ms (sd {:.3})",
            r.method, r.time_steps, r.features, r.timing.mean_ms, r.timing.std_ms
        )
    })?;
    Ok(())
}
