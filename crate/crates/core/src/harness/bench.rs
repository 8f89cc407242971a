//! Single-slice inference timing over a grid of unroll lengths and feature
//! counts, for every recurrent cell and the CS baseline.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cs::{cs_reconstruct, CsConfig};
use crate::error::Result;
use crate::harness::phantom::{gen_phantom, PhantomKind};
use crate::mri::{simulate, synth_sensitivities};
use crate::rim::{CellKind, RimConfig, RimModel};
use crate::sampling::gaussian_mask;

/// Timing mean and standard deviation in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub repetitions: usize,
}

/// Runs `f` `warmup` times untimed, then `repetitions` times under a
/// monotonic clock.
pub fn time_repeated(repetitions: usize, warmup: usize, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(Timing {
        mean_ms: mean,
        std_ms: var.sqrt(),
        repetitions,
    })
}

fn default_t() -> Vec<usize> {
    vec![6, 8, 10, 12, 14, 16]
}
fn default_f() -> Vec<usize> {
    vec![16, 32, 64, 128, 256]
}
fn default_reps() -> usize {
    300
}
fn default_warmup() -> usize {
    5
}
fn default_size() -> usize {
    32
}
fn default_coils() -> usize {
    4
}
fn default_accel() -> f64 {
    4.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_t")]
    pub time_steps: Vec<usize>,
    #[serde(default = "default_f")]
    pub features: Vec<usize>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Side of the square test slice.
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_coils")]
    pub coils: usize,
    #[serde(default = "default_accel")]
    pub acceleration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub include_cs: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    /// `GRIM`, `MRIM`, `IRIM` or `CS`; CS rows carry zero `t` and `features`.
    pub method: String,
    pub time_steps: usize,
    pub features: usize,
    pub timing: Timing,
}

pub const BENCH_CSV_HEADER: &str = "method,time_steps,features,repetitions,mean_ms,std_ms";

pub fn bench_to_csv(records: &[BenchRecord]) -> String {
    let mut out = format!("{BENCH_CSV_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method, r.time_steps, r.features, r.timing.repetitions, r.timing.mean_ms, r.timing.std_ms
        );
    }
    out
}

/// Times every grid point. Runs on the calling thread only.
pub fn bench_inference(config: &BenchConfig, mut progress: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    let n = config.size;
    let base = gen_phantom(PhantomKind::SheppLogan, n.max(32), config.seed)?;
    let reference = base.crop((base.height() - n) / 2, (base.width() - n) / 2, n, n)?;
    let mask = gaussian_mask(n, n, config.acceleration, config.seed)?;
    let coils = simulate(&reference, &synth_sensitivities(n, n, config.coils, config.seed)?, &mask, None)?;
    let mut records = Vec::new();
    for &f in &config.features {
        for &t in &config.time_steps {
            for kind in CellKind::ALL {
                let model = RimModel::init(RimConfig::new(kind, f, t)?, config.seed)?;
                let timing = time_repeated(config.repetitions, config.warmup, || {
                    model.reconstruct(&coils, &mask, 1.0).map(|_| ())
                })?;
                let rec = BenchRecord {
                    method: kind.model_name().into(),
                    time_steps: t,
                    features: f,
                    timing,
                };
                progress(&rec);
                records.push(rec);
            }
        }
    }
    if config.include_cs {
        let cs = CsConfig::default();
        let timing = time_repeated(config.repetitions, config.warmup, || {
            cs_reconstruct(&coils, &mask, &cs).map(|_| ())
        })?;
        let rec = BenchRecord {
            method: "CS".into(),
            time_steps: 0,
            features: 0,
            timing,
        };
        progress(&rec);
        records.push(rec);
    }
    Ok(records)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
