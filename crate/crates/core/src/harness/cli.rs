//! Command-line front end. Every subcommand writes a TOML manifest with its
//! effective arguments next to its outputs; passing that manifest back via
//! `--config` reruns the command. Flags given explicitly on the command line
//! override values from the file.
//!
//! Exit codes: 0 success, 2 usage error, 3 configuration or input error,
//! 4 numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cs::{cs_reconstruct, CsConfig};
use crate::error::{Result, RimError};
use crate::harness::bench::{bench_inference, bench_to_csv, BenchConfig};
use crate::harness::eval::{eval_generalization, EvalConfig, EvalModel};
use crate::harness::lesion::{lesion_study, lesion_to_csv, suggest_center, write_panels, write_png, LesionSpec, Method};
use crate::harness::phantom::{gen_phantom, PhantomKind};
use crate::harness::volume::{read_volume, slice_ingest, write_volume, Domain, Volume};
use crate::metrics::{compare, records_to_csv, snr_estimate, Magnitude, MetricsRecord, SNR_NOISE_PATCH};
use crate::mri::{simulate, synth_sensitivities, zero_filled, CoilSet, NoiseSpec};
use crate::numcore::{derive_seed, fft2_centered, ComplexImage};
use crate::rim::checkpoint::{self, Metadata};
use crate::rim::{CellKind, RimConfig, RimModel};
use crate::sampling::{gaussian_mask_with, read_mask, write_mask, SamplingMask};
use crate::training::{
    curve_to_csv, train, AugmentToggles, Dataset, LossNorm, LossSpec, Sample, TrainConfig, TrainError, DEFAULT_PATCH,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "RIM_THREADS";

const STREAM_TRAIN_PHANTOM: u64 = 10;
const STREAM_VAL_PHANTOM: u64 = 11;
const STREAM_COILS: u64 = 12;
const STREAM_EVAL_PHANTOM: u64 = 13;

#[derive(Parser, Debug)]
#[command(name = "rim", version, about = "Recurrent inference machines for accelerated MRI reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a variable-density Gaussian sampling mask.
    Mask(MaskArgs),
    /// Generate a synthetic phantom volume.
    Phantom(PhantomArgs),
    /// Train a RIM on phantoms or image volumes.
    Train(TrainArgs),
    /// Reconstruct a volume with a RIM, CS or zero filling.
    Reconstruct(ReconstructArgs),
    /// Time single-slice inference over a grid of settings.
    Bench(BenchArgs),
    /// Evaluate models across phantom families and accelerations.
    Eval(EvalArgs),
    /// Run the lesion-simulation study.
    LesionSim(LesionArgs),
    /// Compute SSIM, PSNR and optionally SNR between two volumes.
    Metrics(MetricsArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskArgs {
    /// Grid height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64usize, 64])]
    pub size: Vec<usize>,
    #[arg(long, default_value_t = 4.0)]
    pub accel: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Density FWHM as a fraction of the grid side.
    #[arg(long, default_value_t = 0.7)]
    pub fwhm: f64,
    /// Calibration ellipse half-axis as a fraction of the half side.
    #[arg(long, default_value_t = 0.02)]
    pub ellipse: f64,
    #[arg(long, default_value = "mask.rimk")]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomArgs {
    #[arg(long, default_value = "textured")]
    pub kind: PhantomKind,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "phantom.rimv")]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long, default_value = "indrnn")]
    pub cell: CellKind,
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    #[arg(long, default_value_t = 4)]
    pub time_steps: usize,
    #[arg(long, default_value = "l1")]
    pub loss: LossNorm,
    /// Phantom families used as training datasets (one dataset each).
    #[arg(long, num_args = 1.., default_values = ["textured"])]
    pub phantoms: Vec<PhantomKind>,
    /// Phantoms per family.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Phantom side.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Image-domain volumes used as additional datasets (one per file).
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Held-out phantoms of the first family used for validation.
    #[arg(long, default_value_t = 4)]
    pub validation: usize,
    #[arg(long, default_value_t = 4)]
    pub coils: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_PATCH)]
    pub patch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, num_args = 1.., default_values_t = [4.0])]
    pub accel: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Disable crop, rotation and flip augmentation.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.rimc")]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconMethod {
    Rim,
    Cs,
    ZeroFilled,
}

impl FromStr for ReconMethod {
    type Err = RimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rim" => Ok(ReconMethod::Rim),
            "cs" => Ok(ReconMethod::Cs),
            "zero-filled" => Ok(ReconMethod::ZeroFilled),
            _ => Err(RimError::Config(format!("unknown method '{s}' (rim, cs, zero-filled)"))),
        }
    }
}

impl fmt::Display for ReconMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReconMethod::Rim => "rim",
            ReconMethod::Cs => "cs",
            ReconMethod::ZeroFilled => "zero-filled",
        })
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructArgs {
    #[arg(long, default_value = "rim")]
    pub method: ReconMethod,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Image-domain reference volume (acquisition is simulated) or multi-coil
    /// k-space volume (requires `--sensitivities`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub sensitivities: Option<PathBuf>,
    /// Mask file; without it a mask is drawn from `--accel` and `--mask-seed`.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    pub accel: f64,
    #[arg(long, default_value_t = 0)]
    pub mask_seed: u64,
    #[arg(long, default_value_t = 4)]
    pub coils: usize,
    #[arg(long, default_value_t = 0)]
    pub coil_seed: u64,
    /// Noise level relative to the mean reference magnitude.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.005)]
    pub lambda: f64,
    #[arg(long, default_value_t = 60)]
    pub cs_iters: usize,
    #[arg(long, default_value = "recon.rimv")]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchArgs {
    #[arg(long, num_args = 1.., default_values_t = [16usize, 32, 64, 128, 256])]
    pub features: Vec<usize>,
    #[arg(long, num_args = 1.., default_values_t = [6usize, 8, 10, 12, 14, 16])]
    pub time_steps: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    pub reps: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub coils: usize,
    #[arg(long, default_value_t = 4.0)]
    pub accel: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_cs: bool,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// Checkpoints to evaluate; unreadable ones are reported as gaps.
    #[arg(long, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, num_args = 1.., default_values = ["textured", "ellipses", "shepp-logan"])]
    pub datasets: Vec<PhantomKind>,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub coils: usize,
    #[arg(long, num_args = 1.., default_values_t = [4.0, 8.0])]
    pub accel: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.005)]
    pub lambda: f64,
    #[arg(long, default_value_t = 60)]
    pub cs_iters: usize,
    #[arg(long)]
    pub no_cs: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "eval.csv")]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionArgs {
    #[arg(long, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "textured")]
    pub kind: PhantomKind,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub phantom_seed: u64,
    /// Lesion center row and column; chosen automatically when absent.
    #[arg(long, num_args = 2, value_names = ["Y", "X"])]
    pub center: Option<Vec<usize>>,
    #[arg(long, num_args = 1.., default_values_t = [0.0, 1.0, 1.25, 1.5, 1.75, 2.0])]
    pub factors: Vec<f64>,
    #[arg(long, num_args = 1.., default_values_t = [4.0, 6.0, 8.0])]
    pub accel: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub mask_seeds: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 4)]
    pub coils: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long)]
    pub no_cs: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "lesion")]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsArgs {
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Single-coil k-space of the estimate volume for the SNR estimate.
    #[arg(long)]
    pub kspace: Option<PathBuf>,
    #[arg(long, default_value_t = SNR_NOISE_PATCH)]
    pub snr_patch: usize,
    #[arg(long, default_value = "estimate")]
    pub model: String,
    #[arg(long, default_value = "input")]
    pub dataset: String,
    #[arg(long, default_value_t = 0.0)]
    pub accel: f64,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Parses, runs, and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Ok(n) = std::env::var(THREADS_ENV) {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error[config]: {THREADS_ENV}={n} is not a positive integer");
                return 3;
            }
        }
    }
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            let (code, tag) = match e {
                RimError::Numerical(_) => (4, "numerical"),
                RimError::Io(_) => (3, "io"),
                RimError::Parse { .. } => (3, "parse"),
                _ => (3, "config"),
            };
            eprintln!("error[{tag}]: {e}");
            code
        }
    }
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    let cli = Cli::from_arg_matches(matches).map_err(|e| RimError::Config(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    macro_rules! go {
        ($args:expr, $f:ident) => {{
            let cfg = $args.config.clone();
            let args = resolve(name, $args, sub, cfg.as_deref())?;
            $f(&args)
        }};
    }
    match cli.command {
        Command::Mask(a) => go!(a, cmd_mask),
        Command::Phantom(a) => go!(a, cmd_phantom),
        Command::Train(a) => go!(a, cmd_train),
        Command::Reconstruct(a) => go!(a, cmd_reconstruct),
        Command::Bench(a) => go!(a, cmd_bench),
        Command::Eval(a) => go!(a, cmd_eval),
        Command::LesionSim(a) => go!(a, cmd_lesion),
        Command::Metrics(a) => go!(a, cmd_metrics),
    }
}

/// Overlays values from a config file (a manifest or a flat table) onto the
/// parsed arguments, except those given explicitly on the command line.
fn resolve<T: Serialize + DeserializeOwned>(name: &str, cli: T, matches: &ArgMatches, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else { return Ok(cli) };
    let text = fs::read_to_string(path)
        .map_err(|e| RimError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut file: toml::Table =
        toml::from_str(&text).map_err(|e| RimError::Config(format!("{}: {e}", path.display())))?;
    if let Some(cmd) = file.get("command").and_then(|v| v.as_str()) {
        if cmd != name {
            return Err(RimError::Config(format!(
                "{} is a manifest for '{cmd}', not '{name}'",
                path.display()
            )));
        }
    }
    if let Some(toml::Value::Table(args)) = file.remove("args") {
        file = args;
    }
    file.remove("command");
    file.remove("version");
    file.remove("derived");
    let command = Cli::command();
    let known: Vec<String> = command
        .find_subcommand(name)
        .map(|c| c.get_arguments().map(|a| a.get_id().to_string()).collect())
        .unwrap_or_default();
    let mut merged = toml::Table::try_from(&cli).map_err(|e| RimError::Config(e.to_string()))?;
    for (key, value) in file {
        if key == "config" || !known.contains(&key) {
            return Err(RimError::Config(format!("{}: unknown key '{key}'", path.display())));
        }
        if matches.value_source(&key) != Some(ValueSource::CommandLine) {
            merged.insert(key, value);
        }
    }
    T::deserialize(merged).map_err(|e| RimError::Config(format!("{}: {e}", path.display())))
}

/// Flags that may come from `--config` cannot be required by the parser.
fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| RimError::Config(format!("--{flag} is required (on the command line or in --config)")))
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    args: &'a T,
    /// Values computed at run time (chosen centers, seeds of generated data).
    derived: toml::Table,
}

/// `<out>.manifest.toml` for file outputs, `<dir>/manifest.toml` for
/// directory outputs.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.toml")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.toml");
        PathBuf::from(s)
    }
}

fn write_manifest<T: Serialize>(path: &Path, command: &str, args: &T, derived: toml::Table) -> Result<()> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        args,
        derived,
    };
    let text = toml::to_string(&m).map_err(|e| RimError::Config(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

fn cmd_mask(a: &MaskArgs) -> Result<()> {
    let (h, w) = (a.size[0], a.size[1]);
    let mask = gaussian_mask_with(h, w, a.accel, a.seed, a.fwhm, a.ellipse)?;
    write_mask(&a.out, &mask)?;
    if let Some(png) = &a.png {
        write_png(png, &mask_image(&mask), 1.0)?;
    }
    write_manifest(&manifest_path(&a.out, false), "mask", a, toml::Table::new())?;
    println!("mask {h}x{w}: {} samples ({}x) -> {}", mask.count(), a.accel, a.out.display());
    Ok(())
}

fn mask_image(mask: &SamplingMask) -> ComplexImage {
    let (h, w) = mask.shape();
    ComplexImage::from_fn(h, w, |y, x| Complex64::new(if mask.get(y, x) { 1.0 } else { 0.0 }, 0.0))
}

fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let img = gen_phantom(a.kind, a.size, a.seed)?;
    let mut vol = Volume::from_image(&img);
    vol.info.modality = a.kind.name().into();
    vol.info.provenance.insert("generator".into(), "phantom".into());
    vol.info.provenance.insert("seed".into(), a.seed.to_string());
    write_volume(&a.out, &vol)?;
    if let Some(png) = &a.png {
        write_png(png, &img, 1.0)?;
    }
    write_manifest(&manifest_path(&a.out, false), "phantom", a, toml::Table::new())?;
    println!("{} phantom {}x{} -> {}", a.kind, a.size, a.size, a.out.display());
    Ok(())
}

fn phantom_samples(kind: PhantomKind, count: usize, size: usize, coils: usize, seed: u64, stream: u64) -> Result<Vec<Sample>> {
    (0..count as u64)
        .map(|i| {
            Ok(Sample {
                reference: gen_phantom(kind, size, derive_seed(seed, stream, i))?,
                coils: synth_sensitivities(size, size, coils, derive_seed(seed, STREAM_COILS ^ stream, i))?,
            })
        })
        .collect()
}

/// Image-domain slices of a volume, each max-normalized, with synthesized
/// coil maps.
fn volume_samples(path: &Path, coils: usize, seed: u64) -> Result<Vec<Sample>> {
    let vol = read_volume(path)?;
    if vol.domain != Domain::Image {
        return Err(RimError::Config(format!(
            "{}: training data must be image-domain volumes",
            path.display()
        )));
    }
    slice_ingest(&vol)?
        .into_iter()
        .filter_map(|s| {
            let img = s.coils.into_iter().next()?;
            let peak = img.max_magnitude();
            (peak > 0.0).then_some((s.index, img.scale(1.0 / peak)))
        })
        .map(|(i, img)| {
            let (h, w) = img.shape();
            Ok(Sample {
                coils: synth_sensitivities(h, w, coils, derive_seed(seed, STREAM_COILS, i as u64))?,
                reference: img,
            })
        })
        .collect()
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = RimConfig::new(a.cell, a.features, a.time_steps)?;
    let mut datasets = Vec::new();
    for (k, kind) in a.phantoms.iter().enumerate() {
        datasets.push(Dataset {
            name: kind.name().into(),
            samples: phantom_samples(*kind, a.count, a.size, a.coils, a.seed, STREAM_TRAIN_PHANTOM + 100 * k as u64)?,
        });
    }
    for p in &a.data {
        datasets.push(Dataset {
            name: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            samples: volume_samples(p, a.coils, a.seed)?,
        });
    }
    if datasets.is_empty() {
        return Err(RimError::Config("no training data: give --phantoms or --data".into()));
    }
    let validation = match a.phantoms.first() {
        Some(kind) => phantom_samples(*kind, a.validation, a.size, a.coils, a.seed, STREAM_VAL_PHANTOM)?,
        None => Vec::new(),
    };
    let tc = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        steps_per_epoch: a.steps,
        patch_size: a.patch,
        augment: if a.no_augment { AugmentToggles::NONE } else { AugmentToggles::default() },
        dataset_weights: Vec::new(),
        seed: a.seed,
        accelerations: a.accel.clone(),
        noise_fraction: a.noise,
        sigma: a.sigma,
        ..TrainConfig::default()
    };
    let spec = LossSpec::new(a.loss, a.time_steps);
    let init = RimModel::init(config, a.seed)?;
    let names: Vec<String> = datasets.iter().map(|d| d.name.clone()).collect();
    let mut meta = Metadata::new();
    meta.insert("dataset".into(), names.join("+"));
    meta.insert("loss".into(), a.loss.to_string());
    meta.insert("seed".into(), a.seed.to_string());
    meta.insert("epochs".into(), a.epochs.to_string());
    meta.insert("steps_per_epoch".into(), a.steps.to_string());
    meta.insert("learning_rate".into(), a.lr.to_string());
    meta.insert("plateau".into(), format!("x{} after {} epochs", tc.plateau_decay, tc.plateau_patience));
    meta.insert("cell".into(), a.cell.model_name().into());
    let outcome = match train(&init, &datasets, &validation, &spec, &tc) {
        Ok(o) => o,
        Err(TrainError::Diverged { step, reason, checkpoint: last }) => {
            let diag = a.out.with_extension("diverged.rimc");
            meta.insert("diverged_at_step".into(), step.to_string());
            checkpoint::save(&diag, &last, &meta)?;
            return Err(RimError::Numerical(format!(
                "training diverged at step {step} ({reason}); last finite parameters in {}",
                diag.display()
            )));
        }
        Err(TrainError::Rim(e)) => return Err(e),
    };
    meta.insert("best_epoch".into(), outcome.best_epoch.to_string());
    checkpoint::save(&a.out, &outcome.best, &meta)?;
    let curve = a.out.with_extension("curve.csv");
    fs::write(&curve, curve_to_csv(&outcome.curve))?;
    let mut derived = toml::Table::new();
    derived.insert("parameters".into(), toml::Value::Integer(outcome.best.param_count() as i64));
    derived.insert("curve".into(), toml::Value::String(curve.display().to_string()));
    write_manifest(&manifest_path(&a.out, false), "train", a, derived)?;
    if let Some(last) = outcome.curve.last() {
        println!(
            "trained {} ({} parameters): train loss {:.5}, val loss {:.5}, val PSNR {:.2} dB -> {}",
            a.cell.model_name(),
            outcome.best.param_count(),
            last.train_loss,
            last.val_loss,
            last.val_psnr,
            a.out.display()
        );
    }
    Ok(())
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    // load everything before writing anything
    let model = match a.method {
        ReconMethod::Rim => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| RimError::Config("--method rim needs --checkpoint".into()))?;
            Some(checkpoint::load(path)?)
        }
        _ => None,
    };
    let cs = CsConfig {
        lambda: a.lambda,
        max_iters: a.cs_iters,
        ..CsConfig::default()
    };
    let vol = read_volume(required(&a.input, "input")?)?;
    let slices = slice_ingest(&vol)?;
    let (h, w) = (slices[0].coils[0].height(), slices[0].coils[0].width());
    let mask = match &a.mask {
        Some(p) => {
            let m = read_mask(p)?;
            m.ensure_shape(h, w)?;
            m
        }
        None if a.accel <= 1.0 => SamplingMask::full(h, w),
        None => crate::sampling::gaussian_mask(h, w, a.accel, a.mask_seed)?,
    };
    let sens = match vol.domain {
        Domain::Image => synth_sensitivities(h, w, a.coils, a.coil_seed)?,
        Domain::Kspace => {
            let p = a
                .sensitivities
                .as_ref()
                .ok_or_else(|| RimError::Config("k-space input needs --sensitivities".into()))?;
            CoilSet::new(read_volume(p)?.images()?)?
        }
    };
    let mut out = Vec::with_capacity(slices.len());
    for s in &slices {
        let coils = match s.domain {
            Domain::Image => {
                let reference = &s.coils[0];
                let noise = (a.noise > 0.0).then(|| NoiseSpec {
                    sigma: a.noise * crate::training::mean_magnitude(reference),
                    seed: derive_seed(a.noise_seed, 0, s.index as u64),
                });
                simulate(reference, &sens, &mask, noise)?
            }
            Domain::Kspace => {
                let y: Vec<ComplexImage> = s
                    .coils
                    .iter()
                    .map(|k| k.zip_map(&mask_image(&mask), |v, m| v * m.re))
                    .collect::<Result<_>>()?;
                CoilSet::new(sens.sensitivities.clone())?.with_measurements(y)?
            }
        };
        let est = match (a.method, &model) {
            (ReconMethod::Rim, Some(m)) => m.reconstruct(&coils, &mask, a.sigma)?,
            (ReconMethod::Cs, _) => cs_reconstruct(&coils, &mask, &cs)?,
            _ => zero_filled(&coils, &mask)?,
        };
        if !est.is_finite() {
            return Err(RimError::Numerical(format!("slice {} reconstruction is not finite", s.index)));
        }
        out.push(est);
    }
    let data = out
        .iter()
        .flat_map(|img| img.data().iter().map(|c| num_complex::Complex32::new(c.re as f32, c.im as f32)))
        .collect();
    let mut result = Volume::new([out.len(), h, w], 1, Domain::Image, 0, data)?;
    result.info.modality = vol.info.modality.clone();
    result.info.provenance.insert("method".into(), a.method.to_string());
    write_volume(&a.out, &result)?;
    if let Some(png) = &a.png {
        let peak = out[0].max_magnitude().max(f64::MIN_POSITIVE);
        write_png(png, &out[0], peak)?;
    }
    let mut derived = toml::Table::new();
    derived.insert("samples".into(), toml::Value::Integer(mask.count() as i64));
    write_manifest(&manifest_path(&a.out, false), "reconstruct", a, derived)?;
    println!("{} reconstruction of {} slice(s) -> {}", a.method, out.len(), a.out.display());
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        time_steps: a.time_steps.clone(),
        features: a.features.clone(),
        repetitions: a.reps,
        warmup: a.warmup,
        size: a.size,
        coils: a.coils,
        acceleration: a.accel,
        seed: a.seed,
        include_cs: !a.no_cs,
    };
    let records = bench_inference(&cfg, |r| {
        println!(
            "{:>4} t={:<2} F={:<3} {:9.3} ms +- {:.3}",
            r.method, r.time_steps, r.features, r.timing.mean_ms, r.timing.std_ms
        )
    })?;
    fs::write(&a.out, bench_to_csv(&records))?;
    write_manifest(&manifest_path(&a.out, false), "bench", a, toml::Table::new())?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let models: Vec<EvalModel> = a
        .checkpoint
        .iter()
        .map(|p| {
            let model = checkpoint::load(p).ok();
            let meta = checkpoint::load_metadata(p).unwrap_or_default();
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            EvalModel {
                name: model.as_ref().map(|m| m.config.cell_kind.model_name().to_string()).unwrap_or(stem.clone()),
                trained_on: meta.get("dataset").cloned().unwrap_or(stem),
                model,
            }
        })
        .collect();
    let sets = a
        .datasets
        .iter()
        .map(|k| {
            Ok(Dataset {
                name: k.name().into(),
                samples: phantom_samples(*k, a.count, a.size, a.coils, a.seed, STREAM_EVAL_PHANTOM)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = EvalConfig {
        accelerations: a.accel.clone(),
        noise_fraction: a.noise,
        sigma: a.sigma,
        seed: a.seed,
        cs: (!a.no_cs).then_some(CsConfig {
            lambda: a.lambda,
            max_iters: a.cs_iters,
            ..CsConfig::default()
        }),
    };
    let table = eval_generalization(&models, &sets, &cfg)?;
    fs::write(&a.out, records_to_csv(&table.records))?;
    let summary = a.out.with_extension("summary.csv");
    fs::write(&summary, table.summary_csv())?;
    for (m, d, r) in &table.gaps {
        eprintln!("warning: no model for {m} on {d} at {r}x (checkpoint missing or unreadable)");
    }
    let mut derived = toml::Table::new();
    derived.insert("summary".into(), toml::Value::String(summary.display().to_string()));
    write_manifest(&manifest_path(&a.out, false), "eval", a, derived)?;
    println!("{} records -> {}", table.records.len(), a.out.display());
    Ok(())
}

fn cmd_lesion(a: &LesionArgs) -> Result<()> {
    let models = a.checkpoint.iter().map(checkpoint::load).collect::<Result<Vec<_>>>()?;
    let base = gen_phantom(a.kind, a.size, a.phantom_seed)?;
    let mut spec = LesionSpec::at((0, 0));
    let center = match &a.center {
        Some(c) => (c[0], c[1]),
        None => suggest_center(&base, spec.outer_radius)
            .ok_or_else(|| RimError::Config("no homogeneous region found; pass --center".into()))?,
    };
    spec = LesionSpec {
        center,
        factors: a.factors.clone(),
        noise_fraction: a.noise,
        accelerations: a.accel.clone(),
        mask_seeds: a.mask_seeds,
        coils: a.coils,
        seed: a.seed,
        rim_sigma: a.sigma,
        ..spec
    };
    spec.validate(base.height(), base.width())?;
    let mut methods = vec![Method::ZeroFilled];
    if !a.no_cs {
        methods.push(Method::Cs(CsConfig::default()));
    }
    for (p, m) in a.checkpoint.iter().zip(&models) {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        methods.push(Method::Rim {
            name: format!("{}-{stem}", m.config.cell_kind.model_name()),
            model: m,
        });
    }
    let report = lesion_study(&base, &spec, &methods)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("lesion.csv"), lesion_to_csv(&report.rows))?;
    write_panels(a.out.join("panels"), &report.panels, base.max_magnitude())?;
    let mut derived = toml::Table::try_from(&spec).map_err(|e| RimError::Config(e.to_string()))?;
    derived.insert("surrounding_mean".into(), toml::Value::Float(report.surrounding_mean));
    derived.insert("noise_sigma".into(), toml::Value::Float(report.noise_sigma));
    write_manifest(&manifest_path(&a.out, true), "lesion-sim", a, derived)?;
    println!("lesion study at {center:?}: {} rows -> {}", report.rows.len(), a.out.display());
    Ok(())
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let reference = slice_ingest(&read_volume(required(&a.reference, "reference")?)?)?;
    let estimate = slice_ingest(&read_volume(required(&a.estimate, "estimate")?)?)?;
    if reference.len() != estimate.len() {
        return Err(RimError::shape(format!(
            "{} reference slices vs {} estimate slices",
            reference.len(),
            estimate.len()
        )));
    }
    let kspace = a.kspace.as_ref().map(read_volume).transpose()?.map(|v| slice_ingest(&v)).transpose()?;
    let mut records = Vec::new();
    for (i, (r, e)) in reference.iter().zip(&estimate).enumerate() {
        let (ssim, psnr) = compare(&e.coils[0], &r.coils[0])?;
        let snr = match &kspace {
            Some(k) => {
                let ks = k.get(i).ok_or_else(|| RimError::shape("k-space volume has too few slices"))?;
                let kimg = match ks.domain {
                    Domain::Kspace => ks.coils[0].clone(),
                    Domain::Image => fft2_centered(&ks.coils[0])?,
                };
                Some(snr_estimate(&Magnitude::of(&e.coils[0]), &kimg, a.snr_patch)?)
            }
            None => None,
        };
        records.push(MetricsRecord {
            model: a.model.clone(),
            dataset: a.dataset.clone(),
            acceleration: a.accel,
            slice: i,
            seed: 0,
            ssim,
            psnr,
            snr,
        });
    }
    fs::write(&a.out, records_to_csv(&records))?;
    write_manifest(&manifest_path(&a.out, false), "metrics", a, toml::Table::new())?;
    for r in &records {
        println!("slice {}: SSIM {:.4}  PSNR {:.2} dB", r.slice, r.ssim, r.psnr);
    }
    Ok(())
}
