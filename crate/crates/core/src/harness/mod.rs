//! Experiment plumbing: phantoms, volume files, the timing benchmark, the
//! generalization evaluation, the lesion study and the command line.

pub mod bench;
pub mod cli;
pub mod eval;
pub mod lesion;
pub mod phantom;
pub mod volume;

pub use bench::{bench_inference, BenchConfig, BenchRecord};
pub use eval::{eval_generalization, EvalConfig, EvalModel, EvalTable};
pub use lesion::{lesion_study, LesionReport, LesionSpec, Method};
pub use phantom::{gen_phantom, PhantomKind};
pub use volume::{read_volume, slice_ingest, write_volume, Domain, Volume};
