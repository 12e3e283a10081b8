//! End-to-end workflows: datasets, the generate/refine/evaluate loop and
//! benchmark reports.

pub mod benchmark;
pub mod dataset;
pub mod generate;
pub mod io;

pub use benchmark::{run_benchmark, write_reports, BenchmarkConfig, BenchmarkReport, ModelEntry, RunManifest};
pub use dataset::{load_dataset, save_dataset, synth_dataset, DatasetRecord, Distribution, SynthConfig};
pub use generate::{generate_and_refine, GenerateConfig, GenerationOutput, GuidanceSettings};
