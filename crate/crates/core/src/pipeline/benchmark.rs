use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::DatasetRecord;
use super::generate::{generate_and_refine, GenerateConfig, GuidanceSettings};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::kernels::{KernelParams, ModelVariant};
use crate::metrics::{aggregate, average_rank, design_gap, EvaluationRecord, Summary, TaskSplit};

pub const WORKERS_ENV: &str = "TOPOGEN_WORKERS";

/// Worker count from `TOPOGEN_WORKERS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on `workers` threads; output order follows input.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// A model under test; `None` marks a missing checkpoint.
pub struct ModelEntry<'a> {
    pub variant: ModelVariant,
    pub model: Option<&'a (dyn Denoiser + Sync)>,
    pub schedule: NoiseSchedule,
    pub checkpoint_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub splits: Vec<TaskSplit>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    /// Refinement applied to variants that refine.
    pub refine_iters: usize,
    pub kernel: KernelParams,
    pub guidance: GuidanceSettings,
    pub workers: usize,
    pub timing_repeats: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            splits: TaskSplit::all().to_vec(),
            seeds: vec![0],
            steps: 100,
            refine_iters: 10,
            kernel: KernelParams::default(),
            guidance: GuidanceSettings::default(),
            workers: worker_count(),
            timing_repeats: 3,
        }
    }
}

/// Mean and sample standard deviation over seeds of one aggregate metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub task: String,
    pub constraints: String,
    pub guidance: String,
    pub steps: usize,
    pub n: usize,
    pub avg_c: Stat,
    pub mdn_c: Stat,
    pub ce: Stat,
    pub vfe: Stat,
    pub fm: Stat,
    pub ld: Stat,
    pub sampling_s: Stat,
    pub processing_s: Stat,
    pub inference_s: Stat,
    pub avg_gap: f64,
    pub mdn_gap: f64,
    pub avg_rank: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub variants: Vec<ModelVariant>,
    pub steps: usize,
    pub refine_iters: usize,
    pub guidance: GuidanceSettings,
    pub kernel: KernelParams,
    pub seeds: Vec<u64>,
    pub splits: Vec<TaskSplit>,
    pub dataset_sha256: String,
    pub checkpoints_sha256: Vec<(ModelVariant, Option<String>)>,
    pub timings: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub records: Vec<(String, String, u64, EvaluationRecord)>,
    pub manifest: RunManifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over every problem and topology in id order.
pub fn dataset_hash(dataset: &[DatasetRecord]) -> Result<String> {
    let mut h = Sha256::new();
    for r in dataset {
        h.update(r.id.as_bytes());
        h.update(serde_json::to_vec(&r.problem)?);
        for v in &r.topology.values {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn empty_row(entry: &ModelEntry, split: &TaskSplit, steps: usize, note: String) -> BenchmarkRow {
    let nan = Stat { mean: f64::NAN, std: f64::NAN };
    BenchmarkRow {
        model: entry.variant.as_str().into(),
        task: split.name.as_str().into(),
        constraints: entry.variant.constraints_label().into(),
        guidance: entry.variant.guidance_label().into(),
        steps,
        n: 0,
        avg_c: nan,
        mdn_c: nan,
        ce: nan,
        vfe: nan,
        fm: nan,
        ld: nan,
        sampling_s: nan,
        processing_s: nan,
        inference_s: nan,
        avg_gap: f64::NAN,
        mdn_gap: f64::NAN,
        avg_rank: f64::NAN,
        note,
    }
}

/// Every model on every split and seed. Task-1 draws problems tagged `in`,
/// tasks 2 and 3 those tagged `out`; untagged datasets use every problem.
pub fn run_benchmark(dataset: &[DatasetRecord], models: &[ModelEntry], config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if models.is_empty() || config.splits.is_empty() || config.seeds.is_empty() {
        return Err(Error::InvalidConfiguration("benchmark needs a model, a split and a seed".into()));
    }
    let t0 = std::time::Instant::now();
    let mut rows = Vec::new();
    let mut all_records = Vec::new();
    let tagged = dataset.iter().any(|r| r.problem.tag.is_some());
    for split in &config.splits {
        let problems: Vec<&DatasetRecord> = dataset
            .iter()
            .filter(|r| !tagged || r.problem.tag.as_deref() == Some(split.name.problem_tag()))
            .collect();
        let first_row = rows.len();
        let mut summaries_per_row: Vec<Option<Summary>> = Vec::new();
        for entry in models {
            let Some(model) = entry.model else {
                rows.push(empty_row(entry, split, config.steps, "skipped: missing checkpoint".into()));
                summaries_per_row.push(None);
                continue;
            };
            if problems.is_empty() {
                rows.push(empty_row(entry, split, config.steps, "skipped: no problems for split".into()));
                summaries_per_row.push(None);
                continue;
            }
            let mut per_seed: Vec<Summary> = Vec::new();
            let mut note = String::new();
            for &seed in &config.seeds {
                let mut gen = GenerateConfig::new(
                    entry.variant,
                    config.steps,
                    if entry.variant.refines() { config.refine_iters } else { 0 },
                    seed,
                );
                gen.kernel = config.kernel;
                gen.guidance = config.guidance;
                gen.timing_repeats = config.timing_repeats;
                let outputs = parallel_map(&problems, config.workers, |r| {
                    generate_and_refine(&r.id, &r.problem, model, &entry.schedule, &gen)
                });
                let mut records = Vec::with_capacity(outputs.len());
                for out in outputs {
                    let out = out?;
                    records.push(if entry.variant.refines() { out.refined_record } else { out.raw_record });
                }
                records.sort_by(|a, b| a.id.cmp(&b.id));
                match aggregate(&records, split) {
                    Ok(s) => per_seed.push(s),
                    Err(Error::EmptySplit(_)) => note = "some seeds empty after filtering".into(),
                    Err(e) => return Err(e),
                }
                for r in records {
                    all_records.push((entry.variant.as_str().to_string(), split.name.as_str().to_string(), seed, r));
                }
            }
            if per_seed.is_empty() {
                rows.push(empty_row(entry, split, config.steps, "empty after filtering".into()));
                summaries_per_row.push(None);
                continue;
            }
            let stat = |f: fn(&Summary) -> f64| Stat::of(&per_seed.iter().map(f).collect::<Vec<_>>());
            let mean_summary = Summary {
                avg_c: stat(|s| s.avg_c).mean,
                mdn_c: stat(|s| s.mdn_c).mean,
                ce_mean: stat(|s| s.ce_mean).mean,
                ce_median: stat(|s| s.ce_median).mean,
                vfe_mean: stat(|s| s.vfe_mean).mean,
                fm_percent: stat(|s| s.fm_percent).mean,
                ld_percent: stat(|s| s.ld_percent).mean,
                manufacturable_percent: stat(|s| s.manufacturable_percent).mean,
                sampling_s: stat(|s| s.sampling_s).mean,
                processing_s: stat(|s| s.processing_s).mean,
                inference_s: stat(|s| s.inference_s).mean,
                ..per_seed[0].clone()
            };
            rows.push(BenchmarkRow {
                n: per_seed.iter().map(|s| s.n).sum::<usize>() / per_seed.len(),
                avg_c: stat(|s| s.avg_c),
                mdn_c: stat(|s| s.mdn_c),
                ce: stat(|s| s.ce_mean),
                vfe: stat(|s| s.vfe_mean),
                fm: stat(|s| s.fm_percent),
                ld: stat(|s| s.ld_percent),
                sampling_s: stat(|s| s.sampling_s),
                processing_s: stat(|s| s.processing_s),
                inference_s: stat(|s| s.inference_s),
                note,
                ..empty_row(entry, split, config.steps, String::new())
            });
            summaries_per_row.push(Some(mean_summary));
        }
        let present: Vec<(usize, Summary)> = summaries_per_row
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|s| (i, s)))
            .collect();
        let summaries: Vec<Summary> = present.iter().map(|(_, s)| s.clone()).collect();
        let gaps = design_gap(&summaries);
        let ranks = average_rank(&summaries);
        for (k, (i, _)) in present.iter().enumerate() {
            let row = &mut rows[first_row + i];
            row.avg_gap = gaps[k].0;
            row.mdn_gap = gaps[k].1;
            row.avg_rank = ranks[k];
        }
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        variants: models.iter().map(|m| m.variant).collect(),
        steps: config.steps,
        refine_iters: config.refine_iters,
        guidance: config.guidance,
        kernel: config.kernel,
        seeds: config.seeds.clone(),
        splits: config.splits.clone(),
        dataset_sha256: dataset_hash(dataset)?,
        checkpoints_sha256: models.iter().map(|m| (m.variant, m.checkpoint_sha256.clone())).collect(),
        timings: vec![("benchmark_wall_s".into(), t0.elapsed().as_secs_f64())],
    };
    Ok(BenchmarkReport {
        rows,
        records: all_records,
        manifest,
    })
}

const CSV_METRICS: [&str; 9] = [
    "avg_c",
    "mdn_c",
    "ce_pct",
    "vfe_pct",
    "fm_pct",
    "ld_pct",
    "sampling_s",
    "processing_s",
    "inference_s",
];

pub fn csv_header() -> String {
    let mut h = String::from("model,task,constraints,guidance,steps,n");
    for m in CSV_METRICS {
        let _ = write!(h, ",{m},{m}_std");
    }
    h.push_str(",avg_gap,mdn_gap,avg_rank,note");
    h
}

pub fn to_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{},{},{}", r.model, r.task, r.constraints, r.guidance, r.steps, r.n);
        for s in [r.avg_c, r.mdn_c, r.ce, r.vfe, r.fm, r.ld, r.sampling_s, r.processing_s, r.inference_s] {
            let _ = write!(out, ",{},{}", s.mean, s.std);
        }
        let _ = writeln!(out, ",{},{},{},{}", r.avg_gap, r.mdn_gap, r.avg_rank, r.note.replace(',', ";"));
    }
    out
}

/// `dir/stem.ext`, or the first free `dir/stem-N.ext`; never overwrites.
pub fn unique_path(dir: &Path, stem: &str, ext: &str) -> PathBuf {
    let first = dir.join(format!("{stem}.{ext}"));
    if !first.exists() {
        return first;
    }
    (1..)
        .map(|n| dir.join(format!("{stem}-{n}.{ext}")))
        .find(|p| !p.exists())
        .expect("unbounded suffix search")
}

/// Writes the CSV summary, per-record JSON and manifest under `dir`.
pub fn write_reports(dir: &Path, report: &BenchmarkReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv = unique_path(dir, "benchmark", "csv");
    std::fs::write(&csv, to_csv(&report.rows))?;
    let records = unique_path(dir, "records", "json");
    std::fs::write(&records, serde_json::to_string_pretty(&report.records)?)?;
    let manifest = unique_path(dir, "manifest", "json");
    std::fs::write(&manifest, serde_json::to_string_pretty(&report.manifest)?)?;
    Ok(vec![csv, records, manifest])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(parallel_map(&items, 4, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<u32>::new(), 3, |x| *x).is_empty());
    }

    #[test]
    fn suffix_policy_never_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let a = unique_path(dir.path(), "r", "csv");
        std::fs::write(&a, "x").unwrap();
        let b = unique_path(dir.path(), "r", "csv");
        assert_ne!(a, b);
        assert!(b.ends_with("r-1.csv"));
    }

    #[test]
    fn stat_over_seeds() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn header_has_std_columns() {
        let h = csv_header();
        assert!(h.starts_with("model,task,constraints,guidance,steps,n,avg_c,avg_c_std,mdn_c"));
        assert_eq!(h.split(',').count(), 6 + 18 + 4);
    }
}
