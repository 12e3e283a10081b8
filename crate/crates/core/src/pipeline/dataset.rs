//! Problem/optimum datasets on disk and a synthetic SIMP-backed generator.
//!
//! A dataset directory holds pairs `NNNNN.json` (the [`ProblemSpec`],
//! including `optimal_compliance`) and `NNNNN.tgt` (the optimal topology).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{density_from_file, read_problem, topology_file, write_problem};
use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::fea::{BoundaryConditions, Grid, Loads};
use crate::problem::ProblemSpec;
use crate::simp::{analyze, run_simp, SimpConfig};
use crate::tensor_io::TensorFile;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub problem: ProblemSpec,
    pub topology: DensityField,
}

pub fn save_dataset(dir: &Path, records: &[DatasetRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in records {
        write_problem(&dir.join(format!("{}.json", r.id)), &r.problem)?;
        topology_file(&r.topology)?.write(dir.join(format!("{}.tgt", r.id)))?;
    }
    Ok(())
}

/// Loads every `*.json` + `*.tgt` pair in `dir`, sorted by id.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetRecord>> {
    let mut stems: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    stems.sort();
    if stems.is_empty() {
        log::warn!("dataset directory {} holds no records", dir.display());
    }
    let mut out = Vec::with_capacity(stems.len());
    for json_path in stems {
        let id = json_path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let problem = read_problem(&json_path)?;
        let tgt = json_path.with_extension("tgt");
        let topology = density_from_file(&TensorFile::read(&tgt)?).map_err(|e| match e {
            Error::Parse { .. } => e,
            other => Error::Validation {
                record: id.clone(),
                message: other.to_string(),
            },
        })?;
        if topology.grid != problem.grid {
            return Err(Error::Validation {
                record: id,
                message: "topology grid differs from problem grid".into(),
            });
        }
        out.push(DatasetRecord { id, problem, topology });
    }
    log::info!("loaded {} records from {}", out.len(), dir.display());
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Fully clamped left edge; loads on the right edge within 30° of
    /// straight down.
    In,
    /// Lower half of the left edge clamped; loads within 30° of horizontal.
    Out,
}

impl Distribution {
    pub fn tag(&self) -> &'static str {
        match self {
            Distribution::In => "in",
            Distribution::Out => "out",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub nelx: usize,
    pub nely: usize,
    pub distribution: Distribution,
    pub seed: u64,
    pub simp_iters: usize,
}

impl SynthConfig {
    pub fn new(count: usize, nelx: usize, nely: usize, distribution: Distribution, seed: u64) -> Self {
        Self {
            count,
            nelx,
            nely,
            distribution,
            seed,
            simp_iters: 100,
        }
    }
}

/// Draws one random problem. Volume fractions are exact multiples of one
/// element so a binary optimum can match them exactly.
pub fn synth_problem(grid: Grid, distribution: Distribution, rng: &mut impl Rng) -> Result<ProblemSpec> {
    let n = grid.n_elements();
    let k = rng.random_range((0.3 * n as f64).ceil() as usize..=(0.5 * n as f64).floor() as usize);
    let vf = k as f64 / n as f64;
    let iy = rng.random_range(0..=grid.nely);
    let (bcs, angle) = match distribution {
        Distribution::In => (
            BoundaryConditions::fix_nodes((0..=grid.nely).map(|y| grid.node(0, y)), true, true),
            rng.random_range(-120.0f64..-60.0),
        ),
        Distribution::Out => (
            BoundaryConditions::fix_nodes((grid.nely / 2..=grid.nely).map(|y| grid.node(0, y)), true, true),
            rng.random_range(-30.0f64..30.0),
        ),
    };
    let (s, c) = angle.to_radians().sin_cos();
    let loads = Loads::single(grid.node(grid.nelx, iy), c, s);
    let mut p = ProblemSpec::new(grid, loads, bcs, vf)?;
    p.tag = Some(distribution.tag().to_string());
    Ok(p)
}

/// Keeps the `round(vf·n)` densest elements (ties broken by index).
pub fn binarize_to_volume(density: &DensityField, vf: f64) -> DensityField {
    let n = density.values.len();
    let k = (vf * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| density.values[b].total_cmp(&density.values[a]).then(a.cmp(&b)));
    let mut values = vec![0.0; n];
    for &e in &order[..k] {
        values[e] = 1.0;
    }
    DensityField {
        grid: density.grid,
        values,
    }
}

/// Runs SIMP on each random problem; the stored optimum is the SIMP result
/// binarized at the exact target volume and its compliance is the baseline.
pub fn synth_dataset(config: &SynthConfig) -> Result<Vec<DatasetRecord>> {
    let grid = Grid::new(config.nelx, config.nely)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let mut problem = synth_problem(grid, config.distribution, &mut rng)?;
        let simp = SimpConfig::for_problem(&problem).with_max_iters(config.simp_iters);
        let trace = run_simp(&problem, &simp, &DensityField::uniform(grid, problem.vf_target))?;
        let topology = binarize_to_volume(&trace.final_density, problem.vf_target);
        let (_, c) = analyze(&problem, &topology, &simp)?;
        problem.optimal_compliance = Some(c);
        out.push(DatasetRecord {
            id: format!("{i:05}"),
            problem,
            topology,
        });
    }
    Ok(out)
}
