//! Design metrics for generated topologies and their aggregation into
//! report rows.

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::density::DensityField;
use crate::error::{invalid, Error, Result};
use crate::fea::{BoundaryConditions, Loads};

/// `100·|thresholded mean − vf| / vf`.
pub fn volume_fraction_error(topology: &DensityField, vf_target: f64) -> Result<f64> {
    if !(vf_target > 0.0) {
        return Err(invalid(format!("volume fraction target must be positive, got {vf_target}")));
    }
    Ok(100.0 * (topology.thresholded_mean() - vf_target).abs() / vf_target)
}

/// Signed `100·(c_gen − c_opt) / c_opt`.
pub fn compliance_error(c_gen: f64, c_opt: f64) -> Result<f64> {
    if !(c_opt > 0.0) || !c_opt.is_finite() {
        return Err(Error::InvalidBaseline(c_opt));
    }
    Ok(100.0 * (c_gen - c_opt) / c_opt)
}

pub fn floating_material(topology: &DensityField, loads: &Loads, bcs: &BoundaryConditions) -> bool {
    floating_material_with(topology, loads, bcs, Connectivity::Eight)
}

/// True iff some solid component touches neither a loaded nor a fixed
/// node's neighbourhood.
pub fn floating_material_with(
    topology: &DensityField,
    loads: &Loads,
    bcs: &BoundaryConditions,
    connectivity: Connectivity,
) -> bool {
    let grid = topology.grid;
    let labels = label_components(&grid, &topology.solid_mask(), connectivity);
    let anchors: Vec<usize> = loads
        .nodes()
        .chain(bcs.fixed_nodes())
        .flat_map(|n| grid.elements_around_node(n))
        .collect();
    !labels.unanchored(&anchors).is_empty()
}

/// True iff some load node has no solid element around it.
pub fn load_disrespect(topology: &DensityField, loads: &Loads) -> bool {
    let solid = topology.solid_mask();
    loads
        .nodes()
        .any(|n| topology.grid.elements_around_node(n).into_iter().all(|e| !solid[e]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub id: String,
    pub compliance: f64,
    pub compliance_opt: f64,
    pub ce_percent: f64,
    pub vfe_percent: f64,
    pub fm: bool,
    pub ld: bool,
    pub sampling_s: f64,
    pub processing_s: f64,
    pub inference_s: f64,
}

impl EvaluationRecord {
    /// Scores `topology` against the problem's loads, supports and baseline.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        id: impl Into<String>,
        topology: &DensityField,
        compliance: f64,
        compliance_opt: f64,
        vf_target: f64,
        loads: &Loads,
        bcs: &BoundaryConditions,
        sampling_s: f64,
        processing_s: f64,
    ) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            compliance,
            compliance_opt,
            ce_percent: compliance_error(compliance, compliance_opt)?,
            vfe_percent: volume_fraction_error(topology, vf_target)?,
            fm: floating_material(topology, loads, bcs),
            ld: load_disrespect(topology, loads),
            sampling_s,
            processing_s,
            inference_s: sampling_s + processing_s,
        })
    }

    pub fn manufacturable(&self) -> bool {
        manufacturable(self)
    }
}

/// No floating material, no load disrespect and compliance below 100.
pub fn manufacturable(record: &EvaluationRecord) -> bool {
    !record.fm && !record.ld && record.compliance < 100.0
}

pub const CDF_CUTOFFS: [f64; 4] = [10.0, 25.0, 50.0, 100.0];

/// Fraction of compliances `≤ t` for each cutoff.
pub fn compliance_cdf(compliances: &[f64], cutoffs: &[f64]) -> Result<Vec<f64>> {
    if compliances.is_empty() {
        return Err(invalid("compliance CDF of an empty set"));
    }
    let n = compliances.len() as f64;
    Ok(cutoffs
        .iter()
        .map(|&t| compliances.iter().filter(|&&c| c <= t).count() as f64 / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskName {
    #[serde(rename = "task-1")]
    Task1,
    #[serde(rename = "task-2")]
    Task2,
    #[serde(rename = "task-3")]
    Task3,
}

impl TaskName {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskName::Task1 => "task-1",
            TaskName::Task2 => "task-2",
            TaskName::Task3 => "task-3",
        }
    }

    /// Problem tag the task draws from: in-distribution or out-of-distribution.
    pub fn problem_tag(&self) -> &'static str {
        match self {
            TaskName::Task1 => "in",
            TaskName::Task2 | TaskName::Task3 => "out",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub name: TaskName,
    pub filter_high_compliance: bool,
    pub compliance_cutoff: f64,
}

impl TaskSplit {
    pub fn task1() -> Self {
        Self {
            name: TaskName::Task1,
            filter_high_compliance: true,
            compliance_cutoff: 100.0,
        }
    }

    pub fn task2() -> Self {
        Self {
            name: TaskName::Task2,
            ..Self::task1()
        }
    }

    pub fn task3() -> Self {
        Self {
            name: TaskName::Task3,
            filter_high_compliance: false,
            compliance_cutoff: 100.0,
        }
    }

    pub fn all() -> [Self; 3] {
        [Self::task1(), Self::task2(), Self::task3()]
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::all().into_iter().find(|t| t.name.as_str() == s)
    }

    pub fn keeps(&self, r: &EvaluationRecord) -> bool {
        !self.filter_high_compliance || r.compliance <= self.compliance_cutoff
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub split: TaskName,
    pub n: usize,
    pub n_removed: usize,
    pub avg_c: f64,
    pub mdn_c: f64,
    pub ce_mean: f64,
    pub ce_median: f64,
    pub vfe_mean: f64,
    pub fm_percent: f64,
    pub ld_percent: f64,
    pub manufacturable_percent: f64,
    pub sampling_s: f64,
    pub processing_s: f64,
    pub inference_s: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn aggregate(records: &[EvaluationRecord], split: &TaskSplit) -> Result<Summary> {
    let kept: Vec<&EvaluationRecord> = records.iter().filter(|r| split.keeps(r)).collect();
    if kept.is_empty() {
        return Err(Error::EmptySplit(split.name.as_str().to_string()));
    }
    let col = |f: fn(&EvaluationRecord) -> f64| kept.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let pct = |f: fn(&EvaluationRecord) -> bool| 100.0 * kept.iter().filter(|r| f(r)).count() as f64 / kept.len() as f64;
    let c = col(|r| r.compliance);
    let ce = col(|r| r.ce_percent);
    Ok(Summary {
        split: split.name,
        n: kept.len(),
        n_removed: records.len() - kept.len(),
        avg_c: mean(&c),
        mdn_c: median(&c),
        ce_mean: mean(&ce),
        ce_median: median(&ce),
        vfe_mean: mean(&col(|r| r.vfe_percent)),
        fm_percent: pct(|r| r.fm),
        ld_percent: pct(|r| r.ld),
        manufacturable_percent: pct(manufacturable),
        sampling_s: mean(&col(|r| r.sampling_s)),
        processing_s: mean(&col(|r| r.processing_s)),
        inference_s: mean(&col(|r| r.inference_s)),
    })
}

/// Metric columns compared across models, all lower-is-better.
fn gap_columns(s: &Summary, use_median: bool) -> [f64; 6] {
    let (c, ce) = if use_median { (s.mdn_c, s.ce_median) } else { (s.avg_c, s.ce_mean) };
    [c, ce, s.vfe_mean, s.fm_percent, s.processing_s, s.inference_s]
}

/// Per model: mean of min-max normalized metric columns, so 0 means best on
/// every column. Returns `(avg_gap, mdn_gap)`.
pub fn design_gap(summaries: &[Summary]) -> Vec<(f64, f64)> {
    let gap = |use_median: bool| -> Vec<f64> {
        let rows: Vec<[f64; 6]> = summaries.iter().map(|s| gap_columns(s, use_median)).collect();
        let mut out = vec![0.0; rows.len()];
        for k in 0..6 {
            let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            for (o, r) in out.iter_mut().zip(&rows) {
                let span = hi - lo;
                *o += if span > 0.0 && span.is_finite() { (r[k] - lo) / span } else { 0.0 };
            }
        }
        out.iter().map(|g| g / 6.0).collect::<Vec<f64>>()
    };
    gap(false).into_iter().zip(gap(true)).collect()
}

/// Mean over metric columns of each model's rank (1 = best, ties share the
/// average rank).
pub fn average_rank(summaries: &[Summary]) -> Vec<f64> {
    let rows: Vec<[f64; 6]> = summaries.iter().map(|s| gap_columns(s, false)).collect();
    let mut out = vec![0.0; rows.len()];
    for k in 0..6 {
        for (i, r) in rows.iter().enumerate() {
            let better = rows.iter().filter(|o| o[k] < r[k]).count() as f64;
            let ties = rows.iter().filter(|o| o[k] == r[k]).count() as f64;
            out[i] += better + (ties + 1.0) / 2.0;
        }
    }
    out.iter().map(|r| r / 6.0).collect()
}
