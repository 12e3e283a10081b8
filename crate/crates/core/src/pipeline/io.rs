//! Topology, conditioning-stack and problem files.
//!
//! A topology is a tensor file holding `density` with shape `[nely, nelx]`.
//! The problem it was generated for, when known, sits next to it as a JSON
//! sidecar with the same stem (`topo.tgt` + `topo.json`).

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::density::DensityField;
use crate::error::{invalid, Error, Result};
use crate::fea::Grid;
use crate::kernels::{ChannelName, ConditioningStack};
use crate::problem::ProblemSpec;
use crate::tensor_io::{Tensor, TensorFile};

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn topology_file(density: &DensityField) -> Result<TensorFile> {
    let g = density.grid;
    let mut f = TensorFile::new(json!({"kind": "topology", "nelx": g.nelx, "nely": g.nely}));
    f.push(Tensor::new("density", vec![g.nely, g.nelx], density.values.clone())?);
    Ok(f)
}

pub fn density_from_file(file: &TensorFile) -> Result<DensityField> {
    let t = file.require("density")?;
    if t.shape.len() != 2 {
        return Err(invalid(format!("density tensor has rank {}, expected 2", t.shape.len())));
    }
    DensityField::new(Grid::new(t.shape[1], t.shape[0])?, t.data.clone())
}

pub fn save_topology(path: &Path, density: &DensityField, problem: Option<&ProblemSpec>) -> Result<()> {
    topology_file(density)?.write(path)?;
    if let Some(p) = problem {
        write_problem(&sidecar_path(path), p)?;
    }
    Ok(())
}

/// Reads a topology and its sidecar problem, if one exists.
pub fn load_topology(path: &Path) -> Result<(DensityField, Option<ProblemSpec>)> {
    let density = density_from_file(&TensorFile::read(path)?)?;
    let side = sidecar_path(path);
    let problem = if side.exists() {
        let p = read_problem(&side)?;
        if p.grid != density.grid {
            return Err(Error::Validation {
                record: path.display().to_string(),
                message: "sidecar grid differs from topology".into(),
            });
        }
        Some(p)
    } else {
        None
    };
    Ok((density, problem))
}

pub fn write_problem(path: &Path, problem: &ProblemSpec) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(problem)?)?;
    Ok(())
}

/// Parses and validates a problem file. Syntax errors report the byte offset.
pub fn read_problem(path: &Path) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path)?;
    let problem: ProblemSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        offset: line_col_offset(&text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    problem.validate().map_err(|e| Error::Validation {
        record: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(problem)
}

fn line_col_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + column.saturating_sub(1)).min(text.len())
}

pub fn stack_file(stack: &ConditioningStack) -> Result<TensorFile> {
    let g = stack.grid;
    let names: Vec<&str> = stack.names.iter().map(|c| c.as_str()).collect();
    let mut f = TensorFile::new(json!({
        "kind": "conditioning",
        "channels": names,
        "nelx": g.nelx,
        "nely": g.nely,
    }));
    f.push(Tensor::new("stack", vec![stack.n_channels(), g.nely, g.nelx], stack.data.clone())?);
    Ok(f)
}

pub fn stack_from_file(file: &TensorFile) -> Result<ConditioningStack> {
    let t = file.require("stack")?;
    if t.shape.len() != 3 {
        return Err(invalid("stack tensor must have shape [channels, nely, nelx]"));
    }
    let grid = Grid::new(t.shape[2], t.shape[1])?;
    let names = file.metadata["channels"]
        .as_array()
        .ok_or_else(|| invalid("stack file lacks channel names"))?
        .iter()
        .map(|v| v.as_str().and_then(ChannelName::parse).ok_or_else(|| invalid(format!("bad channel {v}"))))
        .collect::<Result<Vec<_>>>()?;
    if names.len() != t.shape[0] {
        return Err(invalid("channel names do not match stack depth"));
    }
    Ok(ConditioningStack {
        grid,
        names,
        data: t.data.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProblemSpec::cantilever(5, 3, 0.4).unwrap();
        let d = DensityField::new(p.grid, (0..15).map(|i| i as f64 / 14.0).collect()).unwrap();
        let path = dir.path().join("t.tgt");
        save_topology(&path, &d, Some(&p)).unwrap();
        let (back, prob) = load_topology(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(prob.unwrap(), p);
    }

    #[test]
    fn malformed_problem_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, "{\n  \"grid\": {\"nelx\": 4,,}\n}").unwrap();
        match read_problem(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 23),
            other => panic!("{other:?}"),
        }
    }
}
