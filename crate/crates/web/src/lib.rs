//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes and returns plain numbers, strings and `Vec<f64>` so the
//! same functions run natively under `cargo test`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

use topogen::kernels::{build_stack, ChannelName, KernelParams, KernelVariant, ModelVariant};
use topogen::simp::{refine, run_simp, SimpConfig};
use topogen::{BoundaryConditions, DensityField, Grid, Loads, ProblemSpec};

/// Left edge clamped, one unit load at node `(load_ix, load_iy)` pointing
/// `angle_deg` counter-clockwise from +x (−90 is straight down).
fn problem(nelx: usize, nely: usize, vf: f64, load_ix: usize, load_iy: usize, angle_deg: f64) -> Result<ProblemSpec, String> {
    let grid = Grid::new(nelx, nely).map_err(|e| e.to_string())?;
    if load_ix > nelx || load_iy > nely {
        return Err(format!("load node ({load_ix}, {load_iy}) outside the {nelx}x{nely} grid"));
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let bcs = BoundaryConditions::fix_nodes((0..=nely).map(|iy| grid.node(0, iy)), true, true);
    ProblemSpec::new(grid, Loads::single(grid.node(load_ix, load_iy), c, s), bcs, vf).map_err(|e| e.to_string())
}

/// Load and support kernels, concatenated: `2·nelx·nely` values, rows top to
/// bottom.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn kernel_fields(
    nelx: usize,
    nely: usize,
    load_ix: usize,
    load_iy: usize,
    angle_deg: f64,
    kernel: &str,
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>, String> {
    let p = problem(nelx, nely, 0.5, load_ix, load_iy, angle_deg)?;
    let variant: KernelVariant = kernel.parse().map_err(|e: topogen::Error| e.to_string())?;
    let params = KernelParams {
        alpha,
        beta,
        ..KernelParams::with_variant(variant)
    };
    params.validate().map_err(|e| e.to_string())?;
    let stack = build_stack(&p, ModelVariant::TopoDiffFf, None, &params).map_err(|e| e.to_string())?;
    let mut out = stack.channel(ChannelName::KernelLoad).ok_or("missing load kernel")?.to_vec();
    out.extend_from_slice(stack.channel(ChannelName::KernelBc).ok_or("missing support kernel")?);
    Ok(out)
}

#[wasm_bindgen]
pub struct Design {
    densities: Vec<f64>,
    compliances: Vec<f64>,
}

#[wasm_bindgen]
impl Design {
    /// Element densities, rows top to bottom.
    #[wasm_bindgen(getter)]
    pub fn densities(&self) -> Vec<f64> {
        self.densities.clone()
    }

    /// Compliance per iteration, ending with the final design's.
    #[wasm_bindgen(getter)]
    pub fn compliances(&self) -> Vec<f64> {
        self.compliances.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn compliance(&self) -> f64 {
        self.compliances.last().copied().unwrap_or(f64::NAN)
    }
}

#[wasm_bindgen]
pub fn optimize(
    nelx: usize,
    nely: usize,
    vf: f64,
    iters: usize,
    load_ix: usize,
    load_iy: usize,
    angle_deg: f64,
) -> Result<Design, String> {
    let p = problem(nelx, nely, vf, load_ix, load_iy, angle_deg)?;
    let cfg = SimpConfig::for_problem(&p).with_max_iters(iters);
    let trace = run_simp(&p, &cfg, &DensityField::uniform(p.grid, vf)).map_err(|e| e.to_string())?;
    let mut compliances = trace.compliances;
    compliances.push(trace.final_compliance);
    Ok(Design {
        densities: trace.final_density.values,
        compliances,
    })
}

/// Adds clipped Gaussian noise to `densities` and runs `iters` SIMP
/// iterations on the result. The first compliance is the noisy design's.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn refine_noisy(
    nelx: usize,
    nely: usize,
    vf: f64,
    densities: Vec<f64>,
    noise: f64,
    seed: u64,
    iters: usize,
    load_ix: usize,
    load_iy: usize,
    angle_deg: f64,
) -> Result<Design, String> {
    let p = problem(nelx, nely, vf, load_ix, load_iy, angle_deg)?;
    let noisy = DensityField::new(p.grid, perturb(densities, noise, seed)).map_err(|e| e.to_string())?;
    let trace = refine(&noisy, &p, iters).map_err(|e| e.to_string())?;
    let mut compliances = trace.compliances;
    if compliances.is_empty() {
        let (_, c) = topogen::simp::analyze(&p, &noisy, &SimpConfig::for_problem(&p)).map_err(|e| e.to_string())?;
        compliances.push(c);
    }
    compliances.push(trace.final_compliance);
    Ok(Design {
        densities: trace.final_density.values,
        compliances,
    })
}

/// Clipped Gaussian noise on a design; the same draw `refine_noisy` starts from.
#[wasm_bindgen]
pub fn perturb(densities: Vec<f64>, noise: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    densities
        .iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            (v + noise * n).clamp(1e-3, 1.0)
        })
        .collect()
}
