use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{invalid, Error, Result};
use crate::kernels::ConditioningStack;
use crate::tensor_io::{Tensor, TensorFile};

/// Noise predictor ε_θ(z_t, t, c). `z` is one value per element of the
/// conditioning grid; the output has the same length.
pub trait Denoiser {
    fn predict(&self, z: &[f64], t: usize, cond: &ConditioningStack) -> Vec<f64>;

    /// Conditioning channels the model was built for, if it cares.
    fn cond_channels(&self) -> Option<usize> {
        None
    }
}

impl<F> Denoiser for F
where
    F: Fn(&[f64], usize, &ConditioningStack) -> Vec<f64>,
{
    fn predict(&self, z: &[f64], t: usize, cond: &ConditioningStack) -> Vec<f64> {
        self(z, t, cond)
    }
}

/// A denoiser with a flat parameter vector and its own reverse pass.
pub trait TrainableDenoiser: Denoiser {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// `weight · mean((ε_θ − eps)²)`; adds its parameter gradient to `grad`.
    fn loss_grad(
        &self,
        z: &[f64],
        t: usize,
        cond: &ConditioningStack,
        eps: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> f64;
}

pub(crate) fn check_shapes(
    denoiser: &(impl Denoiser + ?Sized),
    z: &[f64],
    cond: &ConditioningStack,
) -> Result<()> {
    if z.len() != cond.grid.n_elements() {
        return Err(invalid(format!(
            "latent has {} values, conditioning grid has {}",
            z.len(),
            cond.grid.n_elements()
        )));
    }
    if let Some(c) = denoiser.cond_channels() {
        if c != cond.n_channels() {
            return Err(invalid(format!(
                "denoiser expects {c} conditioning channels, got {}",
                cond.n_channels()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub cond_channels: usize,
    pub hidden: usize,
    /// Width of the sinusoidal timestep features (even).
    pub embed_dim: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        Self {
            cond_channels: 6,
            hidden: 16,
            embed_dim: 16,
        }
    }
}

impl ConvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfiguration(format!(
                "conv denoiser needs hidden > 0 and an even embed_dim > 0 (got {} / {})",
                self.hidden, self.embed_dim
            )));
        }
        Ok(())
    }

    fn layer_dims(&self) -> [(usize, usize); 3] {
        let h = self.hidden;
        [(1 + self.cond_channels, h), (h, h), (h, 1)]
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    cin: usize,
    cout: usize,
    w: usize,
    b: usize,
    wt: usize,
}

/// Three 3×3 convolutions (zero padding, SiLU between) over the latent
/// stacked with the conditioning channels. The timestep enters every layer
/// as a per-channel bias projected from sinusoidal features.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvDenoiser {
    pub config: ConvConfig,
    params: Vec<f64>,
}

struct Cache {
    input: Vec<f64>,
    pre: [Vec<f64>; 2],
    act: [Vec<f64>; 2],
    out: Vec<f64>,
    emb: Vec<f64>,
}

impl ConvDenoiser {
    pub fn new(config: ConvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; Self::param_count(&config)];
        let layers = Self::offsets(&config);
        for (l, o) in layers.iter().enumerate() {
            let fan_in = (o.cin * 9) as f64;
            let std = if l == 2 { (0.5 / fan_in).sqrt() } else { (2.0 / fan_in).sqrt() };
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[o.w..o.w + o.cout * o.cin * 9] {
                *p = normal.sample(&mut rng);
            }
            let tnorm = Normal::new(0.0, (1.0 / config.embed_dim as f64).sqrt()).expect("positive std");
            for p in &mut params[o.wt..o.wt + o.cout * config.embed_dim] {
                *p = tnorm.sample(&mut rng);
            }
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: ConvConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != Self::param_count(&config) {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                Self::param_count(&config),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn param_count(config: &ConvConfig) -> usize {
        config
            .layer_dims()
            .iter()
            .map(|(cin, cout)| cout * cin * 9 + cout + cout * config.embed_dim)
            .sum()
    }

    fn offsets(config: &ConvConfig) -> [LayerOffsets; 3] {
        let mut at = 0;
        config.layer_dims().map(|(cin, cout)| {
            let w = at;
            let b = w + cout * cin * 9;
            let wt = b + cout;
            at = wt + cout * config.embed_dim;
            LayerOffsets { cin, cout, w, b, wt }
        })
    }

    /// Sinusoidal features of the training timestep.
    pub fn embedding(&self, t: usize) -> Vec<f64> {
        let d = self.config.embed_dim;
        let mut e = vec![0.0; d];
        for j in 0..d / 2 {
            let freq = 10000f64.powf(-((2 * j) as f64) / d as f64);
            let a = t as f64 * freq;
            e[2 * j] = a.sin();
            e[2 * j + 1] = a.cos();
        }
        e
    }

    fn channel_bias(&self, o: &LayerOffsets, emb: &[f64]) -> Vec<f64> {
        let d = emb.len();
        (0..o.cout)
            .map(|c| {
                let row = &self.params[o.wt + c * d..o.wt + (c + 1) * d];
                self.params[o.b + c] + row.iter().zip(emb).map(|(w, e)| w * e).sum::<f64>()
            })
            .collect()
    }

    fn forward(&self, z: &[f64], t: usize, cond: &ConditioningStack) -> Cache {
        let (h, w) = (cond.grid.nely, cond.grid.nelx);
        let n = h * w;
        assert_eq!(z.len(), n, "latent shape");
        assert_eq!(cond.n_channels(), self.config.cond_channels, "conditioning channels");
        let mut input = Vec::with_capacity(n * (1 + cond.n_channels()));
        input.extend_from_slice(z);
        input.extend_from_slice(&cond.data);
        let emb = self.embedding(t);
        let layers = Self::offsets(&self.config);
        let mut pre: [Vec<f64>; 2] = Default::default();
        let mut act: [Vec<f64>; 2] = Default::default();
        let mut x = &input;
        for l in 0..2 {
            let o = &layers[l];
            let mut a = vec![0.0; o.cout * n];
            conv3x3(x, o.cin, h, w, &self.params[o.w..o.b], o.cout, &self.channel_bias(o, &emb), &mut a);
            act[l] = a.iter().map(|&v| silu(v)).collect();
            pre[l] = a;
            x = &act[l];
        }
        let o = &layers[2];
        let mut out = vec![0.0; n];
        conv3x3(&act[1], o.cin, h, w, &self.params[o.w..o.b], 1, &self.channel_bias(o, &emb), &mut out);
        Cache {
            input,
            pre,
            act,
            out,
            emb,
        }
    }

    fn backward(&self, cache: &Cache, dout: &[f64], h: usize, w: usize, grad: &mut [f64]) {
        let layers = Self::offsets(&self.config);
        let n = h * w;
        let mut delta = dout.to_vec();
        for l in (0..3).rev() {
            let o = &layers[l];
            let x = if l == 0 { &cache.input } else { &cache.act[l - 1] };
            let d = cache.emb.len();
            for c in 0..o.cout {
                let s: f64 = delta[c * n..(c + 1) * n].iter().sum();
                grad[o.b + c] += s;
                for (g, e) in grad[o.wt + c * d..o.wt + (c + 1) * d].iter_mut().zip(&cache.emb) {
                    *g += s * e;
                }
            }
            let mut dx = if l > 0 { vec![0.0; o.cin * n] } else { Vec::new() };
            conv3x3_backward(
                x,
                o.cin,
                h,
                w,
                &self.params[o.w..o.b],
                o.cout,
                &delta,
                &mut grad[o.w..o.b],
                if l > 0 { Some(&mut dx) } else { None },
            );
            if l > 0 {
                for (g, &a) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                    *g *= silu_grad(a);
                }
                delta = dx;
            }
        }
    }

    pub fn to_tensor_file(&self, schedule_steps: usize) -> Result<TensorFile> {
        let mut f = TensorFile::new(json!({
            "kind": "conv_denoiser",
            "config": self.config,
            "schedule": {"kind": "linear", "steps": schedule_steps},
        }));
        f.push(Tensor::new("params", vec![self.params.len()], self.params.clone())?);
        Ok(f)
    }

    /// Returns the model and the training-schedule length stored with it.
    pub fn from_tensor_file(file: &TensorFile) -> Result<(Self, usize)> {
        let meta = &file.metadata;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("conv_denoiser") {
            return Err(invalid("checkpoint is not a conv denoiser"));
        }
        let config: ConvConfig = serde_json::from_value(meta["config"].clone())?;
        let steps = meta["schedule"]["steps"]
            .as_u64()
            .ok_or_else(|| invalid("checkpoint lacks a schedule descriptor"))? as usize;
        let params = file.require("params")?.data.clone();
        Ok((Self::from_params(config, params)?, steps))
    }
}

impl Denoiser for ConvDenoiser {
    fn predict(&self, z: &[f64], t: usize, cond: &ConditioningStack) -> Vec<f64> {
        self.forward(z, t, cond).out
    }

    fn cond_channels(&self) -> Option<usize> {
        Some(self.config.cond_channels)
    }
}

impl TrainableDenoiser for ConvDenoiser {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_grad(
        &self,
        z: &[f64],
        t: usize,
        cond: &ConditioningStack,
        eps: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let cache = self.forward(z, t, cond);
        let n = z.len() as f64;
        let mut loss = 0.0;
        let dout: Vec<f64> = cache
            .out
            .iter()
            .zip(eps)
            .map(|(p, e)| {
                let r = p - e;
                loss += r * r;
                2.0 * weight * r / n
            })
            .collect();
        self.backward(&cache, &dout, cond.grid.nely, cond.grid.nelx, grad);
        weight * loss / n
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Valid range of output index `i` such that `i + k - 1` is inside `0..len`.
fn tap_range(k: usize, len: usize) -> (usize, usize) {
    (if k == 0 { 1 } else { 0 }, if k == 2 { len - 1 } else { len })
}

#[allow(clippy::too_many_arguments)]
fn conv3x3(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], cout: usize, bias: &[f64], out: &mut [f64]) {
    let n = h * w;
    for o in 0..cout {
        let dst = &mut out[o * n..(o + 1) * n];
        dst.fill(bias[o]);
        for i in 0..cin {
            let src = &x[i * n..(i + 1) * n];
            for dr in 0..3 {
                let (r0, r1) = tap_range(dr, h);
                for dc in 0..3 {
                    let k = wt[((o * cin + i) * 3 + dr) * 3 + dc];
                    let (c0, c1) = tap_range(dc, w);
                    for r in r0..r1 {
                        let sr = (r + dr - 1) * w;
                        let drow = &mut dst[r * w + c0..r * w + c1];
                        let srow = &src[sr + c0 + dc - 1..sr + c1 + dc - 1];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += k * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wt: &[f64],
    cout: usize,
    dout: &[f64],
    dwt: &mut [f64],
    mut dx: Option<&mut Vec<f64>>,
) {
    let n = h * w;
    for o in 0..cout {
        let g = &dout[o * n..(o + 1) * n];
        for i in 0..cin {
            let src = &x[i * n..(i + 1) * n];
            for dr in 0..3 {
                let (r0, r1) = tap_range(dr, h);
                for dc in 0..3 {
                    let idx = ((o * cin + i) * 3 + dr) * 3 + dc;
                    let (c0, c1) = tap_range(dc, w);
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let sr = (r + dr - 1) * w;
                        let grow = &g[r * w + c0..r * w + c1];
                        let srow = &src[sr + c0 + dc - 1..sr + c1 + dc - 1];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dwt[idx] += acc;
                    if let Some(dx) = dx.as_deref_mut() {
                        let k = wt[idx];
                        let dsrc = &mut dx[i * n..(i + 1) * n];
                        for r in r0..r1 {
                            let sr = (r + dr - 1) * w;
                            let grow = &g[r * w + c0..r * w + c1];
                            let drow = &mut dsrc[sr + c0 + dc - 1..sr + c1 + dc - 1];
                            for (d, a) in drow.iter_mut().zip(grow) {
                                *d += k * a;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fea::Grid;
    use crate::kernels::ChannelName;

    fn stack(grid: Grid, channels: usize) -> ConditioningStack {
        let mut s = ConditioningStack::empty(grid);
        let names = [ChannelName::Vf, ChannelName::LoadX, ChannelName::LoadY];
        for c in 0..channels {
            let v = (0..grid.n_elements()).map(|e| ((e * 7 + c * 3) % 5) as f64 / 5.0).collect();
            s.push(names[c], v);
        }
        s
    }

    #[test]
    fn conv_matches_direct_definition() {
        let (h, w, cin, cout) = (3, 4, 2, 2);
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let wt: Vec<f64> = (0..cout * cin * 9).map(|i| (i as f64 * 0.11).cos()).collect();
        let bias = [0.5, -0.25];
        let mut out = vec![0.0; cout * h * w];
        conv3x3(&x, cin, h, w, &wt, cout, &bias, &mut out);
        for o in 0..cout {
            for r in 0..h as isize {
                for c in 0..w as isize {
                    let mut s = bias[o];
                    for i in 0..cin {
                        for dr in -1..=1isize {
                            for dc in -1..=1isize {
                                let (rr, cc) = (r + dr, c + dc);
                                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                    continue;
                                }
                                let k = wt[((o * cin + i) * 3 + (dr + 1) as usize) * 3 + (dc + 1) as usize];
                                s += k * x[i * h * w + rr as usize * w + cc as usize];
                            }
                        }
                    }
                    let got = out[o * h * w + r as usize * w + c as usize];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn output_shape_matches_latent() {
        let grid = Grid::new(5, 3).unwrap();
        let m = ConvDenoiser::new(ConvConfig { cond_channels: 2, hidden: 4, embed_dim: 4 }, 1).unwrap();
        let z = vec![0.1; 15];
        assert_eq!(m.predict(&z, 7, &stack(grid, 2)).len(), 15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ConvDenoiser::new(ConvConfig { cond_channels: 1, hidden: 3, embed_dim: 2 }, 9).unwrap();
        let f = m.to_tensor_file(100).unwrap();
        let bytes = f.to_bytes().unwrap();
        let (back, steps) = ConvDenoiser::from_tensor_file(&TensorFile::from_bytes(&bytes, "m").unwrap()).unwrap();
        assert_eq!(steps, 100);
        assert_eq!(back, m);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let grid = Grid::new(4, 4).unwrap();
        let cond = stack(grid, 2);
        let mut m = ConvDenoiser::new(ConvConfig { cond_channels: 2, hidden: 3, embed_dim: 4 }, 3).unwrap();
        // nonzero biases so every SiLU sits away from the origin
        for p in m.params_mut().iter_mut() {
            *p += 0.05;
        }
        let z: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let eps: Vec<f64> = (0..16).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut grad = vec![0.0; m.params().len()];
        m.loss_grad(&z, 17, &cond, &eps, 1.0, &mut grad);
        let loss = |m: &ConvDenoiser| {
            let out = m.predict(&z, 17, &cond);
            out.iter().zip(&eps).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 16.0
        };
        let h = 1e-6;
        for k in 0..grad.len() {
            let mut mp = m.clone();
            mp.params_mut()[k] += h;
            let mut mm = m.clone();
            mm.params_mut()[k] -= h;
            let fd = (loss(&mp) - loss(&mm)) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(grad[k].abs()) + 1e-9;
            assert!((fd - grad[k]).abs() <= tol, "param {k}: fd {fd} analytic {}", grad[k]);
        }
    }
}
