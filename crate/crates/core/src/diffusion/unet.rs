//! Two-level 3D U-Net noise predictor with a hand-written backward pass.
//!
//! ```text
//! x ─ conv+t ─ conv ─┬─ pool ─ conv+t ─ conv ─┬─ pool ─ conv+t ─ conv ─ up ─┐
//!                    │                        └────────── concat ───────────┤
//!                    │                                           conv+t ─ up ┤
//!                    └──────────────────────── concat ──────────────────────┤
//!                                                             conv+t ─ conv ─ ε̂
//! ```
//!
//! Every hidden convolution is followed by SiLU. "+t" adds a per-channel bias
//! computed from the sinusoidal timestep embedding by a stage-specific linear
//! map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nn::{
    avg_pool, avg_pool_backward, conv3d_backward, conv3d_forward, silu, silu_grad, timestep_embedding,
    upsample, upsample_backward,
};
use super::DiffusionError;

/// Shape of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arch {
    /// Voxels per side of the input grid; divisible by 4.
    pub dim: usize,
    /// Channel widths at full, half and quarter resolution.
    pub channels: [usize; 3],
    /// Sinusoidal embedding width (even).
    pub temb_dim: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            dim: 16,
            channels: [8, 16, 32],
            temb_dim: 16,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.dim < 4 || self.dim % 4 != 0 {
            return Err(DiffusionError::Arch(format!("dim {} must be a positive multiple of 4", self.dim)));
        }
        if self.channels.iter().any(|c| *c == 0) || self.temb_dim == 0 || self.temb_dim % 2 != 0 {
            return Err(DiffusionError::Arch("channels must be positive and temb_dim even".into()));
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        let [a, b, c] = self.channels;
        format!("unet3d dim={} channels={a},{b},{c} temb={}", self.dim, self.temb_dim)
    }

    fn convs(&self) -> [(usize, usize); CONVS] {
        let [c0, c1, c2] = self.channels;
        [
            (1, c0),
            (c0, c0),
            (c0, c1),
            (c1, c1),
            (c1, c2),
            (c2, c2),
            (c2 + c1, c1),
            (c1 + c0, c0),
            (c0, 1),
        ]
    }

    fn temb_widths(&self) -> [usize; STAGES] {
        let [c0, c1, c2] = self.channels;
        [c0, c1, c2, c1, c0]
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

const CONVS: usize = 9;
const STAGES: usize = 5;
// Indices into the conv table.
const E0A: usize = 0;
const E0B: usize = 1;
const E1A: usize = 2;
const E1B: usize = 3;
const MA: usize = 4;
const MB: usize = 5;
const D1: usize = 6;
const D0: usize = 7;
const OUT: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Slot {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Slot {
    fn weight<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.rows * self.cols]
    }
    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b..self.b + self.rows]
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    conv: [Slot; CONVS],
    temb: [Slot; STAGES],
    total: usize,
}

impl Layout {
    fn new(arch: &Arch) -> Self {
        let mut off = 0;
        let mut slot = |rows: usize, cols: usize| {
            let s = Slot { w: off, b: off + rows * cols, rows, cols };
            off += rows * cols + rows;
            s
        };
        let conv = arch.convs().map(|(cin, cout)| slot(cout, cin * 27));
        let temb = arch.temb_widths().map(|c| slot(c, arch.temb_dim));
        Self { conv, temb, total: off }
    }
}

/// Activations kept for the backward pass; buffers are reused across calls.
#[derive(Debug, Default, Clone)]
pub struct Cache {
    emb: Vec<f64>,
    temb: [Vec<f64>; STAGES],
    cols: [Vec<f64>; CONVS],
    /// Pre-activation outputs of the hidden convolutions.
    pre: [Vec<f64>; CONVS],
    act: [Vec<f64>; CONVS],
    pool0: Vec<f64>,
    pool1: Vec<f64>,
    cat1: Vec<f64>,
    cat0: Vec<f64>,
    out: Vec<f64>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

/// Noise-prediction network `ε̂(x_t, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    arch: Arch,
    params: Vec<f64>,
}

impl Denoiser {
    /// Uniform fan-in initialisation, biases zero.
    pub fn new(arch: Arch, seed: u64) -> Result<Self, DiffusionError> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in layout.conv.iter().chain(layout.temb.iter()) {
            let bound = 1.0 / (s.cols as f64).sqrt();
            for w in &mut params[s.w..s.w + s.rows * s.cols] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Arch, params: Vec<f64>) -> Result<Self, DiffusionError> {
        arch.validate()?;
        let want = arch.param_count();
        if params.len() != want {
            return Err(DiffusionError::Shape { expected: want, got: params.len() });
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn voxels(&self) -> usize {
        self.arch.dim.pow(3)
    }

    /// Noise prediction for one grid.
    pub fn predict(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut cache = Cache::default();
        self.forward(x, t, &mut cache);
        cache.out
    }

    /// Forward pass, leaving activations and the output in `cache`.
    pub fn forward(&self, x: &[f64], t: usize, cache: &mut Cache) {
        let l = Layout::new(&self.arch);
        let p = &self.params;
        let [c0, c1, c2] = self.arch.channels;
        let d = self.arch.dim;
        let (h, q) = (d / 2, d / 4);
        assert_eq!(x.len(), d * d * d, "input grid has wrong size");

        cache.emb = timestep_embedding(t, self.arch.temb_dim);
        for (s, slot) in l.temb.iter().enumerate() {
            let tb = &mut cache.temb[s];
            tb.clear();
            tb.extend_from_slice(slot.bias(p));
            let w = slot.weight(p);
            for (r, v) in tb.iter_mut().enumerate() {
                *v += w[r * slot.cols..(r + 1) * slot.cols]
                    .iter()
                    .zip(&cache.emb)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }

        let Cache { temb, cols, pre, act, pool0, pool1, cat1, cat0, out, .. } = cache;
        let conv = |i: usize, input: &[f64], side: usize, col: &mut Vec<f64>, dst: &mut Vec<f64>| {
            let s = l.conv[i];
            conv3d_forward(input, s.cols / 27, s.rows, side, s.weight(p), s.bias(p), col, dst);
        };
        let hidden = |pre: &mut Vec<f64>, act: &mut Vec<f64>, tb: Option<&[f64]>, side: usize| {
            let n = side * side * side;
            if let Some(tb) = tb {
                for (ch, b) in tb.iter().enumerate() {
                    pre[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v += b);
                }
            }
            act.clear();
            act.extend(pre.iter().map(|v| silu(*v)));
        };

        conv(E0A, x, d, &mut cols[E0A], &mut pre[E0A]);
        hidden(&mut pre[E0A], &mut act[E0A], Some(&temb[0]), d);
        conv(E0B, &act[E0A], d, &mut cols[E0B], &mut pre[E0B]);
        hidden(&mut pre[E0B], &mut act[E0B], None, d);
        avg_pool(&act[E0B], c0, d, pool0);

        conv(E1A, pool0, h, &mut cols[E1A], &mut pre[E1A]);
        hidden(&mut pre[E1A], &mut act[E1A], Some(&temb[1]), h);
        conv(E1B, &act[E1A], h, &mut cols[E1B], &mut pre[E1B]);
        hidden(&mut pre[E1B], &mut act[E1B], None, h);
        avg_pool(&act[E1B], c1, h, pool1);

        conv(MA, pool1, q, &mut cols[MA], &mut pre[MA]);
        hidden(&mut pre[MA], &mut act[MA], Some(&temb[2]), q);
        conv(MB, &act[MA], q, &mut cols[MB], &mut pre[MB]);
        hidden(&mut pre[MB], &mut act[MB], None, q);

        let nh = h * h * h;
        cat1.clear();
        cat1.resize((c2 + c1) * nh, 0.0);
        upsample(&act[MB], c2, q, &mut cat1[..c2 * nh]);
        cat1[c2 * nh..].copy_from_slice(&act[E1B]);
        conv(D1, cat1, h, &mut cols[D1], &mut pre[D1]);
        hidden(&mut pre[D1], &mut act[D1], Some(&temb[3]), h);

        let n = d * d * d;
        cat0.clear();
        cat0.resize((c1 + c0) * n, 0.0);
        upsample(&act[D1], c1, h, &mut cat0[..c1 * n]);
        cat0[c1 * n..].copy_from_slice(&act[E0B]);
        conv(D0, cat0, d, &mut cols[D0], &mut pre[D0]);
        hidden(&mut pre[D0], &mut act[D0], Some(&temb[4]), d);

        conv(OUT, &act[D0], d, &mut cols[OUT], out);
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output` and the cache of
    /// the matching forward pass.
    pub fn backward(&self, cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let l = Layout::new(&self.arch);
        let p = &self.params;
        let [c0, c1, c2] = self.arch.channels;
        let d = self.arch.dim;
        let (h, q) = (d / 2, d / 4);
        let (n, nh) = (d * d * d, h * h * h);

        let mut d_temb: [Vec<f64>; STAGES] = Default::default();
        let mut d_col = Vec::new();
        let mut d_in = Vec::new();

        // conv backward that splits `grad` into the slot's weight and bias
        let conv_back = |i: usize, dy: &[f64], side: usize, want_input: bool, grad: &mut [f64], d_col: &mut Vec<f64>, d_in: &mut Vec<f64>| {
            let s = l.conv[i];
            let (gw, rest) = grad[s.w..].split_at_mut(s.rows * s.cols);
            let gb = &mut rest[..s.rows];
            conv3d_backward(
                dy,
                &cache.cols[i],
                s.cols / 27,
                s.rows,
                side,
                s.weight(p),
                gw,
                gb,
                want_input.then_some((d_col, d_in)),
            );
        };
        // dL/dpre from dL/dact; also records the per-channel temb gradient
        let through_silu = |i: usize, d_act: &[f64], side: usize, stage: Option<usize>, d_temb: &mut [Vec<f64>; STAGES]| -> Vec<f64> {
            let m = side * side * side;
            let dy: Vec<f64> = d_act
                .iter()
                .zip(&cache.pre[i])
                .map(|(g, x)| g * silu_grad(*x))
                .collect();
            if let Some(s) = stage {
                d_temb[s] = dy.chunks(m).map(|c| c.iter().sum()).collect();
            }
            dy
        };

        conv_back(OUT, d_out, d, true, grad, &mut d_col, &mut d_in);
        let dy = through_silu(D0, &d_in, d, Some(4), &mut d_temb);
        conv_back(D0, &dy, d, true, grad, &mut d_col, &mut d_in);
        let d_cat0 = std::mem::take(&mut d_in);
        let mut d_skip0 = d_cat0[c1 * n..].to_vec();
        let mut d_up = Vec::new();
        upsample_backward(&d_cat0[..c1 * n], c1, h, &mut d_up);

        let dy = through_silu(D1, &d_up, h, Some(3), &mut d_temb);
        conv_back(D1, &dy, h, true, grad, &mut d_col, &mut d_in);
        let d_cat1 = std::mem::take(&mut d_in);
        let mut d_skip1 = d_cat1[c2 * nh..].to_vec();
        upsample_backward(&d_cat1[..c2 * nh], c2, q, &mut d_up);

        let dy = through_silu(MB, &d_up, q, None, &mut d_temb);
        conv_back(MB, &dy, q, true, grad, &mut d_col, &mut d_in);
        let dy = through_silu(MA, &d_in, q, Some(2), &mut d_temb);
        conv_back(MA, &dy, q, true, grad, &mut d_col, &mut d_in);
        let mut pooled = vec![0.0; c1 * nh];
        avg_pool_backward(&d_in, c1, h, &mut pooled);
        d_skip1.iter_mut().zip(&pooled).for_each(|(a, b)| *a += b);

        let dy = through_silu(E1B, &d_skip1, h, None, &mut d_temb);
        conv_back(E1B, &dy, h, true, grad, &mut d_col, &mut d_in);
        let dy = through_silu(E1A, &d_in, h, Some(1), &mut d_temb);
        conv_back(E1A, &dy, h, true, grad, &mut d_col, &mut d_in);
        let mut pooled = vec![0.0; c0 * n];
        avg_pool_backward(&d_in, c0, d, &mut pooled);
        d_skip0.iter_mut().zip(&pooled).for_each(|(a, b)| *a += b);

        let dy = through_silu(E0B, &d_skip0, d, None, &mut d_temb);
        conv_back(E0B, &dy, d, true, grad, &mut d_col, &mut d_in);
        let dy = through_silu(E0A, &d_in, d, Some(0), &mut d_temb);
        conv_back(E0A, &dy, d, false, grad, &mut d_col, &mut d_in);

        for (s, slot) in l.temb.iter().enumerate() {
            for (r, g) in d_temb[s].iter().enumerate() {
                let row = &mut grad[slot.w + r * slot.cols..slot.w + (r + 1) * slot.cols];
                row.iter_mut().zip(&cache.emb).for_each(|(w, e)| *w += g * e);
                grad[slot.b + r] += g;
            }
        }
    }
}
