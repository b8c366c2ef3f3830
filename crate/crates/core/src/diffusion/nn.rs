//! Dense 3D building blocks on cubic, channel-major volumes.
//!
//! A volume with `c` channels and side `d` is a flat slice of `c * d^3`
//! values laid out `[channel][z][y][x]`.

/// Row-major `C = A·B + beta·C` with optional transposes of the stored
/// operands. `a` is `m×k` (or `k×m` when `trans_a`), `b` is `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access the strides can produce.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds 3×3×3 zero-padded neighbourhoods: `col` is `(c * 27) × d^3`.
pub fn im2col(input: &[f64], c: usize, d: usize, col: &mut Vec<f64>) {
    let n = d * d * d;
    col.clear();
    col.resize(c * 27 * n, 0.0);
    for ch in 0..c {
        let src = &input[ch * n..(ch + 1) * n];
        for kk in 0..27 {
            let (dz, dy, dx) = ((kk / 9) as isize - 1, ((kk / 3) % 3) as isize - 1, (kk % 3) as isize - 1);
            let dst = &mut col[(ch * 27 + kk) * n..(ch * 27 + kk + 1) * n];
            let (x0, x1) = valid_range(dx, d);
            for z in 0..d {
                let sz = z as isize + dz;
                if sz < 0 || sz >= d as isize {
                    continue;
                }
                for y in 0..d {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= d as isize {
                        continue;
                    }
                    let row = (z * d + y) * d;
                    let srow = (sz as usize * d + sy as usize) * d;
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[row + x0..row + x1].copy_from_slice(&src[srow + sx0..srow + sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `out` (`c × d^3`).
pub fn col2im(col: &[f64], c: usize, d: usize, out: &mut [f64]) {
    let n = d * d * d;
    out.iter_mut().for_each(|v| *v = 0.0);
    for ch in 0..c {
        let dst = &mut out[ch * n..(ch + 1) * n];
        for kk in 0..27 {
            let (dz, dy, dx) = ((kk / 9) as isize - 1, ((kk / 3) % 3) as isize - 1, (kk % 3) as isize - 1);
            let src = &col[(ch * 27 + kk) * n..(ch * 27 + kk + 1) * n];
            let (x0, x1) = valid_range(dx, d);
            for z in 0..d {
                let sz = z as isize + dz;
                if sz < 0 || sz >= d as isize {
                    continue;
                }
                for y in 0..d {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= d as isize {
                        continue;
                    }
                    let row = (z * d + y) * d;
                    let srow = (sz as usize * d + sy as usize) * d;
                    let sx0 = (x0 as isize + dx) as usize;
                    for (o, s) in dst[srow + sx0..srow + sx0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&src[row + x0..row + x1])
                    {
                        *o += s;
                    }
                }
            }
        }
    }
}

/// Output x-range whose shifted source index stays inside `[0, d)`.
fn valid_range(dx: isize, d: usize) -> (usize, usize) {
    match dx {
        -1 => (1, d),
        1 => (0, d - 1),
        _ => (0, d),
    }
}

/// 3×3×3 convolution with padding 1. Weights are `cout × (cin * 27)`.
/// `col` receives the unfolded input for reuse in the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_forward(
    input: &[f64],
    cin: usize,
    cout: usize,
    d: usize,
    weight: &[f64],
    bias: &[f64],
    col: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    let n = d * d * d;
    im2col(input, cin, d, col);
    out.clear();
    out.resize(cout * n, 0.0);
    for (o, b) in bias.iter().enumerate() {
        out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *b);
    }
    gemm(cout, cin * 27, n, weight, false, col, false, 1.0, out);
}

/// Accumulates weight and bias gradients; writes the input gradient into
/// `d_input` when given.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward(
    d_out: &[f64],
    col: &[f64],
    cin: usize,
    cout: usize,
    d: usize,
    weight: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    d_input: Option<(&mut Vec<f64>, &mut Vec<f64>)>,
) {
    let n = d * d * d;
    let kdim = cin * 27;
    gemm(cout, n, kdim, d_out, false, col, true, 1.0, d_weight);
    for (o, db) in d_bias.iter_mut().enumerate() {
        *db += d_out[o * n..(o + 1) * n].iter().sum::<f64>();
    }
    if let Some((d_col, d_in)) = d_input {
        d_col.clear();
        d_col.resize(kdim * n, 0.0);
        gemm(kdim, cout, n, weight, true, d_out, false, 0.0, d_col);
        d_in.clear();
        d_in.resize(cin * n, 0.0);
        col2im(d_col, cin, d, d_in);
    }
}

/// 2×2×2 average pooling; `d` is the input side (even).
pub fn avg_pool(input: &[f64], c: usize, d: usize, out: &mut Vec<f64>) {
    let h = d / 2;
    let (n, m) = (d * d * d, h * h * h);
    out.clear();
    out.resize(c * m, 0.0);
    for ch in 0..c {
        for z in 0..d {
            for y in 0..d {
                for x in 0..d {
                    out[ch * m + ((z / 2) * h + y / 2) * h + x / 2] += input[ch * n + (z * d + y) * d + x] * 0.125;
                }
            }
        }
    }
}

pub fn avg_pool_backward(d_out: &[f64], c: usize, d: usize, d_in: &mut [f64]) {
    let h = d / 2;
    let (n, m) = (d * d * d, h * h * h);
    for ch in 0..c {
        for z in 0..d {
            for y in 0..d {
                for x in 0..d {
                    d_in[ch * n + (z * d + y) * d + x] = d_out[ch * m + ((z / 2) * h + y / 2) * h + x / 2] * 0.125;
                }
            }
        }
    }
}

/// Nearest-neighbour 2× upsampling; `d` is the input side.
pub fn upsample(input: &[f64], c: usize, d: usize, out: &mut [f64]) {
    let s = d * 2;
    let (n, m) = (d * d * d, s * s * s);
    for ch in 0..c {
        for z in 0..s {
            for y in 0..s {
                for x in 0..s {
                    out[ch * m + (z * s + y) * s + x] = input[ch * n + ((z / 2) * d + y / 2) * d + x / 2];
                }
            }
        }
    }
}

pub fn upsample_backward(d_out: &[f64], c: usize, d: usize, d_in: &mut Vec<f64>) {
    let s = d * 2;
    let (n, m) = (d * d * d, s * s * s);
    d_in.clear();
    d_in.resize(c * n, 0.0);
    for ch in 0..c {
        for z in 0..s {
            for y in 0..s {
                for x in 0..s {
                    d_in[ch * n + ((z / 2) * d + y / 2) * d + x / 2] += d_out[ch * m + (z * s + y) * s + x];
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of a diffusion timestep (`dim` even).
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}
