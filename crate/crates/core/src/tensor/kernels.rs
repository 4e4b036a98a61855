//! Numeric kernels shared by the graph ops and the plain functions.
//!
//! Every kernel that is part of the FLOP model reports what it executed to
//! [`counter`](super::counter).

use rayon::prelude::*;

use super::counter;
use super::Scalar;

/// Discretization rule for the input matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanMode {
    /// `B̄ = (ΔA)^{-1}(e^{ΔA} - 1)·ΔB`.
    Exact,
    /// `B̄ = Δ·B`.
    Simplified,
}

impl ScanMode {
    pub fn name(self) -> &'static str {
        match self {
            ScanMode::Exact => "exact",
            ScanMode::Simplified => "simplified",
        }
    }

    /// Ops spent per (step, channel, state) element of the recurrence:
    /// discretization (ΔA, exp, plus expm1/divide for the exact rule, times
    /// B), state update `Ā·h + B̄·x` (mul + MAC) and readout `C·h` (MAC).
    pub fn ops_per_state(self) -> u64 {
        match self {
            ScanMode::Exact => 10,
            ScanMode::Simplified => 8,
        }
    }
}

impl std::str::FromStr for ScanMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(ScanMode::Exact),
            "simplified" => Ok(ScanMode::Simplified),
            other => Err(format!("unknown scan mode `{other}`")),
        }
    }
}

/// Ops per (step, channel) for the `D·x` skip term.
pub const SCAN_OPS_PER_SKIP: u64 = 2;

/// Below this `|ΔA|` the exact coefficient switches to its series.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// `c (+)= op(a) · op(b)` where `op` optionally transposes a row-major
/// operand. `a` is logically `m x k`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths checked above; strides address exactly those buffers
    // and `c` is a distinct mutable slice.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Per-row layer normalization over the last axis of width `n`.
/// Returns `(y, xhat, rstd)`.
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    n: usize,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / n;
    let nf = T::of(n as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * n..(r + 1) * n];
        let mean = row.iter().copied().sum::<T>() / nf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..n {
            let h = (row[i] - mean) * rs;
            xhat[r * n + i] = h;
            y[r * n + i] = h * gamma[i] + beta[i];
        }
    }
    counter::record(x.len() as u64);
    (y, xhat, rstd)
}

/// Returns `(gx, ggamma, gbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    gy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    n: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = gy.len() / n;
    let nf = T::of(n as f64);
    let mut gx = vec![T::zero(); gy.len()];
    let mut gg = vec![T::zero(); n];
    let mut gb = vec![T::zero(); n];
    let mut gxhat = vec![T::zero(); n];
    for r in 0..rows {
        let o = r * n;
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for i in 0..n {
            let g = gy[o + i];
            gg[i] = gg[i] + g * xhat[o + i];
            gb[i] = gb[i] + g;
            let gh = g * gamma[i];
            gxhat[i] = gh;
            mean_g = mean_g + gh;
            mean_gx = mean_gx + gh * xhat[o + i];
        }
        mean_g = mean_g / nf;
        mean_gx = mean_gx / nf;
        for i in 0..n {
            gx[o + i] = rstd[r] * (gxhat[i] - mean_g - xhat[o + i] * mean_gx);
        }
    }
    (gx, gg, gb)
}

/// Zero-pads an `[h, w, c]` map by `p` on each spatial side.
fn pad_hwc<T: Scalar>(x: &[T], h: usize, w: usize, c: usize, p: usize) -> Vec<T> {
    let wp = w + 2 * p;
    let mut out = vec![T::zero(); (h + 2 * p) * wp * c];
    for i in 0..h {
        let src = &x[i * w * c..(i + 1) * w * c];
        let dst = ((i + p) * wp + p) * c;
        out[dst..dst + w * c].copy_from_slice(src);
    }
    out
}

/// Depthwise "same" correlation on an `[h, w, c]` map with `[c, k, k]`
/// kernels. Padding taps are executed as multiplications by zero, so every
/// output element costs exactly `k*k` MACs.
pub fn depthwise_forward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
) -> Vec<T> {
    let p = k / 2;
    let wp = w + 2 * p;
    let xp = pad_hwc(x, h, w, c, p);
    let mut y = vec![T::zero(); h * w * c];
    let mut macs = 0u64;
    for i in 0..h {
        for j in 0..w {
            let out = &mut y[(i * w + j) * c..(i * w + j + 1) * c];
            for a in 0..k {
                for b in 0..k {
                    let src = &xp[((i + a) * wp + j + b) * c..((i + a) * wp + j + b + 1) * c];
                    for ch in 0..c {
                        out[ch] = out[ch] + src[ch] * kernel[(ch * k + a) * k + b];
                    }
                    macs += c as u64;
                }
            }
            if let Some(bias) = bias {
                for ch in 0..c {
                    out[ch] = out[ch] + bias[ch];
                }
            }
        }
    }
    let bias_ops = if bias.is_some() {
        (h * w * c) as u64
    } else {
        0
    };
    counter::record(2 * macs + bias_ops);
    y
}

/// Returns `(gx, gkernel, gbias)`.
#[allow(clippy::too_many_arguments)]
pub fn depthwise_backward<T: Scalar>(
    gy: &[T],
    x: &[T],
    kernel: &[T],
    h: usize,
    w: usize,
    c: usize,
    k: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let p = k / 2;
    let wp = w + 2 * p;
    let xp = pad_hwc(x, h, w, c, p);
    let mut gxp = vec![T::zero(); xp.len()];
    let mut gk = vec![T::zero(); kernel.len()];
    let mut gb = vec![T::zero(); c];
    for i in 0..h {
        for j in 0..w {
            let g = &gy[(i * w + j) * c..(i * w + j + 1) * c];
            for ch in 0..c {
                gb[ch] = gb[ch] + g[ch];
            }
            for a in 0..k {
                for b in 0..k {
                    let o = ((i + a) * wp + j + b) * c;
                    for ch in 0..c {
                        let ki = (ch * k + a) * k + b;
                        gk[ki] = gk[ki] + g[ch] * xp[o + ch];
                        gxp[o + ch] = gxp[o + ch] + g[ch] * kernel[ki];
                    }
                }
            }
        }
    }
    let mut gx = vec![T::zero(); x.len()];
    for i in 0..h {
        let src = ((i + p) * wp + p) * c;
        gx[i * w * c..(i + 1) * w * c].copy_from_slice(&gxp[src..src + w * c]);
    }
    (gx, gk, gb)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (row, out) in x.chunks(n).zip(y.chunks_mut(n)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - m).exp();
            s = s + *o;
        }
        for o in out.iter_mut() {
            *o = *o / s;
        }
    }
    counter::record(x.len() as u64);
    y
}

/// GELU (tanh approximation) and its derivative.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x);
    (y, dy)
}

/// Discretization of one (Δ, A, B) triple: returns `(Ā, coef)` with
/// `B̄ = coef · B`.
#[inline]
pub fn discretize_scalar<T: Scalar>(delta: T, a: T, mode: ScanMode) -> (T, T) {
    let z = delta * a;
    let abar = z.exp();
    let coef = match mode {
        ScanMode::Simplified => delta,
        ScanMode::Exact => {
            if z.abs() < T::of(SERIES_THRESHOLD) {
                delta * (T::one() + z * T::of(0.5))
            } else {
                z.exp_m1() / a
            }
        }
    };
    (abar, coef)
}

/// `(z e^z - expm1 z) / z^2`, the A-derivative factor of the exact
/// coefficient (`∂coef/∂A = Δ² · g(z)`).
#[inline]
fn exact_coef_da_factor<T: Scalar>(z: T) -> T {
    if z.abs() < T::of(0.1) {
        // sum_{m>=2} (m-1)/m! z^{m-2}
        let c = [
            1.0 / 2.0,
            1.0 / 3.0,
            1.0 / 8.0,
            1.0 / 30.0,
            1.0 / 144.0,
            1.0 / 840.0,
        ];
        let mut acc = T::zero();
        for &ci in c.iter().rev() {
            acc = acc * z + T::of(ci);
        }
        acc
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

/// Sizes of one selective scan: `l` steps, `d` channels, `h` states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub l: usize,
    pub d: usize,
    pub h: usize,
}

/// Borrowed scan operands. Layouts: `x, delta: [l, d]`, `a: [d, h]`,
/// `b, c: [l, h]`, `skip: [d]`, `h0: [d, h]`.
pub struct ScanOperands<'a, T> {
    pub x: &'a [T],
    pub delta: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub skip: Option<&'a [T]>,
    pub h0: Option<&'a [T]>,
}

/// Output of [`scan_forward`]: `y: [l, d]` and every hidden state,
/// laid out `[d, l + 1, h]` with `h_0` first.
pub struct ScanTrace<T> {
    pub y: Vec<T>,
    pub states: Vec<T>,
}

impl<T: Scalar> ScanTrace<T> {
    /// Final state `h_L` as `[d, h]`.
    pub fn last_state(&self, dims: ScanDims) -> Vec<T> {
        let ScanDims { l, d, h } = dims;
        let mut out = Vec::with_capacity(d * h);
        for j in 0..d {
            let o = (j * (l + 1) + l) * h;
            out.extend_from_slice(&self.states[o..o + h]);
        }
        out
    }
}

/// Sequential recurrence `h_k = Ā_k h_{k-1} + B̄_k x_k`, `y_k = C_k h_k + D x_k`,
/// independent per channel.
pub fn scan_forward<T: Scalar>(
    ops: &ScanOperands<'_, T>,
    dims: ScanDims,
    mode: ScanMode,
) -> ScanTrace<T> {
    let ScanDims { l, d, h } = dims;
    let per_channel: Vec<(Vec<T>, Vec<T>, u64)> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut states = vec![T::zero(); (l + 1) * h];
            if let Some(h0) = ops.h0 {
                states[..h].copy_from_slice(&h0[j * h..(j + 1) * h]);
            }
            let mut y = vec![T::zero(); l];
            let a = &ops.a[j * h..(j + 1) * h];
            let mut work = 0u64;
            for k in 0..l {
                let xk = ops.x[k * d + j];
                let dk = ops.delta[k * d + j];
                let bk = &ops.b[k * h..(k + 1) * h];
                let ck = &ops.c[k * h..(k + 1) * h];
                let (prev, cur) = states[k * h..(k + 2) * h].split_at_mut(h);
                let mut acc = T::zero();
                for n in 0..h {
                    let (abar, coef) = discretize_scalar(dk, a[n], mode);
                    let hn = abar * prev[n] + coef * bk[n] * xk;
                    cur[n] = hn;
                    acc = acc + ck[n] * hn;
                }
                work += h as u64 * mode.ops_per_state();
                if let Some(skip) = ops.skip {
                    acc = acc + skip[j] * xk;
                    work += SCAN_OPS_PER_SKIP;
                }
                y[k] = acc;
            }
            (states, y, work)
        })
        .collect();

    let mut y = vec![T::zero(); l * d];
    let mut states = Vec::with_capacity(d * (l + 1) * h);
    let mut work = 0;
    for (j, (s, yj, w)) in per_channel.into_iter().enumerate() {
        for k in 0..l {
            y[k * d + j] = yj[k];
        }
        states.extend(s);
        work += w;
    }
    counter::record(work);
    ScanTrace { y, states }
}

/// Gradients of a scan with respect to each operand.
pub struct ScanGrads<T> {
    pub x: Vec<T>,
    pub delta: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub skip: Vec<T>,
    pub h0: Vec<T>,
}

/// Reverse-time adjoint of [`scan_forward`].
pub fn scan_backward<T: Scalar>(
    gy: &[T],
    ops: &ScanOperands<'_, T>,
    states: &[T],
    dims: ScanDims,
    mode: ScanMode,
) -> ScanGrads<T> {
    let ScanDims { l, d, h } = dims;
    struct Partial<T> {
        gx: Vec<T>,
        gdelta: Vec<T>,
        ga: Vec<T>,
        gb: Vec<T>,
        gc: Vec<T>,
        gskip: T,
        gh0: Vec<T>,
    }
    let partials: Vec<Partial<T>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let st = &states[j * (l + 1) * h..(j + 1) * (l + 1) * h];
            let a = &ops.a[j * h..(j + 1) * h];
            let skip_j = ops.skip.map_or(T::zero(), |s| s[j]);
            let mut p = Partial {
                gx: vec![T::zero(); l],
                gdelta: vec![T::zero(); l],
                ga: vec![T::zero(); h],
                gb: vec![T::zero(); l * h],
                gc: vec![T::zero(); l * h],
                gskip: T::zero(),
                gh0: vec![T::zero(); h],
            };
            let mut gh = vec![T::zero(); h];
            for k in (0..l).rev() {
                let gyk = gy[k * d + j];
                let xk = ops.x[k * d + j];
                let dk = ops.delta[k * d + j];
                let bk = &ops.b[k * h..(k + 1) * h];
                let ck = &ops.c[k * h..(k + 1) * h];
                let hprev = &st[k * h..(k + 1) * h];
                let hcur = &st[(k + 1) * h..(k + 2) * h];
                let mut gx = gyk * skip_j;
                p.gskip = p.gskip + gyk * xk;
                let mut gd = T::zero();
                for n in 0..h {
                    gh[n] = gh[n] + ck[n] * gyk;
                    p.gc[k * h + n] = gyk * hcur[n];
                    let g = gh[n];
                    let (abar, coef) = discretize_scalar(dk, a[n], mode);
                    let g_abar = g * hprev[n];
                    let g_bbar = g * xk;
                    gx = gx + g * coef * bk[n];
                    gd = gd + g_abar * abar * a[n];
                    p.ga[n] = p.ga[n] + g_abar * abar * dk;
                    p.gb[k * h + n] = g_bbar * coef;
                    let g_coef = g_bbar * bk[n];
                    match mode {
                        ScanMode::Simplified => gd = gd + g_coef,
                        ScanMode::Exact => {
                            let z = dk * a[n];
                            gd = gd + g_coef * abar;
                            p.ga[n] = p.ga[n] + g_coef * dk * dk * exact_coef_da_factor(z);
                        }
                    }
                    gh[n] = g * abar;
                }
                p.gx[k] = gx;
                p.gdelta[k] = gd;
            }
            p.gh0 = gh;
            p
        })
        .collect();

    let mut out = ScanGrads {
        x: vec![T::zero(); l * d],
        delta: vec![T::zero(); l * d],
        a: Vec::with_capacity(d * h),
        b: vec![T::zero(); l * h],
        c: vec![T::zero(); l * h],
        skip: Vec::with_capacity(d),
        h0: Vec::with_capacity(d * h),
    };
    for (j, p) in partials.into_iter().enumerate() {
        for k in 0..l {
            out.x[k * d + j] = p.gx[k];
            out.delta[k * d + j] = p.gdelta[k];
        }
        out.a.extend(p.ga);
        for (o, v) in out.b.iter_mut().zip(&p.gb) {
            *o = *o + *v;
        }
        for (o, v) in out.c.iter_mut().zip(&p.gc) {
            *o = *o + *v;
        }
        out.skip.push(p.gskip);
        out.h0.extend(p.gh0);
    }
    out
}
