//! The S6 selective scan.
//!
//! Three realizations of the same map are provided:
//!
//! * [`scan_recurrence`]: the sequential state update
//!   `h_k = Ā_k h_{k-1} + B̄_k x_k`, `y_k = C_k h_k + D x_k`;
//! * [`scan_matrix_form`]: the masked query/key/value product, with
//!   `Q = C`, `K = B`, `V = x ⊙ Δ` and decay weights `w_i = ∏_{t≤i} e^{AΔ_t}`,
//!   materializing the `L x L` lower-triangular score matrix per channel;
//! * [`scan_linear_attention`]: the same product reassociated so `KᵀV` is
//!   accumulated first, costing `O(L·H)` per channel.
//!
//! The matrix forms presuppose `B̄ = Δ·B`, so they only accept
//! [`ScanMode::Simplified`].

use rand::Rng;

use crate::error::{contract_err, dim_err, Error, Result};
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::tensor::kernels::{self, ScanDims, ScanOperands};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use crate::tensor::ScanMode;

/// Sequence operands of one scan. `h0` defaults to zero.
#[derive(Debug, Clone)]
pub struct ScanInputs<T> {
    pub x: Tensor<T>,
    pub delta: Tensor<T>,
    pub b: Tensor<T>,
    pub c: Tensor<T>,
    pub h0: Option<Tensor<T>>,
}

impl<T: Scalar> ScanInputs<T> {
    pub fn new(x: Tensor<T>, delta: Tensor<T>, b: Tensor<T>, c: Tensor<T>) -> Result<Self> {
        let inp = Self {
            x,
            delta,
            b,
            c,
            h0: None,
        };
        inp.validate(None)?;
        Ok(inp)
    }

    pub fn with_h0(mut self, h0: Tensor<T>) -> Result<Self> {
        self.h0 = Some(h0);
        self.validate(None)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn state_size(&self) -> usize {
        self.b.shape()[1]
    }

    fn validate(&self, a: Option<&Tensor<T>>) -> Result<ScanDims> {
        let (l, d) = match self.x.shape() {
            [l, d] => (*l, *d),
            s => return Err(dim_err!("x must be [L, d], got {s:?}")),
        };
        let h = match self.b.shape() {
            [bl, h] if *bl == l => *h,
            s => return Err(dim_err!("B must be [{l}, H], got {s:?}")),
        };
        if self.delta.shape() != [l, d] {
            return Err(dim_err!(
                "Δ must be [{l}, {d}], got {:?}",
                self.delta.shape()
            ));
        }
        if self.c.shape() != [l, h] {
            return Err(dim_err!("C must be [{l}, {h}], got {:?}", self.c.shape()));
        }
        if let Some(h0) = &self.h0 {
            if h0.shape() != [d, h] {
                return Err(dim_err!("h0 must be [{d}, {h}], got {:?}", h0.shape()));
            }
        }
        if let Some(a) = a {
            if a.shape() != [d, h] {
                return Err(dim_err!("A must be [{d}, {h}], got {:?}", a.shape()));
            }
        }
        if self.delta.data().iter().any(|&v| v <= T::zero()) {
            return Err(contract_err!("Δ must be strictly positive"));
        }
        Ok(ScanDims { l, d, h })
    }
}

/// Discretizes one step: returns `(Ā, B̄)`, both `[d, H]`.
///
/// `Ā[j,n] = exp(Δ[j] A[j,n])`. In exact mode
/// `B̄[j,n] = (exp(Δ[j] A[j,n]) - 1) / A[j,n] · B[n]`, switching to the
/// series `Δ(1 + ΔA/2)·B` when `|ΔA| < 1e-6`; in simplified mode
/// `B̄[j,n] = Δ[j]·B[n]`.
pub fn discretize<T: Scalar>(
    delta_k: &[T],
    a: &Tensor<T>,
    b_k: &[T],
    mode: ScanMode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (d, h) = match a.shape() {
        [d, h] => (*d, *h),
        s => return Err(dim_err!("A must be [d, H], got {s:?}")),
    };
    if delta_k.len() != d || b_k.len() != h {
        return Err(dim_err!(
            "Δ_k has {} entries and B_k {}, expected {d} and {h}",
            delta_k.len(),
            b_k.len()
        ));
    }
    if delta_k.iter().any(|&v| v <= T::zero()) {
        return Err(contract_err!("Δ must be strictly positive"));
    }
    let mut abar = Vec::with_capacity(d * h);
    let mut bbar = Vec::with_capacity(d * h);
    for j in 0..d {
        for n in 0..h {
            let (ab, coef) = kernels::discretize_scalar(delta_k[j], a.data()[j * h + n], mode);
            abar.push(ab);
            bbar.push(coef * b_k[n]);
        }
    }
    Ok((
        Tensor::new(vec![d, h], abar)?,
        Tensor::new(vec![d, h], bbar)?,
    ))
}

/// Runs the recurrence. `skip` is the per-channel `D` (absent = zero).
/// Returns `(y [L, d], h_L [d, H])`.
pub fn scan_recurrence<T: Scalar>(
    inp: &ScanInputs<T>,
    a: &Tensor<T>,
    skip: Option<&Tensor<T>>,
    mode: ScanMode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let dims = inp.validate(Some(a))?;
    if let Some(s) = skip {
        if s.shape() != [dims.d] {
            return Err(dim_err!("D must be [{}], got {:?}", dims.d, s.shape()));
        }
    }
    let operands = ScanOperands {
        x: inp.x.data(),
        delta: inp.delta.data(),
        a: a.data(),
        b: inp.b.data(),
        c: inp.c.data(),
        skip: skip.map(Tensor::data),
        h0: inp.h0.as_ref().map(Tensor::data),
    };
    let trace = kernels::scan_forward(&operands, dims, mode);
    let last = trace.last_state(dims);
    Ok((
        Tensor::new(vec![dims.l, dims.d], trace.y)?,
        Tensor::new(vec![dims.d, dims.h], last)?,
    ))
}

/// `w[i, j, n] = ∏_{t≤i} exp(A[j,n] Δ[t,j])`, shape `[L, d, H]`.
pub fn cumulative_weights<T: Scalar>(delta: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let (l, d) = match delta.shape() {
        [l, d] => (*l, *d),
        s => return Err(dim_err!("Δ must be [L, d], got {s:?}")),
    };
    let h = match a.shape() {
        [ad, h] if *ad == d => *h,
        s => return Err(dim_err!("A must be [{d}, H], got {s:?}")),
    };
    if delta.data().iter().any(|&v| v <= T::zero()) {
        return Err(contract_err!("Δ must be strictly positive"));
    }
    let mut w = vec![T::zero(); l * d * h];
    let mut run = vec![T::one(); d * h];
    for i in 0..l {
        for j in 0..d {
            let dt = delta.data()[i * d + j];
            for n in 0..h {
                let r = &mut run[j * h + n];
                *r = *r * (a.data()[j * h + n] * dt).exp();
                w[(i * d + j) * h + n] = *r;
            }
        }
    }
    Tensor::new(vec![l, d, h], w)
}

fn require_simplified(mode: ScanMode) -> Result<()> {
    match mode {
        ScanMode::Simplified => Ok(()),
        ScanMode::Exact => Err(Error::UnsupportedMode(
            "the query/key/value form encodes V = x·Δ, i.e. B̄ = ΔB; use the recurrence for exact discretization".into(),
        )),
    }
}

/// Per-channel `(Q ⊙ w)` and `(K / w)` factors, each `[L, H]`.
fn decayed_factors<T: Scalar>(
    inp: &ScanInputs<T>,
    w: &Tensor<T>,
    dims: ScanDims,
    j: usize,
) -> (Vec<T>, Vec<T>) {
    let ScanDims { l, d, h } = dims;
    let mut qw = vec![T::zero(); l * h];
    let mut kw = vec![T::zero(); l * h];
    for i in 0..l {
        for n in 0..h {
            let wi = w.data()[(i * d + j) * h + n];
            qw[i * h + n] = inp.c.data()[i * h + n] * wi;
            kw[i * h + n] = inp.b.data()[i * h + n] / wi;
        }
    }
    (qw, kw)
}

/// Masked matrix form: for every channel `j`,
/// `Y⁽ʲ⁾ = (Q ⊙ w⁽ʲ⁾) h0⁽ʲ⁾ + [G⁽ʲ⁾ ⊙ M] V⁽ʲ⁾` with
/// `G⁽ʲ⁾[i, m] = Σₙ Q[i,n] K[m,n] w⁽ʲ⁾[i,n] / w⁽ʲ⁾[m,n]` and `M` the
/// lower-triangular (diagonal included) causal mask.
///
/// The decay ratio is evaluated as `exp(log wᵢ − log wₘ)`, which is at
/// most one under the mask, so long or strongly decaying sequences do not
/// underflow the way the factored `(Q ⊙ w)(K / w)ᵀ` product does.
///
/// Memory is `O(L²)` per channel; sequences longer than
/// [`MATRIX_FORM_MAX_LEN`] are rejected in favour of
/// [`scan_linear_attention`].
pub fn scan_matrix_form<T: Scalar>(
    inp: &ScanInputs<T>,
    a: &Tensor<T>,
    mode: ScanMode,
) -> Result<Tensor<T>> {
    require_simplified(mode)?;
    let dims = inp.validate(Some(a))?;
    let ScanDims { l, d, h } = dims;
    if l > MATRIX_FORM_MAX_LEN {
        return Err(dim_err!(
            "matrix form materializes L x L scores; L = {l} exceeds {MATRIX_FORM_MAX_LEN}"
        ));
    }
    let (x, dt, b, c) = (inp.x.data(), inp.delta.data(), inp.b.data(), inp.c.data());
    let mut y = vec![T::zero(); l * d];
    let mut log_w = vec![T::zero(); l * h];
    let mut scores = vec![T::zero(); l * l];
    for j in 0..d {
        let mut run = vec![T::zero(); h];
        for i in 0..l {
            for n in 0..h {
                run[n] = run[n] + a.data()[j * h + n] * dt[i * d + j];
                log_w[i * h + n] = run[n];
            }
        }
        for i in 0..l {
            for m in 0..=i {
                let mut s = T::zero();
                for n in 0..h {
                    let decay = (log_w[i * h + n] - log_w[m * h + n]).exp();
                    s = s + c[i * h + n] * b[m * h + n] * decay;
                }
                scores[i * l + m] = s;
            }
        }
        for i in 0..l {
            let mut acc = T::zero();
            if let Some(h0) = &inp.h0 {
                for n in 0..h {
                    acc = acc + c[i * h + n] * log_w[i * h + n].exp() * h0.data()[j * h + n];
                }
            }
            // entries above the diagonal are masked out
            for m in 0..=i {
                acc = acc + scores[i * l + m] * x[m * d + j] * dt[m * d + j];
            }
            y[i * d + j] = acc;
        }
    }
    Tensor::new(vec![l, d], y)
}

/// Longest sequence accepted by [`scan_matrix_form`].
pub const MATRIX_FORM_MAX_LEN: usize = 256;

/// Reassociated matrix form: accumulates `S_i = w⁽ʲ⁾-scaled h0 + Σ_{m≤i} (K_m/w_m)ᵀ V_m`
/// and reads out `Y_i = (Q_i ⊙ w_i) · S_i`, never forming the `L x L` scores.
pub fn scan_linear_attention<T: Scalar>(
    inp: &ScanInputs<T>,
    a: &Tensor<T>,
    mode: ScanMode,
) -> Result<Tensor<T>> {
    require_simplified(mode)?;
    let dims = inp.validate(Some(a))?;
    let ScanDims { l, d, h } = dims;
    let w = cumulative_weights(&inp.delta, a)?;
    let mut y = vec![T::zero(); l * d];
    let mut state = vec![T::zero(); h];
    for j in 0..d {
        let (qw, kw) = decayed_factors(inp, &w, dims, j);
        match &inp.h0 {
            Some(h0) => state.copy_from_slice(&h0.data()[j * h..(j + 1) * h]),
            None => state.fill(T::zero()),
        }
        for i in 0..l {
            let v = inp.x.data()[i * d + j] * inp.delta.data()[i * d + j];
            let mut acc = T::zero();
            for n in 0..h {
                state[n] = state[n] + kw[i * h + n] * v;
                acc = acc + qw[i * h + n] * state[n];
            }
            y[i * d + j] = acc;
        }
    }
    Tensor::new(vec![l, d], y)
}

/// How the step size is produced from the input sequence.
pub const DELTA_INIT_RANGE: (f64, f64) = (1e-3, 1e-1);

/// Trainable parameters of one selective scan over `d` channels with `h`
/// states: `A = -exp(a_log)` (`[d, H]`), skip `D` (`[d]`), and the input
/// projections `Δ = softplus(x W_Δ + b_Δ)`, `B = x W_B`, `C = x W_C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanParams {
    pub d: usize,
    pub h: usize,
    pub a_log: ParamId,
    pub skip: ParamId,
    pub proj: ScanProjections,
}

/// Input-dependent projections of a scan; may be shared between scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanProjections {
    pub delta_w: ParamId,
    pub delta_b: ParamId,
    pub b_w: ParamId,
    pub c_w: ParamId,
}

/// Graph values of the input-dependent scan operands.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedInputs {
    pub delta: Var,
    pub b: Var,
    pub c: Var,
}

impl ScanProjections {
    pub fn init<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        d: usize,
        h: usize,
    ) -> Result<Self> {
        let delta_w = pb.normal("delta_w", &[d, d], 0.02)?;
        // softplus(b_Δ) log-uniform in DELTA_INIT_RANGE
        let (lo, hi) = DELTA_INIT_RANGE;
        let bias = Tensor::from_fn(vec![d], |_| {
            let u: f64 = pb.rng.gen();
            let dt = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
            T::of(dt + (-(-dt).exp_m1()).ln())
        })?;
        let delta_b = pb.add("delta_b", bias)?;
        let b_w = pb.normal("b_w", &[d, h], 0.02)?;
        let c_w = pb.normal("c_w", &[d, h], 0.02)?;
        Ok(Self {
            delta_w,
            delta_b,
            b_w,
            c_w,
        })
    }

    /// `x: [L, d]` → `(Δ [L, d], B [L, H], C [L, H])`.
    pub fn project<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
    ) -> Result<ProjectedInputs> {
        let pre = g.matmul(x, p[self.delta_w])?;
        let pre = g.add_bias(pre, p[self.delta_b])?;
        let delta = g.softplus(pre)?;
        let b = g.matmul(x, p[self.b_w])?;
        let c = g.matmul(x, p[self.c_w])?;
        Ok(ProjectedInputs { delta, b, c })
    }
}

impl ScanParams {
    /// Creates the state parameters, reusing `proj` when given.
    ///
    /// `a_log[j, n] = (n / (H-1)) ln H`, so `-A` spans `[1, H]`
    /// log-uniformly along the state axis; `D` starts at one.
    pub fn init<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        d: usize,
        h: usize,
        proj: Option<ScanProjections>,
    ) -> Result<Self> {
        let proj = match proj {
            Some(p) => p,
            None => ScanProjections::init(pb, d, h)?,
        };
        let a_log = pb.add(
            "a_log",
            Tensor::from_fn(vec![d, h], |i| T::of(a_log_init(i % h, h)))?,
        )?;
        let skip = pb.ones("skip", &[d])?;
        Ok(Self {
            d,
            h,
            a_log,
            skip,
            proj,
        })
    }

    /// `A = -exp(a_log)` as a graph value.
    pub fn a<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound) -> Result<Var> {
        let e = g.exp(p[self.a_log])?;
        g.neg(e)
    }

    /// Full S6: project `x: [L, d]`, then scan it.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        mode: ScanMode,
    ) -> Result<Var> {
        let proj = self.proj.project(g, p, x)?;
        self.scan_projected(g, p, x, proj, mode)
    }

    /// Scan with precomputed projections.
    pub fn scan_projected<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        proj: ProjectedInputs,
        mode: ScanMode,
    ) -> Result<Var> {
        let a = self.a(g, p)?;
        g.selective_scan(x, proj.delta, a, proj.b, proj.c, Some(p[self.skip]), mode)
    }
}

/// Initial `a_log` for state index `n` of `h`.
pub fn a_log_init(n: usize, h: usize) -> f64 {
    if h <= 1 {
        0.0
    } else {
        (n as f64 / (h - 1) as f64) * (h as f64).ln()
    }
}
