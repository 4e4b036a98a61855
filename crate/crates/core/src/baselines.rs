//! Reference convolution and vision-transformer cores.
//!
//! These exist for equation coverage and as comparison points for the
//! FLOP model; no segmentation decoder is built on top of them.

use std::sync::Arc;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::tensor::{counter, Graph, Scalar, Tensor, Var};
use crate::vmunet::layers::{Linear, Norm, INIT_STD};

/// Valid 2-D correlation `O(i,j) = Σ_k Σ_l I(i+k, j+l) K(k, l)` (no kernel
/// flip), output `(M-m+1) x (N-n+1)`. Records `2·m·n` ops per output.
pub fn conv2d_valid<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (mm, nn) = match input.shape() {
        [a, b] => (*a, *b),
        s => return Err(dim_err!("conv input must be 2-D, got {s:?}")),
    };
    let (m, n) = match kernel.shape() {
        [a, b] => (*a, *b),
        s => return Err(dim_err!("conv kernel must be 2-D, got {s:?}")),
    };
    if m > mm || n > nn {
        return Err(dim_err!("kernel {m}x{n} larger than input {mm}x{nn}"));
    }
    let (ho, wo) = (mm - m + 1, nn - n + 1);
    let (x, k) = (input.data(), kernel.data());
    let mut out = vec![T::zero(); ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            let mut acc = T::zero();
            for a in 0..m {
                let row = &x[(i + a) * nn + j..(i + a) * nn + j + n];
                for (b, &v) in row.iter().enumerate() {
                    acc = acc + v * k[a * n + b];
                }
            }
            out[i * wo + j] = acc;
        }
    }
    counter::record(2 * (ho * wo * m * n) as u64);
    Tensor::new(vec![ho, wo], out)
}

/// `[r, c]` → `[c, r]` as a gather.
pub fn transpose<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let (r, c) = match g.shape(x) {
        [r, c] => (*r, *c),
        s => return Err(dim_err!("transpose needs a 2-D value, got {s:?}")),
    };
    let idx: Arc<[usize]> = (0..c)
        .flat_map(|j| (0..r).map(move |i| i * c + j))
        .collect();
    g.gather(x, idx, vec![c, r])
}

/// Columns `[from, from + width)` of a 2-D value.
pub fn columns<T: Scalar>(g: &mut Graph<T>, x: Var, from: usize, width: usize) -> Result<Var> {
    let (r, c) = match g.shape(x) {
        [r, c] => (*r, *c),
        s => return Err(dim_err!("column slice needs a 2-D value, got {s:?}")),
    };
    if from + width > c {
        return Err(dim_err!("columns {from}..{} out of {c}", from + width));
    }
    let idx: Arc<[usize]> = (0..r)
        .flat_map(|i| (from..from + width).map(move |j| i * c + j))
        .collect();
    g.gather(x, idx, vec![r, width])
}

/// Scaled dot-product attention `softmax(QKᵀ/√d_k) V`.
pub fn attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    let (lq, dk) = match g.shape(q) {
        [l, d] => (*l, *d),
        s => return Err(dim_err!("Q must be [L, d_k], got {s:?}")),
    };
    let lk = match g.shape(k) {
        [l, d] if *d == dk => *l,
        s => return Err(dim_err!("K must be [L, {dk}], got {s:?}")),
    };
    match g.shape(v) {
        [l, _] if *l == lk => {}
        s => return Err(dim_err!("V must have {lk} rows, got {s:?}")),
    }
    let _ = lq;
    let kt = transpose(g, k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::one() / T::of(dk as f64).sqrt())?;
    let weights = g.softmax(scores)?;
    g.matmul(weights, v)
}

/// Plain-tensor wrapper of [`attention`]; also returns the attention
/// weights.
pub fn attention_values<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let (qv, kv, vv) = (
        g.constant(q.clone()),
        g.constant(k.clone()),
        g.constant(v.clone()),
    );
    let y = attention(&mut g, qv, kv, vv)?;
    // weights are the softmax node feeding the final matmul
    let w = g.inputs(y)[0];
    Ok((g.value(y).clone(), g.value(w).clone()))
}

/// Patch embedding with a class token:
/// `z0 = [x_class; x_p¹E; …; x_pᴺE] + E_pos`.
///
/// `image: [H, W, c]`, `e: [p·p·c, D]`, `e_pos: [N+1, D]`, `x_class: [D]`.
pub fn vit_embed<T: Scalar>(
    image: &Tensor<T>,
    p: usize,
    e: &Tensor<T>,
    e_pos: &Tensor<T>,
    x_class: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, c) = match image.shape() {
        [h, w, c] => (*h, *w, *c),
        s => return Err(dim_err!("image must be [H, W, c], got {s:?}")),
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} is not divisible into {p}x{p} patches"
        )));
    }
    let n = (h / p) * (w / p);
    let d = x_class.len();
    if e.shape() != [p * p * c, d] || e_pos.shape() != [n + 1, d] {
        return Err(dim_err!(
            "embedding shapes {:?}/{:?} do not match {n} patches of width {d}",
            e.shape(),
            e_pos.shape()
        ));
    }
    let idx = crate::vmunet::layers::space_to_depth_index(h, w, c, p);
    let patches: Vec<T> = idx.iter().map(|&i| image.data()[i]).collect();
    let patches = Tensor::new(vec![n, p * p * c], patches)?;
    let tokens = crate::tensor::matmul(&patches, e)?;
    let mut z = Vec::with_capacity((n + 1) * d);
    z.extend_from_slice(x_class.data());
    z.extend_from_slice(tokens.data());
    for (v, &pos) in z.iter_mut().zip(e_pos.data()) {
        *v = *v + pos;
    }
    Tensor::new(vec![n + 1, d], z)
}

/// Pre-norm transformer encoder block.
#[derive(Debug, Clone)]
pub struct VitBlock {
    pub heads: usize,
    pub dim: usize,
    pub norm1: Norm,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub proj: Linear,
    pub norm2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl VitBlock {
    pub fn init<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        dim: usize,
        heads: usize,
        mlp: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            dim,
            norm1: Norm::init(pb, "norm1", dim)?,
            wq: pb.normal("attn.wq", &[dim, dim], INIT_STD)?,
            wk: pb.normal("attn.wk", &[dim, dim], INIT_STD)?,
            wv: pb.normal("attn.wv", &[dim, dim], INIT_STD)?,
            proj: Linear::init(pb, "attn.proj", dim, dim, true)?,
            norm2: Norm::init(pb, "norm2", dim)?,
            fc1: Linear::init(pb, "mlp.fc1", dim, mlp, true)?,
            fc2: Linear::init(pb, "mlp.fc2", mlp, dim, true)?,
        })
    }

    /// Multi-head self-attention: per-head attention over column slices
    /// of `Q, K, V`, concatenated, then the output projection.
    pub fn msa<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let q = g.matmul(x, p[self.wq])?;
        let k = g.matmul(x, p[self.wk])?;
        let v = g.matmul(x, p[self.wv])?;
        let dk = self.dim / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = columns(g, q, h * dk, dk)?;
            let kh = columns(g, k, h * dk, dk)?;
            let vh = columns(g, v, h * dk, dk)?;
            outs.push(attention(g, qh, kh, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat(&outs)?
        };
        self.proj.forward(g, p, cat)
    }

    /// `z' = MSA(LN z) + z`, `z'' = MLP(LN z') + z'`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        match g.shape(z) {
            [_, d] if *d == self.dim => {}
            s => return Err(dim_err!("ViT block expects [L, {}], got {s:?}", self.dim)),
        }
        let n = self.norm1.forward(g, p, z)?;
        let a = self.msa(g, p, n)?;
        let z1 = g.add(a, z)?;
        let n = self.norm2.forward(g, p, z1)?;
        let h = self.fc1.forward(g, p, n)?;
        let h = g.gelu(h)?;
        let m = self.fc2.forward(g, p, h)?;
        g.add(m, z1)
    }
}
