use std::sync::Arc;

use rand::Rng;

use super::config::{LN_EPS, PATCH};
use crate::error::{dim_err, Error, Result};
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::scan::ScanMode;
use crate::ss2d::{ProjectionSharing, Ss2dParams};
use crate::tensor::{Graph, Scalar, Var};

pub const INIT_STD: f64 = 0.02;

fn hwc<T: Scalar>(g: &Graph<T>, x: Var, what: &str) -> Result<(usize, usize, usize)> {
    match g.shape(x) {
        [h, w, c] => Ok((*h, *w, *c)),
        s => Err(dim_err!("{what} expects [h, w, c], got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn init<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
    ) -> Result<Self> {
        pb.scoped(name, |pb| {
            let w = pb.normal("weight", &[din, dout], INIT_STD)?;
            let b = if bias {
                Some(pb.zeros("bias", &[dout])?)
            } else {
                None
            };
            Ok(Self { w, b })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        match self.b {
            Some(b) => g.add_bias(y, p[b]),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn init<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        d: usize,
    ) -> Result<Self> {
        pb.scoped(name, |pb| {
            Ok(Self {
                gamma: pb.ones("gamma", &[d])?,
                beta: pb.zeros("beta", &[d])?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gamma], p[self.beta], T::of(LN_EPS))
    }
}

/// Gather index taking `[h, w, c]` to `[h/f, w/f, f·f·c]`, each output
/// vector listing its `f x f` window row by row.
pub fn space_to_depth_index(h: usize, w: usize, c: usize, f: usize) -> Arc<[usize]> {
    let (ho, wo) = (h / f, w / f);
    let mut idx = Vec::with_capacity(h * w * c);
    for i in 0..ho {
        for j in 0..wo {
            for a in 0..f {
                for b in 0..f {
                    let base = ((i * f + a) * w + j * f + b) * c;
                    idx.extend(base..base + c);
                }
            }
        }
    }
    idx.into()
}

/// Inverse rearrangement: `[h, w, f·f·c]` to `[f·h, f·w, c]`.
pub fn depth_to_space_index(h: usize, w: usize, c: usize, f: usize) -> Arc<[usize]> {
    let (ho, wo) = (h * f, w * f);
    let mut idx = Vec::with_capacity(ho * wo * c);
    for y in 0..ho {
        for x in 0..wo {
            let (i, a, j, b) = (y / f, y % f, x / f, x % f);
            let base = ((i * w + j) * f * f + a * f + b) * c;
            idx.extend(base..base + c);
        }
    }
    idx.into()
}

/// 4x4 non-overlapping patches → linear → LN.
#[derive(Debug, Clone, Copy)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub norm: Norm,
}

impl PatchEmbed {
    pub fn init<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        cin: usize,
        c: usize,
    ) -> Result<Self> {
        pb.scoped("patch_embed", |pb| {
            Ok(Self {
                proj: Linear::init(pb, "proj", PATCH * PATCH * cin, c, true)?,
                norm: Norm::init(pb, "norm", c)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<Var> {
        let (h, w, c) = hwc(g, image, "patch_embed")?;
        if h % PATCH != 0 || w % PATCH != 0 {
            return Err(Error::Config(format!(
                "image {h}x{w} is not divisible into {PATCH}x{PATCH} patches"
            )));
        }
        let idx = space_to_depth_index(h, w, c, PATCH);
        let patches = g.gather(image, idx, vec![h / PATCH, w / PATCH, PATCH * PATCH * c])?;
        let y = self.proj.forward(g, p, patches)?;
        self.norm.forward(g, p, y)
    }
}

/// 2x2 neighbourhood gather → LN(4c) → linear 4c→2c.
#[derive(Debug, Clone, Copy)]
pub struct PatchMerge {
    pub norm: Norm,
    pub proj: Linear,
}

impl PatchMerge {
    pub fn init<T: Scalar, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, c: usize) -> Result<Self> {
        Ok(Self {
            norm: Norm::init(pb, "norm", 4 * c)?,
            proj: Linear::init(pb, "reduction", 4 * c, 2 * c, false)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (h, w, c) = hwc(g, x, "patch_merge")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(dim_err!("patch_merge needs even h and w, got {h}x{w}"));
        }
        let idx = space_to_depth_index(h, w, c, 2);
        let y = g.gather(x, idx, vec![h / 2, w / 2, 4 * c])?;
        let y = self.norm.forward(g, p, y)?;
        self.proj.forward(g, p, y)
    }
}

/// Linear c → f²·cout, rearranged to an `f`-times larger grid, then LN.
#[derive(Debug, Clone, Copy)]
pub struct PatchExpand {
    pub proj: Linear,
    pub norm: Norm,
    pub factor: usize,
    pub cout: usize,
}

impl PatchExpand {
    /// The 2x decoder expand: `c` channels to `c/2`.
    pub fn init<T: Scalar, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, c: usize) -> Result<Self> {
        if !c.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "patch_expand needs even channels, got {c}"
            )));
        }
        Self::with_factor(pb, c, 2, c / 2)
    }

    /// The final 4x expand back to input resolution, keeping `c` channels.
    pub fn init_final<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        c: usize,
    ) -> Result<Self> {
        Self::with_factor(pb, c, PATCH, c)
    }

    fn with_factor<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        c: usize,
        factor: usize,
        cout: usize,
    ) -> Result<Self> {
        Ok(Self {
            proj: Linear::init(pb, "expand", c, factor * factor * cout, false)?,
            norm: Norm::init(pb, "norm", cout)?,
            factor,
            cout,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (h, w, _) = hwc(g, x, "patch_expand")?;
        let y = self.proj.forward(g, p, x)?;
        let f = self.factor;
        let idx = depth_to_space_index(h, w, self.cout, f);
        let y = g.gather(y, idx, vec![h * f, w * f, self.cout])?;
        self.norm.forward(g, p, y)
    }
}

/// Two-pathway visual state-space block:
/// `x + out(SiLU(lin1(LN x)) ⊙ LN2(SS2D(SiLU(dwconv(lin2(LN x))))))`.
#[derive(Debug, Clone, Copy)]
pub struct VssBlock {
    pub norm: Norm,
    pub gate: Linear,
    pub inner: Linear,
    pub dw_kernel: ParamId,
    pub dw_bias: ParamId,
    pub ss2d: Ss2dParams,
    pub out_norm: Norm,
    pub out: Linear,
}

impl VssBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        c: usize,
        inner: usize,
        state: usize,
        k: usize,
        sharing: ProjectionSharing,
    ) -> Result<Self> {
        Ok(Self {
            norm: Norm::init(pb, "norm", c)?,
            gate: Linear::init(pb, "gate", c, inner, false)?,
            inner: Linear::init(pb, "in", c, inner, false)?,
            dw_kernel: pb.normal("dwconv.weight", &[inner, k, k], INIT_STD)?,
            dw_bias: pb.zeros("dwconv.bias", &[inner])?,
            ss2d: pb.scoped("ss2d", |pb| Ss2dParams::init(pb, inner, state, sharing))?,
            out_norm: Norm::init(pb, "out_norm", inner)?,
            out: Linear::init(pb, "out", inner, c, false)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        mode: ScanMode,
    ) -> Result<Var> {
        let n = self.norm.forward(g, p, x)?;
        let gate = self.gate.forward(g, p, n)?;
        let gate = g.silu(gate)?;
        let y = self.inner.forward(g, p, n)?;
        let y = g.depthwise_conv2d(y, p[self.dw_kernel], Some(p[self.dw_bias]))?;
        let y = g.silu(y)?;
        let y = self.ss2d.forward(g, p, y, mode)?;
        let y = self.out_norm.forward(g, p, y)?;
        let y = g.mul(gate, y)?;
        let y = self.out.forward(g, p, y)?;
        g.add(x, y)
    }
}
