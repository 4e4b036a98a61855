//! VM-UNet: patch embedding, a four-stage VSS encoder with patch merging,
//! a mirrored decoder with patch expanding and additive skips, and a
//! per-pixel linear head producing one logit per input pixel.
//!
//! All feature maps are channel-last `[h, w, c]`; images are `[H, W, 3]`.

pub mod checkpoint;
pub mod config;
pub mod layers;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use config::VmUnetConfig;
use config::{IN_CHANNELS, NUM_CLASSES};
use layers::{Linear, PatchEmbed, PatchExpand, PatchMerge, VssBlock};

#[derive(Debug, Clone)]
struct Layers {
    embed: PatchEmbed,
    encoder: [Vec<VssBlock>; 4],
    merges: [PatchMerge; 3],
    expands: [PatchExpand; 3],
    decoder: [Vec<VssBlock>; 4],
    final_expand: PatchExpand,
    head: Linear,
}

/// Weights plus the layer map that addresses them.
#[derive(Debug, Clone)]
pub struct VmUnet<T> {
    cfg: VmUnetConfig,
    params: ParamStore<T>,
    layers: Layers,
}

impl<T: Scalar> VmUnet<T> {
    pub fn new<R: Rng>(cfg: VmUnetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let layers = {
            let mut pb = ParamBuilder::new(&mut params, rng);
            build(&mut pb, &cfg)?
        };
        Ok(Self {
            cfg,
            params,
            layers,
        })
    }

    pub fn config(&self) -> &VmUnetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    /// Forward pass of `image: [H, W, 3]` to logits `[H, W, 1]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<Var> {
        let (h, w) = self.cfg.input;
        if g.shape(image) != [h, w, IN_CHANNELS] {
            return Err(Error::Config(format!(
                "model expects a [{h}, {w}, {IN_CHANNELS}] image, got {:?}",
                g.shape(image)
            )));
        }
        let mode = self.cfg.scan_mode;
        let l = &self.layers;
        let mut x = l.embed.forward(g, p, image)?;
        let mut skips = Vec::with_capacity(4);
        for s in 0..4 {
            for blk in &l.encoder[s] {
                x = blk.forward(g, p, x, mode)?;
            }
            skips.push(x);
            if s < 3 {
                x = l.merges[s].forward(g, p, x)?;
            }
        }
        for s in (0..4).rev() {
            if s < 3 {
                x = l.expands[s].forward(g, p, x)?;
                x = g.add(x, skips[s])?;
            }
            for blk in &l.decoder[s] {
                x = blk.forward(g, p, x, mode)?;
            }
        }
        let x = l.final_expand.forward(g, p, x)?;
        l.head.forward(g, p, x)
    }

    /// Logits for one image without gradient bookkeeping.
    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(image.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }

    /// Per-pixel crack probabilities `[H, W]`.
    pub fn probabilities(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.logits(image)?;
        let (h, w) = self.cfg.input;
        logits
            .map(crate::tensor::kernels::sigmoid)
            .reshape(vec![h, w])
    }
}

fn build<T: Scalar, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, cfg: &VmUnetConfig) -> Result<Layers> {
    let c0 = cfg.embed_dim;
    let embed = PatchEmbed::init(pb, IN_CHANNELS, c0)?;
    let stage_blocks = |pb: &mut ParamBuilder<'_, T, R>, prefix: &str, s: usize, n: usize| {
        (0..n)
            .map(|b| {
                pb.scoped(&format!("{prefix}.{s}.blocks.{b}"), |pb| {
                    VssBlock::init(
                        pb,
                        cfg.stage_dim(s),
                        cfg.inner_dim(s),
                        cfg.state_size,
                        cfg.conv_kernel,
                        cfg.sharing,
                    )
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let mut encoder: [Vec<VssBlock>; 4] = Default::default();
    let mut merges = Vec::with_capacity(3);
    for s in 0..4 {
        encoder[s] = stage_blocks(pb, "encoder", s, cfg.depths[s])?;
        if s < 3 {
            merges.push(pb.scoped(&format!("encoder.{s}.merge"), |pb| {
                PatchMerge::init(pb, cfg.stage_dim(s))
            })?);
        }
    }
    let mut decoder: [Vec<VssBlock>; 4] = Default::default();
    let mut expands = Vec::with_capacity(3);
    for s in (0..4).rev() {
        if s < 3 {
            expands.push(pb.scoped(&format!("decoder.{s}.expand"), |pb| {
                PatchExpand::init(pb, cfg.stage_dim(s + 1))
            })?);
        }
        decoder[s] = stage_blocks(pb, "decoder", s, cfg.decoder_depths[s])?;
    }
    expands.reverse();
    let final_expand = pb.scoped("final_expand", |pb| PatchExpand::init_final(pb, c0))?;
    let head = Linear::init(pb, "head", c0, NUM_CLASSES, true)?;
    Ok(Layers {
        embed,
        encoder,
        merges: merges.try_into().expect("three merges"),
        expands: expands.try_into().expect("three expands"),
        decoder,
        final_expand,
        head,
    })
}

#[cfg(test)]
mod tests;
