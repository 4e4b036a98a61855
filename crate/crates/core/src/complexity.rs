//! Analytic FLOP accounting over symbolic layer lists.
//!
//! Convention: one multiply-accumulate is 2 ops; norms, activations and
//! other elementwise work cost 1 op per element; gathers, reshapes and
//! concatenations are free. The same convention drives the runtime counter
//! in [`crate::tensor::counter`], and the tests check that the two agree
//! exactly wherever both exist.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{config_err, Error, Result};
use crate::scan::ScanMode;
use crate::ss2d::ProjectionSharing;
use crate::tensor::kernels::SCAN_OPS_PER_SKIP;
use crate::vmunet::config::{IN_CHANNELS, NUM_CLASSES, PATCH};
use crate::vmunet::VmUnetConfig;

pub const CONVENTION: &str =
    "1 multiply-accumulate = 2 FLOPs; norms, activations and elementwise ops = 1 FLOP per element";

/// Valid convolution over `l` output positions with a `k`-element kernel.
pub fn flops_conv(l: u64, k: u64, cin: u64, cout: u64) -> u64 {
    2 * l * k * cin * cout
}

/// `QKᵀ` and `attention·V`: the part quadratic in `l`.
pub fn attention_leading_term(l: u64, d: u64) -> u64 {
    4 * l * l * d
}

/// Multi-head self-attention over `l` tokens of width `d`: Q/K/V and
/// output projections, the two score products, scaling and softmax.
pub fn flops_attention_heads(l: u64, d: u64, heads: u64) -> u64 {
    8 * l * d * d + attention_leading_term(l, d) + 2 * heads * l * l
}

pub fn flops_attention(l: u64, d: u64) -> u64 {
    flops_attention_heads(l, d, 1)
}

/// Δ projection (matmul, bias, softplus) plus the B and C projections for
/// `l` tokens of width `d` and state size `h`.
pub fn flops_scan_projection(l: u64, d: u64, h: u64) -> u64 {
    2 * l * d * d + 2 * l * d + 4 * l * d * h
}

/// The recurrence and the `D` skip.
pub fn flops_scan_recurrence(l: u64, d: u64, h: u64, mode: ScanMode) -> u64 {
    l * d * (h * mode.ops_per_state() + SCAN_OPS_PER_SKIP)
}

/// One selective scan over `l` steps of width `d` with state size `h`,
/// including its input projections. The input-independent
/// `A = -exp(a_log)` transform is not included; it is `2·d·h` extra,
/// independent of `l`.
pub fn flops_scan(l: u64, d: u64, h: u64, mode: ScanMode) -> u64 {
    flops_scan_projection(l, d, h) + flops_scan_recurrence(l, d, h, mode)
}

/// Cost of `A = -exp(a_log)` for one scan.
pub fn flops_scan_state(d: u64, h: u64) -> u64 {
    2 * d * h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// `l` output positions, `k` kernel elements.
    Conv {
        l: u64,
        k: u64,
        cin: u64,
        cout: u64,
        bias: bool,
    },
    DepthwiseConv {
        l: u64,
        k: u64,
        c: u64,
        bias: bool,
    },
    Linear {
        l: u64,
        din: u64,
        dout: u64,
        bias: bool,
    },
    Attention {
        l: u64,
        d: u64,
        heads: u64,
    },
    /// `project = false` when the projections are listed separately.
    Scan {
        l: u64,
        d: u64,
        h: u64,
        mode: ScanMode,
        project: bool,
    },
    Norm {
        n: u64,
    },
    Activation {
        n: u64,
    },
    Elementwise {
        n: u64,
    },
    /// 2x2 merge of `l` tokens of width `c`: LN(4c) then linear 4c → 2c.
    Merge {
        l: u64,
        c: u64,
    },
    /// Linear `c → f²·cout` on `l` tokens, depth-to-space, LN(cout).
    Expand {
        l: u64,
        c: u64,
        factor: u64,
        cout: u64,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::DepthwiseConv { .. } => "depthwise-conv",
            Layer::Linear { .. } => "linear",
            Layer::Attention { .. } => "attention",
            Layer::Scan { .. } => "scan",
            Layer::Norm { .. } => "norm",
            Layer::Activation { .. } => "activation",
            Layer::Elementwise { .. } => "elementwise",
            Layer::Merge { .. } => "merge",
            Layer::Expand { .. } => "expand",
        }
    }

    pub fn flops(&self) -> u64 {
        match *self {
            Layer::Conv {
                l,
                k,
                cin,
                cout,
                bias,
            } => flops_conv(l, k, cin, cout) + bias as u64 * l * cout,
            Layer::DepthwiseConv { l, k, c, bias } => 2 * l * k * c + bias as u64 * l * c,
            Layer::Linear { l, din, dout, bias } => {
                flops_conv(l, 1, din, dout) + bias as u64 * l * dout
            }
            Layer::Attention { l, d, heads } => flops_attention_heads(l, d, heads),
            Layer::Scan {
                l,
                d,
                h,
                mode,
                project,
            } => {
                flops_scan_recurrence(l, d, h, mode)
                    + project as u64 * flops_scan_projection(l, d, h)
            }
            Layer::Norm { n } | Layer::Activation { n } | Layer::Elementwise { n } => n,
            Layer::Merge { l, c } => l * c + flops_conv(l / 4, 1, 4 * c, 2 * c),
            Layer::Expand { l, c, factor, cout } => {
                let f2 = factor * factor;
                flops_conv(l, 1, c, f2 * cout) + l * f2 * cout
            }
        }
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let b = |v: bool| (v as u8).to_string();
        match *self {
            Layer::Conv {
                l,
                k,
                cin,
                cout,
                bias,
            } => vec![
                ("l", l.to_string()),
                ("k", k.to_string()),
                ("cin", cin.to_string()),
                ("cout", cout.to_string()),
                ("bias", b(bias)),
            ],
            Layer::DepthwiseConv { l, k, c, bias } => vec![
                ("l", l.to_string()),
                ("k", k.to_string()),
                ("c", c.to_string()),
                ("bias", b(bias)),
            ],
            Layer::Linear { l, din, dout, bias } => vec![
                ("l", l.to_string()),
                ("din", din.to_string()),
                ("dout", dout.to_string()),
                ("bias", b(bias)),
            ],
            Layer::Attention { l, d, heads } => vec![
                ("l", l.to_string()),
                ("d", d.to_string()),
                ("heads", heads.to_string()),
            ],
            Layer::Scan {
                l,
                d,
                h,
                mode,
                project,
            } => vec![
                ("l", l.to_string()),
                ("d", d.to_string()),
                ("h", h.to_string()),
                ("mode", mode.name().to_string()),
                ("project", b(project)),
            ],
            Layer::Norm { n } | Layer::Activation { n } | Layer::Elementwise { n } => {
                vec![("n", n.to_string())]
            }
            Layer::Merge { l, c } => vec![("l", l.to_string()), ("c", c.to_string())],
            Layer::Expand { l, c, factor, cout } => vec![
                ("l", l.to_string()),
                ("c", c.to_string()),
                ("factor", factor.to_string()),
                ("cout", cout.to_string()),
            ],
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind())?;
        for (k, v) in self.fields() {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

struct Fields<'a> {
    line: usize,
    kind: &'a str,
    pairs: Vec<(&'a str, &'a str)>,
}

impl Fields<'_> {
    fn raw(&self, key: &str) -> Result<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| config_err!("line {}: `{}` needs `{key}=`", self.line, self.kind))
    }

    fn num(&self, key: &str) -> Result<u64> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| config_err!("line {}: `{key}={v}` is not a count", self.line))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        if !self.pairs.iter().any(|(k, _)| *k == key) {
            return Ok(false);
        }
        match self.raw(key)? {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            v => Err(config_err!("line {}: `{key}={v}` is not a flag", self.line)),
        }
    }

    fn only(&self, keys: &[&str]) -> Result<()> {
        match self.pairs.iter().find(|(k, _)| !keys.contains(k)) {
            Some((k, _)) => Err(config_err!(
                "line {}: `{}` has no key `{k}`",
                self.line,
                self.kind
            )),
            None => Ok(()),
        }
    }
}

fn parse_layer(f: &Fields<'_>) -> Result<Layer> {
    let layer = match f.kind {
        "conv" => {
            f.only(&["l", "k", "cin", "cout", "bias"])?;
            Layer::Conv {
                l: f.num("l")?,
                k: f.num("k")?,
                cin: f.num("cin")?,
                cout: f.num("cout")?,
                bias: f.flag("bias")?,
            }
        }
        "depthwise-conv" => {
            f.only(&["l", "k", "c", "bias"])?;
            Layer::DepthwiseConv {
                l: f.num("l")?,
                k: f.num("k")?,
                c: f.num("c")?,
                bias: f.flag("bias")?,
            }
        }
        "linear" => {
            f.only(&["l", "din", "dout", "bias"])?;
            Layer::Linear {
                l: f.num("l")?,
                din: f.num("din")?,
                dout: f.num("dout")?,
                bias: f.flag("bias")?,
            }
        }
        "attention" => {
            f.only(&["l", "d", "heads"])?;
            let heads = if f.pairs.iter().any(|(k, _)| *k == "heads") {
                f.num("heads")?
            } else {
                1
            };
            Layer::Attention {
                l: f.num("l")?,
                d: f.num("d")?,
                heads,
            }
        }
        "scan" => {
            f.only(&["l", "d", "h", "mode", "project"])?;
            let mode = f.raw("mode")?;
            let project = !f.pairs.iter().any(|(k, _)| *k == "project") || f.flag("project")?;
            Layer::Scan {
                l: f.num("l")?,
                d: f.num("d")?,
                h: f.num("h")?,
                mode: mode
                    .parse()
                    .map_err(|e: String| config_err!("line {}: {e}", f.line))?,
                project,
            }
        }
        "norm" | "activation" | "elementwise" => {
            f.only(&["n"])?;
            let n = f.num("n")?;
            match f.kind {
                "norm" => Layer::Norm { n },
                "activation" => Layer::Activation { n },
                _ => Layer::Elementwise { n },
            }
        }
        "merge" => {
            f.only(&["l", "c"])?;
            Layer::Merge {
                l: f.num("l")?,
                c: f.num("c")?,
            }
        }
        "expand" => {
            f.only(&["l", "c", "factor", "cout"])?;
            Layer::Expand {
                l: f.num("l")?,
                c: f.num("c")?,
                factor: f.num("factor")?,
                cout: f.num("cout")?,
            }
        }
        other => {
            return Err(config_err!("line {}: unknown layer kind `{other}`", f.line));
        }
    };
    Ok(layer)
}

/// An architecture at one input resolution, as an ordered layer list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ArchSpec {
    pub name: String,
    pub resolution: usize,
    pub layers: Vec<Layer>,
}

impl ArchSpec {
    pub fn new(name: impl Into<String>, resolution: usize) -> Self {
        Self {
            name: name.into(),
            resolution,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: Layer) -> &mut Self {
        self.layers.push(layer);
        self
    }

    /// Text form: an `arch name=<n> resolution=<r>` line, then one
    /// `kind key=value ...` line per layer. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = ArchSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let kind = words.next().expect("non-empty line");
            let pairs = words
                .map(|w| {
                    w.split_once('=')
                        .ok_or_else(|| config_err!("line {}: expected key=value, got `{w}`", i + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            let f = Fields {
                line: i + 1,
                kind,
                pairs,
            };
            if kind == "arch" {
                f.only(&["name", "resolution"])?;
                spec.name = f.raw("name")?.to_string();
                spec.resolution = f.num("resolution")? as usize;
            } else {
                spec.layers.push(parse_layer(&f)?);
            }
        }
        Ok(spec)
    }

    pub fn flops(&self) -> u64 {
        flops_network(self)
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "arch name={} resolution={}", self.name, self.resolution)?;
        for l in &self.layers {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

pub fn flops_network(spec: &ArchSpec) -> u64 {
    spec.layers.iter().map(Layer::flops).sum()
}

/// Layers of one visual state-space block on `l` tokens.
#[allow(clippy::too_many_arguments)]
fn vss_block(
    out: &mut ArchSpec,
    l: u64,
    c: u64,
    d: u64,
    h: u64,
    k: u64,
    mode: ScanMode,
    sharing: ProjectionSharing,
) {
    out.push(Layer::Norm { n: l * c })
        .push(Layer::Linear {
            l,
            din: c,
            dout: d,
            bias: false,
        })
        .push(Layer::Activation { n: l * d })
        .push(Layer::Linear {
            l,
            din: c,
            dout: d,
            bias: false,
        })
        .push(Layer::DepthwiseConv {
            l,
            k: k * k,
            c: d,
            bias: true,
        })
        .push(Layer::Activation { n: l * d });
    let shared = sharing == ProjectionSharing::Shared;
    if shared {
        // one Δ/B/C projection of the map, reordered per route
        out.push(Layer::Linear {
            l,
            din: d,
            dout: d,
            bias: true,
        })
        .push(Layer::Activation { n: l * d })
        .push(Layer::Linear {
            l,
            din: d,
            dout: h,
            bias: false,
        })
        .push(Layer::Linear {
            l,
            din: d,
            dout: h,
            bias: false,
        });
    }
    for _ in 0..4 {
        out.push(Layer::Scan {
            l,
            d,
            h,
            mode,
            project: !shared,
        })
        .push(Layer::Activation {
            n: flops_scan_state(d, h),
        });
    }
    out.push(Layer::Elementwise { n: 3 * l * d })
        .push(Layer::Norm { n: l * d })
        .push(Layer::Elementwise { n: l * d })
        .push(Layer::Linear {
            l,
            din: d,
            dout: c,
            bias: false,
        })
        .push(Layer::Elementwise { n: l * c });
}

/// Layer list of a VM-UNet forward pass, mirroring the model op for op.
pub fn vmunet_spec(cfg: &VmUnetConfig) -> Result<ArchSpec> {
    cfg.validate()?;
    let (hh, ww) = cfg.input;
    let mut s = ArchSpec::new("vmunet", hh.max(ww));
    let tokens = |st: usize| {
        let (a, b) = cfg.stage_grid(st);
        (a * b) as u64
    };
    let (h, k, mode) = (cfg.state_size as u64, cfg.conv_kernel as u64, cfg.scan_mode);
    let c0 = cfg.embed_dim as u64;
    let l0 = tokens(0);
    s.push(Layer::Linear {
        l: l0,
        din: (PATCH * PATCH * IN_CHANNELS) as u64,
        dout: c0,
        bias: true,
    })
    .push(Layer::Norm { n: l0 * c0 });
    for st in 0..4 {
        let (l, c, d) = (
            tokens(st),
            cfg.stage_dim(st) as u64,
            cfg.inner_dim(st) as u64,
        );
        for _ in 0..cfg.depths[st] {
            vss_block(&mut s, l, c, d, h, k, mode, cfg.sharing);
        }
        if st < 3 {
            s.push(Layer::Merge { l, c });
        }
    }
    for st in (0..4).rev() {
        let (l, c, d) = (
            tokens(st),
            cfg.stage_dim(st) as u64,
            cfg.inner_dim(st) as u64,
        );
        if st < 3 {
            s.push(Layer::Expand {
                l: tokens(st + 1),
                c: 2 * c,
                factor: 2,
                cout: c,
            })
            .push(Layer::Elementwise { n: l * c });
        }
        for _ in 0..cfg.decoder_depths[st] {
            vss_block(&mut s, l, c, d, h, k, mode, cfg.sharing);
        }
    }
    s.push(Layer::Expand {
        l: l0,
        c: c0,
        factor: PATCH as u64,
        cout: c0,
    })
    .push(Layer::Linear {
        l: (hh * ww) as u64,
        din: c0,
        dout: NUM_CLASSES as u64,
        bias: true,
    });
    Ok(s)
}

/// One pre-norm transformer block on `l` tokens.
pub fn vit_block_layers(out: &mut ArchSpec, l: u64, d: u64, heads: u64, mlp: u64) {
    out.push(Layer::Norm { n: l * d })
        .push(Layer::Attention { l, d, heads })
        .push(Layer::Elementwise { n: l * d }) // output projection bias
        .push(Layer::Elementwise { n: l * d })
        .push(Layer::Norm { n: l * d })
        .push(Layer::Linear {
            l,
            din: d,
            dout: mlp,
            bias: true,
        })
        .push(Layer::Activation { n: l * mlp })
        .push(Layer::Linear {
            l,
            din: mlp,
            dout: d,
            bias: true,
        })
        .push(Layer::Elementwise { n: l * d });
}

pub const VIT_PATCH: usize = 16;
pub const VIT_WIDTH: u64 = 768;
pub const VIT_DEPTH: usize = 12;
pub const VIT_HEADS: u64 = 12;
pub const VIT_MLP: u64 = 3072;
pub const CNN_BASE: u64 = 64;

fn vit_layers(s: &mut ArchSpec, grid: u64, din: u64) {
    let n = grid * grid;
    let l = n + 1;
    s.push(Layer::Linear {
        l: n,
        din,
        dout: VIT_WIDTH,
        bias: false,
    })
    .push(Layer::Elementwise { n: l * VIT_WIDTH });
    for _ in 0..VIT_DEPTH {
        vit_block_layers(s, l, VIT_WIDTH, VIT_HEADS, VIT_MLP);
    }
    s.push(Layer::Norm { n: l * VIT_WIDTH });
}

/// ViT-B/16 encoder (approximate reference): patch embedding, class token
/// and position add, 12 blocks of width 768, final LN.
pub fn vit_core(resolution: usize) -> Result<ArchSpec> {
    check_resolution(resolution, VIT_PATCH)?;
    let mut s = ArchSpec::new("vit-core", resolution);
    let g = (resolution / VIT_PATCH) as u64;
    vit_layers(&mut s, g, (VIT_PATCH * VIT_PATCH * IN_CHANNELS) as u64);
    Ok(s)
}

fn double_conv(s: &mut ArchSpec, l: u64, cin: u64, cout: u64) {
    for ci in [cin, cout] {
        s.push(Layer::Conv {
            l,
            k: 9,
            cin: ci,
            cout,
            bias: true,
        })
        .push(Layer::Norm { n: l * cout })
        .push(Layer::Activation { n: l * cout });
    }
}

/// Returns the bottleneck grid side and width.
fn unet_layers(s: &mut ArchSpec, resolution: usize) -> (u64, u64) {
    let r = resolution as u64;
    let px = |lvl: u32| (r >> lvl) * (r >> lvl);
    let ch = |lvl: u32| CNN_BASE << lvl;
    let mut cin = IN_CHANNELS as u64;
    for lvl in 0..4 {
        double_conv(s, px(lvl), cin, ch(lvl));
        // 2x2 max-pool: one comparison per input element
        s.push(Layer::Elementwise {
            n: px(lvl) * ch(lvl),
        });
        cin = ch(lvl);
    }
    double_conv(s, px(4), cin, ch(4));
    for lvl in (0..4).rev() {
        // 2x2 stride-2 transposed conv: one cin·cout MAC per output pixel
        s.push(Layer::Conv {
            l: px(lvl),
            k: 1,
            cin: ch(lvl + 1),
            cout: ch(lvl),
            bias: true,
        });
        double_conv(s, px(lvl), 2 * ch(lvl), ch(lvl));
    }
    s.push(Layer::Conv {
        l: px(0),
        k: 1,
        cin: ch(0),
        cout: NUM_CLASSES as u64,
        bias: true,
    });
    (r >> 4, ch(4))
}

/// A UNet with base width 64 and four 2x downsamplings (approximate
/// reference).
pub fn cnn_core(resolution: usize) -> Result<ArchSpec> {
    check_resolution(resolution, 16)?;
    let mut s = ArchSpec::new("cnn-core", resolution);
    unet_layers(&mut s, resolution);
    Ok(s)
}

/// The CNN core plus a ViT-B encoder over its 1/16-scale bottleneck
/// tokens (approximate reference).
pub fn hybrid_core(resolution: usize) -> Result<ArchSpec> {
    check_resolution(resolution, 16)?;
    let mut s = ArchSpec::new("hybrid-core", resolution);
    let (g, c) = unet_layers(&mut s, resolution);
    vit_layers(&mut s, g, c);
    Ok(s)
}

fn check_resolution(r: usize, stride: usize) -> Result<()> {
    if r == 0 || !r.is_multiple_of(stride) {
        return Err(config_err!(
            "resolution {r} must be a positive multiple of {stride}"
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    VmUnet,
    VitCore,
    CnnCore,
    HybridCore,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::VmUnet, Arch::VitCore, Arch::CnnCore, Arch::HybridCore];

    pub fn name(self) -> &'static str {
        match self {
            Arch::VmUnet => "vmunet",
            Arch::VitCore => "vit-core",
            Arch::CnnCore => "cnn-core",
            Arch::HybridCore => "hybrid-core",
        }
    }

    /// The full-scale spec at a square `resolution`.
    pub fn spec(self, resolution: usize) -> Result<ArchSpec> {
        match self {
            Arch::VmUnet => vmunet_spec(&VmUnetConfig::full().with_input(resolution, resolution)),
            Arch::VitCore => vit_core(resolution),
            Arch::CnnCore => cnn_core(resolution),
            Arch::HybridCore => hybrid_core(resolution),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                config_err!("unknown architecture `{s}` (vmunet, vit-core, cnn-core, hybrid-core)")
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsRow {
    pub resolution: usize,
    pub arch: Arch,
    pub flops: u64,
}

impl FlopsRow {
    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

pub const DEFAULT_RESOLUTIONS: [usize; 4] = [224, 448, 896, 1792];

/// Every `(resolution, arch)` pair, resolution-major.
pub fn flops_table(archs: &[Arch], resolutions: &[usize]) -> Result<Vec<FlopsRow>> {
    let mut rows = Vec::with_capacity(archs.len() * resolutions.len());
    for &r in resolutions {
        for &a in archs {
            rows.push(FlopsRow {
                resolution: r,
                arch: a,
                flops: a.spec(r)?.flops(),
            });
        }
    }
    Ok(rows)
}

pub fn flops_csv(rows: &[FlopsRow]) -> String {
    let mut out = String::from("resolution,arch,gflops\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6}\n",
            r.resolution,
            r.arch.name(),
            r.gflops()
        ));
    }
    out
}

/// Least-squares polynomial fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    /// Coefficients, constant term first.
    pub coeffs: Vec<f64>,
    pub r_squared: f64,
}

impl Fit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize) -> Result<Fit> {
    if xs.len() != ys.len() || xs.len() <= degree {
        return Err(config_err!(
            "degree-{degree} fit needs more than {degree} matched points, got {}/{}",
            xs.len(),
            ys.len()
        ));
    }
    // scale x to [0, 1] so the Vandermonde matrix stays well conditioned
    let scale = xs
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let a = DMatrix::from_fn(xs.len(), degree + 1, |i, j| (xs[i] / scale).powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let sol = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| config_err!("least squares failed: {e}"))?;
    let pred = &a * &sol;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = ys
        .iter()
        .zip(pred.iter())
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    let coeffs = sol
        .iter()
        .enumerate()
        .map(|(j, c)| c / scale.powi(j as i32))
        .collect();
    Ok(Fit { coeffs, r_squared })
}
