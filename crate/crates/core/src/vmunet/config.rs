use crate::error::{Error, Result};
use crate::kv::{join, KvMap};
use crate::scan::ScanMode;
use crate::ss2d::ProjectionSharing;

/// Side of the non-overlapping input patches.
pub const PATCH: usize = 4;
/// Input image channels.
pub const IN_CHANNELS: usize = 3;
/// Output logits per pixel.
pub const NUM_CLASSES: usize = 1;
/// Total downsampling factor: patch embedding then three merges.
pub const STRIDE: usize = PATCH * 8;
pub const LN_EPS: f64 = 1e-5;

/// Shape of a VM-UNet.
#[derive(Debug, Clone, PartialEq)]
pub struct VmUnetConfig {
    /// Channels after patch embedding (`C`); stage `s` has `C·2^s`.
    pub embed_dim: usize,
    /// VSS blocks per encoder stage.
    pub depths: [usize; 4],
    /// VSS blocks per decoder stage, indexed by the stage width.
    pub decoder_depths: [usize; 4],
    /// Scan state size `H`.
    pub state_size: usize,
    /// Inner width of a VSS block as a multiple of its channels.
    pub expansion: usize,
    /// Depthwise kernel size inside a VSS block.
    pub conv_kernel: usize,
    pub sharing: ProjectionSharing,
    pub scan_mode: ScanMode,
    /// Input `(height, width)`.
    pub input: (usize, usize),
}

impl VmUnetConfig {
    /// C=96, encoder (2,2,9,2), decoder (2,2,2,2), H=16, 448x448 input.
    /// Expansion 1 with shared route projections.
    pub fn full() -> Self {
        Self {
            embed_dim: 96,
            depths: [2, 2, 9, 2],
            decoder_depths: [2, 2, 2, 2],
            state_size: 16,
            expansion: 1,
            conv_kernel: 3,
            sharing: ProjectionSharing::Shared,
            scan_mode: ScanMode::Exact,
            input: (448, 448),
        }
    }

    /// C=24, encoder (1,1,2,1), decoder (2,2,2,2), H=8, 64x64 input.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 24,
            depths: [1, 1, 2, 1],
            state_size: 8,
            input: (64, 64),
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(Error::Config(format!(
                "unknown preset '{name}' (full | tiny)"
            ))),
        }
    }

    pub fn with_input(mut self, h: usize, w: usize) -> Self {
        self.input = (h, w);
        self
    }

    pub fn stage_dim(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    pub fn inner_dim(&self, s: usize) -> usize {
        self.stage_dim(s) * self.expansion
    }

    /// Token grid of stage `s`.
    pub fn stage_grid(&self, s: usize) -> (usize, usize) {
        let f = PATCH << s;
        (self.input.0 / f, self.input.1 / f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.state_size == 0 || self.expansion == 0 {
            return bad("embed_dim, state_size and expansion must be positive".into());
        }
        if self
            .depths
            .iter()
            .chain(&self.decoder_depths)
            .any(|&d| d == 0)
        {
            return bad("every stage needs at least one block".into());
        }
        if self.conv_kernel.is_multiple_of(2) {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        let (h, w) = self.input;
        if h == 0 || w == 0 || h % STRIDE != 0 || w % STRIDE != 0 {
            return bad(format!(
                "input {h}x{w} must be a positive multiple of {STRIDE}"
            ));
        }
        Ok(())
    }

    /// Exact number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let ln = |c: usize| 2 * c;
        let c0 = self.embed_dim;
        let mut n = PATCH * PATCH * IN_CHANNELS * c0 + c0 + ln(c0);
        for s in 0..4 {
            n += (self.depths[s] + self.decoder_depths[s]) * self.block_params(s);
        }
        for s in 0..3 {
            let c = self.stage_dim(s);
            // merge: LN(4c) + 4c -> 2c
            n += ln(4 * c) + 4 * c * 2 * c;
            // expand from stage s+1: 2c -> 4c, LN(c)
            n += 2 * c * 4 * c + ln(c);
        }
        // final x4 expand and head
        n += c0 * 16 * c0 + ln(c0);
        n += c0 * NUM_CLASSES + NUM_CLASSES;
        n
    }

    fn block_params(&self, s: usize) -> usize {
        let c = self.stage_dim(s);
        let e = self.inner_dim(s);
        let h = self.state_size;
        let k = self.conv_kernel;
        let proj = e * e + e + 2 * e * h;
        let per_route = e * h + e;
        let scan = match self.sharing {
            ProjectionSharing::Shared => proj + 4 * per_route,
            ProjectionSharing::PerRoute => 4 * (proj + per_route),
        };
        2 * c + 2 * c * e + e * k * k + e + scan + 2 * e + e * c
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("embed_dim", self.embed_dim);
        m.set("depths", join(&self.depths));
        m.set("decoder_depths", join(&self.decoder_depths));
        m.set("state_size", self.state_size);
        m.set("expansion", self.expansion);
        m.set("conv_kernel", self.conv_kernel);
        m.set("sharing", self.sharing.name());
        m.set("scan_mode", self.scan_mode.name());
        m.set("input_height", self.input.0);
        m.set("input_width", self.input.1);
        m
    }

    /// Reads a config; keys absent from `kv` keep the values of `base`.
    pub fn from_kv(kv: &KvMap, base: Self) -> Result<Self> {
        let four = |key: &str, def: [usize; 4]| -> Result<[usize; 4]> {
            match kv.list::<usize>(key)? {
                None => Ok(def),
                Some(v) => v
                    .try_into()
                    .map_err(|_| Error::Config(format!("'{key}' needs four values"))),
            }
        };
        let cfg = Self {
            embed_dim: kv.or("embed_dim", base.embed_dim)?,
            depths: four("depths", base.depths)?,
            decoder_depths: four("decoder_depths", base.decoder_depths)?,
            state_size: kv.or("state_size", base.state_size)?,
            expansion: kv.or("expansion", base.expansion)?,
            conv_kernel: kv.or("conv_kernel", base.conv_kernel)?,
            sharing: kv.or("sharing", base.sharing)?,
            scan_mode: kv.or("scan_mode", base.scan_mode)?,
            input: (
                kv.or("input_height", base.input.0)?,
                kv.or("input_width", base.input.1)?,
            ),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub const KEYS: &'static [&'static str] = &[
        "embed_dim",
        "depths",
        "decoder_depths",
        "state_size",
        "expansion",
        "conv_kernel",
        "sharing",
        "scan_mode",
        "input_height",
        "input_width",
    ];
}

impl Default for VmUnetConfig {
    fn default() -> Self {
        Self::tiny()
    }
}
