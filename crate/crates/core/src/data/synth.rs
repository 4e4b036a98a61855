use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::SegSample;
use crate::error::{config_err, Result};
use crate::kv::{join, KvMap};
use crate::seed::{self, Stream};
use crate::tensor::Tensor;

pub const GEN_CONFIG_FILE: &str = "gen_config.txt";

/// Synthetic crack dataset parameters. Ranges are inclusive `(lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    /// Stroke width in pixels.
    pub width: (f32, f32),
    /// Cracks per image; `(0, 0)` gives crack-free images.
    pub cracks: (usize, usize),
    /// Amplitude of the low-frequency background texture.
    pub texture: f32,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f32,
    /// Background grey level.
    pub background: (f32, f32),
    /// Crack grey level; kept below the background range.
    pub crack_level: (f32, f32),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 200,
            size: 64,
            width: (2.0, 4.0),
            cracks: (1, 3),
            texture: 0.06,
            noise: 0.02,
            background: (0.55, 0.8),
            crack_level: (0.05, 0.25),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub const KEYS: &'static [&'static str] = &[
        "count",
        "size",
        "width",
        "cracks",
        "texture",
        "noise",
        "background",
        "crack_level",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f32, f32)| {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(config_err!("`{name}` range {lo}..{hi} is not ordered"));
            }
            Ok(())
        };
        ordered("width", self.width)?;
        ordered("background", self.background)?;
        ordered("crack_level", self.crack_level)?;
        if self.size < 4 {
            return Err(config_err!("image size {} is too small", self.size));
        }
        if self.width.0 <= 0.0 {
            return Err(config_err!("crack width must be positive"));
        }
        if self.cracks.0 > self.cracks.1 {
            return Err(config_err!("`cracks` range is not ordered"));
        }
        if self.texture < 0.0 || self.noise < 0.0 {
            return Err(config_err!("texture and noise must be non-negative"));
        }
        if self.crack_level.0 < 0.0 || self.background.1 > 1.0 {
            return Err(config_err!("grey levels must lie in [0, 1]"));
        }
        if self.crack_level.1 >= self.background.0 {
            return Err(config_err!("cracks must be darker than the background"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("count", self.count);
        m.set("size", self.size);
        m.set("width", join(&[self.width.0, self.width.1]));
        m.set("cracks", join(&[self.cracks.0, self.cracks.1]));
        m.set("texture", self.texture);
        m.set("noise", self.noise);
        m.set("background", join(&[self.background.0, self.background.1]));
        m.set(
            "crack_level",
            join(&[self.crack_level.0, self.crack_level.1]),
        );
        m.set("seed", self.seed);
        m
    }

    /// Keys absent from `kv` keep the values of `base`. A single value
    /// for a range key means a fixed value.
    pub fn from_kv(kv: &KvMap, base: Self) -> Result<Self> {
        fn range<V: std::str::FromStr + Copy>(kv: &KvMap, key: &str, def: (V, V)) -> Result<(V, V)>
        where
            V::Err: std::fmt::Display,
        {
            match kv.list::<V>(key)?.as_deref() {
                None => Ok(def),
                Some([v]) => Ok((*v, *v)),
                Some([a, b]) => Ok((*a, *b)),
                Some(_) => Err(config_err!("`{key}` takes one value or a lo,hi pair")),
            }
        }
        let cfg = Self {
            count: kv.or("count", base.count)?,
            size: kv.or("size", base.size)?,
            width: range(kv, "width", base.width)?,
            cracks: range(kv, "cracks", base.cracks)?,
            texture: kv.or("texture", base.texture)?,
            noise: kv.or("noise", base.noise)?,
            background: range(kv, "background", base.background)?,
            crack_level: range(kv, "crack_level", base.crack_level)?,
            seed: kv.or("seed", base.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A polyline crack with per-vertex half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub points: Vec<(f32, f32)>,
    pub half_widths: Vec<f32>,
    pub level: f32,
}

impl Stroke {
    /// Whether the point `(x, y)` lies within the stroke: its distance to
    /// some segment is at most the half-width interpolated at the foot of
    /// the perpendicular.
    pub fn covers(&self, x: f32, y: f32) -> bool {
        self.points
            .windows(2)
            .zip(self.half_widths.windows(2))
            .any(|(p, w)| {
                let ((x0, y0), (x1, y1)) = (p[0], p[1]);
                let (dx, dy) = (x1 - x0, y1 - y0);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (x0 + t * dx - x, y0 + t * dy - y);
                let hw = w[0] + t * (w[1] - w[0]);
                px * px + py * py <= hw * hw
            })
    }

    fn bounds(&self) -> (f32, f32, f32, f32) {
        let hw = self.half_widths.iter().copied().fold(0.0, f32::max);
        let (mut x0, mut y0, mut x1, mut y1) = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
        for &(x, y) in &self.points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        (x0 - hw, y0 - hw, x1 + hw, y1 + hw)
    }
}

/// One generated image with the strokes it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub sample: SegSample,
    pub strokes: Vec<Stroke>,
    pub background: [f32; 3],
}

fn random_stroke<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Stroke {
    let s = cfg.size as f32;
    let mut x = rng.gen_range(0.0..s);
    let mut y = rng.gen_range(0.0..s);
    let mut theta = rng.gen_range(0.0..std::f32::consts::TAU);
    let turn = Normal::new(0.0, 0.35).expect("valid sigma");
    let segments = rng.gen_range(6..=14);
    let sample_hw = |rng: &mut R| {
        let (lo, hi) = cfg.width;
        0.5 * if lo < hi { rng.gen_range(lo..=hi) } else { lo }
    };
    let mut points = vec![(x, y)];
    let mut half_widths = vec![sample_hw(rng)];
    for _ in 0..segments {
        theta += turn.sample(rng);
        let step = s * rng.gen_range(0.06..0.12);
        x += step * theta.cos();
        y += step * theta.sin();
        points.push((x, y));
        half_widths.push(sample_hw(rng));
    }
    let (lo, hi) = cfg.crack_level;
    let level = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
    Stroke {
        points,
        half_widths,
        level,
    }
}

/// Draws image `index` of the dataset described by `cfg`.
pub fn render(cfg: &SynthConfig, index: usize) -> Result<SynthImage> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, Stream::Synth, index as u64);
    let n = cfg.size;
    let (lo, hi) = cfg.background;
    let grey = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
    // slight per-channel tint, kept inside [0, 1]
    let background = [0, 1, 2].map(|_| (grey * rng.gen_range(0.95f32..=1.05)).min(1.0));
    let waves: Vec<(f32, f32, f32)> = (0..3)
        .map(|_| {
            let f = rng.gen_range(0.5f32..3.0) * std::f32::consts::TAU / n as f32;
            let a = rng.gen_range(0.0..std::f32::consts::TAU);
            (
                f * a.cos(),
                f * a.sin(),
                rng.gen_range(0.0..std::f32::consts::TAU),
            )
        })
        .collect();

    let count = rng.gen_range(cfg.cracks.0..=cfg.cracks.1);
    let strokes: Vec<Stroke> = (0..count).map(|_| random_stroke(cfg, &mut rng)).collect();

    let mut img = vec![0.0f32; n * n * 3];
    for y in 0..n {
        for x in 0..n {
            let tex = if cfg.texture > 0.0 {
                let s: f32 = waves
                    .iter()
                    .map(|(fx, fy, ph)| (fx * x as f32 + fy * y as f32 + ph).sin())
                    .sum();
                cfg.texture * s / waves.len() as f32
            } else {
                0.0
            };
            for ch in 0..3 {
                img[(y * n + x) * 3 + ch] = background[ch] + tex;
            }
        }
    }
    let mut mask = vec![0.0f32; n * n];
    for st in &strokes {
        let (x0, y0, x1, y1) = st.bounds();
        let clamp = |v: f32| (v.floor().max(0.0) as usize).min(n);
        for y in clamp(y0)..clamp(y1 + 1.0) {
            for x in clamp(x0)..clamp(x1 + 1.0) {
                if st.covers(x as f32 + 0.5, y as f32 + 0.5) {
                    let p = y * n + x;
                    mask[p] = 1.0;
                    for ch in 0..3 {
                        let v = &mut img[p * 3 + ch];
                        *v = v.min(st.level);
                    }
                }
            }
        }
    }
    if cfg.noise > 0.0 {
        let noise = Normal::new(0.0f32, cfg.noise).map_err(|e| config_err!("noise: {e}"))?;
        for v in &mut img {
            *v += noise.sample(&mut rng);
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    let sample = SegSample::new(
        format!("synth_{index:05}"),
        Tensor::new(vec![n, n, 3], img)?,
        Tensor::new(vec![n, n], mask)?,
    )?;
    Ok(SynthImage {
        sample,
        strokes,
        background,
    })
}

/// The whole dataset. Each image has its own random stream, so the result
/// does not depend on thread count or scheduling.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<SegSample>> {
    cfg.validate()?;
    (0..cfg.count)
        .into_par_iter()
        .map(|i| render(cfg, i).map(|s| s.sample))
        .collect()
}
