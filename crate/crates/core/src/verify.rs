//! Self-check suites: scan form equivalence, the discretization limit,
//! finite-difference gradients, metric identities and the complexity
//! model. Each suite returns named [`Check`]s with a measured value and
//! the bound it must meet.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::complexity::{
    attention_leading_term, fit_polynomial, flops_scan, vmunet_spec, Arch, CONVENTION,
    DEFAULT_RESOLUTIONS,
};
use crate::error::{config_err, Error, Result};
use crate::gradcheck::{self, GradCheck, Stencil};
use crate::metrics::{dice_loss, overlap};
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::scan::{scan_matrix_form, scan_recurrence, ScanInputs, ScanMode, DELTA_INIT_RANGE};
use crate::ss2d::{ProjectionSharing, Ss2dParams};
use crate::tensor::{Scalar, Tensor};
use crate::vmunet::layers::VssBlock;
use crate::vmunet::{VmUnet, VmUnetConfig};

/// Gradient checks must stay below this relative error.
pub const GRAD_TOL: f64 = 1e-4;
pub const EQUIV_TOL_F64: f64 = 1e-10;
pub const EQUIV_TOL_F32: f64 = 1e-5;
/// Accepted error-reduction factors when every step size is halved.
pub const LIMIT_BAND: (f64, f64) = (3.5, 4.5);
pub const FLOPS_BAND_448: (f64, f64) = (8.0, 48.0);
pub const PARAM_BAND_FULL: (f64, f64) = (19e6, 35e6);
pub const TINY_PARAM_LIMIT: f64 = 1e6;
pub const MAX_HYBRID_RATIO: f64 = 0.15;
pub const MIN_R_SQUARED: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Equivalence,
    Discretization,
    Gradients,
    Metrics,
    Complexity,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Equivalence,
        Suite::Discretization,
        Suite::Gradients,
        Suite::Metrics,
        Suite::Complexity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Equivalence => "equivalence",
            Suite::Discretization => "discretization",
            Suite::Gradients => "gradients",
            Suite::Metrics => "metrics",
            Suite::Complexity => "complexity",
        }
    }

    pub fn run(self, opts: &VerifyOptions) -> Result<Vec<Check>> {
        match self {
            Suite::Equivalence => equivalence(opts.instances, opts.seed),
            Suite::Discretization => discretization(opts.instances / 10 + 1, opts.seed),
            Suite::Gradients => gradients(opts.seed),
            Suite::Metrics => metrics(opts.instances, opts.seed),
            Suite::Complexity => complexity(),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| config_err!("unknown suite `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Random instances for the sampled suites.
    pub instances: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit {
    Below(f64),
    AtMost(f64),
    AtLeast(f64),
    Within(f64, f64),
    Equal(f64),
}

impl Limit {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Limit::Below(b) => v < b,
            Limit::AtMost(b) => v <= b,
            Limit::AtLeast(b) => v >= b,
            Limit::Within(lo, hi) => (lo..=hi).contains(&v),
            Limit::Equal(b) => v == b,
        }
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Below(b) => write!(f, "< {b:e}"),
            Limit::AtMost(b) => write!(f, "<= {b}"),
            Limit::AtLeast(b) => write!(f, ">= {b}"),
            Limit::Within(lo, hi) => write!(f, "in [{lo}, {hi}]"),
            Limit::Equal(b) => write!(f, "== {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub value: f64,
    pub limit: Limit,
    /// Extra context printed after the verdict.
    pub note: String,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, value: f64, limit: Limit) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            limit,
            note: String::new(),
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn passed(&self) -> bool {
        self.limit.holds(self.value)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{}: {:.6e} (needs {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.value,
            self.limit
        )?;
        if !self.note.is_empty() {
            write!(f, "  {}", self.note)?;
        }
        Ok(())
    }
}

/// A random scan problem: `(inputs, A)`.
///
/// Draws follow the model's own initialization: `Δ` log-uniform over
/// [`DELTA_INIT_RANGE`] and `-A` log-uniform in `[1, H]`; `x`, `B`, `C`
/// and `h0` are standard normal.
pub fn random_scan_instance<R: Rng>(
    rng: &mut R,
    l: usize,
    d: usize,
    h: usize,
    with_h0: bool,
) -> Result<(ScanInputs<f64>, Tensor<f64>)> {
    let normal = rand_distr::StandardNormal;
    let mut draw = |shape: Vec<usize>| Tensor::from_fn(shape, |_| rng.sample::<f64, _>(normal));
    let x = draw(vec![l, d])?;
    let b = draw(vec![l, h])?;
    let c = draw(vec![l, h])?;
    let h0 = draw(vec![d, h])?;
    let (lo, hi) = (DELTA_INIT_RANGE.0.ln(), DELTA_INIT_RANGE.1.ln());
    let delta = Tensor::from_fn(vec![l, d], |_| rng.gen_range(lo..hi).exp())?;
    let top = (h as f64).ln();
    let a = Tensor::from_fn(vec![d, h], |_| -rng.gen_range(0.0..=top).exp())?;
    let inp = ScanInputs::new(x, delta, b, c)?;
    let inp = if with_h0 { inp.with_h0(h0)? } else { inp };
    Ok((inp, a))
}

fn cast_inputs<U: Scalar>(inp: &ScanInputs<f64>) -> Result<ScanInputs<U>> {
    let i = ScanInputs::new(inp.x.cast(), inp.delta.cast(), inp.b.cast(), inp.c.cast())?;
    match &inp.h0 {
        Some(h0) => i.with_h0(h0.cast()),
        None => Ok(i),
    }
}

/// Largest recurrence vs. matrix-form gap over `instances` random problems
/// with `L ≤ 64`, `d ≤ 8`, `H ≤ 16` and random `h0`, in both precisions.
pub fn equivalence(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (l, d, h) = (
            rng.gen_range(1..=64),
            rng.gen_range(1..=8),
            rng.gen_range(1..=16),
        );
        let (inp, a) = random_scan_instance(&mut rng, l, d, h, true)?;
        let (yr, _) = scan_recurrence(&inp, &a, None, ScanMode::Simplified)?;
        let ym = scan_matrix_form(&inp, &a, ScanMode::Simplified)?;
        worst64 = worst64.max(yr.max_abs_diff(&ym)?);

        let (inp32, a32) = (cast_inputs::<f32>(&inp)?, a.cast::<f32>());
        let (yr, _) = scan_recurrence(&inp32, &a32, None, ScanMode::Simplified)?;
        let ym = scan_matrix_form(&inp32, &a32, ScanMode::Simplified)?;
        worst32 = worst32.max(yr.max_abs_diff(&ym)? as f64);
    }
    let secs = start.elapsed().as_secs_f64();
    let s = Suite::Equivalence;
    Ok(vec![
        Check::new(
            s,
            "recurrence_vs_matrix_f64",
            worst64,
            Limit::Below(EQUIV_TOL_F64),
        )
        .note(format!("{instances} instances")),
        Check::new(
            s,
            "recurrence_vs_matrix_f32",
            worst32,
            Limit::Below(EQUIV_TOL_F32),
        ),
        Check::new(s, "runtime_seconds", secs, Limit::Below(60.0)),
    ])
}

/// Gap between exact and simplified discretization at `Δ` and at `Δ/2`,
/// for one instance. Returns the reduction factor.
pub fn halving_ratio(inp: &ScanInputs<f64>, a: &Tensor<f64>) -> Result<f64> {
    let gap = |inp: &ScanInputs<f64>| -> Result<f64> {
        let (ye, _) = scan_recurrence(inp, a, None, ScanMode::Exact)?;
        let (ys, _) = scan_recurrence(inp, a, None, ScanMode::Simplified)?;
        ye.max_abs_diff(&ys)
    };
    let mut half = inp.clone();
    half.delta = inp.delta.map(|v| v * 0.5);
    Ok(gap(inp)? / gap(&half)?)
}

/// Halving every `Δ` must shrink the exact/simplified gap about fourfold.
///
/// The factor is exactly 4 only while the accumulated decay `L·Δ·|A|` is
/// small: halving `Δ` also weakens the decay applied to older steps, which
/// pushes the factor below 4 (about 3.4 at `Δ ≤ 5e-3`, `L = 64`, `H = 16`).
/// The instances use the equivalence suite's draws with `Δ` scaled down
/// to at most `5e-4`.
pub fn discretization(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15c);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..instances {
        let (l, d, h) = (
            rng.gen_range(1..=64),
            rng.gen_range(1..=8),
            rng.gen_range(1..=16),
        );
        let (mut inp, a) = random_scan_instance(&mut rng, l, d, h, true)?;
        inp.delta = inp.delta.map(|v| v * 5e-3);
        let r = halving_ratio(&inp, &a)?;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    let s = Suite::Discretization;
    let band = Limit::Within(LIMIT_BAND.0, LIMIT_BAND.1);
    Ok(vec![
        Check::new(s, "halving_ratio_min", lo, band).note(format!("{instances} instances")),
        Check::new(s, "halving_ratio_max", hi, band),
    ])
}

fn perturbed(store: &ParamStore<f64>, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    // move every parameter off its init (zeros, ones) so no gradient is
    // trivially zero
    store
        .iter()
        .map(|(_, t)| {
            let mut t = t.clone();
            for v in t.data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
            t
        })
        .collect()
}

fn build<O>(
    seed: u64,
    f: impl FnOnce(&mut ParamBuilder<'_, f64, ChaCha8Rng>) -> Result<O>,
) -> Result<(ParamStore<f64>, O)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = f(&mut ParamBuilder::new(&mut store, &mut rng))?;
    Ok((store, out))
}

/// Central finite differences against the analytic gradient of every
/// differentiable building block, in `f64`.
pub fn gradients(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9ad);
    let mut rand = |shape: &[usize], lo: f64, hi: f64| {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
    };
    let mut out = Vec::new();
    let mut push = |name: &str, r: GradCheck| {
        out.push(
            Check::new(
                Suite::Gradients,
                name,
                r.max_rel_err(),
                Limit::Below(GRAD_TOL),
            )
            .note(format!("{} entries", r.checked)),
        )
    };

    let (a, b) = (rand(&[3, 4], -1.0, 1.0)?, rand(&[4, 5], -1.0, 1.0)?);
    push(
        "matmul",
        gradcheck::check(&[a, b], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            gradcheck::project(g, y, 1)
        })?,
    );

    let (x, gm, bt) = (
        rand(&[4, 6], -2.0, 2.0)?,
        rand(&[6], 0.5, 1.5)?,
        rand(&[6], -0.5, 0.5)?,
    );
    push(
        "layer_norm",
        gradcheck::check(&[x, gm, bt], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            gradcheck::project(g, y, 2)
        })?,
    );

    push(
        "silu",
        gradcheck::check(&[rand(&[10], -4.0, 4.0)?], |g, v| {
            let y = g.silu(v[0])?;
            gradcheck::project(g, y, 3)
        })?,
    );

    let (x, k, bias) = (
        rand(&[5, 4, 3], -1.0, 1.0)?,
        rand(&[3, 3, 3], -1.0, 1.0)?,
        rand(&[3], -1.0, 1.0)?,
    );
    push(
        "depthwise_conv",
        gradcheck::check(&[x, k, bias], |g, v| {
            let y = g.depthwise_conv2d(v[0], v[1], Some(v[2]))?;
            gradcheck::project(g, y, 4)
        })?,
    );

    for (name, mode) in [
        ("scan_exact", ScanMode::Exact),
        ("scan_simplified", ScanMode::Simplified),
    ] {
        let (l, d, h) = (6, 3, 4);
        let inputs = vec![
            rand(&[l, d], -1.0, 1.0)?,
            rand(&[l, d], 0.05, 0.8)?,
            rand(&[d, h], -2.0, -0.3)?,
            rand(&[l, h], -1.0, 1.0)?,
            rand(&[l, h], -1.0, 1.0)?,
            rand(&[d], -1.0, 1.0)?,
        ];
        push(
            name,
            gradcheck::check(&inputs, |g, v| {
                let y = g.selective_scan(v[0], v[1], v[2], v[3], v[4], Some(v[5]), mode)?;
                gradcheck::project(g, y, 5)
            })?,
        );
    }

    for (name, sharing) in [
        ("ss2d_shared", ProjectionSharing::Shared),
        ("ss2d_per_route", ProjectionSharing::PerRoute),
    ] {
        let (store, ss) = build(seed + 6, |pb| Ss2dParams::init(pb, 3, 2, sharing))?;
        let mut inputs = vec![rand(&[3, 4, 3], -1.0, 1.0)?];
        inputs.extend(perturbed(&store, &mut ChaCha8Rng::seed_from_u64(seed + 7)));
        push(
            name,
            gradcheck::check(&inputs, |g, v| {
                let p = Bound::from_vars(v[1..].to_vec());
                let y = ss.forward(g, &p, v[0], ScanMode::Exact)?;
                gradcheck::project(g, y, 8)
            })?,
        );
    }

    let (store, blk) = build(seed + 9, |pb| {
        VssBlock::init(pb, 4, 4, 2, 3, ProjectionSharing::Shared)
    })?;
    let mut inputs = vec![rand(&[4, 4, 4], -1.0, 1.0)?];
    inputs.extend(perturbed(&store, &mut ChaCha8Rng::seed_from_u64(seed + 10)));
    push(
        "vss_block",
        gradcheck::check(&inputs, |g, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = blk.forward(g, &p, v[0], ScanMode::Exact)?;
            gradcheck::project(g, y, 11)
        })?,
    );

    // the desk-scale preset, probed at two entries of every parameter; the
    // whole-network value is large next to many of its gradient entries, so
    // the central formula at a small step is roundoff-bound there
    let model = VmUnet::<f64>::new(
        VmUnetConfig::tiny(),
        &mut ChaCha8Rng::seed_from_u64(seed + 12),
    )?;
    let inputs = perturbed(model.params(), &mut ChaCha8Rng::seed_from_u64(seed + 13));
    let (hh, ww) = model.config().input;
    let image = rand(&[hh, ww, 3], 0.0, 1.0)?;
    push(
        "vmunet_tiny",
        gradcheck::check_sampled_with(&inputs, 2, seed + 14, 1e-3, Stencil::FivePoint, |g, v| {
            let p = Bound::from_vars(v.to_vec());
            let x = g.constant(image.clone());
            let y = model.forward(g, &p, x)?;
            gradcheck::project(g, y, 15)
        })?,
    );

    let probs = rand(&[5, 6], 0.05, 0.95)?;
    let truth = rand(&[5, 6], 0.0, 1.0)?.map(|v| if v < 0.4 { 1.0 } else { 0.0 });
    push(
        "dice_loss",
        gradcheck::check(&[probs], |g, v| {
            let t = g.constant(truth.clone());
            dice_loss(g, v[0], t)
        })?,
    );
    Ok(out)
}

/// `DS = 2·IoU / (1 + IoU)` on random mask pairs, plus hand-counted cases.
pub fn metrics(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3e7);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < instances {
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let (pp, pt) = (rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95));
        let p = Tensor::<f64>::from_fn(vec![h, w], |_| if rng.gen_bool(pp) { 1.0 } else { 0.0 })?;
        let t = Tensor::<f64>::from_fn(vec![h, w], |_| if rng.gen_bool(pt) { 1.0 } else { 0.0 })?;
        let o = overlap(&p, &t)?;
        if o.union() == 0 {
            continue;
        }
        let iou = o.iou();
        worst = worst.max((o.dice() - 2.0 * iou / (1.0 + iou)).abs());
        done += 1;
    }
    // 1 shared pixel, 2 predicted, 2 true
    let p = Tensor::<f64>::from_f64(vec![2, 2], &[1.0, 1.0, 0.0, 0.0])?;
    let t = Tensor::<f64>::from_f64(vec![2, 2], &[1.0, 0.0, 1.0, 0.0])?;
    let o = overlap(&p, &t)?;
    let s = Suite::Metrics;
    Ok(vec![
        Check::new(s, "dice_iou_identity", worst, Limit::Below(1e-12))
            .note(format!("{instances} pairs")),
        Check::new(
            s,
            "hand_dice_0.5",
            (o.dice() - 0.5).abs(),
            Limit::Below(1e-12),
        ),
        Check::new(
            s,
            "hand_iou_1/3",
            (o.iou() - 1.0 / 3.0).abs(),
            Limit::Below(1e-12),
        ),
    ])
}

/// Scaling laws of the analytic FLOP model and the two reference anchors.
pub fn complexity() -> Result<Vec<Check>> {
    let s = Suite::Complexity;
    let mut out = Vec::new();
    let mut worst_scan = 0.0f64;
    for (l, d, h) in [(64, 8, 16), (1000, 96, 16), (3136, 192, 8)] {
        for mode in [ScanMode::Exact, ScanMode::Simplified] {
            let r = flops_scan(2 * l, d, h, mode) as f64 / flops_scan(l, d, h, mode) as f64;
            worst_scan = worst_scan.max((r - 2.0).abs());
        }
    }
    out.push(Check::new(
        s,
        "scan_doubling_ratio_minus_2",
        worst_scan,
        Limit::Equal(0.0),
    ));
    let r = attention_leading_term(2048, 64) as f64 / attention_leading_term(1024, 64) as f64;
    out.push(Check::new(
        s,
        "attention_leading_doubling_ratio",
        r,
        Limit::Equal(4.0),
    ));

    let pixels: Vec<f64> = DEFAULT_RESOLUTIONS
        .iter()
        .map(|&r| (r * r) as f64)
        .collect();
    let curve = |arch: Arch| -> Result<Vec<f64>> {
        DEFAULT_RESOLUTIONS
            .iter()
            .map(|&r| Ok(arch.spec(r)?.flops() as f64 / 1e9))
            .collect()
    };
    let (vm, vit, hybrid) = (
        curve(Arch::VmUnet)?,
        curve(Arch::VitCore)?,
        curve(Arch::HybridCore)?,
    );
    let lin = fit_polynomial(&pixels, &vm, 1)?;
    let quad = fit_polynomial(&pixels, &vit, 2)?;
    out.push(Check::new(
        s,
        "vmunet_linear_fit_r2",
        lin.r_squared,
        Limit::AtLeast(MIN_R_SQUARED),
    ));
    out.push(Check::new(
        s,
        "vit_quadratic_fit_r2",
        quad.r_squared,
        Limit::AtLeast(MIN_R_SQUARED),
    ));
    // the ViT curve has to pull away from the VM-UNet one as resolution grows
    let growth: Vec<f64> = vit.iter().zip(&vm).map(|(a, b)| a / b).collect();
    let rising = growth.windows(2).all(|w| w[1] > w[0]) as u8 as f64;
    out.push(
        Check::new(
            s,
            "vit_to_vmunet_ratio_increasing",
            rising,
            Limit::Equal(1.0),
        )
        .note(format!("ratios {growth:.2?}")),
    );

    let full = vmunet_spec(&VmUnetConfig::full())?;
    out.push(
        Check::new(
            s,
            "vmunet_full_448_gflops",
            full.flops() as f64 / 1e9,
            Limit::Within(FLOPS_BAND_448.0, FLOPS_BAND_448.1),
        )
        .note(CONVENTION),
    );
    out.push(Check::new(
        s,
        "vmunet_full_params",
        VmUnetConfig::full().param_count() as f64,
        Limit::Within(PARAM_BAND_FULL.0, PARAM_BAND_FULL.1),
    ));
    out.push(Check::new(
        s,
        "vmunet_tiny_params",
        VmUnetConfig::tiny().param_count() as f64,
        Limit::Below(TINY_PARAM_LIMIT),
    ));
    let last = DEFAULT_RESOLUTIONS.len() - 1;
    out.push(
        Check::new(
            s,
            "vmunet_over_hybrid_1792",
            vm[last] / hybrid[last],
            Limit::AtMost(MAX_HYBRID_RATIO),
        )
        .note(format!("{:.1} G vs {:.1} G", vm[last], hybrid[last])),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits() {
        assert!(Limit::Below(1.0).holds(0.5) && !Limit::Below(1.0).holds(1.0));
        assert!(Limit::AtMost(1.0).holds(1.0));
        assert!(Limit::Within(1.0, 2.0).holds(2.0) && !Limit::Within(1.0, 2.0).holds(2.1));
        assert!(!Limit::AtLeast(0.999).holds(f64::NAN));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!(matches!("speed".parse::<Suite>(), Err(Error::Config(_))));
    }

    #[test]
    fn small_runs_pass() {
        for c in equivalence(40, 1).unwrap() {
            assert!(c.passed(), "{c}");
        }
        for c in discretization(10, 1).unwrap() {
            assert!(c.passed(), "{c}");
        }
        for c in metrics(50, 1).unwrap() {
            assert!(c.passed(), "{c}");
        }
    }

    #[test]
    fn halving_ratio_of_a_scalar_problem() {
        // one step, d = H = 1: the gap is (e^{ΔA} - 1)/A - Δ ≈ Δ²A/2
        let one = |v: f64| Tensor::from_f64(vec![1, 1], &[v]).unwrap();
        let inp = ScanInputs::new(one(1.0), one(1e-3), one(1.0), one(1.0)).unwrap();
        let r = halving_ratio(&inp, &one(-1.0)).unwrap();
        assert!((r - 4.0).abs() < 1e-2, "{r}");
    }
}
