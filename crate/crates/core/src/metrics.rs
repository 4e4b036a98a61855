//! Region-overlap metrics and the soft Dice loss.
//!
//! Hard metrics take binary maps (any shape, compared element-wise).
//! [`METRIC_EPS`] only guards the empty-empty case, which scores 1.
//! Dataset means are per-image averages, not pooled pixel counts.

use std::fmt::Write as _;

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub const METRIC_EPS: f64 = 1e-7;
pub const LOSS_EPS: f64 = 1.0;

/// Pixel counts behind both metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Overlap {
    pub intersection: u64,
    pub predicted: u64,
    pub truth: u64,
}

impl Overlap {
    pub fn union(&self) -> u64 {
        self.predicted + self.truth - self.intersection
    }

    pub fn dice_with(&self, eps: f64) -> f64 {
        (2.0 * self.intersection as f64 + eps) / ((self.predicted + self.truth) as f64 + eps)
    }

    pub fn iou_with(&self, eps: f64) -> f64 {
        (self.intersection as f64 + eps) / (self.union() as f64 + eps)
    }

    /// Exact ratio; the ε form only when both masks are empty, where it
    /// evaluates to 1.
    pub fn dice(&self) -> f64 {
        if self.predicted + self.truth == 0 {
            self.dice_with(METRIC_EPS)
        } else {
            self.dice_with(0.0)
        }
    }

    pub fn iou(&self) -> f64 {
        if self.union() == 0 {
            self.iou_with(METRIC_EPS)
        } else {
            self.iou_with(0.0)
        }
    }
}

fn is_binary<T: Scalar>(v: T) -> bool {
    v == T::zero() || v == T::one()
}

/// Counts `|P∩T|`, `|P|`, `|T|` for two binary maps of equal shape.
pub fn overlap<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<Overlap> {
    if pred.shape() != truth.shape() {
        return Err(dim_err!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.shape(),
            truth.shape()
        ));
    }
    let mut o = Overlap::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        if !is_binary(p) || !is_binary(t) {
            return Err(contract_err!(
                "metric inputs must be binary, got {p:?} / {t:?}"
            ));
        }
        let (p, t) = (p == T::one(), t == T::one());
        o.predicted += p as u64;
        o.truth += t as u64;
        o.intersection += (p && t) as u64;
    }
    Ok(o)
}

/// `2|P∩T| / (|P| + |T|)`, 1 for two empty masks.
pub fn dice_score<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    Ok(overlap(pred, truth)?.dice())
}

/// `|P∩T| / |P∪T|`, 1 for two empty masks.
pub fn iou<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    Ok(overlap(pred, truth)?.iou())
}

/// Thresholds probabilities at `0.5` (inclusive) into a `{0, 1}` map.
pub fn binarize<T: Scalar>(probs: &Tensor<T>) -> Tensor<T> {
    let half = T::of(0.5);
    probs.map(|v| if v >= half { T::one() } else { T::zero() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub ds: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageScore>,
    pub mds: f64,
    pub miou: f64,
}

impl MetricReport {
    pub fn from_scores(images: Vec<ImageScore>) -> Result<Self> {
        if images.is_empty() {
            return Err(contract_err!("metrics need at least one image"));
        }
        let n = images.len() as f64;
        let mds = images.iter().map(|s| s.ds).sum::<f64>() / n;
        let miou = images.iter().map(|s| s.iou).sum::<f64>() / n;
        Ok(Self { images, mds, miou })
    }

    /// `image_id,ds,iou` rows, then a `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,ds,iou\n");
        for s in &self.images {
            let _ = writeln!(out, "{},{},{}", s.id, s.ds, s.iou);
        }
        let _ = writeln!(out, "mean,{},{}", self.mds, self.miou);
        out
    }
}

/// Per-image mean `(mDS, mIoU)` over `(prediction, truth)` pairs.
pub fn mean_metrics<T: Scalar>(pairs: &[(Tensor<T>, Tensor<T>)]) -> Result<(f64, f64)> {
    let scores = pairs
        .iter()
        .enumerate()
        .map(|(i, (p, t))| {
            let o = overlap(p, t)?;
            Ok(ImageScore {
                id: i.to_string(),
                ds: o.dice(),
                iou: o.iou(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let r = MetricReport::from_scores(scores)?;
    Ok((r.mds, r.miou))
}

/// `1 − (2Σ p·t + ε) / (Σ p + Σ t + ε)` with `ε = 1`, differentiable in
/// `probs`. Values outside `[0, 1]` are rejected in debug builds and on
/// checked graphs.
pub fn dice_loss<T: Scalar>(g: &mut Graph<T>, probs: Var, truth: Var) -> Result<Var> {
    if g.shape(probs) != g.shape(truth) {
        return Err(dim_err!(
            "probabilities {:?} and ground truth {:?} differ in shape",
            g.shape(probs),
            g.shape(truth)
        ));
    }
    if cfg!(debug_assertions) || g.checks() {
        if let Some(v) = g
            .value(probs)
            .data()
            .iter()
            .find(|&&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(contract_err!(
                "dice_loss probabilities must lie in [0, 1], got {v:?}"
            ));
        }
    }
    let eps = T::of(LOSS_EPS);
    let pt = g.mul(probs, truth)?;
    let inter = g.sum(pt)?;
    let num = g.scale(inter, T::of(2.0))?;
    let num = g.add_scalar(num, eps)?;
    let sp = g.sum(probs)?;
    let st = g.sum(truth)?;
    let den = g.add(sp, st)?;
    let den = g.add_scalar(den, eps)?;
    let ds = g.div(num, den)?;
    let neg = g.neg(ds)?;
    g.add_scalar(neg, T::one())
}

/// Plain-tensor value of [`dice_loss`].
pub fn dice_loss_value<T: Scalar>(probs: &Tensor<T>, truth: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let t = g.constant(truth.clone());
    let l = dice_loss(&mut g, p, t)?;
    Ok(g.value(l).data()[0])
}
