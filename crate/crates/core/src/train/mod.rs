//! Dice-loss training with AdamW, evaluation and the training log.

mod optim;

use std::fmt::Write as _;
use std::path::PathBuf;

use log::info;
use rayon::prelude::*;

use crate::data::{augment, shuffled_indices, SegSample};
use crate::error::{config_err, contract_err, Error, Result};
use crate::kv::KvMap;
use crate::metrics::{binarize, dice_loss, overlap, ImageScore, MetricReport};
use crate::params::ParamStore;
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::vmunet::VmUnet;

pub use optim::{clip_grad_norm, grad_norm, AdamW, BETA1, BETA2, EPS, WEIGHT_DECAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(config_err!("unknown precision `{s}` (f32 | f64)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
    pub precision: Precision,
    /// Share of the training data held out when no validation set is given.
    pub val_fraction: f64,
    pub augment: bool,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            batch_size: 2,
            epochs: 30,
            weight_decay: WEIGHT_DECAY,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            clip: Some(1.0),
            seed: 0,
            precision: Precision::F32,
            val_fraction: 0.1,
            augment: true,
            checkpoint: None,
            log: None,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "lr",
        "batch_size",
        "epochs",
        "weight_decay",
        "beta1",
        "beta2",
        "eps",
        "clip",
        "seed",
        "precision",
        "val_fraction",
        "augment",
        "checkpoint",
        "log",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config_err!(
                "learning rate must be a finite value >= 0, got {}",
                self.lr
            ));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0
        {
            return Err(config_err!("AdamW needs betas in [0, 1) and eps > 0"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(config_err!("val_fraction must lie in [0, 1)"));
        }
        if matches!(self.clip, Some(c) if c <= 0.0) {
            return Err(config_err!("clip norm must be positive (0 disables it)"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("lr", self.lr);
        m.set("batch_size", self.batch_size);
        m.set("epochs", self.epochs);
        m.set("weight_decay", self.weight_decay);
        m.set("beta1", self.beta1);
        m.set("beta2", self.beta2);
        m.set("eps", self.eps);
        m.set("clip", self.clip.unwrap_or(0.0));
        m.set("seed", self.seed);
        m.set("precision", self.precision.name());
        m.set("val_fraction", self.val_fraction);
        m.set("augment", self.augment);
        if let Some(p) = &self.checkpoint {
            m.set("checkpoint", p.display());
        }
        if let Some(p) = &self.log {
            m.set("log", p.display());
        }
        m
    }

    /// Keys absent from `kv` keep the values of `base`; `clip=0` disables
    /// clipping.
    pub fn from_kv(kv: &KvMap, base: Self) -> Result<Self> {
        let clip: f64 = kv.or("clip", base.clip.unwrap_or(0.0))?;
        let cfg = Self {
            lr: kv.or("lr", base.lr)?,
            batch_size: kv.or("batch_size", base.batch_size)?,
            epochs: kv.or("epochs", base.epochs)?,
            weight_decay: kv.or("weight_decay", base.weight_decay)?,
            beta1: kv.or("beta1", base.beta1)?,
            beta2: kv.or("beta2", base.beta2)?,
            eps: kv.or("eps", base.eps)?,
            clip: (clip > 0.0).then_some(clip),
            seed: kv.or("seed", base.seed)?,
            precision: kv.or("precision", base.precision)?,
            val_fraction: kv.or("val_fraction", base.val_fraction)?,
            augment: kv.or("augment", base.augment)?,
            checkpoint: kv.get("checkpoint").map(PathBuf::from).or(base.checkpoint),
            log: kv.get("log").map(PathBuf::from).or(base.log),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mds: Option<f64>,
    pub val_miou: Option<f64>,
}

pub fn log_csv(rows: &[EpochLog]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("epoch,train_loss,val_mds,val_miou\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            r.train_loss,
            opt(r.val_mds),
            opt(r.val_miou)
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) whose weights are in `best`.
    pub best_epoch: usize,
    pub best: ParamStore<T>,
}

fn check_input<T: Scalar>(model: &VmUnet<T>, s: &SegSample) -> Result<()> {
    let (h, w) = model.config().input;
    if s.size() != (h, w) {
        return Err(config_err!(
            "model expects {h}x{w} inputs, sample `{}` is {:?}",
            s.id,
            s.size()
        ));
    }
    Ok(())
}

/// Dice loss of one sample, built into `g`.
pub fn sample_loss<T: Scalar>(
    model: &VmUnet<T>,
    g: &mut Graph<T>,
    p: &crate::params::Bound,
    s: &SegSample,
) -> Result<Var> {
    let (h, w) = s.size();
    let x = g.constant(s.image.cast());
    let logits = model.forward(g, p, x)?;
    let logits = g.reshape(logits, vec![h, w])?;
    let probs = g.sigmoid(logits)?;
    let t = g.constant(s.mask.cast());
    dice_loss(g, probs, t)
}

/// Loss value and parameter gradients (store order) for one sample.
fn loss_and_grads<T: Scalar>(
    model: &VmUnet<T>,
    s: &SegSample,
    scale: T,
) -> Result<(f64, ParamStore<T>)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let loss = sample_loss(model, &mut g, &p, s)?;
    let value = g.value(loss).data()[0].to_f64_lossless();
    if !value.is_finite() {
        return Err(Error::Numeric {
            node: loss.id(),
            op: "dice_loss",
            detail: format!("loss is {value} on sample `{}`", s.id),
        });
    }
    let scaled = g.scale(loss, scale)?;
    let mut grads = g.backward(scaled)?;
    let mut store = model.params().clone();
    store.zero_grads();
    store.accumulate_grads(&p, &mut grads)?;
    Ok((value, store))
}

/// Trains `model` in place. The weights with the best validation mDS (or
/// the last weights, without validation data) are returned in the outcome
/// and written to `tc.checkpoint` when set; the epoch log goes to
/// `tc.log`. `on_epoch` sees each log row as it is produced.
pub fn train<T: Scalar>(
    model: &mut VmUnet<T>,
    train_set: &[SegSample],
    val_set: &[SegSample],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(contract_err!("training set is empty"));
    }
    for s in train_set.iter().chain(val_set) {
        check_input(model, s)?;
    }
    let n = train_set.len();
    let mut opt = AdamW::with_betas(model.params(), tc.beta1, tc.beta2, tc.eps);
    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let scale = T::one() / T::of(tc.batch_size as f64);

    for epoch in 1..=tc.epochs {
        let order = shuffled_indices(n, tc.seed, epoch as u64);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let samples: Vec<SegSample> = batch
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    if tc.augment {
                        augment(s, tc.seed, (epoch * n + i) as u64)
                    } else {
                        s.clone()
                    }
                })
                .collect();
            // per-sample graphs may run in parallel; the sum below is in
            // batch order, so results do not depend on scheduling
            let parts = samples
                .par_iter()
                .map(|s| loss_and_grads(model, s, scale))
                .collect::<Result<Vec<_>>>()?;
            model.params_mut().zero_grads();
            for (value, grads) in parts {
                loss_sum += value;
                for ((_, dst), (_, src)) in model.params_mut().iter_mut().zip(grads.iter()) {
                    let g = src.grad().expect("accumulated gradient");
                    let merged = match dst.grad() {
                        Some(acc) => acc.iter().zip(g).map(|(&a, &b)| a + b).collect(),
                        None => g.to_vec(),
                    };
                    dst.set_grad(merged)?;
                }
            }
            if let Some(c) = tc.clip {
                clip_grad_norm(model.params_mut(), c)?;
            }
            opt.step(model.params_mut(), tc.lr, tc.weight_decay)?;
        }
        model.params_mut().zero_grads();

        let (val_mds, val_miou) = if val_set.is_empty() {
            (None, None)
        } else {
            let r = evaluate(model, val_set)?;
            (Some(r.mds), Some(r.miou))
        };
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / n as f64,
            val_mds,
            val_miou,
        };
        info!(
            "epoch {epoch}: loss {:.5} val mDS {} mIoU {}",
            row.train_loss,
            val_mds.map_or("-".into(), |v| format!("{v:.4}")),
            val_miou.map_or("-".into(), |v| format!("{v:.4}")),
        );
        on_epoch(&row);
        log.push(row);

        let score = val_mds.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => val_set.is_empty() || score > *b,
        };
        if improved {
            best = Some((score, epoch, model.params().clone()));
            if let Some(path) = &tc.checkpoint {
                let mut extra = tc.to_kv();
                extra.set("epoch", epoch);
                if let Some(v) = val_mds {
                    extra.set("val_mds", v);
                }
                model.save(path, &extra)?;
            }
        }
        if let Some(path) = &tc.log {
            std::fs::write(path, log_csv(&log))?;
        }
    }
    let (best_epoch, best) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, model.params().clone()),
    };
    Ok(TrainOutcome {
        log,
        best_epoch,
        best,
    })
}

/// Binary prediction `[H, W]` (sigmoid, threshold 0.5) for one image.
pub fn predict_mask<T: Scalar>(model: &VmUnet<T>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let probs = model.probabilities(&image.cast())?;
    Ok(binarize(&probs).cast())
}

/// Forward, sigmoid, threshold at 0.5, per-image DS/IoU and their means.
pub fn evaluate<T: Scalar>(model: &VmUnet<T>, samples: &[SegSample]) -> Result<MetricReport> {
    for s in samples {
        check_input(model, s)?;
    }
    let scores = samples
        .par_iter()
        .map(|s| {
            let pred = predict_mask(model, &s.image)?;
            let o = overlap(&pred, &s.mask)?;
            Ok(ImageScore {
                id: s.id.clone(),
                ds: o.dice(),
                iou: o.iou(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_scores(scores)
}
