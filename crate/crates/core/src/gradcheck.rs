//! Central finite-difference checks of graph gradients.

use crate::error::{contract_err, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative errors are taken against `max(|analytic|, |numeric|, floor)`
/// so that entries whose true gradient is zero are judged absolutely.
pub const REL_FLOOR: f64 = 1e-5;

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h²)`.
    Central,
    /// `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`, error `O(h⁴)`.
    /// Lets deep graphs use a step large enough that forward-pass roundoff
    /// does not swamp small gradient entries.
    FivePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Worst relative error per input.
    pub per_input: Vec<f64>,
    /// Number of checked entries.
    pub checked: usize,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// Builds a scalar from `inputs` with `f`, then compares the analytic
/// gradient of every input against central differences.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check_with(inputs, FD_STEP, REL_FLOOR, f)
}

pub fn check_with<F>(inputs: &[Tensor<f64>], step: f64, floor: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let all: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    check_entries(inputs, &all, step, Stencil::Central, floor, f)
}

/// Like [`check`], but only probes up to `per_input` entries of each
/// input, chosen with a seeded RNG. Used on models too large to probe
/// exhaustively.
pub fn check_sampled<F>(
    inputs: &[Tensor<f64>],
    per_input: usize,
    seed: u64,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check_sampled_with(inputs, per_input, seed, FD_STEP, Stencil::Central, f)
}

pub fn check_sampled_with<F>(
    inputs: &[Tensor<f64>],
    per_input: usize,
    seed: u64,
    step: f64,
    stencil: Stencil,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    use rand::seq::index::sample;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let mut v = sample(&mut rng, t.len(), per_input.min(t.len())).into_vec();
            v.sort_unstable();
            v
        })
        .collect();
    check_entries(inputs, &picks, step, stencil, REL_FLOOR, f)
}

fn check_entries<F>(
    inputs: &[Tensor<f64>],
    entries: &[Vec<usize>],
    step: f64,
    stencil: Stencil,
    floor: f64,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(contract_err!(
                "gradient check needs a scalar output, got {:?}",
                g.shape(out)
            ));
        }
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new().with_checks(true);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut worst = 0.0f64;
        for &e in &entries[i] {
            let orig = work[i].data()[e];
            let mut at = |k: f64| -> Result<f64> {
                work[i].data_mut()[e] = orig + k * step;
                eval(&work)
            };
            let numeric = match stencil {
                Stencil::Central => (at(1.0)? - at(-1.0)?) / (2.0 * step),
                Stencil::FivePoint => {
                    (at(-2.0)? - 8.0 * at(-1.0)? + 8.0 * at(1.0)? - at(2.0)?) / (12.0 * step)
                }
            };
            work[i].data_mut()[e] = orig;
            worst = worst.max(rel_err(analytic[e], numeric, floor));
            checked += 1;
        }
        per_input.push(worst);
    }
    Ok(GradCheck { per_input, checked })
}

/// `Σ r ⊙ y` for a fixed random projection `r`, turning any output into a
/// scalar whose gradient exercises every element of `y`.
pub fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let r = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))?;
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    g.sum(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        // sigmoid has a correct vjp; compare against a fake objective
        let x = Tensor::from_f64(vec![3], &[0.1, -0.4, 2.0]).unwrap();
        let ok = check(&[x], |g, v| {
            let s = g.sigmoid(v[0])?;
            g.sum(s)
        })
        .unwrap();
        assert!(ok.max_rel_err() < 1e-8);
        assert!(rel_err(1.0, 1.1, REL_FLOOR) > 0.05);
    }

    #[test]
    fn five_point_stencil_is_fourth_order() {
        // x³ has a constant third derivative, so the central formula is off
        // by exactly h² while the five-point one is exact
        let x = Tensor::from_f64(vec![1], &[0.3]).unwrap();
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let x2 = g.mul(v[0], v[0])?;
            let x3 = g.mul(x2, v[0])?;
            g.sum(x3)
        };
        let c =
            check_sampled_with(std::slice::from_ref(&x), 1, 0, 0.1, Stencil::Central, f).unwrap();
        let p = check_sampled_with(&[x], 1, 0, 0.1, Stencil::FivePoint, f).unwrap();
        assert!(c.max_rel_err() > 1e-2, "{c:?}");
        assert!(p.max_rel_err() < 1e-12, "{p:?}");
    }
}
