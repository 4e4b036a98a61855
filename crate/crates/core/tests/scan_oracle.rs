//! The scan implementations against a deliberately naive state-space loop
//! written here from the continuous-time definition.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vmseg_core::scan::{
    scan_linear_attention, scan_matrix_form, scan_recurrence, ScanInputs, ScanMode,
};
use vmseg_core::tensor::{Graph, Tensor};

struct Case {
    l: usize,
    d: usize,
    h: usize,
    x: Vec<f64>,
    delta: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    skip: Vec<f64>,
    h0: Vec<f64>,
}

fn case(l: usize, d: usize, h: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v =
        |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
    Case {
        l,
        d,
        h,
        x: v(l * d, -1.0, 1.0),
        delta: v(l * d, 0.01, 0.5),
        a: v(d * h, -3.0, -0.1),
        b: v(l * h, -1.0, 1.0),
        c: v(l * h, -1.0, 1.0),
        skip: v(d, -1.0, 1.0),
        h0: v(d * h, -1.0, 1.0),
    }
}

/// Zero-order hold, one channel and one state at a time.
fn naive(k: &Case, exact: bool, use_skip: bool, use_h0: bool) -> Vec<f64> {
    let (l, d, h) = (k.l, k.d, k.h);
    let mut y = vec![0.0; l * d];
    for j in 0..d {
        for n in 0..h {
            let a = k.a[j * h + n];
            let mut state = if use_h0 { k.h0[j * h + n] } else { 0.0 };
            for t in 0..l {
                let dt = k.delta[t * d + j];
                let bbar = if exact { (dt * a).exp_m1() / a } else { dt } * k.b[t * h + n];
                state = (dt * a).exp() * state + bbar * k.x[t * d + j];
                y[t * d + j] += k.c[t * h + n] * state;
            }
        }
        if use_skip {
            for t in 0..l {
                y[t * d + j] += k.skip[j] * k.x[t * d + j];
            }
        }
    }
    y
}

fn t(shape: [usize; 2], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

fn inputs(k: &Case, use_h0: bool) -> ScanInputs<f64> {
    let inp = ScanInputs::new(
        t([k.l, k.d], &k.x),
        t([k.l, k.d], &k.delta),
        t([k.l, k.h], &k.b),
        t([k.l, k.h], &k.c),
    )
    .unwrap();
    if use_h0 {
        inp.with_h0(t([k.d, k.h], &k.h0)).unwrap()
    } else {
        inp
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn recurrence_matches_naive_loop() {
    let k = case(17, 3, 5, 1);
    let a = t([k.d, k.h], &k.a);
    let skip = Tensor::new(vec![k.d], k.skip.clone()).unwrap();
    for (mode, exact) in [(ScanMode::Exact, true), (ScanMode::Simplified, false)] {
        for use_h0 in [false, true] {
            let (y, last) = scan_recurrence(&inputs(&k, use_h0), &a, Some(&skip), mode).unwrap();
            let want = naive(&k, exact, true, use_h0);
            assert!(max_gap(y.data(), &want) < 1e-12, "{mode:?} h0={use_h0}");
            assert!(last.data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn graph_scan_matches_naive_loop() {
    let k = case(12, 4, 3, 2);
    for (mode, exact) in [(ScanMode::Exact, true), (ScanMode::Simplified, false)] {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t([k.l, k.d], &k.x));
        let dt = g.constant(t([k.l, k.d], &k.delta));
        let a = g.constant(t([k.d, k.h], &k.a));
        let b = g.constant(t([k.l, k.h], &k.b));
        let c = g.constant(t([k.l, k.h], &k.c));
        let s = g.constant(Tensor::new(vec![k.d], k.skip.clone()).unwrap());
        let y = g.selective_scan(x, dt, a, b, c, Some(s), mode).unwrap();
        assert!(max_gap(g.value(y).data(), &naive(&k, exact, true, false)) < 1e-12);
    }
}

#[test]
fn matrix_forms_match_naive_loop() {
    let k = case(40, 3, 4, 3);
    let a = t([k.d, k.h], &k.a);
    for use_h0 in [false, true] {
        let want = naive(&k, false, false, use_h0);
        let inp = inputs(&k, use_h0);
        let m = scan_matrix_form(&inp, &a, ScanMode::Simplified).unwrap();
        let la = scan_linear_attention(&inp, &a, ScanMode::Simplified).unwrap();
        assert!(max_gap(m.data(), &want) < 1e-12);
        assert!(max_gap(la.data(), &want) < 1e-12);
    }
}

#[test]
fn matrix_form_survives_strong_decay() {
    // cumulative decay e^{-600} underflows a factored Q·w, K/w product
    let mut k = case(200, 2, 3, 4);
    k.a.iter_mut().for_each(|a| *a = -6.0);
    k.delta.iter_mut().for_each(|d| *d = 0.5);
    let a = t([k.d, k.h], &k.a);
    let m = scan_matrix_form(&inputs(&k, false), &a, ScanMode::Simplified).unwrap();
    assert!(max_gap(m.data(), &naive(&k, false, false, false)) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recurrence_agrees_for_any_shape(l in 1usize..24, d in 1usize..5, h in 1usize..6, seed in any::<u64>()) {
        let k = case(l, d, h, seed);
        let a = t([d, h], &k.a);
        let (y, _) = scan_recurrence(&inputs(&k, true), &a, None, ScanMode::Exact).unwrap();
        prop_assert!(max_gap(y.data(), &naive(&k, true, false, true)) < 1e-12);
        let m = scan_matrix_form(&inputs(&k, true), &a, ScanMode::Simplified).unwrap();
        prop_assert!(max_gap(m.data(), &naive(&k, false, false, true)) < 1e-12);
    }
}
