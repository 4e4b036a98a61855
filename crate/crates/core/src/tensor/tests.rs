use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradcheck::{self, project};

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape.to_vec(), 1.0, &mut rng).unwrap()
}

#[test]
fn tensor_rejects_inconsistent_shape() {
    assert!(matches!(
        Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]),
        Err(Error::Dimension(_))
    ));
    assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
}

#[test]
fn matmul_identity_and_hand_case() {
    let m = t(&[2, 2], &[0.3, -1.0, 2.5, 4.0]);
    let i2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(matmul(&i2, &m).unwrap().data(), m.data());
    let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let b = t(&[2, 1], &[0.0, 1.0]);
    assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(rand_t(&[3, 4], 1));
    let b = g.constant(rand_t(&[3, 2], 2));
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradient() {
    let r = gradcheck::check(&[rand_t(&[3, 4], 3), rand_t(&[4, 2], 4)], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        project(g, y, 5)
    })
    .unwrap();
    assert!(r.max_rel_err() < 1e-6, "{r:?}");
}

#[test]
fn layer_norm_cases() {
    let mut g = Graph::<f64>::new();
    let gamma = g.constant(Tensor::ones(vec![2]).unwrap());
    let beta = g.constant(Tensor::zeros(vec![2]).unwrap());
    let x = g.constant(t(&[1, 2], &[1.0, 3.0]));
    let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
    assert!((g.value(y).data()[0] + 1.0).abs() < 1e-9);
    assert!((g.value(y).data()[1] - 1.0).abs() < 1e-9);

    let gamma4 = g.constant(Tensor::ones(vec![4]).unwrap());
    let beta4 = g.constant(Tensor::zeros(vec![4]).unwrap());
    let c = g.constant(Tensor::full(vec![4], 2.5).unwrap());
    let y = g.layer_norm(c, gamma4, beta4, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_moments() {
    let mut g = Graph::<f64>::new();
    let d = 64;
    let gamma = g.constant(Tensor::full(vec![d], 1.7).unwrap());
    let beta = g.constant(Tensor::full(vec![d], -0.4).unwrap());
    let x = g.constant(rand_t(&[5, d], 6).map(|v| 3.0 * v + 2.0));
    let y = g.layer_norm(x, gamma, beta, 1e-9).unwrap();
    for row in g.value(y).data().chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        assert!((mean + 0.4).abs() < 1e-9);
        assert!((var - 1.7f64.powi(2)).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_gradient() {
    let r = gradcheck::check(
        &[rand_t(&[3, 5], 7), rand_t(&[5], 8), rand_t(&[5], 9)],
        |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(g, y, 10)
        },
    )
    .unwrap();
    assert!(r.max_rel_err() < 1e-4, "{r:?}");
}

#[test]
fn silu_values_and_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[3], &[0.0, 40.0, -40.0]));
    let y = g.silu(x).unwrap();
    let v = g.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 40.0).abs() < 1e-12);
    assert!(v[2].abs() < 1e-12);

    let r = gradcheck::check(&[t(&[4], &[-2.0, -0.5, 0.5, 2.0])], |g, v| {
        let y = g.silu(v[0])?;
        g.sum(y)
    })
    .unwrap();
    assert!(r.max_rel_err() < 1e-6, "{r:?}");
}

#[test]
fn elementwise_gradients() {
    let a = rand_t(&[2, 3], 11);
    let b = rand_t(&[2, 3], 12).map(|v| v.abs() + 0.5);
    let bias = rand_t(&[3], 13);
    let r = gradcheck::check(&[a, b, bias], |g, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(s, v[0])?;
        let m = g.mul(d, v[0])?;
        let q = g.div(m, v[1])?;
        let e = g.exp(q)?;
        let sp = g.softplus(e)?;
        let ge = g.gelu(sp)?;
        let sg = g.sigmoid(ge)?;
        let n = g.neg(sg)?;
        let sc = g.scale(n, 1.5)?;
        let ad = g.add_scalar(sc, 0.3)?;
        let bb = g.add_bias(ad, v[2])?;
        project(g, bb, 14)
    })
    .unwrap();
    assert!(r.max_rel_err() < 1e-4, "{r:?}");
}

#[test]
fn shape_op_gradients() {
    let x = rand_t(&[2, 3], 15);
    let y = rand_t(&[2, 2], 16);
    let r = gradcheck::check(&[x, y], |g, v| {
        let c = g.concat(&[v[0], v[1]])?;
        let idx: Arc<[usize]> = Arc::from(vec![9, 0, 0, 4, 7, 2]);
        let p = g.gather(c, idx, vec![3, 2])?;
        let r = g.reshape(p, vec![6])?;
        let sm = g.softmax(c)?;
        let a = project(g, r, 17)?;
        let b = project(g, sm, 18)?;
        let s = g.add(a, b)?;
        g.mean(s)
    })
    .unwrap();
    assert!(r.max_rel_err() < 1e-4, "{r:?}");
}

#[test]
fn depthwise_identity_and_hand_count() {
    let mut g = Graph::<f64>::new();
    let x = rand_t(&[4, 5, 2], 19);
    let mut k = vec![0.0; 2 * 9];
    k[4] = 1.0;
    k[9 + 4] = 1.0;
    let xv = g.constant(x.clone());
    let kv = g.constant(t(&[2, 3, 3], &k));
    let y = g.depthwise_conv2d(xv, kv, None).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    let ones = g.constant(Tensor::ones(vec![5, 5, 1]).unwrap());
    let k1 = g.constant(Tensor::ones(vec![1, 3, 3]).unwrap());
    let y = g.depthwise_conv2d(ones, k1, None).unwrap();
    assert_eq!(g.value(y).at(&[2, 2, 0]), 9.0);
    assert_eq!(g.value(y).at(&[0, 0, 0]), 4.0);
}

#[test]
fn depthwise_even_kernel_is_config_error() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones(vec![4, 4, 1]).unwrap());
    let k = g.constant(Tensor::ones(vec![1, 2, 2]).unwrap());
    assert!(matches!(
        g.depthwise_conv2d(x, k, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn depthwise_gradient() {
    let r = gradcheck::check(
        &[
            rand_t(&[4, 3, 2], 20),
            rand_t(&[2, 3, 3], 21),
            rand_t(&[2], 22),
        ],
        |g, v| {
            let y = g.depthwise_conv2d(v[0], v[1], Some(v[2]))?;
            project(g, y, 23)
        },
    )
    .unwrap();
    assert!(r.max_rel_err() < 1e-5, "{r:?}");
}

#[test]
fn backward_trivial_cases() {
    let x0 = rand_t(&[3, 2], 24);
    let mut g = Graph::<f64>::new();
    let x = g.param(x0.clone());
    let s = g.sum(x).unwrap();
    let gr = g.backward(s).unwrap();
    assert!(gr.get(x).unwrap().iter().all(|&v| v == 1.0));

    let mut g = Graph::<f64>::new();
    let x = g.param(x0.clone());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    let half = g.scale(s, 0.5).unwrap();
    let gr = g.backward(half).unwrap();
    assert_eq!(gr.get(x).unwrap(), x0.data());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.param(rand_t(&[2], 25));
    let y = g.exp(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
}

#[test]
fn nan_is_reported_with_node() {
    let mut g = Graph::<f64>::new().with_checks(true);
    let x = g.param(t(&[1], &[f64::NAN]));
    match g.exp(x) {
        Err(Error::Numeric { node, op, .. }) => {
            assert_eq!(node, 1);
            assert_eq!(op, "exp");
        }
        other => panic!("expected numeric error, got {other:?}"),
    }
}

#[test]
fn scan_gradient_both_modes() {
    let (l, d, h) = (5, 3, 4);
    for mode in [ScanMode::Exact, ScanMode::Simplified] {
        let inputs = [
            rand_t(&[l, d], 26),
            rand_t(&[l, d], 27),
            rand_t(&[d, h], 28).map(|v| 0.5 * v),
            rand_t(&[l, h], 29),
            rand_t(&[l, h], 30),
            rand_t(&[d], 31),
        ];
        let r = gradcheck::check(&inputs, |g, v| {
            let delta = g.softplus(v[1])?;
            let e = g.exp(v[2])?;
            let a = g.neg(e)?;
            let y = g.selective_scan(v[0], delta, a, v[3], v[4], Some(v[5]), mode)?;
            project(g, y, 32)
        })
        .unwrap();
        assert!(r.max_rel_err() < 1e-4, "{mode:?}: {r:?}");
    }
}

#[test]
fn scan_gradient_near_series_threshold() {
    let inputs = [
        rand_t(&[3, 2], 33),
        Tensor::full(vec![3, 2], 1e-3).unwrap(),
        t(&[2, 2], &[-0.5e-3, -2e-3, -0.01, -1.0]),
        rand_t(&[3, 2], 34),
        rand_t(&[3, 2], 35),
    ];
    let r = gradcheck::check(&inputs, |g, v| {
        let y = g.selective_scan(v[0], v[1], v[2], v[3], v[4], None, ScanMode::Exact)?;
        project(g, y, 36)
    })
    .unwrap();
    assert!(r.max_rel_err() < 1e-4, "{r:?}");
}

#[test]
fn counter_counts_matmul_macs() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(rand_t(&[3, 4], 37));
    let b = g.constant(rand_t(&[4, 5], 38));
    let (_, ops) = counter::measure(|| g.matmul(a, b).unwrap());
    assert_eq!(ops, 2 * 3 * 4 * 5);
}

#[test]
fn f32_and_f64_agree() {
    let x = rand_t(&[4, 6], 39);
    let w = rand_t(&[6, 3], 40);
    let y64 = matmul(&x, &w).unwrap();
    let y32 = matmul(&x.cast::<f32>(), &w.cast::<f32>()).unwrap();
    assert!(y64.max_abs_diff(&y32.cast()).unwrap() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_shape_algebra(m in 1usize..6, k in 1usize..6, n in 1usize..6, lead in 1usize..3) {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(vec![lead, m, k]).unwrap());
        let b = g.constant(Tensor::ones(vec![k, n]).unwrap());
        let y = g.matmul(a, b).unwrap();
        prop_assert_eq!(g.shape(y), &[lead, m, n][..]);
        prop_assert!(g.value(y).data().iter().all(|&v| v == k as f64));
    }

    #[test]
    fn depthwise_preserves_shape(h in 1usize..7, w in 1usize..7, c in 1usize..4, half in 0usize..3) {
        let k = 2 * half + 1;
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(vec![h, w, c]).unwrap());
        let kv = g.constant(Tensor::ones(vec![c, k, k]).unwrap());
        let y = g.depthwise_conv2d(x, kv, None).unwrap();
        prop_assert_eq!(g.shape(y), &[h, w, c][..]);
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..1000) {
        let x = rand_t(&[6, 4], seed);
        let run = || {
            let mut g = Graph::<f64>::new();
            let xv = g.constant(x.clone());
            let gm = g.constant(Tensor::ones(vec![4]).unwrap());
            let bt = g.constant(Tensor::zeros(vec![4]).unwrap());
            let y = g.layer_norm(xv, gm, bt, 1e-5).unwrap();
            let s = g.silu(y).unwrap();
            g.value(s).clone()
        };
        let (r1, r2) = (run(), run());
        prop_assert_eq!(r1.data(), r2.data());
    }
}
