use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::layers::*;
use super::*;
use crate::gradcheck;
use crate::kv::KvMap;
use crate::params::{Bound, ParamStore};
use crate::scan::ScanMode;
use crate::ss2d::ProjectionSharing;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_cfg() -> VmUnetConfig {
    VmUnetConfig {
        embed_dim: 4,
        depths: [1, 1, 1, 1],
        decoder_depths: [1, 1, 1, 1],
        state_size: 2,
        input: (32, 32),
        ..VmUnetConfig::tiny()
    }
}

fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(vec![h, w, 3], 0.0, 1.0, &mut rng(seed)).unwrap()
}

#[test]
fn analytic_param_count_matches_built_model() {
    for cfg in [
        VmUnetConfig::tiny(),
        small_cfg(),
        VmUnetConfig {
            sharing: ProjectionSharing::PerRoute,
            expansion: 2,
            ..small_cfg()
        },
    ] {
        let m = VmUnet::<f32>::new(cfg.clone(), &mut rng(1)).unwrap();
        assert_eq!(m.num_params(), cfg.param_count(), "{cfg:?}");
    }
}

#[test]
fn preset_parameter_budgets() {
    assert!(VmUnetConfig::tiny().param_count() < 1_000_000);
    let full = VmUnetConfig::full().param_count();
    assert!((19_000_000..=35_000_000).contains(&full), "{full}");
}

#[test]
fn full_preset_builds_with_counted_size() {
    let cfg = VmUnetConfig::full();
    let m = VmUnet::<f32>::new(cfg.clone(), &mut rng(2)).unwrap();
    assert_eq!(m.num_params(), cfg.param_count());
}

#[test]
fn logits_match_input_resolution() {
    let m = VmUnet::<f64>::new(VmUnetConfig::tiny(), &mut rng(3)).unwrap();
    let y = m.logits(&image(64, 64, 4)).unwrap();
    assert_eq!(y.shape(), &[64, 64, 1]);
    assert!(y.all_finite());
}

#[test]
fn forward_is_bit_identical() {
    let m = VmUnet::<f32>::new(small_cfg(), &mut rng(5)).unwrap();
    let x = image(32, 32, 6).cast::<f32>();
    assert_eq!(m.logits(&x).unwrap().data(), m.logits(&x).unwrap().data());
}

#[test]
fn mismatched_input_is_config_error() {
    let m = VmUnet::<f64>::new(small_cfg(), &mut rng(7)).unwrap();
    assert!(matches!(
        m.logits(&image(64, 64, 8)),
        Err(crate::Error::Config(_))
    ));
    let bad = VmUnetConfig {
        input: (48, 64),
        ..small_cfg()
    };
    assert!(matches!(bad.validate(), Err(crate::Error::Config(_))));
}

#[test]
fn encoder_stage_shapes() {
    let cfg = VmUnetConfig::tiny();
    for s in 0..4 {
        assert_eq!(cfg.stage_grid(s), (16 >> s, 16 >> s));
        assert_eq!(cfg.stage_dim(s), 24 << s);
    }
}

fn layer_store<F, O>(f: F) -> (ParamStore<f64>, O)
where
    F: FnOnce(&mut ParamBuilder<'_, f64, ChaCha8Rng>) -> O,
{
    let mut store = ParamStore::new();
    let mut r = rng(9);
    let out = {
        let mut pb = ParamBuilder::new(&mut store, &mut r);
        f(&mut pb)
    };
    (store, out)
}

fn perturb(store: &mut ParamStore<f64>, scale: f64) {
    for (_, t) in store.iter_mut() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += scale * ((i as f64) * 1.7 + 0.3).sin();
        }
    }
}

#[test]
fn patch_embed_shape_and_locality() {
    let (mut store, pe) = layer_store(|pb| PatchEmbed::init(pb, 3, 24).unwrap());
    perturb(&mut store, 0.2);
    let run = |img: &Tensor<f64>| {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let x = g.constant(img.clone());
        let y = pe.forward(&mut g, &p, x).unwrap();
        g.value(y).clone()
    };
    let y = run(&Tensor::full(vec![64, 64, 3], 0.7).unwrap());
    assert_eq!(y.shape(), &[16, 16, 24]);
    for px in y.data().chunks(24) {
        assert_eq!(px, &y.data()[..24]);
    }

    // a single changed pixel before normalization only moves one token
    let base = run(&Tensor::zeros(vec![16, 16, 3]).unwrap());
    let mut img = Tensor::zeros(vec![16, 16, 3]).unwrap();
    img.data_mut()[(9 * 16 + 6) * 3 + 1] = 1.0;
    let y = run(&img);
    let changed: Vec<usize> = (0..16)
        .filter(|&t| y.data()[t * 24..(t + 1) * 24] != base.data()[t * 24..(t + 1) * 24])
        .collect();
    assert_eq!(changed, vec![2 * 4 + 1]);

    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let x = g.constant(Tensor::zeros(vec![6, 8, 3]).unwrap());
    assert!(matches!(
        pe.forward(&mut g, &p, x),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn patch_merge_matches_naive_reference() {
    let c = 2;
    let (mut store, pm) = layer_store(|pb| PatchMerge::init(pb, c).unwrap());
    perturb(&mut store, 0.3);
    let x = Tensor::randn(vec![4, 4, c], 1.0, &mut rng(10)).unwrap();
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let y = pm.forward(&mut g, &p, xv).unwrap();
    let y = g.value(y).clone();
    assert_eq!(y.shape(), &[2, 2, 2 * c]);

    let gamma = store.get(pm.norm.gamma).data().to_vec();
    let beta = store.get(pm.norm.beta).data().to_vec();
    let wt = store.get(pm.proj.w).data().to_vec();
    for i in 0..2 {
        for j in 0..2 {
            let mut v = Vec::new();
            for a in 0..2 {
                for b in 0..2 {
                    for k in 0..c {
                        v.push(x.at(&[2 * i + a, 2 * j + b, k]));
                    }
                }
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / v.len() as f64;
            let n: Vec<f64> = v
                .iter()
                .enumerate()
                .map(|(q, e)| (e - mean) / (var + config::LN_EPS).sqrt() * gamma[q] + beta[q])
                .collect();
            for o in 0..2 * c {
                let want: f64 = (0..4 * c).map(|q| n[q] * wt[q * 2 * c + o]).sum();
                assert!((y.at(&[i, j, o]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn patch_merge_rejects_odd_grid() {
    let (store, pm) = layer_store(|pb| PatchMerge::init(pb, 2).unwrap());
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let x = g.constant(Tensor::zeros(vec![3, 4, 2]).unwrap());
    assert!(matches!(
        pm.forward(&mut g, &p, x),
        Err(crate::Error::Dimension(_))
    ));
}

#[test]
fn patch_expand_matches_naive_reference() {
    let c = 4;
    let (mut store, pe) = layer_store(|pb| PatchExpand::init(pb, c).unwrap());
    perturb(&mut store, 0.3);
    let x = Tensor::randn(vec![2, 3, c], 1.0, &mut rng(11)).unwrap();
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let y = pe.forward(&mut g, &p, xv).unwrap();
    let y = g.value(y).clone();
    assert_eq!(y.shape(), &[4, 6, c / 2]);

    let wt = store.get(pe.proj.w).data().to_vec();
    let gamma = store.get(pe.norm.gamma).data().to_vec();
    let beta = store.get(pe.norm.beta).data().to_vec();
    let co = c / 2;
    for yy in 0..4 {
        for xx in 0..6 {
            let (i, a, j, b) = (yy / 2, yy % 2, xx / 2, xx % 2);
            let v: Vec<f64> = (0..co)
                .map(|k| {
                    let o = (a * 2 + b) * co + k;
                    (0..c).map(|q| x.at(&[i, j, q]) * wt[q * 2 * c + o]).sum()
                })
                .collect();
            let mean = v.iter().sum::<f64>() / co as f64;
            let var = v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / co as f64;
            for k in 0..co {
                let want = (v[k] - mean) / (var + config::LN_EPS).sqrt() * gamma[k] + beta[k];
                assert!((y.at(&[yy, xx, k]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn expand_after_merge_restores_shape() {
    let (store, (pm, pe)) = layer_store(|pb| {
        (
            pb.scoped("m", |pb| PatchMerge::init(pb, 3)).unwrap(),
            pb.scoped("e", |pb| PatchExpand::init(pb, 6)).unwrap(),
        )
    });
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let x = g.constant(Tensor::ones(vec![8, 8, 3]).unwrap());
    let m = pm.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.shape(m), &[4, 4, 6]);
    let e = pe.forward(&mut g, &p, m).unwrap();
    assert_eq!(g.shape(e), &[8, 8, 3]);
    assert!(matches!(
        layer_store(|pb| PatchExpand::init(pb, 5)).1,
        Err(crate::Error::Config(_))
    ));
}

fn vss(c: usize, seed: u64) -> (ParamStore<f64>, VssBlock) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let b = {
        let mut pb = ParamBuilder::new(&mut store, &mut r);
        VssBlock::init(&mut pb, c, c, 2, 3, ProjectionSharing::PerRoute).unwrap()
    };
    (store, b)
}

#[test]
fn vss_block_with_zero_output_is_identity() {
    let (mut store, b) = vss(4, 12);
    perturb(&mut store, 0.2);
    let name = store.name(b.out.w).to_string();
    let z = Tensor::zeros(store.get(b.out.w).shape().to_vec()).unwrap();
    store.set(&name, z).unwrap();
    let x = Tensor::randn(vec![3, 5, 4], 1.0, &mut rng(13)).unwrap();
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let y = b.forward(&mut g, &p, xv, ScanMode::Exact).unwrap();
    assert_eq!(g.value(y).data(), x.data());
}

#[test]
fn vss_block_gradient() {
    let (mut store, b) = vss(4, 14);
    perturb(&mut store, 0.2);
    let x = Tensor::randn(vec![4, 4, 4], 1.0, &mut rng(15)).unwrap();
    let mut inputs = vec![x];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    let r = gradcheck::check(&inputs, |g, v| {
        let p = Bound::from_vars(v[1..].to_vec());
        let y = b.forward(g, &p, v[0], ScanMode::Exact)?;
        gradcheck::project(g, y, 16)
    })
    .unwrap();
    assert!(r.max_rel_err() < 1e-4, "{r:?}");
}

#[test]
fn small_network_gradient_sampled() {
    let mut m = VmUnet::<f64>::new(small_cfg(), &mut rng(17)).unwrap();
    perturb(m.params_mut(), 0.05);
    let x = image(32, 32, 18);
    let inputs: Vec<Tensor<f64>> = m.params().iter().map(|(_, t)| t.clone()).collect();
    let r = gradcheck::check_sampled(&inputs, 2, 19, |g, v| {
        let p = Bound::from_vars(v.to_vec());
        let xv = g.constant(x.clone());
        let y = m.forward(g, &p, xv)?;
        gradcheck::project(g, y, 20)
    })
    .unwrap();
    assert!(r.max_rel_err() < 1e-4, "{r:?}");
}

#[test]
fn every_parameter_receives_gradient() {
    let mut m = VmUnet::<f64>::new(small_cfg(), &mut rng(21)).unwrap();
    perturb(m.params_mut(), 0.05);
    let x = image(32, 32, 22);
    let mut g = Graph::new();
    let p = m.params().bind(&mut g);
    let xv = g.constant(x);
    let y = m.forward(&mut g, &p, xv).unwrap();
    let loss = gradcheck::project(&mut g, y, 23).unwrap();
    let mut grads = g.backward(loss).unwrap();
    m.params_mut().accumulate_grads(&p, &mut grads).unwrap();
    for (name, t) in m.params().iter() {
        assert!(
            t.grad().unwrap().iter().any(|&v| v != 0.0),
            "{name} has an all-zero gradient"
        );
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = VmUnet::<f32>::new(small_cfg(), &mut rng(24)).unwrap();
    let mut extra = KvMap::new();
    extra.set("epoch", 3);
    m.save(&path, &extra).unwrap();
    let back = VmUnet::<f32>::load(&path).unwrap();
    assert_eq!(back.config(), m.config());
    for ((n1, t1), (n2, t2)) in m.params().iter().zip(back.params().iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1.data(), t2.data());
    }
    let x = image(32, 32, 25).cast::<f32>();
    assert_eq!(
        m.logits(&x).unwrap().data(),
        back.logits(&x).unwrap().data()
    );
    let ck = Checkpoint::read(&path).unwrap();
    assert_eq!(ck.header.get("epoch"), Some("3"));
    assert_eq!(
        ck.encode().unwrap(),
        std::fs::read(&path).unwrap(),
        "re-encoding differs"
    );
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m = VmUnet::<f64>::new(small_cfg(), &mut rng(26)).unwrap();
    let bytes = m.to_checkpoint(&KvMap::new()).encode().unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        Checkpoint::decode(&bad),
        Err(crate::Error::Format(_))
    ));
    assert!(matches!(
        Checkpoint::decode(&bytes[..bytes.len() - 3]),
        Err(crate::Error::Format(_))
    ));
    let mut ck = Checkpoint::decode(&bytes).unwrap();
    ck.tensors.pop();
    assert!(VmUnet::<f64>::from_checkpoint(&ck).is_err());
}

#[test]
fn config_kv_round_trip() {
    for cfg in [VmUnetConfig::full(), VmUnetConfig::tiny(), small_cfg()] {
        let back = VmUnetConfig::from_kv(&cfg.to_kv(), VmUnetConfig::tiny()).unwrap();
        assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn vss_block_preserves_shape(h in 1usize..5, w in 1usize..5, c in 1usize..4) {
        let (store, b) = vss(c, 27);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let x = g.constant(Tensor::full(vec![h, w, c], 0.3).unwrap());
        let y = b.forward(&mut g, &p, x, ScanMode::Simplified).unwrap();
        prop_assert_eq!(g.shape(y), &[h, w, c][..]);
    }

    #[test]
    fn output_resolution_equals_input(k in 1usize..3, l in 1usize..3) {
        let cfg = VmUnetConfig { input: (32 * k, 32 * l), ..small_cfg() };
        let m = VmUnet::<f32>::new(cfg, &mut rng(28)).unwrap();
        let x = Tensor::full(vec![32 * k, 32 * l, 3], 0.5f32).unwrap();
        let y = m.logits(&x).unwrap();
        prop_assert_eq!(y.shape(), &[32 * k, 32 * l, 1][..]);
    }
}
