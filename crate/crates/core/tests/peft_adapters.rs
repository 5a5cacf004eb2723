use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softsense_core::adapters::{adapter_forward, adapter_prefix, insert_adapters, AdapterSite};
use softsense_core::adam::{Adam, AdamConfig};
use softsense_core::model::{is_stage2_extra, PRETRAIN_HEAD, TASK_HEAD};
use softsense_core::peft::{apply_freeze_policy, check_rank, lora_forward, lora_names};
use softsense_core::*;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn lora_out(h: &Tensor, w: &Tensor, a: &Tensor, b: &Tensor, cfg: &LoraConfig) -> Tensor {
    let mut g = Graph::new();
    let vars: Vec<Var> = [h, w, a, b].iter().map(|t| g.constant((*t).clone())).collect();
    let y = lora_forward(&mut g, vars[0], vars[1], vars[2], vars[3], cfg).unwrap();
    g.value(y).clone()
}

#[test]
fn fresh_lora_is_exactly_the_base_projection() {
    let cfg = LoraConfig::default();
    let (h, w, a) = (randn(&[5, 16], 1), randn(&[16, 16], 2), randn(&[4, 16], 3));
    let b = Tensor::zeros(&[16, 4]);
    assert_eq!(lora_out(&h, &w, &a, &b, &cfg), h.matmul(&w).unwrap());
    let zero_alpha = LoraConfig { alpha: 0.0, ..cfg };
    assert_eq!(lora_out(&h, &w, &a, &randn(&[16, 4], 4), &zero_alpha), h.matmul(&w).unwrap());
}

#[test]
fn lora_matches_dense_oracle() {
    let cfg = LoraConfig::default();
    assert_eq!(cfg.scaling(), 8.0);
    let (h, w, a, b) = (randn(&[6, 8], 5), randn(&[8, 8], 6), randn(&[4, 8], 7), randn(&[8, 4], 8));
    let got = lora_out(&h, &w, &a, &b, &cfg);
    for i in 0..6 {
        for j in 0..8 {
            let mut v = 0.0;
            for k in 0..8 {
                v += h.get2(i, k) * w.get2(k, j);
            }
            let mut delta = 0.0;
            for k in 0..8 {
                for r in 0..4 {
                    delta += h.get2(i, k) * b.get2(k, r) * a.get2(r, j);
                }
            }
            assert!((got.get2(i, j) - (v + 8.0 * delta)).abs() < 1e-12);
        }
    }
}

#[test]
fn degenerate_rank_is_rejected() {
    let cfg = LoraConfig { rank: 8, ..LoraConfig::default() };
    assert!(matches!(check_rank(&cfg, 8, 8), Err(Error::Config(_))));
    assert!(check_rank(&LoraConfig { rank: 0, ..cfg }, 8, 8).is_err());
    assert!(check_rank(&LoraConfig { rank: 7, ..cfg }, 8, 8).is_ok());
}

#[test]
fn stage1_counts_at_desk_defaults() {
    let mut m = Model::new(ModelConfig::new(5), 1).unwrap();
    let frozen_forward = forward(&m, 3);
    let counts = m.prepare_stage1(2).unwrap();
    let lora: usize = m.params.iter().filter(|(n, _)| n.contains(".lora_")).map(|(_, t)| t.len()).sum();
    assert_eq!(lora, 2048);
    for l in 4..6 {
        for target in ['q', 'k'] {
            let (a, b) = lora_names(l, target);
            assert_eq!(m.params.get(&a).unwrap().shape(), &[4, 64]);
            assert!(m.params.get(&b).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }
    assert!(counts.trainable_fraction() < 0.10, "{counts:?}");
    let expected: Vec<&String> = m
        .params
        .names()
        .filter(|n| {
            n.contains(".ln1.") || n.contains(".ln2.") || n.starts_with("final_ln.") || n == &"pos.embedding"
                || n.starts_with("encoder.") || n.contains(".lora_") || n.starts_with("pretrain_head.")
        })
        .collect();
    assert_eq!(m.params.trainable_names().collect::<Vec<_>>(), expected);
    // identity at init: LoRA branches contribute exactly nothing
    assert_eq!(forward(&m, 3), frozen_forward);
}

#[test]
fn policy_without_lora_layers() {
    let mut cfg = ModelConfig::new(5);
    cfg.freeze = FreezePolicy { frozen_layers: 6, lora_layers: 0 };
    let mut m = Model::new(cfg, 1).unwrap();
    m.prepare_stage1(2).unwrap();
    assert!(!m.params.names().any(|n| n.contains("lora")));

    cfg.freeze = FreezePolicy { frozen_layers: 3, lora_layers: 2 };
    assert!(matches!(Model::new(cfg, 1), Err(Error::Config(_))));
    let mut store = Model::new(ModelConfig::new(5), 1).unwrap().params;
    assert!(apply_freeze_policy(&mut store, &cfg).is_err());
}

fn windows(seed: u64, batch: usize, steps: usize) -> Vec<f64> {
    randn(&[batch * steps, 5], seed).into_data()
}

fn forward(m: &Model, seed: u64) -> Tensor {
    let x = windows(seed, 2, 12);
    let mut g = Graph::new();
    let enc = m.encode(&mut g, &Batch::new(&x, 2, 12)).unwrap();
    g.value(enc.hidden).clone()
}

fn random_steps(m: &mut Model, steps: usize, head: &str) {
    let mut adam = Adam::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    for s in 0..steps {
        let x = windows(100 + s as u64, 2, 12);
        let mut g = Graph::training(ChaCha8Rng::seed_from_u64(s as u64));
        let enc = m.encode(&mut g, &Batch::new(&x, 2, 12)).unwrap();
        let y = m.head(&mut g, head, enc.hidden).unwrap();
        let n = g.value(y).len();
        let target = randn(&[n, 1], 500 + s as u64).into_data();
        let loss = g.squared_error(y, target, None, 1.0 / n as f64).unwrap();
        g.backward(loss).unwrap();
        adam.step(&mut m.params, &g.param_grads()).unwrap();
    }
}

#[test]
fn stage1_training_touches_only_the_mask() {
    let mut m = Model::new(ModelConfig::new(5), 3).unwrap();
    m.prepare_stage1(4).unwrap();
    let before = m.params.clone();
    random_steps(&mut m, 10, PRETRAIN_HEAD);
    let changed = m.changed_from(&before);
    assert!(!changed.is_empty());
    for n in &changed {
        assert!(before.is_trainable(n), "{n} changed but is frozen");
    }
    for n in before.names().filter(|n| !before.is_trainable(n)) {
        assert_eq!(m.params.get(n).unwrap(), before.get(n).unwrap(), "{n}");
    }
    // every LoRA B left zero during the steps, so its branch is now live
    assert!(changed.iter().any(|n| n.ends_with("lora_q.b")));
}

#[test]
fn adapter_counts_and_identity() {
    let mut m = Model::new(ModelConfig::new(5), 5).unwrap();
    m.prepare_stage1(6).unwrap();
    let ssfm = m.clone();
    let ssfm_out = forward(&ssfm, 7);
    let counts = m.prepare_stage2(1, 8).unwrap();
    let adapters: Vec<&String> = m.params.names().filter(|n| n.ends_with(".w_down")).collect();
    assert_eq!(adapters.len(), 12);
    assert_eq!(m.params.count_prefix(&adapter_prefix(0, AdapterSite::PostAttention)), 4192);
    let total: usize = m.params.iter().filter(|(n, _)| n.contains(".adapter_")).map(|(_, t)| t.len()).sum();
    assert_eq!(total, 50304);
    assert_eq!(counts.trainable, 50304 + 64 + 1);
    for n in m.params.trainable_names() {
        assert!(n.contains(".adapter_") || n.starts_with("task_head."), "{n}");
    }
    assert_eq!(forward(&m, 7), ssfm_out);
    assert!(matches!(m.prepare_stage2(1, 9), Err(Error::AdaptersPresent)));

    random_steps(&mut m, 3, TASK_HEAD);
    assert!(m.changed_from(&ssfm.params).is_empty(), "SSFM weights moved");
    assert_ne!(forward(&m, 7), ssfm_out);
}

#[test]
fn insert_adapters_refuses_twice() {
    let cfg = ModelConfig::new(5);
    let mut store = Model::new(cfg, 1).unwrap().params;
    let mut r = ChaCha8Rng::seed_from_u64(0);
    insert_adapters(&mut store, &cfg, &mut r, is_stage2_extra).unwrap();
    assert_eq!(insert_adapters(&mut store, &cfg, &mut r, is_stage2_extra), Err(Error::AdaptersPresent));
}

fn adapter_store(d: usize, rank: usize, seed: u64, random_up: bool) -> (ParamStore, AdapterConfig) {
    let cfg = AdapterConfig { rank, ..AdapterConfig::default() };
    let mut s = ParamStore::new();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    softsense_core::adapters::init_adapter(&mut s, "ad", d, &cfg, &mut r).unwrap();
    if random_up {
        for (i, n) in ["ad.w_down", "ad.b_down", "ad.w_up", "ad.b_up"].iter().enumerate() {
            let shape = s.get(n).unwrap().shape().to_vec();
            *s.get_mut(n).unwrap() = randn(&shape, seed * 10 + i as u64);
        }
    }
    (s, cfg)
}

fn adapter_out(s: &ParamStore, cfg: &AdapterConfig, h: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let hv = g.constant(h.clone());
    let y = adapter_forward(&mut g, s, "ad", hv, cfg).unwrap();
    g.value(y).clone()
}

#[test]
fn adapter_examples() {
    let (mut s, cfg) = adapter_store(8, 4, 1, false);
    let h = randn(&[3, 8], 2);
    assert_eq!(adapter_out(&s, &cfg, &h), h);

    s.get_mut("ad.w_up").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.7);
    let c: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
    s.get_mut("ad.b_up").unwrap().data_mut().copy_from_slice(&c);
    let out = adapter_out(&s, &cfg, &Tensor::zeros(&[2, 8]));
    assert_eq!(out.row(0), &c[..]);
    assert_eq!(out.row(1), &c[..]);

    let (s, cfg) = adapter_store(8, 4, 3, true);
    let h = randn(&[5, 8], 4);
    let got = adapter_out(&s, &cfg, &h);
    let wd = s.get("ad.w_down").unwrap();
    let bd = s.get("ad.b_down").unwrap().data();
    let wu = s.get("ad.w_up").unwrap();
    let bu = s.get("ad.b_up").unwrap().data();
    let gelu = |x: f64| 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    for i in 0..5 {
        let z: Vec<f64> = (0..4).map(|r| gelu((0..8).map(|k| h.get2(i, k) * wd.get2(k, r)).sum::<f64>() + bd[r])).collect();
        for j in 0..8 {
            let up: f64 = (0..4).map(|r| z[r] * wu.get2(r, j)).sum::<f64>() + bu[j];
            assert!((got.get2(i, j) - (up + h.get2(i, j))).abs() < 1e-12);
        }
    }
}
