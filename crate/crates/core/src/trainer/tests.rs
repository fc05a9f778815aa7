use super::*;
use crate::posnet::ParamArray;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar(name: &str, v: Vec<f64>) -> ModelParams {
    ModelParams { arrays: vec![ParamArray { name: name.into(), shape: vec![v.len()], data: v, trainable: true }] }
}

fn tiny_net() -> NetConfig {
    NetConfig {
        levels: 2,
        filters_per_level: vec![4, 8],
        dense_layers_per_block: 2,
        attention_levels: [1, 2].into_iter().collect(),
        embedding_k: 3,
        ..NetConfig::desk()
    }
}

fn tiny_examples(n: u64, len: usize) -> Vec<Example> {
    SyntheticMixSource { seed: 3, len, snr_db: [0.0, 10.0] }.examples(0..n).unwrap()
}

#[test]
fn lr_schedule() {
    let c = TrainConfig::default();
    assert_eq!(lr_at(0, &c), 1e-4);
    assert_eq!(lr_at(99_999, &c), 1e-4);
    assert_eq!(lr_at(100_000, &c), 5e-5);
    assert_eq!(lr_at(250_000, &c), 2.5e-5);
}

proptest! {
    #[test]
    fn lr_is_nonincreasing_powers_of_two(a in 0u64..10_000_000, b in 0u64..10_000_000) {
        let c = TrainConfig::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lr_at(hi, &c) <= lr_at(lo, &c));
        let k = (c.lr / lr_at(a, &c)).log2();
        prop_assert_eq!(k, k.round());
    }
}

#[test]
fn adam_zero_gradient() {
    let cfg = TrainConfig::default();
    let mut p = scalar("w", vec![0.5, -2.0]);
    let mut st = OptimizerState::new(&p);
    st.m[0] = vec![0.1, 0.2];
    st.v[0] = vec![0.0, 0.0];
    let g = Gradients { arrays: vec![vec![0.0, 0.0]] };
    let mut p0 = p.clone();
    let mut st0 = st.clone();
    st0.m[0] = vec![0.0, 0.0];
    adam_step(&mut p0, &g, &mut st0, 1e-3, &cfg).unwrap();
    assert_eq!(p0.arrays[0].data, vec![0.5, -2.0]);
    adam_step(&mut p, &g, &mut st, 1e-3, &cfg).unwrap();
    assert!((st.m[0][0] - 0.09).abs() < 1e-15 && (st.m[0][1] - 0.18).abs() < 1e-15);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let cfg = TrainConfig::default();
    let mut p = scalar("w", vec![1.0]);
    let mut st = OptimizerState::new(&p);
    for _ in 0..200 {
        let g = Gradients { arrays: vec![vec![2.0 * p.arrays[0].data[0]]] };
        adam_step(&mut p, &g, &mut st, 0.1, &cfg).unwrap();
    }
    assert!(p.arrays[0].data[0].abs() < 0.05, "{}", p.arrays[0].data[0]);
}

#[test]
fn adam_matches_reference() {
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w0: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut p = scalar("w", w0.clone());
    let mut st = OptimizerState::new(&p);
    let (mut w, mut m, mut v) = (w0, vec![0.0; 16], vec![0.0; 16]);
    for t in 1..=25 {
        let g: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        adam_step(&mut p, &Gradients { arrays: vec![g.clone()] }, &mut st, 0.01, &cfg).unwrap();
        for i in 0..16 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            w[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
    }
    for (a, b) in p.arrays[0].data.iter().zip(&w) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn adam_rejects_nan_and_skips_frozen() {
    let cfg = TrainConfig::default();
    let mut p = scalar("enc0.conv.w", vec![1.0]);
    let mut st = OptimizerState::new(&p);
    let err = adam_step(&mut p, &Gradients { arrays: vec![vec![f64::NAN]] }, &mut st, 0.1, &cfg).unwrap_err();
    assert!(err.to_string().contains("enc0.conv.w"));
    assert_eq!(st.step, 0);
    p.arrays[0].trainable = false;
    adam_step(&mut p, &Gradients { arrays: vec![vec![1.0]] }, &mut st, 0.1, &cfg).unwrap();
    assert_eq!(p.arrays[0].data, vec![1.0]);
}

#[test]
fn grad_check_tiny_and_fault_injection() {
    let cfg = tiny_net();
    let opts = GradCheckOptions::default();
    let rep = grad_check(&cfg, 7, &opts).unwrap();
    assert!(rep.passes(1e-4), "{}", rep.to_text());
    assert_eq!(rep, grad_check(&cfg, 7, &opts).unwrap());
    let bad = GradCheckOptions { fault: Some(Fault { param: "enc1.dense.l0.conv.w".into(), scale: 1.5 }), ..opts };
    let rep = grad_check(&cfg, 7, &bad).unwrap();
    assert!(rep.group("enc1.dense.l0.conv.w").unwrap().max_rel_err > 1e-2);
    assert!(rep.group("enc0.dense.l0.conv.w").unwrap().max_rel_err <= 1e-4);
}

#[test]
fn batch_gradient_is_order_invariant() {
    let net = PosNet::new(&tiny_net()).unwrap();
    let params = net.init_params(1);
    let ex = tiny_examples(3, 4096);
    let w = LossWeights::default();
    let (la, _, _, ga, _) = batch_loss_and_grad(&net, &params, &ex, &w).unwrap();
    let rev: Vec<Example> = ex.iter().rev().cloned().collect();
    let (lb, _, _, gb, _) = batch_loss_and_grad(&net, &params, &rev, &w).unwrap();
    assert!((la - lb).abs() < 1e-10);
    for (a, b) in ga.arrays.iter().flatten().zip(gb.arrays.iter().flatten()) {
        assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }
}

#[test]
fn training_is_deterministic_and_resumes_bitwise() {
    let data = FixedSet { examples: tiny_examples(4, 4096) };
    let cfg = TrainConfig { total_steps: 6, batch_size: 2, checkpoint_every: 3, lr: 1e-3, ..TrainConfig::desk() };
    let w = LossWeights::default();
    let dir = tempfile::tempdir().unwrap();

    let mut a = Trainer::new(&tiny_net(), cfg.clone(), w.clone()).unwrap();
    let la = a.run(&data, Some(dir.path()), |_| {}).unwrap();
    let mut b = Trainer::new(&tiny_net(), cfg.clone(), w.clone()).unwrap();
    let lb = b.run(&data, None, |_| {}).unwrap();
    let losses = |l: &[StepLog]| l.iter().map(|s| s.loss).collect::<Vec<_>>();
    assert_eq!(losses(&la), losses(&lb));
    assert_eq!(a.params, b.params);

    let ck = Checkpoint::load(dir.path().join("ckpt_0000003.pcn")).unwrap();
    assert_eq!(ck.step, 3);
    let mut c = Trainer::from_checkpoint(ck, cfg, w).unwrap();
    let lc = c.run(&data, None, |_| {}).unwrap();
    assert_eq!(losses(&lc), losses(&la)[3..].to_vec());
    assert_eq!(c.params, a.params);
    assert_eq!(c.opt, a.opt);
    assert_eq!(fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap().lines().count(), 6);
    assert!(dir.path().join("latest.pcn").is_file());
}

#[test]
fn evaluation_reports_improvement_fields() {
    let ex = tiny_examples(2, 4096);
    let oracle = crate::enhance::OracleMasks::new(vec![ex[0].label_fg.clone(), ex[0].label_bg.clone()]).unwrap();
    let rep = evaluate(&oracle, &ex[..1], &StftConfig::default()).unwrap();
    assert!(rep.files[0].si_sdr_db > 90.0);
    assert!(rep.si_sdr_improvement().mean > 0.0);
}
