use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::tests::random_tensor;
use super::*;

fn tiny_cfg() -> NetConfig {
    NetConfig {
        levels: 2,
        filters_per_level: vec![4, 8],
        dense_layers_per_block: 2,
        attention_levels: [1, 2].into(),
        embedding_k: 3,
        ..NetConfig::desk()
    }
}

fn randomize(params: &mut ModelParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for a in &mut params.arrays {
        if a.name.ends_with("gamma") || a.name.ends_with("running_var") {
            a.data.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if a.name.ends_with("gain") || a.name.ends_with("beta") || a.name.ends_with("running_mean") || a.name == "head.b" {
            a.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        } else if a.name == "head.w" {
            a.data.iter_mut().for_each(|v| *v *= 100.0);
        }
    }
}

fn projection_loss(net: &PosNet, params: &ModelParams, x: &Tensor, r: &Tensor) -> (f64, u64) {
    let (y, cache) = net.forward(params, x, Mode::Train).unwrap();
    (y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum(), cache.relu_signature())
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs())).max(1e-6)
}

#[test]
fn output_shape_matches_input_resolution() {
    let net = PosNet::new(&NetConfig::desk()).unwrap();
    let params = net.init_params(0);
    let x = random_tensor([1, NetConfig::desk().input_channels(), 64, 257], 1);
    let (y, _) = net.forward(&params, &x, Mode::Eval).unwrap();
    assert_eq!(y.shape(), [1, 4, 64, 257]);
    let masks = net.output_masks(&y);
    assert_eq!(masks.len(), 1);
    assert_eq!(masks[0].len(), 2);
    assert!(masks[0].iter().all(|m| m.shape() == (64, 257)));
}

#[test]
fn mask_count_follows_config() {
    let cfg = NetConfig { n_output_masks: 3, ..tiny_cfg() };
    let net = PosNet::new(&cfg).unwrap();
    let params = net.init_params(0);
    let x = random_tensor([2, cfg.input_channels(), 8, 9], 1);
    let (y, _) = net.forward(&params, &x, Mode::Eval).unwrap();
    assert_eq!(y.shape(), [2, 6, 8, 9]);
}

#[test]
fn lookahead_from_pooling_depth() {
    assert_eq!(PosNet::new(&NetConfig::desk()).unwrap().lookahead_frames(), 7);
    assert_eq!(PosNet::new(&NetConfig::full()).unwrap().lookahead_frames(), 63);
}

fn causality_holds(t: usize, seed: u64) {
    let cfg = NetConfig { attention_levels: Default::default(), ..NetConfig::desk() };
    let net = PosNet::new(&cfg).unwrap();
    let mut params = net.init_params(seed);
    randomize(&mut params, seed + 1);
    let x = random_tensor([1, cfg.input_channels(), t, 33], seed + 2);
    let mut x2 = x.clone();
    for c in 0..x2.c {
        for tt in t - 8..t {
            for f in 0..x2.f {
                let i = x2.idx(0, c, tt, f);
                x2.data[i] = 0.0;
            }
        }
    }
    let (y, _) = net.forward(&params, &x, Mode::Eval).unwrap();
    let (y2, _) = net.forward(&params, &x2, Mode::Eval).unwrap();
    let l = net.lookahead_frames();
    let safe = t - 8 - l;
    let mut later_changed = false;
    for c in 0..y.c {
        for tt in 0..t {
            for f in 0..y.f {
                let same = y.at(0, c, tt, f) == y2.at(0, c, tt, f);
                if tt < safe {
                    assert!(same, "frame {tt} changed (T={t})");
                } else if !same {
                    later_changed = true;
                }
            }
        }
    }
    assert!(later_changed);
}

#[test]
fn causal_up_to_lookahead() {
    causality_holds(64, 3);
    causality_holds(45, 4);
}

#[test]
fn zero_input_gives_small_finite_output() {
    let cfg = NetConfig::desk();
    let net = PosNet::new(&cfg).unwrap();
    let params = net.init_params(5);
    let mut x = Tensor::zeros(1, cfg.input_channels(), 32, 65);
    for c in 0..2 {
        x.sample_mut(0)[c * 32 * 65..(c + 1) * 32 * 65].fill(0.0);
    }
    let (y, _) = net.forward(&params, &x, Mode::Eval).unwrap();
    assert!(y.is_finite());
    let mean = y.data.iter().sum::<f64>() / y.data.len() as f64;
    let peak = y.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(mean.abs() < 0.1 && peak < 1.0, "mean {mean} peak {peak}");
}

#[test]
fn clip_too_short() {
    let net = PosNet::new(&NetConfig::desk()).unwrap();
    let params = net.init_params(0);
    let x = Tensor::zeros(1, NetConfig::desk().input_channels(), 7, 33);
    assert!(matches!(net.forward(&params, &x, Mode::Eval), Err(Error::ClipTooShort { frames: 7, needed: 8 })));
}

#[test]
fn init_is_deterministic() {
    let net = PosNet::new(&NetConfig::desk()).unwrap();
    assert_eq!(net.init_params(9), net.init_params(9));
    assert_ne!(net.init_params(9), net.init_params(10));
}

#[test]
fn kernel_variance_is_he_scaled() {
    let net = PosNet::new(&NetConfig::desk()).unwrap();
    let p = net.init_params(11);
    let mut checked = 0;
    for a in &p.arrays {
        if a.shape.len() == 4 && a.shape[2] == 3 && a.data.len() >= 1024 {
            let fan_in = (a.shape[1] * 9) as f64;
            let var = a.data.iter().map(|v| v * v).sum::<f64>() / a.data.len() as f64;
            let want = 2.0 / fan_in;
            assert!((var / want - 1.0).abs() < 0.2, "{}: {var} vs {want}", a.name);
            checked += 1;
        }
    }
    assert!(checked > 5);
}

#[test]
fn init_constants() {
    let p = PosNet::new(&NetConfig::desk()).unwrap().init_params(0);
    for a in &p.arrays {
        if a.name.ends_with("bn.gamma") || a.name.ends_with("running_var") {
            assert!(a.data.iter().all(|&v| v == 1.0));
        }
        if a.name.ends_with("bn.beta") || a.name.ends_with("attn.gain") || a.name.ends_with("running_mean") {
            assert!(a.data.iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn desk_parameter_count_is_stable() {
    let net = PosNet::new(&NetConfig::desk()).unwrap();
    let a = net.init_params(1).count();
    let b = net.init_params(2).count();
    assert_eq!(a, b);
    let cfg = NetConfig::desk();
    let cbr = |cin: usize, cout: usize, k: usize| cout * cin * k * k + 2 * cout;
    let dense = |cin: usize, cout: usize| {
        let g = cout / 4;
        (0..4).map(|i| cbr(cin + i * g, g, 3)).sum::<usize>() + cbr(cin + 4 * g, cout, 1)
    };
    let attn = |c: usize| 3 * c * c + 1;
    let f = &cfg.filters_per_level;
    let enc = dense(cfg.input_channels(), f[0]) + dense(f[0], f[1]) + attn(f[1]) + dense(f[1], f[2]) + attn(f[2]);
    let bottleneck = dense(f[2], f[2]) + attn(f[2]);
    let dec: usize = (0..3).map(|l| cbr(if l == 2 { f[2] } else { f[l + 1] }, f[l], 3) + dense(2 * f[l], f[l])).sum();
    let head = 4 * f[0] + 4;
    assert_eq!(a, enc + bottleneck + dec + head);
    assert_eq!(a, 83_335);
}

#[test]
fn eval_passes_are_bitwise_identical() {
    let cfg = tiny_cfg();
    let net = PosNet::new(&cfg).unwrap();
    let mut params = net.init_params(2);
    randomize(&mut params, 3);
    let x = random_tensor([2, cfg.input_channels(), 8, 9], 4);
    let (a, _) = net.forward(&params, &x, Mode::Eval).unwrap();
    let (b, _) = net.forward(&params, &x, Mode::Eval).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_cotangent_gives_zero_gradients() {
    let cfg = tiny_cfg();
    let net = PosNet::new(&cfg).unwrap();
    let params = net.init_params(2);
    let x = random_tensor([2, cfg.input_channels(), 8, 9], 4);
    let (y, mut cache) = net.forward(&params, &x, Mode::Train).unwrap();
    let (g, dx) = cache.backward(&Tensor::zeros(y.n, y.c, y.t, y.f)).unwrap();
    assert!(g.is_zero());
    assert!(dx.data.iter().all(|&v| v == 0.0));
}

#[test]
fn cache_cannot_be_reused() {
    let cfg = tiny_cfg();
    let net = PosNet::new(&cfg).unwrap();
    let params = net.init_params(2);
    let x = random_tensor([1, cfg.input_channels(), 8, 9], 4);
    let (y, mut cache) = net.forward(&params, &x, Mode::Train).unwrap();
    let d = Tensor::zeros(y.n, y.c, y.t, y.f);
    cache.backward(&d).unwrap();
    assert!(cache.is_consumed());
    assert!(matches!(cache.backward(&d), Err(Error::CacheConsumed)));
    let (_, mut eval) = net.forward(&params, &x, Mode::Eval).unwrap();
    assert!(matches!(eval.backward(&d), Err(Error::EvalCache)));
}

#[test]
fn head_gradient_matches_finite_differences() {
    let cfg = tiny_cfg();
    let net = PosNet::new(&cfg).unwrap();
    let mut params = net.init_params(6);
    randomize(&mut params, 7);
    let x = random_tensor([2, cfg.input_channels(), 8, 9], 8);
    let (y, mut cache) = net.forward(&params, &x, Mode::Train).unwrap();
    let r = random_tensor(y.shape(), 9);
    let (g, _) = cache.backward(&r).unwrap();
    let h = 1e-4;
    for name in ["head.w", "head.b"] {
        let id = params.arrays.iter().position(|a| a.name == name).unwrap();
        for i in 0..params.arrays[id].data.len() {
            let mut p = params.clone();
            p.arrays[id].data[i] += h;
            let (lp, _) = projection_loss(&net, &p, &x, &r);
            p.arrays[id].data[i] -= 2.0 * h;
            let (lm, _) = projection_loss(&net, &p, &x, &r);
            let num = (lp - lm) / (2.0 * h);
            assert!(rel_err(g.arrays[id][i], num) <= 1e-4, "{name}[{i}]: {} vs {num}", g.arrays[id][i]);
        }
    }
}

#[test]
fn dense_concatenation_input_cotangent() {
    let cfg = NetConfig {
        levels: 1,
        filters_per_level: vec![8],
        dense_layers_per_block: 2,
        attention_levels: Default::default(),
        positional_embeddings: false,
        ..NetConfig::desk()
    };
    let net = PosNet::new(&cfg).unwrap();
    let mut params = net.init_params(12);
    randomize(&mut params, 13);
    let x = random_tensor([2, 2, 4, 6], 14);
    let (y, mut cache) = net.forward(&params, &x, Mode::Train).unwrap();
    let base_sig = cache.relu_signature();
    let r = random_tensor(y.shape(), 15);
    let (_, dx) = cache.backward(&r).unwrap();
    let h = 1e-4;
    let mut checked = 0;
    for i in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[i] += h;
        let (lp, sp) = projection_loss(&net, &params, &xp, &r);
        xp.data[i] -= 2.0 * h;
        let (lm, sm) = projection_loss(&net, &params, &xp, &r);
        if sp != base_sig || sm != base_sig {
            continue;
        }
        let num = (lp - lm) / (2.0 * h);
        assert!(rel_err(dx.data[i], num) <= 1e-4, "x[{i}]: {} vs {num}", dx.data[i]);
        checked += 1;
    }
    assert!(checked > x.data.len() / 2);
}

#[test]
fn running_stats_update() {
    let cfg = tiny_cfg();
    let net = PosNet::new(&cfg).unwrap();
    let mut params = net.init_params(2);
    let x = random_tensor([2, cfg.input_channels(), 8, 9], 4);
    let obs = {
        let (_, cache) = net.forward(&params, &x, Mode::Train).unwrap();
        cache.batch_stats().to_vec()
    };
    assert!(!obs.is_empty());
    let before = params.clone();
    PosNet::update_running_stats(&mut params, &obs, 0.1);
    let id = obs[0].running_mean;
    for (j, v) in params.arrays[id].data.iter().enumerate() {
        assert!((v - 0.1 * obs[0].stats.mean[j]).abs() < 1e-15);
    }
    assert_ne!(before, params);
}

#[test]
fn rejects_mismatched_params() {
    let net = PosNet::new(&tiny_cfg()).unwrap();
    let other = PosNet::new(&NetConfig::desk()).unwrap().init_params(0);
    let x = random_tensor([1, tiny_cfg().input_channels(), 8, 9], 1);
    assert!(matches!(net.forward(&other, &x, Mode::Eval), Err(Error::ShapeMismatch(_))));
}
