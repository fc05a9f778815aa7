//! The fourteen acceptance criteria, one pass/fail line each.
//!
//! Run a subset by number: `cargo test --test acceptance -- 3 8`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use poconet::augment::{apply_level_and_mix, nonstationary_score, AugmentConfig, AugmentRecipe, LevelDraw};
use poconet::datapipe::corpus::make_filter_corpus;
use poconet::datapipe::filter::Decision;
use poconet::datapipe::{filter_corpus, synthesize_example, FilterThresholds, OracleEstimator};
use poconet::dsp::{istft, stft, AudioBuffer, StftConfig};
use poconet::enhance::{enhance_segment, IdentityMasks, NetMasks};
use poconet::lossfn::{spectral_biased_loss, LossWeights};
use poconet::posnet::{frequency_positional_embeddings, EmbeddingConfig, Mode, NetConfig, PosNet, Tensor};
use poconet::reverb::{estimate_rt60_samples, image_method_rir, DereverbMode, LibraryConfig, RirLibrary, RoomSpec, TapInterp};
use poconet::stream::{StreamConfig, StreamState};
use poconet::trainer::{batch_loss_and_grad, evaluate, grad_check, FixedSet, GradCheckOptions, SyntheticMixSource, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn c1_stft_round_trip() -> Outcome {
    let t = Instant::now();
    let cfg = StftConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = AudioBuffer::from_samples((0..16000).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y = istft(&stft(&x, &cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let peak = x.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in cfg.fft_size..x.len() - cfg.fft_size {
            worst = worst.max((y.samples[i] - x.samples[i]).abs() / peak);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst <= 1e-6 && secs < 1.0, format!("10 random 1 s signals, max interior relative error {worst:.2e}, {secs:.3} s"))
}

fn c2_grad_check() -> Outcome {
    let t = Instant::now();
    let rep = grad_check(&NetConfig::desk(), 0, &GradCheckOptions::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let unchecked: Vec<&str> = rep.groups.iter().filter(|g| g.checked == 0).map(|g| g.name.as_str()).collect();
    check(
        rep.passes(1e-4) && secs < 300.0,
        format!("{} groups incl. input, max relative error {:.2e}, unchecked {:?}, {secs:.1} s", rep.groups.len(), rep.max_rel_err(), unchecked),
    )
}

fn c3_embeddings() -> Outcome {
    let (k, bins, frames) = (4, 257, 5);
    let e = frequency_positional_embeddings(frames, &EmbeddingConfig { k, bins }).map_err(|e| e.to_string())?;
    let at = |t: usize, f: usize| e[(t * bins + f) * k..(t * bins + f + 1) * k].to_vec();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    let f_top = bins - 1;
    let ok_points = close(&at(0, 0), &[1.0; 4]) && close(&at(0, f_top), &[-1.0, 1.0, 1.0, 1.0]) && close(&at(0, f_top / 2), &[0.0, -1.0, 1.0, 1.0]);
    let in_range = e.iter().all(|v| (-1.0..=1.0).contains(v));
    let constant = (1..frames).all(|t| e[t * bins * k..(t + 1) * bins * k] == e[..bins * k]);
    check(ok_points && in_range && constant, format!("closed form at f=0,F/2,F {ok_points}, range {in_range}, time-constant {constant}"))
}

fn c4_biased_loss() -> Outcome {
    let w = LossWeights::default();
    let want = w.lambda_under / w.lambda_over;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let bins = 17;
    for _ in 0..1000 {
        let y: Vec<f64> = (0..bins * 3).map(|_| rng.random_range(0.5..2.0)).collect();
        let d: Vec<f64> = y.iter().map(|v| rng.random_range(0.0..*v * 0.9)).collect();
        let under: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a - b).collect();
        let over: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + b).collect();
        let lu = spectral_biased_loss(&under, &y, bins, &w, true).map_err(|e| e.to_string())?.0;
        let lo = spectral_biased_loss(&over, &y, bins, &w, true).map_err(|e| e.to_string())?.0;
        worst = worst.max((lu / lo / want - 1.0).abs());
    }
    check(worst < 1e-12, format!("1000 pairs, ratio 13.3/2.6 = {want:.6}, max relative deviation {worst:.1e}"))
}

fn c5_causality() -> Outcome {
    let cfg = NetConfig { attention_levels: Default::default(), ..NetConfig::desk() };
    let net = PosNet::new(&cfg).map_err(|e| e.to_string())?;
    // One-frame look-ahead per 2x average pool, doubled at every deeper level.
    let l: usize = (0..cfg.levels).map(|i| 1 << i).sum();
    if l != net.lookahead_frames() {
        return Err(format!("pooling arithmetic gives L={l}, network reports {}", net.lookahead_frames()));
    }
    let mut params = net.init_params(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for a in &mut params.arrays {
        if a.name.ends_with("beta") || a.name.ends_with("running_mean") {
            a.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    let mut earliest_violation = None;
    let mut trials = 0;
    for t in [64usize, 45, 37] {
        let mut x = Tensor::zeros(1, cfg.input_channels(), t, 33);
        x.data.iter_mut().for_each(|v| *v = gauss(&mut rng));
        let mut x2 = x.clone();
        for c in 0..x.c {
            for tt in t - 8..t {
                for f in 0..x.f {
                    let i = x2.idx(0, c, tt, f);
                    x2.data[i] += 1.0 + gauss(&mut rng);
                }
            }
        }
        let (y, _) = net.forward(&params, &x, Mode::Eval).map_err(|e| e.to_string())?;
        let (y2, _) = net.forward(&params, &x2, Mode::Eval).map_err(|e| e.to_string())?;
        for c in 0..y.c {
            for tt in 0..t - 8 - l {
                for f in 0..y.f {
                    if y.at(0, c, tt, f) != y2.at(0, c, tt, f) && earliest_violation.is_none() {
                        earliest_violation = Some((t, tt));
                    }
                }
            }
        }
        trials += 1;
    }
    check(earliest_violation.is_none(), format!("L={l}, {trials} clip lengths, first changed early frame {earliest_violation:?}"))
}

/// Images by repeated reflection across the six walls, deduplicated by position.
fn brute_force_rir(r: &RoomSpec, fs: f64, len: usize) -> Vec<f64> {
    let l = r.dimensions_m;
    let key = |p: &[f64; 3]| p.map(|v| (v * 1e9).round() as i64);
    let mut seen = BTreeMap::new();
    seen.insert(key(&r.source_pos_m), 0usize);
    let mut images = vec![(r.source_pos_m, 0usize)];
    let mut frontier = vec![r.source_pos_m];
    for order in 1..=r.max_order {
        let mut next = Vec::new();
        for p in &frontier {
            for k in 0..3 {
                for wall in [0.0, l[k]] {
                    let mut q = *p;
                    q[k] = 2.0 * wall - p[k];
                    if seen.insert(key(&q), order).is_none() {
                        images.push((q, order));
                        next.push(q);
                    }
                }
            }
        }
        frontier = next;
    }
    let beta = r.reflection_coeff;
    let mut taps = vec![0.0; len];
    for (p, o) in images {
        let d = p.iter().zip(&r.mic_pos_m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let i = (fs * d / 343.0).floor() as usize;
        if i < len {
            taps[i] += beta.powi(o as i32) / d;
        }
    }
    taps
}

fn c6_image_method() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut delays_ok = true;
    for i in 0..5 {
        let dims = [rng.random_range(2.0..10.0), rng.random_range(2.0..10.0), rng.random_range(2.0..4.0)];
        let pos = |rng: &mut ChaCha8Rng| dims.map(|d| rng.random_range(0.3..d - 0.3));
        let room = RoomSpec {
            dimensions_m: dims,
            source_pos_m: pos(&mut rng),
            mic_pos_m: pos(&mut rng),
            reflection_coeff: rng.random_range(0.3..0.95),
            max_order: i % 3,
            interp: TapInterp::Floor,
        };
        let h = image_method_rir(&room, 16000, 0.3).map_err(|e| e.to_string())?;
        let want = brute_force_rir(&room, 16000.0, h.taps.len());
        worst = h.taps.samples.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        let direct = room.source_pos_m.iter().zip(&room.mic_pos_m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        delays_ok &= h.first_tap_index == (16000.0 * direct / 343.0).floor() as usize;
    }
    check(worst <= 1e-6 && delays_ok, format!("5 rooms, orders 0..=2, max abs error {worst:.1e}, direct delays exact {delays_ok}"))
}

fn c7_rt60() -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    for tau in [0.2, 0.5, 0.8] {
        let mut rng = ChaCha8Rng::seed_from_u64((tau * 10.0) as u64);
        // Amplitude envelope reaching -60 dB at t = tau.
        let h: Vec<f64> = (0..24000).map(|i| gauss(&mut rng) * (-3.0 * 10f64.ln() * i as f64 / 16000.0 / tau).exp()).collect();
        let est = estimate_rt60_samples(&h, 16000).map_err(|e| e.to_string())?;
        ok &= (est / tau - 1.0).abs() <= 0.1;
        rows.push(format!("{tau}->{est:.3}"));
    }
    check(ok, format!("RT60 estimates {}", rows.join(", ")))
}

fn random_desk_model(seed: u64) -> NetMasks {
    let cfg = NetConfig::desk();
    let net = PosNet::new(&cfg).expect("desk config");
    let mut params = net.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for a in &mut params.arrays {
        if a.name == "head.w" {
            a.data.iter_mut().for_each(|v| *v *= 50.0);
        } else if a.name.ends_with("beta") || a.name.ends_with("running_mean") {
            a.data.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    NetMasks { net, params }
}

fn c8_streaming() -> Outcome {
    let model = random_desk_model(8);
    let cfg = StreamConfig { crossfade_len: 0, ..StreamConfig::default() };
    let (b, c) = (cfg.buffer_len, cfg.chunk_size);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..c * 40).map(|_| 0.1 * gauss(&mut rng)).collect();
    let mut st = StreamState::new(cfg).map_err(|e| e.to_string())?;
    let mut pending_offline: Option<Vec<f64>> = None;
    let (mut compared, mut mismatched) = (0, 0);
    for (k, chunk) in x.chunks(c).enumerate() {
        let emitted = st.push_chunk(chunk, &model).map_err(|e| e.to_string())?;
        let buf = st.buffer();
        let offset = ((k + 1) * c) as i64 - b as i64;
        let offline = enhance_segment(&buf, offset, &model, &cfg.stft, cfg.sample_rate).map_err(|e| e.to_string())?.swap_remove(0);
        if let (Some(e), Some(_)) = (&emitted, &pending_offline) {
            compared += 1;
            if e[..] != offline[b - 2 * c..b - c] {
                mismatched += 1;
            }
        }
        pending_offline = Some(offline);
    }

    // Latency: an impulse at the last sample of chunk 3 under identity masks.
    let id = IdentityMasks::default();
    let mut st = StreamState::new(StreamConfig::default()).map_err(|e| e.to_string())?;
    let i = 4 * c - 1;
    let mut imp = vec![0.0; 12 * c];
    imp[i] = 1.0;
    let (mut pushed, mut out) = (0usize, Vec::new());
    let mut latency = None;
    for chunk in imp.chunks(c) {
        pushed += chunk.len();
        if let Some(e) = st.push_chunk(chunk, &id).map_err(|e| e.to_string())? {
            let start = out.len();
            out.extend(e);
            if latency.is_none() && out.len() > i && (out[i] - 1.0).abs() < 1e-6 && start <= i {
                latency = Some(pushed - i - 1);
            }
        }
    }
    let lat_ok = latency == Some(640) && st.latency_samples() == 640;
    check(
        compared >= 30 && mismatched == 0 && lat_ok,
        format!("{compared} steady-state chunks bitwise vs offline ({mismatched} differ), identity latency {latency:?} samples"),
    )
}

fn c9_filter() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let th = FilterThresholds::default();
    if (th.drr_min_db, th.snr_min_db) != (30.0, 10.0) {
        return Err(format!("thresholds {th:?}"));
    }
    let (m, truth) = make_filter_corpus(&dir.path().join("corpus"), 60, 9, &th).map_err(|e| e.to_string())?;
    let (_, rep) = filter_corpus(&m, &OracleEstimator, &OracleEstimator, &th, &dir.path().join("out")).map_err(|e| e.to_string())?;
    let mut agree = 0;
    let mut boundary = 0;
    for (c, t) in rep.clips.iter().zip(&truth) {
        let designed = t.drr_db >= th.drr_min_db && t.snr_db >= th.snr_min_db;
        let want = if designed { Decision::Accept } else if t.drr_db < th.drr_min_db { Decision::RejectDrr } else { Decision::RejectSnr };
        if c.path == t.path && c.decision == want && designed == t.accept {
            agree += 1;
        }
        if (t.drr_db - th.drr_min_db).abs() <= 0.1 + 1e-9 || (t.snr_db - th.snr_min_db).abs() <= 0.1 + 1e-9 {
            boundary += 1;
        }
    }
    let spans = truth.iter().any(|t| t.drr_db < 30.0) && truth.iter().any(|t| t.snr_db < 10.0) && truth.iter().any(|t| t.accept);
    check(
        agree == 60 && rep.clips.len() == 60 && spans && boundary >= 9,
        format!("{agree}/60 decisions match construction, {boundary} boundary clips, {} accepted", rep.accepted()),
    )
}

fn c10_overfit() -> Outcome {
    let t = Instant::now();
    // Eight frames, the shortest clip the three-level network accepts.
    let examples = SyntheticMixSource { seed: 10, len: 2304, snr_db: [0.0, 10.0] }.examples(0..8).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { lr: 1e-4, batch_size: 8, total_steps: 2000, checkpoint_every: 0, ..TrainConfig::desk() };
    let w = LossWeights::default();
    let mut tr = Trainer::new(&NetConfig::desk(), cfg, w).map_err(|e| e.to_string())?;
    let full = |tr: &Trainer| batch_loss_and_grad(&tr.net, &tr.params, &examples, &w).map(|r| r.0).map_err(|e| e.to_string());
    let initial = full(&tr)?;
    let data = FixedSet { examples: examples.clone() };
    let mut last = initial;
    while tr.step < 2000 {
        for _ in 0..50 {
            tr.step(&data).map_err(|e| e.to_string())?;
        }
        last = full(&tr)?;
        if last < 0.1 * initial {
            break;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        last < 0.1 * initial && secs < 600.0,
        format!("loss {initial:.3} -> {last:.3} ({:.3}x) after {} steps, {secs:.0} s", last / initial, tr.step),
    )
}

fn c11_end_to_end() -> Outcome {
    let t = Instant::now();
    let train = SyntheticMixSource { seed: 11, len: 2304, snr_db: [0.0, 10.0] };
    let data = FixedSet { examples: train.examples(0..2000).map_err(|e| e.to_string())? };
    let held_out = |len| SyntheticMixSource { seed: 1011, len, snr_db: [0.0, 10.0] }.examples(0..50).map_err(|e| e.to_string());
    let (test, long) = (held_out(2304)?, held_out(8192)?);
    let cfg = TrainConfig { lr: 1e-3, batch_size: 4, total_steps: 3000, checkpoint_every: 0, ..TrainConfig::desk() };
    let mut tr = Trainer::new(&NetConfig::desk(), cfg, LossWeights::default()).map_err(|e| e.to_string())?;
    tr.run(&data, None, |_| {}).map_err(|e| e.to_string())?;
    let p = tr.mask_provider();
    let imp = evaluate(&p, &test, &StftConfig::default()).map_err(|e| e.to_string())?.si_sdr_improvement();
    let imp_long = evaluate(&p, &long, &StftConfig::default()).map_err(|e| e.to_string())?.si_sdr_improvement();
    check(
        imp.mean >= 5.0 && tr.step <= 20_000,
        format!(
            "{} steps, SI-SDR improvement {:.2} ± {:.2} dB on {} held-out mixtures ({:.2} dB on 8192-sample ones), {:.0} s",
            tr.step,
            imp.mean,
            imp.ci95,
            imp.n,
            imp_long.mean,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn pipeline_clips() -> (Vec<AudioBuffer>, Vec<AudioBuffer>, RirLibrary) {
    let fg: Vec<AudioBuffer> = (0..4)
        .map(|s| poconet::datapipe::corpus::speech_like(8000, 16000, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect();
    let bg: Vec<AudioBuffer> = (0..4)
        .map(|s| {
            let kind = poconet::datapipe::corpus::NoiseKind::ALL[s as usize % 6];
            poconet::datapipe::corpus::noise(kind, 8000, 16000, &mut ChaCha8Rng::seed_from_u64(100 + s))
        })
        .collect();
    let lib = RirLibrary::generate(&LibraryConfig { count: 4, length_s: 0.25, max_rt60_s: 0.6, order_cap: 20, ..LibraryConfig::default() }, 12)
        .expect("rir library");
    (fg, bg, lib)
}

fn c12_pipeline() -> Outcome {
    let (fg, bg, lib) = pipeline_clips();
    let cfg = AugmentConfig::default();
    let (mut made, mut skipped, mut worst, mut replay_diff) = (0, 0, 0.0f64, 0);
    for i in 0..1000u64 {
        let recipe = AugmentRecipe::sample(&cfg, i);
        let (f, b) = (&fg[i as usize % 4], &bg[(i as usize / 4) % 4]);
        let a = synthesize_example(f, b, &lib, &recipe, &cfg, DereverbMode::NoDereverb).map_err(|e| e.to_string())?;
        let replay = AugmentRecipe::from_record(&recipe.to_record()).map_err(|e| e.to_string())?;
        let a2 = synthesize_example(f, b, &lib, &replay, &cfg, DereverbMode::NoDereverb).map_err(|e| e.to_string())?;
        if a != a2 {
            replay_diff += 1;
        }
        match a {
            Some(ex) => {
                made += 1;
                for ((x, f), b) in ex.x.samples.iter().zip(&ex.label_fg.samples).zip(&ex.label_bg.samples) {
                    worst = worst.max((x - (f + b)).abs());
                }
            }
            None => skipped += 1,
        }
    }
    check(
        worst <= 1e-9 && replay_diff == 0 && made > 900,
        format!("{made} datapoints ({skipped} skipped by the level stage), max |fg+bg-x| {worst:.1e}, {replay_diff} replays differ"),
    )
}

fn c13_levels() -> Outcome {
    let (fg, bg, _) = pipeline_clips();
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut worst, mut n) = (0.0f64, 0);
    for i in 0..200 {
        let mut d = LevelDraw::sample(&cfg, &mut rng);
        d.silence_fg = false;
        let gain = rng.random_range(-30.0..10.0);
        let f = fg[i % 4].scaled(10f64.powf(gain / 20.0));
        let b = bg[(i / 4) % 4].scaled(10f64.powf(rng.random_range(-40.0..0.0) / 20.0));
        let lm = apply_level_and_mix(&f, &b, &d, &cfg).map_err(|e| e.to_string())?;
        if lm.skip {
            continue;
        }
        n += 1;
        worst = worst.max((lm.normalized_dbfs.0 + 20.0).abs()).max((lm.normalized_dbfs.1 + 20.0).abs());
    }
    check(worst <= 0.1 && n >= 150, format!("{n} normalized pairs, max deviation from -20 dBFS {worst:.2e} dB"))
}

fn c14_nonstationary() -> Outcome {
    let cfg = AugmentConfig::default();
    let mut white_false = 0;
    let mut burst_true = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = AudioBuffer::from_samples((0..16000).map(|_| 0.1 * gauss(&mut rng)).collect());
        if !nonstationary_score(&w, &cfg).map_err(|e| e.to_string())?.1 {
            white_false += 1;
        }
        let mut s: Vec<f64> = (0..16000).map(|_| 0.001 * gauss(&mut rng)).collect();
        let start = rng.random_range(0..16000 - 2400);
        for v in &mut s[start..start + 1600] {
            *v += 0.5 * gauss(&mut rng);
        }
        if nonstationary_score(&AudioBuffer::from_samples(s), &cfg).map_err(|e| e.to_string())?.1 {
            burst_true += 1;
        }
    }
    check(white_false >= 99 && burst_true == 100, format!("white noise unflagged {white_false}/100, single bursts flagged {burst_true}/100"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 14] = [
        (1, "STFT round trip", c1_stft_round_trip),
        (2, "gradient verification", c2_grad_check),
        (3, "embedding exactness", c3_embeddings),
        (4, "biased-loss asymmetry", c4_biased_loss),
        (5, "causality", c5_causality),
        (6, "image-method oracle", c6_image_method),
        (7, "RT60 estimator", c7_rt60),
        (8, "streaming/offline equivalence", c8_streaming),
        (9, "filter correctness", c9_filter),
        (10, "overfit smoke test", c10_overfit),
        (11, "end-to-end enhancement", c11_end_to_end),
        (12, "pipeline additivity/determinism", c12_pipeline),
        (13, "level contract", c13_levels),
        (14, "nonstationary detector", c14_nonstationary),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
