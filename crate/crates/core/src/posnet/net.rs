//! The causal U-Net: layout, forward evaluation and reverse-mode gradients.

use num_complex::Complex64;

use super::attention::{attention_backward, attention_forward, AttentionCache, AttentionGrads, AttentionWeights};
use super::embed::frequency_positional_embeddings;
use super::layers::*;
use super::params::{Gradients, Init, ModelParams, ParamRegistry};
use super::tensor::Tensor;
use super::{EmbeddingConfig, NetConfig};
use crate::dsp::{ComplexMask, Spectrogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; the cache supports backward.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Clone)]
struct Cbr {
    conv: ConvSpec,
    w: usize,
    gamma: usize,
    beta: usize,
    rmean: usize,
    rvar: usize,
}

#[derive(Debug, Clone)]
struct DenseBlock {
    layers: Vec<Cbr>,
    transition: Cbr,
    growth: usize,
}

#[derive(Debug, Clone)]
struct Attn {
    wq: usize,
    wk: usize,
    wv: usize,
    gain: usize,
}

#[derive(Debug, Clone)]
struct Stage {
    dense: DenseBlock,
    attn: Option<Attn>,
}

#[derive(Debug, Clone)]
struct UpStage {
    up: Cbr,
    dense: DenseBlock,
}

/// Network structure with indices into [`ModelParams`]; built from a [`NetConfig`] alone.
#[derive(Debug, Clone)]
pub struct PosNet {
    cfg: NetConfig,
    enc: Vec<Stage>,
    bottleneck: Stage,
    dec: Vec<UpStage>,
    head: ConvSpec,
    head_w: usize,
    head_b: usize,
    registry_names: Vec<String>,
    registry: std::sync::Arc<ParamRegistry>,
}

fn cbr(reg: &mut ParamRegistry, name: &str, cin: usize, cout: usize, k: usize, pad: FreqPadding) -> Cbr {
    let conv = ConvSpec { cin, cout, kt: k, kf: k, freq_padding: pad };
    let w = reg.add(format!("{name}.conv.w"), vec![cout, cin, k, k], Init::He { fan_in: conv.fan_in(), gain: 1.0 }, true);
    let gamma = reg.add(format!("{name}.bn.gamma"), vec![cout], Init::Const(1.0), true);
    let beta = reg.add(format!("{name}.bn.beta"), vec![cout], Init::Const(0.0), true);
    let rmean = reg.add(format!("{name}.bn.running_mean"), vec![cout], Init::Const(0.0), false);
    let rvar = reg.add(format!("{name}.bn.running_var"), vec![cout], Init::Const(1.0), false);
    Cbr { conv, w, gamma, beta, rmean, rvar }
}

fn dense_block(reg: &mut ParamRegistry, name: &str, cin: usize, cout: usize, layers: usize, pad: FreqPadding) -> DenseBlock {
    let growth = (cout / 4).max(1);
    let convs = (0..layers)
        .map(|i| cbr(reg, &format!("{name}.l{i}"), cin + i * growth, growth, 3, pad))
        .collect();
    let transition = cbr(reg, &format!("{name}.transition"), cin + layers * growth, cout, 1, pad);
    DenseBlock { layers: convs, transition, growth }
}

fn attn(reg: &mut ParamRegistry, name: &str, c: usize) -> Attn {
    let he = Init::He { fan_in: c, gain: 1.0 };
    Attn {
        wq: reg.add(format!("{name}.wq"), vec![c, c], he, true),
        wk: reg.add(format!("{name}.wk"), vec![c, c], he, true),
        wv: reg.add(format!("{name}.wv"), vec![c, c], he, true),
        gain: reg.add(format!("{name}.gain"), vec![1], Init::Const(0.0), true),
    }
}

struct CbrCache {
    x: Tensor,
    bn: BnCache,
    y: Tensor,
}

struct DenseCache {
    layers: Vec<CbrCache>,
    transition: CbrCache,
}

struct StageCache {
    dense: DenseCache,
    attn: Option<AttentionCache>,
}

struct UpCache {
    up: CbrCache,
    dense: DenseCache,
    up_channels: usize,
}

struct NetCache {
    enc: Vec<StageCache>,
    bottleneck: StageCache,
    dec: Vec<UpCache>,
    head_in: Tensor,
    t_pad: usize,
    f_lo: usize,
    in_shape: [usize; 4],
    padded: [usize; 2],
}

/// Batch statistics observed by one batch-norm layer during a train-mode pass.
#[derive(Debug, Clone)]
pub struct BnObservation {
    pub running_mean: usize,
    pub running_var: usize,
    pub stats: BatchStats,
}

#[derive(Default)]
struct Trace {
    bn: Vec<BnObservation>,
    relu_signature: u64,
}

impl Trace {
    fn record_relu(&mut self, y: &Tensor) {
        let mut h = self.relu_signature;
        for (i, v) in y.data.iter().enumerate() {
            if *v > 0.0 {
                h = (h ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)).rotate_left(7).wrapping_add(1);
            }
        }
        self.relu_signature = h.wrapping_mul(0x0100_0000_01b3).wrapping_add(y.data.len() as u64);
    }
}

/// State saved by a forward pass for the matching backward pass.
pub struct ForwardCache<'a> {
    net: &'a PosNet,
    params: &'a ModelParams,
    mode: Mode,
    inner: Option<NetCache>,
    bn: Vec<BnObservation>,
    relu_signature: u64,
}

impl<'a> ForwardCache<'a> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch statistics for updating running averages (empty in eval mode).
    pub fn batch_stats(&self) -> &[BnObservation] {
        &self.bn
    }

    /// Fingerprint of every ReLU's active set; changes when any unit crosses its kink.
    pub fn relu_signature(&self) -> u64 {
        self.relu_signature
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.is_none()
    }

    /// Reverse pass for a raw output cotangent `[N, 2*masks, T, F]`.
    /// Returns parameter gradients and the input cotangent.
    pub fn backward(&mut self, d_out: &Tensor) -> Result<(Gradients, Tensor)> {
        if self.mode == Mode::Eval {
            return Err(Error::EvalCache);
        }
        let inner = self.inner.take().ok_or(Error::CacheConsumed)?;
        self.net.backward_inner(self.params, inner, d_out)
    }

    /// Reverse pass from per-mask bin cotangents, `[batch][mask][t * bins + f]`
    /// packed as `d/d re + i * d/d im`.
    pub fn backward_masks(&mut self, d_masks: &[Vec<Vec<Complex64>>]) -> Result<(Gradients, Tensor)> {
        let shape = self.inner.as_ref().ok_or(Error::CacheConsumed)?.in_shape;
        let (n, t, f) = (shape[0], shape[2], shape[3]);
        let m = self.net.cfg.n_output_masks;
        if d_masks.len() != n || d_masks.iter().any(|d| d.len() != m || d.iter().any(|v| v.len() != t * f)) {
            return Err(Error::ShapeMismatch("mask cotangent layout does not match the forward batch".into()));
        }
        let mut d_out = Tensor::zeros(n, 2 * m, t, f);
        for (b, per_mask) in d_masks.iter().enumerate() {
            for (k, vals) in per_mask.iter().enumerate() {
                for (i, v) in vals.iter().enumerate() {
                    let (tt, ff) = (i / f, i % f);
                    let ir = d_out.idx(b, 2 * k, tt, ff);
                    d_out.data[ir] = v.re;
                    let ii = d_out.idx(b, 2 * k + 1, tt, ff);
                    d_out.data[ii] = v.im;
                }
            }
        }
        self.backward(&d_out)
    }
}

impl PosNet {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let pad = cfg.freq_padding;
        let mut reg = ParamRegistry::default();
        let mut enc = Vec::new();
        let mut cin = cfg.input_channels();
        for l in 0..cfg.levels {
            let c = cfg.filters_per_level[l];
            let dense = dense_block(&mut reg, &format!("enc{l}.dense"), cin, c, cfg.dense_layers_per_block, pad);
            let a = cfg.attention_levels.contains(&l).then(|| attn(&mut reg, &format!("enc{l}.attn"), c));
            enc.push(Stage { dense, attn: a });
            cin = c;
        }
        let cb = *cfg.filters_per_level.last().expect("validated non-empty");
        let bottleneck = Stage {
            dense: dense_block(&mut reg, "bottleneck.dense", cb, cb, cfg.dense_layers_per_block, pad),
            attn: cfg.attention_levels.contains(&cfg.levels).then(|| attn(&mut reg, "bottleneck.attn", cb)),
        };
        let mut dec = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let c = cfg.filters_per_level[l];
            let below = if l + 1 < cfg.levels { cfg.filters_per_level[l + 1] } else { cb };
            dec.push(UpStage {
                up: cbr(&mut reg, &format!("dec{l}.up"), below, c, 3, pad),
                dense: dense_block(&mut reg, &format!("dec{l}.dense"), 2 * c, c, cfg.dense_layers_per_block, pad),
            });
        }
        let c0 = cfg.filters_per_level[0];
        let out_c = 2 * cfg.n_output_masks;
        let head = ConvSpec { cin: c0, cout: out_c, kt: 1, kf: 1, freq_padding: pad };
        let head_w = reg.add("head.w".into(), vec![out_c, c0, 1, 1], Init::He { fan_in: c0, gain: 0.01 }, true);
        let head_b = reg.add("head.b".into(), vec![out_c], Init::Const(0.0), true);
        Ok(Self {
            cfg: cfg.clone(),
            enc,
            bottleneck,
            dec,
            head,
            head_w,
            head_b,
            registry_names: reg.arrays.iter().map(|(a, _)| a.name.clone()).collect(),
            registry: std::sync::Arc::new(reg),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Deterministic initialization: He-scaled kernels, unit/zero batch norm, zero attention gain.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        self.registry.materialize(seed)
    }

    pub fn param_names(&self) -> &[String] {
        &self.registry_names
    }

    /// Time and frequency extents must be multiples of this (inputs are padded up to it).
    pub fn resolution_multiple(&self) -> usize {
        1 << self.cfg.levels
    }

    /// Future frames an output frame can depend on. Each 2x average pool
    /// merges a frame with its successor, so the worst case over all
    /// alignments is `2^levels - 1`.
    pub fn lookahead_frames(&self) -> usize {
        self.resolution_multiple() - 1
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let reg = &self.registry.arrays;
        if params.arrays.len() != reg.len()
            || params.arrays.iter().zip(reg).any(|(p, (r, _))| p.name != r.name || p.shape != r.shape)
        {
            return Err(Error::ShapeMismatch("parameters do not match the network configuration".into()));
        }
        Ok(())
    }

    /// Builds the `[N, 2 + k, T, F]` input: real part, imaginary part, then embeddings.
    pub fn input_tensor(&self, specs: &[&Spectrogram]) -> Result<Tensor> {
        let first = specs.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (t, f) = first.shape();
        if specs.iter().any(|s| s.shape() != (t, f)) {
            return Err(Error::ShapeMismatch("spectrograms in a batch must share a shape".into()));
        }
        let k = if self.cfg.positional_embeddings { self.cfg.embedding_k } else { 0 };
        let emb = if k > 0 {
            frequency_positional_embeddings(1, &EmbeddingConfig { k, bins: f })?
        } else {
            Vec::new()
        };
        let c = 2 + k;
        let mut x = Tensor::zeros(specs.len(), c, t, f);
        for (b, s) in specs.iter().enumerate() {
            for tt in 0..t {
                for ff in 0..f {
                    let v = s.at(tt, ff);
                    let i = x.idx(b, 0, tt, ff);
                    x.data[i] = v.re;
                    let i = x.idx(b, 1, tt, ff);
                    x.data[i] = v.im;
                    for j in 0..k {
                        let i = x.idx(b, 2 + j, tt, ff);
                        x.data[i] = emb[ff * k + j];
                    }
                }
            }
        }
        Ok(x)
    }

    /// Runs the network on spectrograms and splits the output into complex masks.
    pub fn forward_spectrograms<'a>(
        &'a self,
        params: &'a ModelParams,
        specs: &[&Spectrogram],
        mode: Mode,
    ) -> Result<(Vec<Vec<ComplexMask>>, ForwardCache<'a>)> {
        let x = self.input_tensor(specs)?;
        let (y, cache) = self.forward(params, &x, mode)?;
        Ok((self.output_masks(&y), cache))
    }

    pub fn output_masks(&self, y: &Tensor) -> Vec<Vec<ComplexMask>> {
        (0..y.n)
            .map(|b| {
                (0..self.cfg.n_output_masks)
                    .map(|k| ComplexMask {
                        frames: y.t,
                        bins: y.f,
                        values: y
                            .channel(b, 2 * k)
                            .iter()
                            .zip(y.channel(b, 2 * k + 1))
                            .map(|(&re, &im)| Complex64::new(re, im))
                            .collect(),
                    })
                    .collect()
            })
            .collect()
    }

    /// Raw tensor forward pass: `[N, input_channels, T, F] -> [N, 2 * masks, T, F]`.
    pub fn forward<'a>(&'a self, params: &'a ModelParams, input: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache<'a>)> {
        self.check_params(params)?;
        if input.c != self.cfg.input_channels() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, network expects {}",
                input.c,
                self.cfg.input_channels()
            )));
        }
        let p = self.resolution_multiple();
        if input.t < p {
            return Err(Error::ClipTooShort { frames: input.t, needed: p });
        }
        if input.f < 2 {
            return Err(Error::InvalidArgument("need at least two frequency bins".into()));
        }
        let tp = input.t.div_ceil(p) * p;
        let fp = input.f.div_ceil(p) * p;
        let t_pad = tp - input.t;
        let f_lo = (fp - input.f) / 2;
        let f_hi = fp - input.f - f_lo;
        let mut trace = Trace::default();
        let mut x = input.pad(t_pad, f_lo, f_hi);

        let mut enc_caches = Vec::with_capacity(self.cfg.levels);
        let mut skips = Vec::with_capacity(self.cfg.levels);
        for stage in &self.enc {
            let (y, c) = self.stage_forward(params, stage, &x, mode, &mut trace);
            skips.push(y);
            x = avgpool_forward(skips.last().expect("just pushed"));
            enc_caches.push(c);
        }
        let (mut x, bottleneck) = self.stage_forward(params, &self.bottleneck, &x, mode, &mut trace);

        let mut dec_caches: Vec<Option<UpCache>> = (0..self.cfg.levels).map(|_| None).collect();
        for l in (0..self.cfg.levels).rev() {
            let st = &self.dec[l];
            let u = upsample_forward(&x);
            let (u, up) = self.cbr_forward(params, &st.up, u, mode, &mut trace);
            let up_channels = u.c;
            let cat = Tensor::concat(&[&u, &skips[l]]);
            let (y, dense) = self.dense_forward(params, &st.dense, cat, mode, &mut trace);
            x = y;
            dec_caches[l] = Some(UpCache { up, dense, up_channels });
        }
        let out = conv_forward(&self.head, &x, params.get(self.head_w), Some(params.get(self.head_b)));
        let out = out.crop(t_pad, input.t, f_lo, input.f);
        let inner = NetCache {
            enc: enc_caches,
            bottleneck,
            dec: dec_caches.into_iter().map(|c| c.expect("every level visited")).collect(),
            head_in: x,
            t_pad,
            f_lo,
            in_shape: input.shape(),
            padded: [tp, fp],
        };
        let cache = ForwardCache {
            net: self,
            params,
            mode,
            inner: Some(inner),
            bn: trace.bn,
            relu_signature: trace.relu_signature,
        };
        Ok((out, cache))
    }

    fn cbr_forward(&self, p: &ModelParams, l: &Cbr, x: Tensor, mode: Mode, trace: &mut Trace) -> (Tensor, CbrCache) {
        let z = conv_forward(&l.conv, &x, p.get(l.w), None);
        let (mut y, bn) = match mode {
            Mode::Train => {
                let (y, bn, stats) = bn_forward_train(&z, p.get(l.gamma), p.get(l.beta));
                trace.bn.push(BnObservation { running_mean: l.rmean, running_var: l.rvar, stats });
                (y, bn)
            }
            Mode::Eval => bn_forward_eval(&z, p.get(l.gamma), p.get(l.beta), p.get(l.rmean), p.get(l.rvar)),
        };
        relu_forward(&mut y);
        trace.record_relu(&y);
        (y.clone(), CbrCache { x, bn, y })
    }

    fn cbr_backward(&self, p: &ModelParams, l: &Cbr, c: &CbrCache, dy: &Tensor, g: &mut Gradients) -> Tensor {
        let dz = relu_backward(&c.y, dy);
        let (dgamma, dbeta) = two_mut(&mut g.arrays, l.gamma, l.beta);
        let dbn = bn_backward(&c.bn, p.get(l.gamma), &dz, dgamma, dbeta);
        conv_backward(&l.conv, &c.x, p.get(l.w), &dbn, &mut g.arrays[l.w], None)
    }

    fn dense_forward(&self, p: &ModelParams, d: &DenseBlock, x: Tensor, mode: Mode, trace: &mut Trace) -> (Tensor, DenseCache) {
        let mut feats = x;
        let mut layers = Vec::with_capacity(d.layers.len());
        for l in &d.layers {
            let (o, c) = self.cbr_forward(p, l, feats.clone(), mode, trace);
            feats = Tensor::concat(&[&feats, &o]);
            layers.push(c);
        }
        let (y, transition) = self.cbr_forward(p, &d.transition, feats, mode, trace);
        (y, DenseCache { layers, transition })
    }

    fn dense_backward(&self, p: &ModelParams, d: &DenseBlock, c: &DenseCache, dy: &Tensor, g: &mut Gradients) -> Tensor {
        let mut dfeats = self.cbr_backward(p, &d.transition, &c.transition, dy, g);
        for (l, lc) in d.layers.iter().zip(&c.layers).rev() {
            let cin = dfeats.c - d.growth;
            let mut parts = dfeats.split(&[cin, d.growth]);
            let d_out = parts.pop().expect("two parts");
            let mut d_in = parts.pop().expect("two parts");
            d_in.add_assign(&self.cbr_backward(p, l, lc, &d_out, g));
            dfeats = d_in;
        }
        dfeats
    }

    fn stage_forward(&self, p: &ModelParams, s: &Stage, x: &Tensor, mode: Mode, trace: &mut Trace) -> (Tensor, StageCache) {
        let (y, dense) = self.dense_forward(p, &s.dense, x.clone(), mode, trace);
        match &s.attn {
            Some(a) => {
                let (y, ac) = attention_forward(&y, &attn_weights(p, a));
                (y, StageCache { dense, attn: Some(ac) })
            }
            None => (y, StageCache { dense, attn: None }),
        }
    }

    fn stage_backward(&self, p: &ModelParams, s: &Stage, c: &StageCache, dy: Tensor, g: &mut Gradients) -> Tensor {
        let dy = match (&s.attn, &c.attn) {
            (Some(a), Some(ac)) => {
                let w = attn_weights(p, a);
                let (mut gq, mut gk, mut gv) =
                    (vec![0.0; p.get(a.wq).len()], vec![0.0; p.get(a.wk).len()], vec![0.0; p.get(a.wv).len()]);
                let mut gg = 0.0;
                let dx = attention_backward(
                    ac,
                    &w,
                    &dy,
                    AttentionGrads { wq: &mut gq, wk: &mut gk, wv: &mut gv, gain: &mut gg },
                );
                add_into(&mut g.arrays[a.wq], &gq);
                add_into(&mut g.arrays[a.wk], &gk);
                add_into(&mut g.arrays[a.wv], &gv);
                g.arrays[a.gain][0] += gg;
                dx
            }
            _ => dy,
        };
        self.dense_backward(p, &s.dense, &c.dense, &dy, g)
    }

    fn backward_inner(&self, p: &ModelParams, c: NetCache, d_out: &Tensor) -> Result<(Gradients, Tensor)> {
        let want = [c.in_shape[0], 2 * self.cfg.n_output_masks, c.in_shape[2], c.in_shape[3]];
        if d_out.shape() != want {
            return Err(Error::ShapeMismatch(format!("output cotangent {:?}, expected {:?}", d_out.shape(), want)));
        }
        let [tp, fp] = c.padded;
        let mut g = Gradients::zeros_like(p);
        let f_hi = fp - c.in_shape[3] - c.f_lo;
        let d_head = d_out.pad(c.t_pad, c.f_lo, f_hi);
        let (dw, db) = two_mut(&mut g.arrays, self.head_w, self.head_b);
        let mut dx = conv_backward(&self.head, &c.head_in, p.get(self.head_w), &d_head, dw, Some(db));

        let mut d_skips: Vec<Option<Tensor>> = (0..self.cfg.levels).map(|_| None).collect();
        for l in 0..self.cfg.levels {
            let st = &self.dec[l];
            let uc = &c.dec[l];
            let dcat = self.dense_backward(p, &st.dense, &uc.dense, &dx, &mut g);
            let skip_c = dcat.c - uc.up_channels;
            let mut parts = dcat.split(&[uc.up_channels, skip_c]);
            d_skips[l] = parts.pop();
            let d_up = parts.pop().expect("two parts");
            let du = self.cbr_backward(p, &st.up, &uc.up, &d_up, &mut g);
            dx = upsample_backward(&du);
        }
        let mut dx = self.stage_backward(p, &self.bottleneck, &c.bottleneck, dx, &mut g);
        for l in (0..self.cfg.levels).rev() {
            let mut d = avgpool_backward(&dx);
            d.add_assign(d_skips[l].as_ref().expect("filled by decoder"));
            dx = self.stage_backward(p, &self.enc[l], &c.enc[l], d, &mut g);
        }
        debug_assert_eq!([dx.t, dx.f], [tp, fp]);
        let d_in = dx.crop(c.t_pad, c.in_shape[2], c.f_lo, c.in_shape[3]);
        Ok((g, d_in))
    }

    /// Blends observed batch statistics into the running averages.
    pub fn update_running_stats(params: &mut ModelParams, observations: &[BnObservation], momentum: f64) {
        for o in observations {
            for (r, m) in params.arrays[o.running_mean].data.iter_mut().zip(&o.stats.mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            for (r, v) in params.arrays[o.running_var].data.iter_mut().zip(&o.stats.var) {
                *r = (1.0 - momentum) * *r + momentum * v;
            }
        }
    }
}

fn attn_weights<'p>(p: &'p ModelParams, a: &Attn) -> AttentionWeights<'p> {
    AttentionWeights { wq: p.get(a.wq), wk: p.get(a.wk), wv: p.get(a.wv), gain: p.get(a.gain)[0] }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn two_mut(v: &mut [Vec<f64>], i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    assert!(i < j, "parameter ids are registered in order");
    let (lo, hi) = v.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}
