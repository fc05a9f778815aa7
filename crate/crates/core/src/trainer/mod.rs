//! Training: ADAM, the step-halving learning rate, data sources, the
//! training loop with checkpoints and resume, and gradient checking.

mod gradcheck;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, Fault, GradCheckOptions, GradCheckReport, GroupError};

use crate::datapipe::corpus::{background, foreground, mix_at_snr};
use crate::datapipe::{Example, PipelineSource};
use crate::dsp::{stft, AudioBuffer, Spectrogram, StftConfig};
use crate::enhance::{enhance, MaskProvider, NetMasks};
use crate::error::{Error, Result};
use crate::lossfn::{combined_loss_prepared, LossWeights, Target};
use crate::metrics::{EvalReport, FileScores};
use crate::posnet::checkpoint::{Checkpoint, Precision};
use crate::posnet::{Gradients, ModelParams, Mode, NetConfig, PosNet};
use crate::rng::indexed_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_halve_every: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub bn_momentum: f64,
    /// 0 = only at the end.
    pub checkpoint_every: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 700k steps of 112 examples.
    pub fn full() -> Self {
        Self { total_steps: 700_000, batch_size: 112, checkpoint_every: 10_000, ..Self::desk() }
    }

    pub fn desk() -> Self {
        Self {
            lr: 1e-4,
            lr_halve_every: 100_000,
            total_steps: 2000,
            batch_size: 4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            bn_momentum: 0.1,
            checkpoint_every: 500,
            precision: Precision::F64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.lr) && pos(self.adam_eps)) || self.lr_halve_every == 0 || self.batch_size == 0 {
            return Err(Error::Config("lr, adam_eps, lr_halve_every and batch_size must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2), ("bn_momentum", self.bn_momentum)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// `lr * 0.5^floor(step / lr_halve_every)`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let halvings = (step / cfg.lr_halve_every).min(1074) as i32;
    cfg.lr * 0.5f64.powi(halvings)
}

/// ADAM moments, one entry per parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.arrays.iter().map(|a| vec![0.0; a.data.len()]).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected ADAM update of every trainable array. Nothing is
/// modified when a gradient is non-finite.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut OptimizerState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    let congruent = params.arrays.len() == grads.arrays.len()
        && params.arrays.len() == state.m.len()
        && params.arrays.iter().zip(&grads.arrays).zip(&state.m).all(|((p, g), m)| p.data.len() == g.len() && m.len() == g.len());
    if !congruent {
        return Err(Error::ShapeMismatch("parameters, gradients and optimizer state differ in layout".into()));
    }
    grads.check_finite(params)?;
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    for (i, p) in params.arrays.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads.arrays[i]);
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p.data[j] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Anything that yields training batches as a pure function of the step.
pub trait DataSource {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<Example>>;
}

/// A fixed list, cycled in order.
#[derive(Debug, Clone)]
pub struct FixedSet {
    pub examples: Vec<Example>,
}

impl DataSource for FixedSet {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<Example>> {
        if self.examples.is_empty() {
            return Err(Error::InvalidArgument("empty example set".into()));
        }
        let n = self.examples.len() as u64;
        Ok((0..size as u64).map(|i| self.examples[((step * size as u64 + i) % n) as usize].clone()).collect())
    }
}

/// Synthetic foreground (speech-like or tones) plus noise at a uniform random SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMixSource {
    pub seed: u64,
    pub len: usize,
    pub snr_db: [f64; 2],
}

impl SyntheticMixSource {
    pub fn example(&self, index: u64) -> Result<Example> {
        let mut rng = indexed_stream(self.seed, "synthetic-mix", index);
        let fs = crate::dsp::SAMPLE_RATE;
        let fg = foreground(self.len, fs, &mut rng)?;
        let (bg, _) = background(self.len, fs, &mut rng)?;
        let snr = rng.random_range(self.snr_db[0]..=self.snr_db[1]);
        let (x, fg, bg) = mix_at_snr(&fg, &bg, snr)?;
        Ok(Example::new(x, fg, bg))
    }

    pub fn examples(&self, range: std::ops::Range<u64>) -> Result<Vec<Example>> {
        range.map(|i| self.example(i)).collect()
    }
}

impl DataSource for SyntheticMixSource {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<Example>> {
        (0..size as u64).map(|i| self.example(step * size as u64 + i)).collect()
    }
}

/// A [`PipelineSource`] keyed by `seed`.
pub struct PipelineData {
    pub source: PipelineSource,
    pub seed: u64,
}

impl DataSource for PipelineData {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<Example>> {
        (0..size as u64).map(|i| Ok(self.source.example(self.seed, step * size as u64 + i)?.0)).collect()
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub fg_loss: f64,
    pub bg_loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    /// Wall-clock time; left out of the log so reruns write identical files.
    #[serde(skip_serializing, default)]
    pub elapsed_s: f64,
}

/// Mean combined loss of a batch and its gradient, averaged over the batch.
pub fn batch_loss_and_grad(
    net: &PosNet,
    params: &ModelParams,
    batch: &[Example],
    weights: &LossWeights,
) -> Result<(f64, f64, f64, Gradients, Vec<crate::posnet::BnObservation>)> {
    let cfg = net.config();
    let specs: Vec<Spectrogram> = batch.iter().map(|e| stft(&e.x, &cfg.stft)).collect::<Result<_>>()?;
    let refs: Vec<&Spectrogram> = specs.iter().collect();
    let (masks, mut cache) = net.forward_spectrograms(params, &refs, Mode::Train)?;
    let n = batch.len() as f64;
    let (mut loss, mut fg, mut bg) = (0.0, 0.0, 0.0);
    let mut d_masks: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(batch.len());
    for ((e, s), m) in batch.iter().zip(&specs).zip(&masks) {
        let targets = example_targets(e, cfg)?;
        let (lb, mut g) = combined_loss_prepared(m, s, &targets, weights)?;
        loss += lb.total / n;
        fg += lb.fg() / n;
        bg += lb.bg() / n;
        g.iter_mut().flatten().for_each(|v| *v /= n);
        d_masks.push(g);
    }
    let obs = cache.batch_stats().to_vec();
    let (grads, _) = cache.backward_masks(&d_masks)?;
    Ok((loss, fg, bg, grads, obs))
}

/// Targets in mask order: foreground, background, then silence for any
/// further (reverb) mask, which an [`Example`] carries no label for.
fn example_targets(e: &Example, cfg: &NetConfig) -> Result<Vec<Target>> {
    let mut t = vec![Target::new(&e.label_fg, &cfg.stft)?, Target::new(&e.label_bg, &cfg.stft)?];
    for _ in 2..cfg.n_output_masks {
        t.push(Target::new(&AudioBuffer::zeros(e.x.len(), e.x.sample_rate), &cfg.stft)?);
    }
    Ok(t)
}

pub struct Trainer {
    pub net: PosNet,
    pub params: ModelParams,
    pub opt: OptimizerState,
    pub cfg: TrainConfig,
    pub weights: LossWeights,
    pub step: u64,
    started: Instant,
}

impl Trainer {
    pub fn new(net_cfg: &NetConfig, cfg: TrainConfig, weights: LossWeights) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        let net = PosNet::new(net_cfg)?;
        let params = net.init_params(cfg.seed);
        let opt = OptimizerState::new(&params);
        Ok(Self { net, params, opt, cfg, weights, step: 0, started: Instant::now() })
    }

    pub fn from_checkpoint(ck: Checkpoint, cfg: TrainConfig, weights: LossWeights) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        let net = PosNet::new(&ck.config)?;
        net.check_params(&ck.params)?;
        let opt = ck.optimizer.unwrap_or_else(|| OptimizerState::new(&ck.params));
        Ok(Self { net, params: ck.params, opt, cfg, weights, step: ck.step, started: Instant::now() })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { config: self.net.config().clone(), step: self.step, params: self.params.clone(), optimizer: Some(self.opt.clone()) }
    }

    /// One optimization step on the batch for the current step index.
    pub fn step(&mut self, data: &dyn DataSource) -> Result<StepLog> {
        let batch = data.batch(self.step, self.cfg.batch_size)?;
        let (loss, fg, bg, grads, obs) = batch_loss_and_grad(&self.net, &self.params, &batch, &self.weights)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(self.step));
        }
        let lr = lr_at(self.step, &self.cfg);
        adam_step(&mut self.params, &grads, &mut self.opt, lr, &self.cfg)?;
        PosNet::update_running_stats(&mut self.params, &obs, self.cfg.bn_momentum);
        let log = StepLog {
            step: self.step,
            loss,
            fg_loss: fg,
            bg_loss: bg,
            grad_norm: grads.norm(),
            lr,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        };
        self.step += 1;
        Ok(log)
    }

    /// Trains until `cfg.total_steps`. With an output directory, appends to
    /// `metrics.jsonl` and writes `ckpt_NNNNNNN.pcn` every
    /// `checkpoint_every` steps and at the end, plus `latest.pcn`. A
    /// non-finite loss aborts the run; checkpoints already written remain.
    pub fn run(&mut self, data: &dyn DataSource, out: Option<&Path>, mut on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
        let mut log_file = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(fs::OpenOptions::new().create(true).append(true).open(dir.join("metrics.jsonl"))?)
            }
            None => None,
        };
        let mut logs = Vec::new();
        while self.step < self.cfg.total_steps {
            let l = self.step(data)?;
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&l)?)?;
            }
            on_step(&l);
            logs.push(l);
            let every = self.cfg.checkpoint_every;
            let due = (every > 0 && self.step % every == 0) || self.step == self.cfg.total_steps;
            if let (Some(dir), true) = (out, due) {
                self.save_checkpoint(dir)?;
            }
        }
        Ok(logs)
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<PathBuf> {
        let ck = self.checkpoint();
        let p = dir.join(format!("ckpt_{:07}.pcn", self.step));
        ck.save(&p, self.cfg.precision)?;
        ck.save(dir.join("latest.pcn"), self.cfg.precision)?;
        Ok(p)
    }

    pub fn mask_provider(&self) -> NetMasks {
        NetMasks { net: self.net.clone(), params: self.params.clone() }
    }
}

/// Offline-enhances each example's mixture with mask 0 and scores it
/// against the foreground label.
pub fn evaluate(provider: &dyn MaskProvider, examples: &[Example], stft_cfg: &StftConfig) -> Result<EvalReport> {
    let files = examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let est = enhance(&e.x, provider, stft_cfg)?.swap_remove(0);
            FileScores::compute(&format!("example_{i:04}"), &est, &e.label_fg, Some(&e.x), stft_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { files })
}

#[cfg(test)]
mod tests;
