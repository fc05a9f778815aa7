//! Central finite differences against the analytic network gradients.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::posnet::{ModelParams, Mode, NetConfig, PosNet, Tensor};
use crate::rng::stream;

/// Test hook: scales the analytic gradient of one parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub param: String,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckOptions {
    pub batch: usize,
    pub frames: usize,
    pub bins: usize,
    pub step: f64,
    /// Entries probed per parameter array (all when the array is smaller).
    pub samples_per_group: usize,
    pub input_samples: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { batch: 2, frames: 8, bins: 17, step: 1e-4, samples_per_group: 8, input_samples: 64, floor: 1e-6, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Probes dropped because the perturbation flipped a ReLU.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_err <= tol && g.checked > 0)
    }

    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            let _ = writeln!(s, "{:<40} max_rel_err {:.3e}  checked {:>3}  skipped {}", g.name, g.max_rel_err, g.checked, g.skipped);
        }
        s
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Moves batch-norm, bias and attention-gain arrays away from their
/// initial constants so every path carries gradient.
pub fn randomize_for_check(params: &mut ModelParams, seed: u64) {
    let mut rng = stream(seed, "gradcheck-params");
    for a in &mut params.arrays {
        let n = &a.name;
        if n.ends_with("gamma") || n.ends_with("running_var") {
            a.data.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if n.ends_with("gain") || n.ends_with("beta") || n.ends_with("running_mean") || n == "head.b" {
            a.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        } else if n == "head.w" {
            a.data.iter_mut().for_each(|v| *v *= 100.0);
        }
    }
}

struct Probe<'a> {
    net: &'a PosNet,
    x: Tensor,
    r: Tensor,
}

impl Probe<'_> {
    fn loss(&self, params: &ModelParams, x: &Tensor) -> Result<(f64, u64)> {
        let (y, cache) = self.net.forward(params, x, Mode::Train)?;
        Ok((y.data.iter().zip(&self.r.data).map(|(a, b)| a * b).sum(), cache.relu_signature()))
    }

    /// Central difference, or `None` when every tried step changes the ReLU
    /// pattern. The step shrinks tenfold per retry, down to `h / 1000`.
    fn central(&self, base_sig: u64, mut eval: impl FnMut(f64) -> Result<(f64, u64)>, h: f64) -> Result<Option<f64>> {
        let mut h = h;
        for _ in 0..4 {
            let (lp, sp) = eval(h)?;
            let (lm, sm) = eval(-h)?;
            if sp == base_sig && sm == base_sig {
                return Ok(Some((lp - lm) / (2.0 * h)));
            }
            h /= 10.0;
        }
        Ok(None)
    }
}

/// Checks every trainable array and the input on a small random batch in
/// train mode, with the loss `sum(r * y)` for a fixed random `r`.
pub fn grad_check(cfg: &NetConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let net = PosNet::new(cfg)?;
    let mut params = net.init_params(seed);
    randomize_for_check(&mut params, seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = stream(seed, "gradcheck-data");
    let c_out = 2 * cfg.n_output_masks;
    let mut random_tensor = |c: usize| {
        let mut t = Tensor::zeros(opts.batch, c, opts.frames, opts.bins);
        t.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        t
    };
    let x = random_tensor(cfg.input_channels());
    let r = random_tensor(c_out);
    let probe = Probe { net: &net, x, r };

    let (_, mut cache) = net.forward(&params, &probe.x, Mode::Train)?;
    let base_sig = cache.relu_signature();
    let (mut grads, d_in) = cache.backward(&probe.r)?;
    drop(cache);
    if let Some(f) = &opts.fault {
        if let Some(i) = params.arrays.iter().position(|a| a.name == f.param) {
            grads.arrays[i].iter_mut().for_each(|v| *v *= f.scale);
        }
    }

    let mut pick = stream(seed, "gradcheck-pick");
    let mut groups = Vec::new();
    for i in 0..params.arrays.len() {
        if !params.arrays[i].trainable {
            continue;
        }
        let len = params.arrays[i].data.len();
        let mut g = GroupError { name: params.arrays[i].name.clone(), max_rel_err: 0.0, checked: 0, skipped: 0 };
        for j in sample(&mut pick, len, opts.samples_per_group.min(len)) {
            let orig = params.arrays[i].data[j];
            let mut p = params.clone();
            let num = probe.central(
                base_sig,
                |d| {
                    p.arrays[i].data[j] = orig + d;
                    probe.loss(&p, &probe.x)
                },
                opts.step,
            )?;
            match num {
                Some(n) => {
                    g.max_rel_err = g.max_rel_err.max(rel_err(grads.arrays[i][j], n, opts.floor));
                    g.checked += 1;
                }
                None => g.skipped += 1,
            }
        }
        groups.push(g);
    }

    let mut g = GroupError { name: "input".into(), max_rel_err: 0.0, checked: 0, skipped: 0 };
    for j in sample(&mut pick, probe.x.data.len(), opts.input_samples.min(probe.x.data.len())) {
        let mut x = probe.x.clone();
        let orig = x.data[j];
        let num = probe.central(
            base_sig,
            |d| {
                x.data[j] = orig + d;
                probe.loss(&params, &x)
            },
            opts.step,
        )?;
        match num {
            Some(n) => {
                g.max_rel_err = g.max_rel_err.max(rel_err(d_in.data[j], n, opts.floor));
                g.checked += 1;
            }
            None => g.skipped += 1,
        }
    }
    groups.push(g);
    Ok(GradCheckReport { groups })
}
