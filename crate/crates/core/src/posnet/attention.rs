//! Self-attention along the time axis, independently for every frequency bin.
//!
//! Queries, keys and values come from 1x1 projections of the input; the
//! attended features are added back through a learnable scalar gain, which
//! starts at zero so a freshly initialized block is the identity.

use super::layers::{conv_backward, conv_forward, ConvSpec, FreqPadding};
use super::tensor::Tensor;

pub struct AttentionWeights<'a> {
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub gain: f64,
}

pub struct AttentionGrads<'a> {
    pub wq: &'a mut [f64],
    pub wk: &'a mut [f64],
    pub wv: &'a mut [f64],
    pub gain: &'a mut f64,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Softmax weights, `[n][f][t][s]`.
    weights: Vec<f64>,
    attended: Tensor,
}

impl AttentionCache {
    /// Attention row for query frame `t` at frequency `f` of batch element `n`.
    pub fn weights_row(&self, n: usize, f: usize, t: usize) -> &[f64] {
        let tl = self.x.t;
        let start = ((n * self.x.f + f) * tl + t) * tl;
        &self.weights[start..start + tl]
    }
}

fn projection(c: usize) -> ConvSpec {
    ConvSpec { cin: c, cout: c, kt: 1, kf: 1, freq_padding: FreqPadding::Zero }
}

pub fn attention_forward(x: &Tensor, w: &AttentionWeights) -> (Tensor, AttentionCache) {
    let spec = projection(x.c);
    let q = conv_forward(&spec, x, w.wq, None);
    let k = conv_forward(&spec, x, w.wk, None);
    let v = conv_forward(&spec, x, w.wv, None);
    let (tl, fl, cl) = (x.t, x.f, x.c);
    let scale = 1.0 / (cl as f64).sqrt();
    let mut weights = vec![0.0; x.n * fl * tl * tl];
    let mut attended = Tensor::zeros(x.n, cl, tl, fl);
    let mut row = vec![0.0; tl];
    for b in 0..x.n {
        for f in 0..fl {
            for t in 0..tl {
                for (s, r) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..cl {
                        acc += q.at(b, c, t, f) * k.at(b, c, s, f);
                    }
                    *r = acc * scale;
                }
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                row.iter_mut().for_each(|r| {
                    *r = (*r - m).exp();
                    z += *r;
                });
                let base = ((b * fl + f) * tl + t) * tl;
                for s in 0..tl {
                    weights[base + s] = row[s] / z;
                }
                for c in 0..cl {
                    let mut acc = 0.0;
                    for s in 0..tl {
                        acc += weights[base + s] * v.at(b, c, s, f);
                    }
                    let i = attended.idx(b, c, t, f);
                    attended.data[i] = acc;
                }
            }
        }
    }
    let mut y = x.clone();
    y.data.iter_mut().zip(&attended.data).for_each(|(o, a)| *o += w.gain * a);
    (y, AttentionCache { x: x.clone(), q, k, v, weights, attended })
}

pub fn attention_backward(cache: &AttentionCache, w: &AttentionWeights, dy: &Tensor, g: AttentionGrads) -> Tensor {
    let (tl, fl, cl) = (cache.x.t, cache.x.f, cache.x.c);
    let n = cache.x.n;
    let scale = 1.0 / (cl as f64).sqrt();
    *g.gain += dy.data.iter().zip(&cache.attended.data).map(|(a, b)| a * b).sum::<f64>();
    let mut dq = Tensor::zeros(n, cl, tl, fl);
    let mut dk = Tensor::zeros(n, cl, tl, fl);
    let mut dv = Tensor::zeros(n, cl, tl, fl);
    let mut da = vec![0.0; tl];
    for b in 0..n {
        for f in 0..fl {
            for t in 0..tl {
                let base = ((b * fl + f) * tl + t) * tl;
                let a = &cache.weights[base..base + tl];
                // dO = gain * dY at (t, f)
                for s in 0..tl {
                    let mut acc = 0.0;
                    for c in 0..cl {
                        let d_o = w.gain * dy.at(b, c, t, f);
                        acc += d_o * cache.v.at(b, c, s, f);
                        let i = dv.idx(b, c, s, f);
                        dv.data[i] += a[s] * d_o;
                    }
                    da[s] = acc;
                }
                let dot: f64 = a.iter().zip(&da).map(|(p, q)| p * q).sum();
                for s in 0..tl {
                    let ds = a[s] * (da[s] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..cl {
                        let iq = dq.idx(b, c, t, f);
                        dq.data[iq] += ds * cache.k.at(b, c, s, f);
                        let ik = dk.idx(b, c, s, f);
                        dk.data[ik] += ds * cache.q.at(b, c, t, f);
                    }
                }
            }
        }
    }
    let spec = projection(cl);
    let mut dx = dy.clone();
    dx.add_assign(&conv_backward(&spec, &cache.x, w.wq, &dq, g.wq, None));
    dx.add_assign(&conv_backward(&spec, &cache.x, w.wk, &dk, g.wk, None));
    dx.add_assign(&conv_backward(&spec, &cache.x, w.wv, &dv, g.wv, None));
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posnet::layers::tests::random_tensor;

    fn weights(c: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let r = |s| random_tensor([1, 1, c, c], s).data;
        (r(seed), r(seed + 1), r(seed + 2))
    }

    #[test]
    fn zero_gain_is_identity() {
        let x = random_tensor([2, 3, 5, 4], 1);
        let (wq, wk, wv) = weights(3, 2);
        let (y, _) = attention_forward(&x, &AttentionWeights { wq: &wq, wk: &wk, wv: &wv, gain: 0.0 });
        assert_eq!(y, x);
    }

    #[test]
    fn single_frame_attends_to_its_value() {
        let x = random_tensor([1, 3, 1, 4], 3);
        let (wq, wk, wv) = weights(3, 4);
        let (y, _) = attention_forward(&x, &AttentionWeights { wq: &wq, wk: &wk, wv: &wv, gain: 1.0 });
        let v = conv_forward(&projection(3), &x, &wv, None);
        for i in 0..x.data.len() {
            assert!((y.data[i] - x.data[i] - v.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let x = random_tensor([2, 4, 6, 3], 5);
        let (wq, wk, wv) = weights(4, 6);
        let (_, cache) = attention_forward(&x, &AttentionWeights { wq: &wq, wk: &wk, wv: &wv, gain: 0.5 });
        for b in 0..2 {
            for f in 0..3 {
                for t in 0..6 {
                    let s: f64 = cache.weights_row(b, f, t).iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn mixes_only_along_time() {
        // perturbing one frequency bin leaves every other bin's output untouched
        let x = random_tensor([1, 2, 5, 4], 7);
        let (wq, wk, wv) = weights(2, 8);
        let w = AttentionWeights { wq: &wq, wk: &wk, wv: &wv, gain: 0.7 };
        let (y, _) = attention_forward(&x, &w);
        let mut x2 = x.clone();
        let i = x2.idx(0, 1, 2, 1);
        x2.data[i] += 0.5;
        let (y2, _) = attention_forward(&x2, &w);
        for c in 0..2 {
            for t in 0..5 {
                for f in [0, 2, 3] {
                    assert_eq!(y.at(0, c, t, f), y2.at(0, c, t, f));
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = random_tensor([2, 3, 4, 2], 9);
        let (wq, wk, wv) = weights(3, 10);
        let gain = 0.8;
        let r = random_tensor([2, 3, 4, 2], 13);
        let loss = |x: &Tensor, wq: &[f64], wk: &[f64], wv: &[f64], gain: f64| {
            let (y, _) = attention_forward(x, &AttentionWeights { wq, wk, wv, gain });
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = attention_forward(&x, &AttentionWeights { wq: &wq, wk: &wk, wv: &wv, gain });
        let (mut gq, mut gk, mut gv, mut gg) = (vec![0.0; 9], vec![0.0; 9], vec![0.0; 9], 0.0);
        let dx = attention_backward(
            &cache,
            &AttentionWeights { wq: &wq, wk: &wk, wv: &wv, gain },
            &r,
            AttentionGrads { wq: &mut gq, wk: &mut gk, wv: &mut gv, gain: &mut gg },
        );
        let h = 1e-5;
        let close = |num: f64, ana: f64| (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8) < 1e-6;
        for i in 0..x.data.len() {
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let num = (loss(&p, &wq, &wk, &wv, gain) - loss(&m, &wq, &wk, &wv, gain)) / (2.0 * h);
            assert!(close(num, dx.data[i]));
        }
        for (which, grad) in [(0, &gq), (1, &gk), (2, &gv)] {
            for i in 0..9 {
                let mut ws = [wq.clone(), wk.clone(), wv.clone()];
                ws[which][i] += h;
                let lp = loss(&x, &ws[0], &ws[1], &ws[2], gain);
                ws[which][i] -= 2.0 * h;
                let lm = loss(&x, &ws[0], &ws[1], &ws[2], gain);
                assert!(close((lp - lm) / (2.0 * h), grad[i]));
            }
        }
        let num = (loss(&x, &wq, &wk, &wv, gain + h) - loss(&x, &wq, &wk, &wv, gain - h)) / (2.0 * h);
        assert!(close(num, gg));
    }
}
