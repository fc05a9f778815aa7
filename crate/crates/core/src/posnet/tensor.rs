use crate::error::{Error, Result};

/// Dense `[batch, channels, time, freq]` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub f: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, t: usize, f: usize) -> Self {
        Self { n, c, t, f, data: vec![0.0; n * c * t * f] }
    }

    pub fn from_vec(n: usize, c: usize, t: usize, f: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * t * f {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape [{n}, {c}, {t}, {f}]",
                data.len()
            )));
        }
        Ok(Self { n, c, t, f, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.t, self.f]
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.t * self.f
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, t: usize, f: usize) -> usize {
        ((n * self.c + c) * self.t + t) * self.f + f
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, t: usize, f: usize) -> f64 {
        self.data[self.idx(n, c, t, f)]
    }

    /// Channel-plane slice for one batch element.
    pub fn channel(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let start = (n * self.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let s = self.c * self.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.c * self.plane();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along channels.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let (n, t, f) = (parts[0].n, parts[0].t, parts[0].f);
        let c: usize = parts.iter().map(|p| p.c).sum();
        let mut out = Vec::with_capacity(n * c * t * f);
        for b in 0..n {
            for p in parts {
                debug_assert_eq!((p.n, p.t, p.f), (n, t, f));
                out.extend_from_slice(p.sample(b));
            }
        }
        Tensor { n, c, t, f, data: out }
    }

    /// Splits along channels into pieces of the given widths.
    pub fn split(&self, widths: &[usize]) -> Vec<Tensor> {
        debug_assert_eq!(widths.iter().sum::<usize>(), self.c);
        let p = self.plane();
        let mut outs: Vec<Tensor> = widths.iter().map(|&w| Tensor::zeros(self.n, w, self.t, self.f)).collect();
        for b in 0..self.n {
            let src = self.sample(b);
            let mut off = 0;
            for (o, &w) in outs.iter_mut().zip(widths) {
                o.sample_mut(b).copy_from_slice(&src[off * p..(off + w) * p]);
                off += w;
            }
        }
        outs
    }

    /// Zero-pads time at the start and frequency on both sides.
    pub fn pad(&self, t_front: usize, f_lo: usize, f_hi: usize) -> Tensor {
        let (nt, nf) = (self.t + t_front, self.f + f_lo + f_hi);
        let mut out = Tensor::zeros(self.n, self.c, nt, nf);
        for b in 0..self.n {
            for c in 0..self.c {
                for t in 0..self.t {
                    let src = self.idx(b, c, t, 0);
                    let dst = out.idx(b, c, t + t_front, f_lo);
                    out.data[dst..dst + self.f].copy_from_slice(&self.data[src..src + self.f]);
                }
            }
        }
        out
    }

    /// Inverse of [`Tensor::pad`]: keeps `t` frames from `t_front` and `f` bins from `f_lo`.
    pub fn crop(&self, t_front: usize, t: usize, f_lo: usize, f: usize) -> Tensor {
        let mut out = Tensor::zeros(self.n, self.c, t, f);
        for b in 0..self.n {
            for c in 0..self.c {
                for tt in 0..t {
                    let src = self.idx(b, c, tt + t_front, f_lo);
                    let dst = out.idx(b, c, tt, 0);
                    out.data[dst..dst + f].copy_from_slice(&self.data[src..src + f]);
                }
            }
        }
        out
    }
}
