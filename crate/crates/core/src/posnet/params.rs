use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// One named weight array. Non-trainable arrays hold batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

/// All network weights, in a fixed order derived from the network configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub arrays: Vec<ParamArray>,
}

impl ModelParams {
    #[inline]
    pub fn get(&self, id: usize) -> &[f64] {
        &self.arrays[id].data
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut ParamArray> {
        self.arrays.iter_mut().find(|a| a.name == name)
    }

    /// Number of learnable scalars.
    pub fn count(&self) -> usize {
        self.arrays.iter().filter(|a| a.trainable).map(|a| a.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.data.iter().all(|v| v.is_finite()))
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.arrays.len() == other.arrays.len()
            && self.arrays.iter().zip(&other.arrays).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

/// Cotangents for every array of a [`ModelParams`], including zeros for the
/// non-trainable ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub arrays: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self { arrays: p.arrays.iter().map(|a| vec![0.0; a.data.len()]).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.arrays.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.arrays.iter_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.arrays.iter().flatten().all(|v| *v == 0.0)
    }

    pub fn check_finite(&self, params: &ModelParams) -> Result<()> {
        for (g, p) in self.arrays.iter().zip(&params.arrays) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        Ok(())
    }
}

/// How a freshly registered array is filled.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Normal with variance `gain * 2 / fan_in`.
    He { fan_in: usize, gain: f64 },
    Const(f64),
}

/// Collects arrays while the network layout is being built.
#[derive(Debug, Default)]
pub(crate) struct ParamRegistry {
    pub arrays: Vec<(ParamArray, Init)>,
}

impl ParamRegistry {
    pub fn add(&mut self, name: String, shape: Vec<usize>, init: Init, trainable: bool) -> usize {
        let len = shape.iter().product();
        self.arrays.push((ParamArray { name, shape, data: vec![0.0; len], trainable }, init));
        self.arrays.len() - 1
    }

    pub fn materialize(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arrays = self
            .arrays
            .iter()
            .map(|(a, init)| {
                let mut a = a.clone();
                match *init {
                    Init::He { fan_in, gain } => {
                        let std = (gain * 2.0 / fan_in as f64).sqrt();
                        let dist = Normal::new(0.0, std).expect("positive std");
                        a.data.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                    }
                    Init::Const(c) => a.data.iter_mut().for_each(|v| *v = c),
                }
                a
            })
            .collect();
        ModelParams { arrays }
    }
}
