//! Speech enhancement by complex ratio masking.
//!
//! The crate is organized bottom-up:
//!
//! * [`dsp`]: STFT/ISTFT, masking, resampling, biquads, levels and WAV I/O.
//! * [`posnet`]: the causal U-Net with frequency-positional embeddings,
//!   DenseNet blocks and time-only attention, with exact reverse-mode gradients.
//! * [`lossfn`]: the speech-preserving biased spectral loss and waveform L1 loss.
//! * [`reverb`]: image-method RIRs, RT60 estimation and reverberant mixing.
//! * [`augment`]: the stochastic augmentation stack and nonstationarity scoring.
//! * [`datapipe`]: manifests, example synthesis and semi-supervised clip filtering.
//! * [`trainer`]: ADAM, the learning-rate schedule, training and gradient checks.
//! * [`stream`]: chunked low-latency inference.
//! * [`metrics`] and [`cli`]: objective metrics and the command-line surface.

pub mod augment;
pub mod cli;
pub mod config;
pub mod datapipe;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod lossfn;
pub mod metrics;
pub mod posnet;
pub mod reverb;
pub mod rng;
mod serde_f64;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
