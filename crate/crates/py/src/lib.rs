//! Python bindings. Audio crosses the boundary as lists of floats at 16 kHz.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use poconet::dsp::{self, AudioBuffer, StftConfig, SAMPLE_RATE};
use poconet::enhance::{IdentityMasks, MaskProvider, NetMasks};
use poconet::lossfn::LossWeights;
use poconet::posnet::checkpoint::{Checkpoint, Precision};
use poconet::posnet::{EmbeddingConfig, NetConfig};
use poconet::reverb::{RoomSpec, TapInterp};
use poconet::stream::{StreamConfig, StreamState};
use poconet::trainer::{GradCheckOptions, SyntheticMixSource, TrainConfig};

fn err(e: poconet::Error) -> PyErr {
    match e {
        poconet::Error::InvalidArgument(_)
        | poconet::Error::ShapeMismatch(_)
        | poconet::Error::Config(_)
        | poconet::Error::SilentSignal
        | poconet::Error::InsufficientSamples { .. }
        | poconet::Error::ClipTooShort { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn buf(x: Vec<f64>) -> PyResult<AudioBuffer> {
    AudioBuffer::new(x, SAMPLE_RATE).map_err(err)
}

/// Real and imaginary parts, each `frames x bins`.
#[pyfunction]
fn stft(samples: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let s = dsp::stft(&buf(samples)?, &StftConfig::default()).map_err(err)?;
    let rows = |f: fn(&num_complex::Complex64) -> f64| s.data.chunks(s.bins).map(|r| r.iter().map(f).collect()).collect();
    Ok((rows(|c| c.re), rows(|c| c.im)))
}

#[pyfunction]
fn istft(re: Vec<Vec<f64>>, im: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let cfg = StftConfig::default();
    let mut s = dsp::Spectrogram::zeros(re.len(), cfg);
    if im.len() != re.len() || re.iter().chain(&im).any(|r| r.len() != s.bins) {
        return Err(PyValueError::new_err(format!("expected {} x {} real and imaginary parts", re.len(), s.bins)));
    }
    for (i, v) in s.data.iter_mut().enumerate() {
        *v = num_complex::Complex64::new(re[i / s.bins][i % s.bins], im[i / s.bins][i % s.bins]);
    }
    Ok(poconet::dsp::istft_exact(&s).map_err(err)?.samples)
}

#[pyfunction]
fn si_sdr_db(est: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    poconet::metrics::si_sdr_db(&buf(est)?, &buf(reference)?).map_err(err)
}

#[pyfunction]
fn snr_db(est: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    poconet::metrics::snr_db(&buf(est)?, &buf(reference)?).map_err(err)
}

#[pyfunction]
fn log_spectral_distance(est: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    poconet::metrics::log_spectral_distance(&buf(est)?, &buf(reference)?, &StftConfig::default()).map_err(err)
}

/// `[frames][bins][k]` cosine embeddings.
#[pyfunction]
#[pyo3(signature = (frames, bins=257, k=10))]
fn frequency_positional_embeddings(frames: usize, bins: usize, k: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let e = poconet::posnet::frequency_positional_embeddings(frames, &EmbeddingConfig { k, bins }).map_err(err)?;
    Ok(e.chunks(bins * k).map(|c| c.chunks(k).map(|r| r.to_vec()).collect()).collect())
}

/// Image-method RIR taps (unnormalized).
#[pyfunction]
#[pyo3(signature = (dimensions, source, mic, reflection, max_order=10, length_s=0.5))]
fn image_method_rir(dimensions: [f64; 3], source: [f64; 3], mic: [f64; 3], reflection: f64, max_order: usize, length_s: f64) -> PyResult<Vec<f64>> {
    let room = RoomSpec {
        dimensions_m: dimensions,
        source_pos_m: source,
        mic_pos_m: mic,
        reflection_coeff: reflection,
        max_order,
        interp: TapInterp::default(),
    };
    Ok(poconet::reverb::image_method_rir(&room, SAMPLE_RATE, length_s).map_err(err)?.taps.samples)
}

#[pyfunction]
fn estimate_rt60(taps: Vec<f64>) -> PyResult<f64> {
    poconet::reverb::estimate_rt60_samples(&taps, SAMPLE_RATE).map_err(err)
}

/// `(mixture, foreground, background)` for one synthetic desk example.
#[pyfunction]
#[pyo3(signature = (seed, index, length=16000, snr_db=(0.0, 10.0)))]
fn synthetic_mixture(seed: u64, index: u64, length: usize, snr_db: (f64, f64)) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let e = SyntheticMixSource { seed, len: length, snr_db: [snr_db.0, snr_db.1] }.example(index).map_err(err)?;
    Ok((e.x.samples, e.label_fg.samples, e.label_bg.samples))
}

/// Maximum relative error per parameter group of the desk network.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn grad_check(seed: u64) -> PyResult<BTreeMap<String, f64>> {
    let r = poconet::trainer::grad_check(&NetConfig::desk(), seed, &GradCheckOptions::default()).map_err(err)?;
    Ok(r.groups.into_iter().map(|g| (g.name, g.max_rel_err)).collect())
}

#[pyclass(name = "Model", module = "poconet", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: NetMasks,
    step: u64,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized desk network.
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn desk(seed: u64) -> PyResult<Self> {
        let cfg = NetConfig::desk();
        let net = poconet::posnet::PosNet::new(&cfg).map_err(err)?;
        let params = net.init_params(seed);
        Ok(Self { inner: NetMasks { net, params }, step: 0 })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(path).map_err(err)?;
        let step = ck.step;
        Ok(Self { inner: NetMasks::from_checkpoint(ck).map_err(err)?, step })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let ck = Checkpoint { config: self.inner.net.config().clone(), step: self.step, params: self.inner.params.clone(), optimizer: None };
        ck.save(path, Precision::F64).map_err(err)
    }

    #[getter]
    fn n_masks(&self) -> usize {
        self.inner.n_masks()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.params.arrays.iter().map(|a| a.data.len()).sum()
    }

    /// One enhanced waveform per mask, each as long as the input.
    fn enhance(&self, samples: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let out = poconet::enhance::enhance(&buf(samples)?, &self.inner, self.inner.stft_config()).map_err(err)?;
        Ok(out.into_iter().map(|b| b.samples).collect())
    }
}

#[pyclass(name = "Trainer", module = "poconet")]
struct PyTrainer {
    inner: poconet::trainer::Trainer,
    data: SyntheticMixSource,
}

#[pymethods]
impl PyTrainer {
    /// Trains the desk network on synthetic mixtures of `clip_len` samples.
    #[new]
    #[pyo3(signature = (seed=0, lr=1e-4, batch_size=4, clip_len=4352))]
    fn new(seed: u64, lr: f64, batch_size: usize, clip_len: usize) -> PyResult<Self> {
        let cfg = TrainConfig { seed, lr, batch_size, checkpoint_every: 0, ..TrainConfig::desk() };
        let inner = poconet::trainer::Trainer::new(&NetConfig::desk(), cfg, LossWeights::default()).map_err(err)?;
        Ok(Self { inner, data: SyntheticMixSource { seed, len: clip_len, snr_db: [0.0, 10.0] } })
    }

    /// Runs `n` steps and returns their losses.
    #[pyo3(signature = (n=1))]
    fn step(&mut self, n: usize) -> PyResult<Vec<f64>> {
        (0..n).map(|_| Ok(self.inner.step(&self.data).map_err(err)?.loss)).collect()
    }

    #[getter]
    fn steps_done(&self) -> u64 {
        self.inner.step
    }

    fn model(&self) -> PyModel {
        PyModel { inner: self.inner.mask_provider(), step: self.inner.step }
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.checkpoint().save(path, Precision::F64).map_err(err)
    }
}

#[pyclass(name = "Stream", module = "poconet")]
struct PyStream {
    state: StreamState,
    model: Option<PyModel>,
}

impl PyStream {
    fn with_provider<R>(&mut self, f: impl FnOnce(&mut StreamState, &dyn MaskProvider) -> R) -> R {
        match &self.model {
            Some(m) => f(&mut self.state, &m.inner),
            None => f(&mut self.state, &IdentityMasks::default()),
        }
    }
}

#[pymethods]
impl PyStream {
    /// Chunked enhancement; without a model the masks are the identity.
    #[new]
    #[pyo3(signature = (model=None, chunk_size=640, crossfade=true))]
    fn new(model: Option<PyRef<PyModel>>, chunk_size: usize, crossfade: bool) -> PyResult<Self> {
        let cfg = StreamConfig { chunk_size, crossfade_len: if crossfade { chunk_size } else { 0 }, ..StreamConfig::default() };
        Ok(Self { state: StreamState::new(cfg).map_err(err)?, model: model.map(|m| m.clone()) })
    }

    /// Pushes one chunk; returns an emitted chunk once the stream is primed.
    fn push(&mut self, chunk: Vec<f64>) -> PyResult<Option<Vec<f64>>> {
        self.with_provider(|s, p| s.push_chunk(&chunk, p)).map_err(err)
    }

    fn flush(&mut self) -> PyResult<Vec<f64>> {
        self.with_provider(|s, p| s.flush(p)).map_err(err)
    }

    #[getter]
    fn latency_samples(&self) -> usize {
        self.state.latency_samples()
    }
}

#[pymodule]
#[pyo3(name = "poconet")]
pub fn poconet_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SAMPLE_RATE", SAMPLE_RATE)?;
    m.add_function(wrap_pyfunction!(stft, m)?)?;
    m.add_function(wrap_pyfunction!(istft, m)?)?;
    m.add_function(wrap_pyfunction!(si_sdr_db, m)?)?;
    m.add_function(wrap_pyfunction!(snr_db, m)?)?;
    m.add_function(wrap_pyfunction!(log_spectral_distance, m)?)?;
    m.add_function(wrap_pyfunction!(frequency_positional_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(image_method_rir, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_rt60, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainer>()?;
    m.add_class::<PyStream>()?;
    Ok(())
}
