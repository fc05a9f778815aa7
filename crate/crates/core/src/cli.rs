//! Command-line surface. `run` returns the process exit code: 0 on success,
//! 1 on a runtime error, 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::datapipe::corpus::{make_corpus, make_filter_corpus, CorpusKind};
use crate::datapipe::{filter_corpus, make_dataset, Manifest, ModelEstimator, OracleEstimator, PipelineSource};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::AudioBuffer;
use crate::enhance::{enhance, IdentityMasks, MaskProvider, NetMasks, OracleMasks};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, FileScores};
use crate::posnet::checkpoint::Checkpoint;
use crate::reverb::RirLibrary;
use crate::stream::stream_signal;
use crate::trainer::{grad_check, DataSource, GradCheckOptions, PipelineData, SyntheticMixSource, Trainer};

#[derive(Debug, Parser)]
#[command(name = "poconet", version, about = "Speech enhancement by complex ratio masking")]
pub struct Cli {
    /// TOML experiment configuration (defaults when omitted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusArg {
    Conversational,
    Noise,
    /// Reverberant noisy clips with DRR/SNR ground truth for `filter`.
    Filter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Oracle,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Model,
    Identity,
    Oracle,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an image-method RIR library.
    SynthRirs {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Write a synthetic corpus with a manifest.
    MakeCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: CorpusArg,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Clip duration in seconds (conversational and noise corpora).
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
    },
    /// Synthesize augmented training datapoints from foreground/background manifests.
    MakeDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long)]
        fg: Option<PathBuf>,
        #[arg(long)]
        bg: Option<PathBuf>,
        #[arg(long)]
        rirs: Option<PathBuf>,
    },
    /// Gate a corpus on DRR then SNR and keep the accepted clips.
    Filter {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = EstimatorArg::Oracle)]
        estimator: EstimatorArg,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Train a model; synthetic mixtures unless manifests are configured.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Offline enhancement of a WAV file.
    Enhance {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Also write every other mask's output next to `output`.
        #[arg(long)]
        all_masks: bool,
    },
    /// Chunked low-latency enhancement of a WAV file.
    Stream {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        chunk_ms: Option<f64>,
        #[arg(long)]
        no_crossfade: bool,
        #[arg(long, value_enum, default_value_t = ProviderArg::Model)]
        mask_provider: ProviderArg,
        /// Clean targets for the oracle provider, in mask order.
        #[arg(long = "target")]
        targets: Vec<PathBuf>,
    },
    /// Score enhanced files against references.
    Eval {
        /// Datapoint directory from `make-dataset`; enhanced with `--ckpt`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Directory of estimates, matched by file name against `--ref-dir`.
        #[arg(long)]
        est_dir: Option<PathBuf>,
        #[arg(long)]
        ref_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn require<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    v.as_ref().ok_or_else(|| Error::Config(format!("{what} is required")))
}

fn execute(cli: Cli) -> Result<i32> {
    let cfg = load_config(&cli)?;
    let seed = cfg.seed;
    match &cli.command {
        Command::SynthRirs { out, count } => {
            let mut lc = cfg.reverb.clone();
            if let Some(c) = count {
                lc.count = *c;
            }
            let lib = RirLibrary::generate(&lc, seed)?;
            lib.save(out)?;
            println!("wrote {} RIRs to {}", lib.len(), out.display());
        }
        Command::MakeCorpus { out, kind, count, duration } => {
            let m = match kind {
                CorpusArg::Conversational => make_corpus(out, CorpusKind::Conversational, *count, *duration, seed)?,
                CorpusArg::Noise => make_corpus(out, CorpusKind::Noise, *count, *duration, seed)?,
                CorpusArg::Filter => make_filter_corpus(out, *count, seed, &cfg.filter)?.0,
            };
            println!("wrote {} clips to {}", m.len(), out.display());
        }
        Command::MakeDataset { out, count, fg, bg, rirs } => {
            let src = pipeline_source(&cfg, fg.as_ref(), bg.as_ref(), rirs.as_ref())?;
            make_dataset(&src, *count, seed, out)?;
            println!("wrote {count} datapoints to {}", out.display());
        }
        Command::Filter { manifest, out, estimator, ckpt } => {
            let m = Manifest::load(manifest)?;
            let (_, report) = match estimator {
                EstimatorArg::Oracle => filter_corpus(&m, &OracleEstimator, &OracleEstimator, &cfg.filter, out)?,
                EstimatorArg::Model => {
                    let p = NetMasks::load(require(ckpt, "--ckpt")?)?;
                    let stft = *p.stft_config();
                    let est = ModelEstimator::new(p, stft)?;
                    filter_corpus(&m, &est, &est, &cfg.filter, out)?
                }
            };
            println!("accepted {} of {} clips; report in {}", report.accepted(), report.clips.len(), out.join("report.tsv").display());
        }
        Command::Train { out, steps, resume } => {
            let mut tc = cfg.train.clone();
            if let Some(s) = steps {
                tc.total_steps = *s;
            }
            let mut tr = match resume {
                Some(p) => Trainer::from_checkpoint(Checkpoint::load(p)?, tc, cfg.loss)?,
                None => Trainer::new(&cfg.net, tc, cfg.loss)?,
            };
            let data = training_data(&cfg)?;
            let every = (tr.cfg.total_steps / 20).max(1);
            let logs = tr.run(&*data, Some(out), |l| {
                if (l.step + 1) % every == 0 {
                    println!("step {:>7}  loss {:.5}  lr {:.2e}", l.step + 1, l.loss, l.lr);
                }
            })?;
            if let Some(l) = logs.last() {
                println!("final loss {:.5} after {} steps; checkpoint {}", l.loss, tr.step, out.join("latest.pcn").display());
            }
        }
        Command::Gradcheck { tol } => {
            let tol = tol.unwrap_or(1e-4);
            let rep = grad_check(&cfg.net, seed, &GradCheckOptions::default())?;
            print!("{}", rep.to_text());
            let ok = rep.passes(tol);
            println!("max relative error {:.3e} ({})", rep.max_rel_err(), if ok { "pass" } else { "FAIL" });
            return Ok(if ok { 0 } else { 1 });
        }
        Command::Enhance { input, output, ckpt, all_masks } => {
            let x = read_wav(input)?;
            let p = NetMasks::load(ckpt)?;
            let outs = enhance(&x, &p, p.stft_config())?;
            write_wav(output, &outs[0])?;
            if *all_masks {
                for (i, o) in outs.iter().enumerate().skip(1) {
                    write_wav(output.with_extension(format!("mask{i}.wav")), o)?;
                }
            }
            println!("wrote {} ({} samples)", output.display(), outs[0].len());
        }
        Command::Stream { input, output, ckpt, chunk_ms, no_crossfade, mask_provider, targets } => {
            let x = read_wav(input)?;
            let mut sc = cfg.stream;
            sc.sample_rate = x.sample_rate;
            if let Some(ms) = chunk_ms {
                sc.chunk_size = (ms * x.sample_rate as f64 / 1000.0).round() as usize;
                sc.crossfade_len = sc.crossfade_len.min(sc.chunk_size);
            }
            if *no_crossfade {
                sc.crossfade_len = 0;
            }
            let provider: Box<dyn MaskProvider> = match mask_provider {
                ProviderArg::Model => Box::new(NetMasks::load(require(ckpt, "--ckpt")?)?),
                ProviderArg::Identity => Box::new(IdentityMasks::default()),
                ProviderArg::Oracle => {
                    if targets.is_empty() {
                        return Err(Error::Config("the oracle provider needs --target files".into()));
                    }
                    Box::new(OracleMasks::new(targets.iter().map(read_wav).collect::<Result<Vec<_>>>()?)?)
                }
            };
            let (y, st) = stream_signal(&x.samples, sc, &*provider)?;
            write_wav(output, &AudioBuffer::new(y, x.sample_rate)?)?;
            println!(
                "wrote {}; latency {} samples ({:.1} ms); real-time factor {:.3}",
                output.display(),
                st.latency_samples(),
                1000.0 * st.latency_samples() as f64 / x.sample_rate as f64,
                st.real_time_factor()
            );
        }
        Command::Eval { dataset, ckpt, est_dir, ref_dir, out } => {
            let report = match (dataset, est_dir, ref_dir) {
                (Some(d), None, None) => eval_dataset(d, &NetMasks::load(require(ckpt, "--ckpt")?)?, &cfg)?,
                (None, Some(e), Some(r)) => eval_dirs(e, r, &cfg)?,
                _ => return Err(Error::Config("eval needs either --dataset or both --est-dir and --ref-dir".into())),
            };
            let tsv = report.to_tsv();
            match out {
                Some(p) => fs::write(p, &tsv)?,
                None => print!("{tsv}"),
            }
            let a = report.si_sdr();
            println!("si_sdr {:.3} ± {:.3} dB over {} files", a.mean, a.ci95, a.n);
        }
    }
    Ok(0)
}

fn pipeline_source(cfg: &ExperimentConfig, fg: Option<&PathBuf>, bg: Option<&PathBuf>, rirs: Option<&PathBuf>) -> Result<PipelineSource> {
    let fg = fg.or(cfg.data.fg_manifest.as_ref()).ok_or_else(|| Error::Config("a foreground manifest is required".into()))?;
    let bg = bg.or(cfg.data.bg_manifest.as_ref()).ok_or_else(|| Error::Config("a background manifest is required".into()))?;
    let (inc, exc) = (&cfg.data.include_tags, &cfg.data.exclude_tags);
    let fg = Manifest::load(fg)?.filter_tags(inc, exc);
    let bg = Manifest::load(bg)?;
    let lib = match rirs.or(cfg.data.rir_dir.as_ref()) {
        Some(d) => RirLibrary::load(d)?,
        None => RirLibrary::default(),
    };
    PipelineSource::from_manifests(&fg, &bg, lib, cfg.augment.clone(), cfg.data.dereverb, cfg.data.chunk_len)
}

fn training_data(cfg: &ExperimentConfig) -> Result<Box<dyn DataSource>> {
    if cfg.data.fg_manifest.is_some() {
        let source = pipeline_source(cfg, None, None, None)?;
        Ok(Box::new(PipelineData { source, seed: cfg.seed }))
    } else {
        Ok(Box::new(SyntheticMixSource { seed: cfg.seed, len: cfg.data.chunk_len, snr_db: [0.0, 10.0] }))
    }
}

fn sorted_wavs(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    v.sort();
    Ok(v)
}

fn eval_dataset(dir: &Path, provider: &NetMasks, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let mut files = Vec::new();
    for xp in sorted_wavs(dir, ".x.wav")? {
        let name = xp.file_name().and_then(|n| n.to_str()).unwrap_or_default().trim_end_matches(".x.wav").to_string();
        let x = read_wav(&xp)?;
        let fg = read_wav(dir.join(format!("{name}.fg.wav")))?;
        let y = enhance(&x, provider, provider.stft_config())?;
        files.push(FileScores::compute(&name, &y[0], &fg, Some(&x), &cfg.stft)?);
    }
    Ok(EvalReport { files })
}

fn eval_dirs(est: &Path, reference: &Path, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let mut files = Vec::new();
    for rp in sorted_wavs(reference, ".wav")? {
        let name = rp.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let ep = est.join(&name);
        if !ep.is_file() {
            return Err(Error::InvalidArgument(format!("no estimate for {name} in {}", est.display())));
        }
        files.push(FileScores::compute(&name, &read_wav(&ep)?, &read_wav(&rp)?, None, &cfg.stft)?);
    }
    Ok(EvalReport { files })
}
