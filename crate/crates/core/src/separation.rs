//! End-to-end separation pipelines: mixture audio in, one signal per
//! instrument out.

use std::fmt;
use std::str::FromStr;

use log::debug;
use ndarray::{s, Array2};

use crate::config::SeparationConfig;
use crate::constraint::{apply_blind, apply_informed};
use crate::lpc::{train_true_envelope, Envelope, LpcAnalyzer};
use crate::nmf::{self, init_activations, init_bases, kl_divergence, Partition};
use crate::spectrogram::{
    istft, magnitude, masked_reconstruct, stft, AudioSignal, MagnitudeSpectrogram,
};
use crate::{Error, Result};

/// Which constraint drives the factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparationMode {
    Informed,
    Blind,
    /// Plain KL-NMF with a contiguous partition and no envelope constraint.
    Unconstrained,
}

impl FromStr for SeparationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "informed" => Ok(Self::Informed),
            "blind" => Ok(Self::Blind),
            "unconstrained" | "plain" | "baseline" => Ok(Self::Unconstrained),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

impl fmt::Display for SeparationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Informed => "informed",
            Self::Blind => "blind",
            Self::Unconstrained => "unconstrained",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub sources: Vec<AudioSignal>,
    pub per_source_spectrograms: Vec<MagnitudeSpectrogram>,
    /// KL divergence after each iteration, constraint included.
    pub divergence_trace: Vec<f64>,
    pub config_echo: SeparationConfig,
    pub mode: SeparationMode,
    pub bases: Array2<f64>,
    pub activations: Array2<f64>,
    pub partition: Partition,
}

enum Guidance<'a> {
    None,
    Informed(&'a [Envelope]),
    Blind,
}

/// `X̂_i = Σ_{k∈Φ_i} w_k h_k` for every group.
pub fn reconstruct_sources(
    w: &Array2<f64>,
    h: &Array2<f64>,
    partition: &Partition,
) -> Result<Vec<Array2<f64>>> {
    if w.ncols() != h.nrows() || partition.num_bases() != w.ncols() {
        return Err(Error::GeometryMismatch(format!(
            "W is {:?}, H is {:?}, partition covers {} bases",
            w.dim(),
            h.dim(),
            partition.num_bases()
        )));
    }
    Ok(partition
        .groups()
        .iter()
        .map(|group| {
            let mut out = Array2::zeros((w.nrows(), h.ncols()));
            for &k in group {
                let col = w.slice(s![.., k..k + 1]);
                let row = h.slice(s![k..k + 1, ..]);
                out += &col.dot(&row);
            }
            out
        })
        .collect())
}

fn check_mixture(mixture: &AudioSignal, config: &SeparationConfig) -> Result<()> {
    config.validate()?;
    if mixture.is_empty() {
        return Err(Error::EmptySignal);
    }
    if mixture.sample_rate() != config.sample_rate {
        return Err(Error::Config(format!(
            "mixture sample rate {} differs from configured {}",
            mixture.sample_rate(),
            config.sample_rate
        )));
    }
    Ok(())
}

fn run(
    mixture: &AudioSignal,
    num_instruments: usize,
    guidance: Guidance<'_>,
    config: &SeparationConfig,
) -> Result<SeparationResult> {
    check_mixture(mixture, config)?;
    if num_instruments < 2 {
        return Err(Error::TooFewInstruments(num_instruments));
    }
    let mix_spec = stft(mixture, config.frame_size, config.hop_size)?;
    let mix_mag = magnitude(&mix_spec);
    let x = mix_mag.values();
    let num_bins = x.nrows();
    let num_bases = num_instruments * config.bases_per_instrument;
    let partition = Partition::contiguous(num_instruments, config.bases_per_instrument)?;
    let analyzer = LpcAnalyzer::new(num_bins, config.lpc_order)?;

    let mut w = init_bases(num_bins, num_bases, config.init_mode, config.seed);
    let mut h = init_activations(x, num_bases, config.seed);
    let mut trace = Vec::with_capacity(config.iterations);
    let mut resets = 0usize;
    for l in 0..config.iterations {
        let step = nmf::iterate(x, &w, &h);
        resets += step.reset_columns.len();
        h = step.h;
        w = match guidance {
            Guidance::None => step.w,
            Guidance::Informed(envelopes) => apply_informed(
                &step.w,
                envelopes,
                &partition,
                config.schedule.alpha.alpha_at(l),
                &analyzer,
            )?,
            Guidance::Blind => {
                apply_blind(
                    &step.w,
                    &h,
                    &partition,
                    config.schedule.beta(),
                    config.schedule.p,
                    &analyzer,
                )?
                .w
            }
        };
        trace.push(kl_divergence(x, &nmf::reconstruct(&w, &h)));
    }
    if resets > 0 {
        debug!("{resets} basis columns were reset during factorization");
    }

    let geometry = mix_mag.geometry();
    let per_source_spectrograms = reconstruct_sources(&w, &h, &partition)?
        .into_iter()
        .map(|values| MagnitudeSpectrogram::new(values, geometry))
        .collect::<Result<Vec<_>>>()?;
    let sources = masked_reconstruct(&per_source_spectrograms, &mix_spec, config.reconstruction_mode)?
        .iter()
        .map(istft)
        .collect::<Result<Vec<_>>>()?;
    let mode = match guidance {
        Guidance::None => SeparationMode::Unconstrained,
        Guidance::Informed(_) => SeparationMode::Informed,
        Guidance::Blind => SeparationMode::Blind,
    };
    Ok(SeparationResult {
        sources,
        per_source_spectrograms,
        divergence_trace: trace,
        config_echo: config.clone(),
        mode,
        bases: w,
        activations: h,
        partition,
    })
}

/// Trains one envelope per clip.
pub fn train_envelopes(clips: &[AudioSignal], config: &SeparationConfig) -> Result<Vec<Envelope>> {
    clips
        .iter()
        .map(|clip| {
            if clip.sample_rate() != config.sample_rate {
                return Err(Error::Config(format!(
                    "clip sample rate {} differs from configured {}",
                    clip.sample_rate(),
                    config.sample_rate
                )));
            }
            train_true_envelope(clip, config)
        })
        .collect()
}

pub fn separate_informed(
    mixture: &AudioSignal,
    instrument_clips: &[AudioSignal],
    config: &SeparationConfig,
) -> Result<SeparationResult> {
    check_mixture(mixture, config)?;
    if instrument_clips.len() < 2 {
        return Err(Error::TooFewInstruments(instrument_clips.len()));
    }
    let envelopes = train_envelopes(instrument_clips, config)?;
    separate_with_envelopes(mixture, &envelopes, config)
}

/// Informed separation with envelopes that were trained beforehand.
pub fn separate_with_envelopes(
    mixture: &AudioSignal,
    envelopes: &[Envelope],
    config: &SeparationConfig,
) -> Result<SeparationResult> {
    run(mixture, envelopes.len(), Guidance::Informed(envelopes), config)
}

pub fn separate_blind(
    mixture: &AudioSignal,
    num_instruments: usize,
    config: &SeparationConfig,
) -> Result<SeparationResult> {
    run(mixture, num_instruments, Guidance::Blind, config)
}

pub fn separate_unconstrained(
    mixture: &AudioSignal,
    num_instruments: usize,
    config: &SeparationConfig,
) -> Result<SeparationResult> {
    run(mixture, num_instruments, Guidance::None, config)
}

/// Run manifest: config echo as `key=value` lines, then the divergence
/// trace as CSV.
pub fn manifest(result: &SeparationResult) -> String {
    let mut out = format!("mode={}\n", result.mode);
    out.push_str(&format!("instruments={}\n", result.sources.len()));
    out.push_str(&crate::config::write_pairs(result.config_echo.to_pairs()));
    out.push_str("\niteration,divergence\n");
    for (l, d) in result.divergence_trace.iter().enumerate() {
        out.push_str(&format!("{l},{d:.9e}\n"));
    }
    out
}
