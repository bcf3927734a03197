//! Experiment harness: synthetic source-filter instruments, note-mixture
//! generation, parameter sweeps and CSV summaries.
//!
//! Real note collections can be used through [`load_clip_dir`], which expects
//! one subdirectory of WAV note clips per instrument.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{parse, parse_pairs, SeparationConfig};
use crate::lpc::Envelope;
use crate::metrics::{evaluate_permuted_with, BssEvaluator, MetricsReport, SourceMetrics, DEFAULT_FILTER_LEN};
use crate::separation::{
    separate_blind, separate_unconstrained, separate_with_envelopes, train_envelopes,
    SeparationMode, SeparationResult,
};
use crate::spectrogram::AudioSignal;
use crate::wav::{list_wavs, read_wav, write_wav};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Synthetic instruments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExcitationKind {
    /// Impulse train at a pitch drawn from a semitone grid in `[min_f0, max_f0]`.
    Harmonic { min_f0: f64, max_f0: f64 },
    /// Gaussian noise burst.
    Percussive,
}

/// An all-pole filter driven by pulse trains or noise bursts.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstrument {
    pub name: String,
    /// Predictor coefficients, `y[n] = x[n] + Σ a_m y[n-m]`.
    pub coeffs: Vec<f64>,
    pub kind: ExcitationKind,
    pub note_secs: f64,
    /// Time constant of the exponential amplitude decay.
    pub decay_secs: f64,
}

/// Predictor coefficients of a cascade of two-pole resonators given as
/// `(centre_hz, bandwidth_hz)` pairs.
pub fn resonator_coeffs(resonances: &[(f64, f64)], sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    // A(z) as polynomial in z^-1, leading 1
    let mut poly = vec![1.0];
    for &(freq, bw) in resonances {
        let r = (-std::f64::consts::PI * bw / sr).exp();
        let theta = 2.0 * std::f64::consts::PI * freq / sr;
        let section = [1.0, -2.0 * r * theta.cos(), r * r];
        let mut next = vec![0.0; poly.len() + 2];
        for (i, p) in poly.iter().enumerate() {
            for (j, s) in section.iter().enumerate() {
                next[i + j] += p * s;
            }
        }
        poly = next;
    }
    poly[1..].iter().map(|c| -c).collect()
}

pub fn all_pole_filter(input: &[f64], coeffs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for n in 0..input.len() {
        let mut y = input[n];
        for (m, a) in coeffs.iter().enumerate() {
            if n > m {
                y += a * out[n - m - 1];
            }
        }
        out[n] = y;
    }
    out
}

impl SyntheticInstrument {
    pub fn from_resonances(
        name: impl Into<String>,
        resonances: &[(f64, f64)],
        sample_rate: u32,
        kind: ExcitationKind,
    ) -> Self {
        let (note_secs, decay_secs) = match kind {
            ExcitationKind::Harmonic { .. } => (0.6, 0.35),
            ExcitationKind::Percussive => (0.3, 0.06),
        };
        Self {
            name: name.into(),
            coeffs: resonator_coeffs(resonances, sample_rate),
            kind,
            note_secs,
            decay_secs,
        }
    }

    /// One note with unit RMS.
    pub fn render_note<R: Rng>(&self, rng: &mut R, sample_rate: u32) -> AudioSignal {
        let sr = sample_rate as f64;
        let len = (self.note_secs * sr).round().max(1.0) as usize;
        let attack = (0.005 * sr).max(1.0);
        let gain = |n: usize| {
            let t = n as f64;
            (t / attack).min(1.0) * (-t / (self.decay_secs * sr)).exp()
        };
        let excitation: Vec<f64> = match self.kind {
            ExcitationKind::Harmonic { min_f0, max_f0 } => {
                let steps = (12.0 * (max_f0 / min_f0).log2()).floor().max(0.0) as u32;
                let semitone = rng.random_range(0..=steps);
                let f0 = min_f0 * 2f64.powf(semitone as f64 / 12.0);
                let period = (sr / f0).round().max(1.0) as usize;
                let offset = rng.random_range(0..period);
                (0..len)
                    .map(|n| if (n + offset) % period == 0 { gain(n) } else { 0.0 })
                    .collect()
            }
            ExcitationKind::Percussive => (0..len)
                .map(|n| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * gain(n)
                })
                .collect(),
        };
        let mut note = all_pole_filter(&excitation, &self.coeffs);
        let rms = (note.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
        if rms > 0.0 {
            note.iter_mut().for_each(|x| *x /= rms);
        }
        AudioSignal::new(note, sample_rate).expect("finite note")
    }

    pub fn render_clips(&self, count: usize, sample_rate: u32, seed: u64) -> Vec<AudioSignal> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.render_note(&mut rng, sample_rate)).collect()
    }
}

/// Concatenation of several clips, e.g. for envelope training.
pub fn concatenate(clips: &[AudioSignal]) -> Result<AudioSignal> {
    let sample_rate = clips.first().ok_or(Error::EmptySignal)?.sample_rate();
    let mut samples = Vec::new();
    for c in clips {
        if c.sample_rate() != sample_rate {
            return Err(Error::Config("clips have different sample rates".into()));
        }
        samples.extend_from_slice(c.samples());
    }
    AudioSignal::new(samples, sample_rate)
}

// ---------------------------------------------------------------------------
// Mixtures
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainMode {
    /// Every instrument track is scaled to the same total energy.
    #[default]
    EqualEnergy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    /// Note clips per instrument.
    pub note_clips: Vec<Vec<AudioSignal>>,
    /// One clip per instrument for envelope training (informed mode only).
    pub training_clips: Vec<AudioSignal>,
    pub duration_secs: f64,
    pub notes_per_instrument: usize,
    /// Instruments flagged here reuse a single randomly chosen clip for
    /// every note, as done for unpitched percussion.
    pub repeat_single_clip: Vec<bool>,
    pub gain_mode: GainMode,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn new(note_clips: Vec<Vec<AudioSignal>>, seed: u64) -> Self {
        let n = note_clips.len();
        Self {
            note_clips,
            training_clips: Vec::new(),
            duration_secs: 10.0,
            notes_per_instrument: 10,
            repeat_single_clip: vec![false; n],
            gain_mode: GainMode::EqualEnergy,
            seed,
        }
    }

    pub fn num_instruments(&self) -> usize {
        self.note_clips.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMixture {
    pub mixture: AudioSignal,
    pub ground_truth: Vec<AudioSignal>,
}

const MIXTURE_PEAK: f64 = 0.99;

pub fn generate_mixture(spec: &MixtureSpec) -> Result<GeneratedMixture> {
    let sample_rate = spec
        .note_clips
        .iter()
        .flatten()
        .next()
        .ok_or(Error::NoClips(0))?
        .sample_rate();
    let total = (spec.duration_secs * sample_rate as f64).round() as usize;
    for (i, clips) in spec.note_clips.iter().enumerate() {
        if clips.is_empty() {
            return Err(Error::NoClips(i));
        }
        for c in clips {
            if c.len() > total {
                return Err(Error::ClipTooLong {
                    clip: c.len(),
                    mixture: total,
                });
            }
            if c.sample_rate() != sample_rate {
                return Err(Error::Config("clips have different sample rates".into()));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tracks: Vec<Vec<f64>> = Vec::with_capacity(spec.num_instruments());
    for (i, clips) in spec.note_clips.iter().enumerate() {
        let mut track = vec![0.0; total];
        let fixed = spec
            .repeat_single_clip
            .get(i)
            .copied()
            .unwrap_or(false)
            .then(|| rng.random_range(0..clips.len()));
        for _ in 0..spec.notes_per_instrument {
            let clip = &clips[fixed.unwrap_or_else(|| rng.random_range(0..clips.len()))];
            let onset = rng.random_range(0..=total - clip.len());
            for (t, s) in track[onset..].iter_mut().zip(clip.samples()) {
                *t += s;
            }
        }
        tracks.push(track);
    }

    let energies: Vec<f64> = tracks.iter().map(|t| t.iter().map(|x| x * x).sum()).collect();
    if let Some(i) = energies.iter().position(|&e| !(e > 0.0)) {
        return Err(Error::ZeroReference(i));
    }
    match spec.gain_mode {
        GainMode::EqualEnergy => {
            let target = energies.iter().sum::<f64>() / energies.len() as f64;
            for (track, e) in tracks.iter_mut().zip(&energies) {
                let g = (target / e).sqrt();
                track.iter_mut().for_each(|x| *x *= g);
            }
        }
    }
    let sum_tracks = |tracks: &[Vec<f64>]| -> Vec<f64> {
        (0..total).map(|n| tracks.iter().map(|t| t[n]).sum()).collect()
    };
    let mut mixture = sum_tracks(&tracks);
    let peak = mixture.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > MIXTURE_PEAK {
        let g = MIXTURE_PEAK / peak;
        for track in tracks.iter_mut() {
            track.iter_mut().for_each(|x| *x *= g);
        }
        mixture = sum_tracks(&tracks);
    }
    Ok(GeneratedMixture {
        mixture: AudioSignal::new(mixture, sample_rate)?,
        ground_truth: tracks
            .into_iter()
            .map(|t| AudioSignal::new(t, sample_rate))
            .collect::<Result<_>>()?,
    })
}

// ---------------------------------------------------------------------------
// Synthetic two-instrument suite
// ---------------------------------------------------------------------------

/// Settings of the built-in synthetic suite. Each mixture pairs a
/// low-resonance and a high-resonance instrument drawn at random; every
/// fourth mixture replaces the second one with a percussive instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub num_mixtures: usize,
    pub sample_rate: u32,
    pub duration_secs: f64,
    pub notes_per_instrument: usize,
    pub clips_per_instrument: usize,
    /// Maximum relative detuning of the training variation's resonances.
    pub training_detune: f64,
    pub layout: SuiteLayout,
    pub seed: u64,
}

impl Default for SyntheticSuite {
    fn default() -> Self {
        Self {
            num_mixtures: 20,
            sample_rate: 22_050,
            duration_secs: 4.0,
            notes_per_instrument: 5,
            clips_per_instrument: 6,
            training_detune: 0.03,
            layout: SuiteLayout::default(),
            seed: 0,
        }
    }
}

/// `(low_hz, high_hz, bandwidth_hz)` of the resonance bands shared by the
/// instruments of the interleaved layout.
const INTERLEAVED_BANDS: [(f64, f64, f64); 3] =
    [(250.0, 1000.0, 150.0), (1000.0, 2800.0, 300.0), (2800.0, 5000.0, 500.0)];

/// How the resonances of the two instruments in a suite mixture relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SuiteLayout {
    /// Two resonances each, one instrument entirely below 1.4 kHz and the
    /// other entirely above 2.2 kHz.
    Disjoint,
    /// Three resonances each, drawn from common bands, so the envelopes
    /// overlap in range but differ in shape.
    #[default]
    Interleaved,
}

fn jitter<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

impl SyntheticSuite {
    /// The instrument pair of mixture `index`, as (test, training) variations.
    pub fn instruments(&self, index: usize) -> [(SyntheticInstrument, SyntheticInstrument); 2] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
        let sr = self.sample_rate;
        let pitch = ExcitationKind::Harmonic {
            min_f0: 110.0,
            max_f0: 440.0,
        };
        let (low, high): (Vec<_>, Vec<_>) = match self.layout {
            SuiteLayout::Disjoint => (
                vec![
                    (jitter(&mut rng, 300.0, 600.0), 200.0),
                    (jitter(&mut rng, 900.0, 1400.0), 400.0),
                ],
                vec![
                    (jitter(&mut rng, 2200.0, 3200.0), 500.0),
                    (jitter(&mut rng, 4200.0, 6000.0), 900.0),
                ],
            ),
            SuiteLayout::Interleaved => {
                // each band is split in half and the halves are dealt to the
                // two instruments at random
                let mut a = Vec::new();
                let mut b = Vec::new();
                for &(lo, hi, bw) in &INTERLEAVED_BANDS {
                    let mid = 0.5 * (lo + hi);
                    let lower = (jitter(&mut rng, lo, mid), bw);
                    let upper = (jitter(&mut rng, mid, hi), bw);
                    if rng.random_bool(0.5) {
                        a.push(lower);
                        b.push(upper);
                    } else {
                        a.push(upper);
                        b.push(lower);
                    }
                }
                (a, b)
            }
        };
        let second_kind = if index % 4 == 3 {
            ExcitationKind::Percussive
        } else {
            pitch
        };
        let d = self.training_detune;
        let detune = |res: &[(f64, f64)], rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
            res.iter()
                .map(|&(f, b)| (f * (1.0 + rng.random_range(-d..=d)), b))
                .collect()
        };
        let low_train = detune(&low, &mut rng);
        let high_train = detune(&high, &mut rng);
        [
            (
                SyntheticInstrument::from_resonances("low", &low, sr, pitch),
                SyntheticInstrument::from_resonances("low-train", &low_train, sr, pitch),
            ),
            (
                SyntheticInstrument::from_resonances("high", &high, sr, second_kind),
                SyntheticInstrument::from_resonances("high-train", &high_train, sr, second_kind),
            ),
        ]
    }

    pub fn mixture_spec(&self, index: usize) -> MixtureSpec {
        let base = self.seed.wrapping_mul(7919).wrapping_add(index as u64 * 101);
        let pair = self.instruments(index);
        let note_clips = pair
            .iter()
            .enumerate()
            .map(|(i, (test, _))| test.render_clips(self.clips_per_instrument, self.sample_rate, base + i as u64))
            .collect();
        let training_clips = pair
            .iter()
            .enumerate()
            .map(|(i, (_, train))| {
                let clips = train.render_clips(self.clips_per_instrument, self.sample_rate, base + 50 + i as u64);
                concatenate(&clips).expect("non-empty clip list")
            })
            .collect();
        let percussive = pair
            .iter()
            .map(|(test, _)| test.kind == ExcitationKind::Percussive)
            .collect();
        MixtureSpec {
            note_clips,
            training_clips,
            duration_secs: self.duration_secs,
            notes_per_instrument: self.notes_per_instrument,
            repeat_single_clip: percussive,
            gain_mode: GainMode::EqualEnergy,
            seed: base + 7,
        }
    }

    pub fn mixture_specs(&self) -> Vec<MixtureSpec> {
        (0..self.num_mixtures).map(|i| self.mixture_spec(i)).collect()
    }

    /// Separation settings matched to the suite's sample rate.
    pub fn config(&self) -> SeparationConfig {
        SeparationConfig {
            sample_rate: self.sample_rate,
            ..SeparationConfig::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Running and scoring
// ---------------------------------------------------------------------------

/// A generated mixture with everything needed to score separations of it.
pub struct PreparedCase {
    pub generated: GeneratedMixture,
    pub training_clips: Vec<AudioSignal>,
    evaluator: BssEvaluator,
}

impl PreparedCase {
    pub fn new(spec: &MixtureSpec) -> Result<Self> {
        let generated = generate_mixture(spec)?;
        let evaluator = BssEvaluator::new(&generated.ground_truth, DEFAULT_FILTER_LEN)?;
        Ok(Self {
            generated,
            training_clips: spec.training_clips.clone(),
            evaluator,
        })
    }

    pub fn num_instruments(&self) -> usize {
        self.generated.ground_truth.len()
    }

    pub fn separate(&self, mode: SeparationMode, config: &SeparationConfig) -> Result<SeparationResult> {
        let mix = &self.generated.mixture;
        match mode {
            SeparationMode::Informed => {
                if self.training_clips.len() != self.num_instruments() {
                    return Err(Error::Config(format!(
                        "informed mode needs {} training clips, have {}",
                        self.num_instruments(),
                        self.training_clips.len()
                    )));
                }
                let envelopes: Vec<Envelope> = train_envelopes(&self.training_clips, config)?;
                separate_with_envelopes(mix, &envelopes, config)
            }
            SeparationMode::Blind => separate_blind(mix, self.num_instruments(), config),
            SeparationMode::Unconstrained => separate_unconstrained(mix, self.num_instruments(), config),
        }
    }

    pub fn score(&self, result: &SeparationResult) -> Result<MetricsReport> {
        let slices: Vec<&[f64]> = result.sources.iter().map(AudioSignal::samples).collect();
        evaluate_permuted_with(&self.evaluator, &slices)
    }

    pub fn run(&self, mode: SeparationMode, config: &SeparationConfig) -> Result<MetricsReport> {
        self.score(&self.separate(mode, config)?)
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    P,
    Bases,
    InitMode,
    AlphaSchedule,
}

impl SweepVariable {
    fn config_key(self) -> &'static str {
        match self {
            Self::P => "p",
            Self::Bases => "bases_per_instrument",
            Self::InitMode => "init_mode",
            Self::AlphaSchedule => "alpha",
        }
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(Self::P),
            "bases" | "bases_per_instrument" => Ok(Self::Bases),
            "init_mode" | "init" => Ok(Self::InitMode),
            "alpha_schedule" | "alpha" => Ok(Self::AlphaSchedule),
            other => Err(Error::Config(format!("unknown sweep variable '{other}'"))),
        }
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::P => "p",
            Self::Bases => "bases",
            Self::InitMode => "init_mode",
            Self::AlphaSchedule => "alpha_schedule",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<String>,
    pub repetitions: usize,
    pub mode: SeparationMode,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("sweep needs at least one repetition".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepRow {
    Run {
        value: String,
        mixture: usize,
        repetition: usize,
        outcome: std::result::Result<SourceMetrics, String>,
    },
    Summary {
        value: String,
        runs: usize,
        mean: SourceMetrics,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub variable: Option<SweepVariable>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn summaries(&self) -> impl Iterator<Item = (&str, usize, SourceMetrics)> {
        self.rows.iter().filter_map(|r| match r {
            SweepRow::Summary { value, runs, mean } => Some((value.as_str(), *runs, *mean)),
            _ => None,
        })
    }

    /// Columns: `kind,variable,value,mixture,repetition,runs,SDR,SIR,SAR,status`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record([
            "kind", "variable", "value", "mixture", "repetition", "runs", "SDR", "SIR", "SAR", "status",
        ])?;
        let variable = self.variable.map(|v| v.to_string()).unwrap_or_default();
        let fmt = |x: f64| format!("{x:.4}");
        for row in &self.rows {
            match row {
                SweepRow::Run {
                    value,
                    mixture,
                    repetition,
                    outcome,
                } => {
                    let (m, status) = match outcome {
                        Ok(m) => ([fmt(m.sdr), fmt(m.sir), fmt(m.sar)], "ok".to_string()),
                        Err(e) => (Default::default(), format!("error: {e}")),
                    };
                    csv.write_record([
                        "run".to_string(),
                        variable.clone(),
                        value.clone(),
                        mixture.to_string(),
                        repetition.to_string(),
                        String::new(),
                        m[0].clone(),
                        m[1].clone(),
                        m[2].clone(),
                        status,
                    ])?;
                }
                SweepRow::Summary { value, runs, mean } => {
                    csv.write_record([
                        "summary".to_string(),
                        variable.clone(),
                        value.clone(),
                        String::new(),
                        String::new(),
                        runs.to_string(),
                        fmt(mean.sdr),
                        fmt(mean.sir),
                        fmt(mean.sar),
                        "ok".to_string(),
                    ])?;
                }
            }
        }
        csv.flush()?;
        Ok(())
    }
}

/// Runs every `(value, mixture, repetition)` cell in index order. A failing
/// cell is recorded and the sweep continues. Repetition `r` uses separation
/// seed `base_config.seed + r`. When `wav_dir` is given, every separated
/// source is written there.
pub fn run_sweep(
    sweep: &SweepSpec,
    base_config: &SeparationConfig,
    mixtures: &[MixtureSpec],
    wav_dir: Option<&Path>,
) -> Result<SweepReport> {
    sweep.validate()?;
    let mut report = SweepReport {
        variable: Some(sweep.variable),
        rows: Vec::new(),
    };
    if mixtures.is_empty() {
        return Ok(report);
    }
    let cases: Vec<std::result::Result<PreparedCase, String>> = mixtures
        .iter()
        .map(|m| PreparedCase::new(m).map_err(|e| e.to_string()))
        .collect();
    if let Some(dir) = wav_dir {
        std::fs::create_dir_all(dir)?;
    }

    for (vi, value) in sweep.values.iter().enumerate() {
        let mut config = base_config.clone();
        let configured = config
            .set(sweep.variable.config_key(), value)
            .and_then(|_| config.validate());
        let mut ok = Vec::new();
        for (mi, case) in cases.iter().enumerate() {
            for rep in 0..sweep.repetitions {
                let outcome = match (&configured, case) {
                    (Err(e), _) => Err(e.to_string()),
                    (_, Err(e)) => Err(e.clone()),
                    (Ok(()), Ok(case)) => {
                        let cfg = SeparationConfig {
                            seed: config.seed.wrapping_add(rep as u64),
                            ..config.clone()
                        };
                        run_cell(case, sweep.mode, &cfg, wav_dir, (vi, mi, rep)).map_err(|e| e.to_string())
                    }
                };
                if let Ok(m) = &outcome {
                    ok.push(*m);
                }
                report.rows.push(SweepRow::Run {
                    value: value.clone(),
                    mixture: mi,
                    repetition: rep,
                    outcome,
                });
            }
        }
        if !ok.is_empty() {
            let n = ok.len() as f64;
            report.rows.push(SweepRow::Summary {
                value: value.clone(),
                runs: ok.len(),
                mean: SourceMetrics {
                    sdr: ok.iter().map(|m| m.sdr).sum::<f64>() / n,
                    sir: ok.iter().map(|m| m.sir).sum::<f64>() / n,
                    sar: ok.iter().map(|m| m.sar).sum::<f64>() / n,
                },
            });
        }
    }
    Ok(report)
}

fn run_cell(
    case: &PreparedCase,
    mode: SeparationMode,
    config: &SeparationConfig,
    wav_dir: Option<&Path>,
    (vi, mi, rep): (usize, usize, usize),
) -> Result<SourceMetrics> {
    let result = case.separate(mode, config)?;
    if let Some(dir) = wav_dir {
        for (i, source) in result.sources.iter().enumerate() {
            write_wav(dir.join(format!("v{vi}_m{mi}_r{rep}_source{i}.wav")), source)?;
        }
    }
    Ok(case.score(&result)?.mean())
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Loads `dir/<instrument>/*.wav`, instruments sorted by directory name.
pub fn load_clip_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Vec<AudioSignal>)>> {
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    subdirs
        .into_iter()
        .map(|d| {
            let name = d
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let clips = list_wavs(&d)?
                .iter()
                .map(read_wav)
                .collect::<Result<Vec<_>>>()?;
            Ok((name, clips))
        })
        .collect()
}

/// Where mixture note clips come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ClipSource {
    Synthetic,
    Directory(PathBuf),
}

/// Mixture settings read from a `key=value` file.
///
/// Keys: `source` (`synthetic` or a clip directory), `training_dir`,
/// `duration`, `notes_per_instrument`, `repeat` (comma-separated instrument
/// names or indices), `seed`, `num_mixtures`, `sample_rate` and
/// `clips_per_instrument` (synthetic source only). Remaining keys are
/// returned untouched for the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFileSpec {
    pub source: ClipSource,
    pub training_dir: Option<PathBuf>,
    pub duration_secs: f64,
    pub notes_per_instrument: usize,
    pub repeat: Vec<String>,
    pub seed: u64,
    pub num_mixtures: usize,
    pub sample_rate: u32,
    pub clips_per_instrument: usize,
    pub extra: Vec<(String, String)>,
}

impl Default for MixtureFileSpec {
    fn default() -> Self {
        let suite = SyntheticSuite::default();
        Self {
            source: ClipSource::Synthetic,
            training_dir: None,
            duration_secs: 10.0,
            notes_per_instrument: 10,
            repeat: Vec::new(),
            seed: 0,
            num_mixtures: 1,
            sample_rate: suite.sample_rate,
            clips_per_instrument: suite.clips_per_instrument,
            extra: Vec::new(),
        }
    }
}

impl MixtureFileSpec {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut spec = Self::default();
        for (key, value) in parse_pairs(text)? {
            match key.as_str() {
                "source" => {
                    spec.source = if value == "synthetic" {
                        ClipSource::Synthetic
                    } else {
                        ClipSource::Directory(base_dir.join(&value))
                    }
                }
                "training_dir" => spec.training_dir = Some(base_dir.join(&value)),
                "duration" => spec.duration_secs = parse(&key, &value)?,
                "notes_per_instrument" | "notes" => spec.notes_per_instrument = parse(&key, &value)?,
                "repeat" => {
                    spec.repeat = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "seed" => spec.seed = parse(&key, &value)?,
                "num_mixtures" => spec.num_mixtures = parse(&key, &value)?,
                "sample_rate" => spec.sample_rate = parse(&key, &value)?,
                "clips_per_instrument" => spec.clips_per_instrument = parse(&key, &value)?,
                _ => spec.extra.push((key, value)),
            }
        }
        Ok(spec)
    }

    pub fn mixture_specs(&self) -> Result<Vec<MixtureSpec>> {
        match &self.source {
            ClipSource::Synthetic => {
                let suite = SyntheticSuite {
                    num_mixtures: self.num_mixtures,
                    sample_rate: self.sample_rate,
                    duration_secs: self.duration_secs,
                    notes_per_instrument: self.notes_per_instrument,
                    clips_per_instrument: self.clips_per_instrument,
                    seed: self.seed,
                    ..SyntheticSuite::default()
                };
                Ok(suite.mixture_specs())
            }
            ClipSource::Directory(dir) => {
                let instruments = load_clip_dir(dir)?;
                let training = match &self.training_dir {
                    Some(t) => load_clip_dir(t)?
                        .into_iter()
                        .map(|(_, clips)| concatenate(&clips))
                        .collect::<Result<Vec<_>>>()?,
                    None => Vec::new(),
                };
                let repeat: Vec<bool> = instruments
                    .iter()
                    .enumerate()
                    .map(|(i, (name, _))| {
                        self.repeat.iter().any(|r| r == name || r == &i.to_string())
                    })
                    .collect();
                let note_clips: Vec<Vec<AudioSignal>> =
                    instruments.into_iter().map(|(_, clips)| clips).collect();
                Ok((0..self.num_mixtures)
                    .map(|m| MixtureSpec {
                        note_clips: note_clips.clone(),
                        training_clips: training.clone(),
                        duration_secs: self.duration_secs,
                        notes_per_instrument: self.notes_per_instrument,
                        repeat_single_clip: repeat.clone(),
                        gain_mode: GainMode::EqualEnergy,
                        seed: self.seed.wrapping_add(m as u64),
                    })
                    .collect())
            }
        }
    }
}

/// A sweep read from a `key=value` file: the mixture keys of
/// [`MixtureFileSpec`], `variable`, `values` (comma-separated), `repetitions`,
/// `mode`, and any separation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFileSpec {
    pub sweep: SweepSpec,
    pub mixtures: MixtureFileSpec,
    pub config: SeparationConfig,
}

impl SweepFileSpec {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut mixtures = MixtureFileSpec::parse(text, base_dir)?;
        let mut variable = None;
        let mut values = Vec::new();
        let mut repetitions = 1;
        let mut mode = SeparationMode::Blind;
        let mut config = SeparationConfig {
            sample_rate: mixtures.sample_rate,
            ..SeparationConfig::default()
        };
        for (key, value) in std::mem::take(&mut mixtures.extra) {
            match key.as_str() {
                "variable" => variable = Some(value.parse()?),
                "values" => {
                    values = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "repetitions" => repetitions = parse(&key, &value)?,
                "mode" => mode = value.parse()?,
                _ => config.set(&key, &value)?,
            }
        }
        let sweep = SweepSpec {
            variable: variable.ok_or_else(|| Error::Config("sweep spec needs 'variable'".into()))?,
            values,
            repetitions,
            mode,
        };
        sweep.validate()?;
        Ok(Self {
            sweep,
            mixtures,
            config,
        })
    }
}
