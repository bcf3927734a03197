//! Time-frequency analysis and synthesis.
//!
//! Analysis uses a periodic Hann window with `frame_size / 2` zeros padded at
//! both ends of the signal, so frame `t` is centred on sample `t * hop_size`.
//! Synthesis is a weighted overlap-add with the same window, divided sample by
//! sample by the accumulated squared window. Away from the edges that sum is
//! the constant COLA gain (1.5 for Hann at 75% overlap); at the edges the
//! per-sample division keeps the round trip exact.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Result};

/// Below this accumulated squared-window weight a synthesized sample is zero.
const WINDOW_SUM_FLOOR: f64 = 1e-10;

/// Regularizer of the soft-mask denominator.
pub const SOFT_MASK_EPSILON: f64 = 1e-12;

/// A mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSignal);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}

/// Frame layout shared by complex and magnitude spectrograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub frame_size: usize,
    pub hop_size: usize,
    pub sample_rate: u32,
    /// Length of the analysed signal; synthesis trims to it.
    pub num_samples: usize,
}

impl Geometry {
    pub fn new(
        frame_size: usize,
        hop_size: usize,
        sample_rate: u32,
        num_samples: usize,
    ) -> Result<Self> {
        validate_frame(frame_size, hop_size)?;
        if sample_rate == 0 {
            return Err(Error::InvalidSampleRate(sample_rate));
        }
        Ok(Self {
            frame_size,
            hop_size,
            sample_rate,
            num_samples,
        })
    }

    /// One-sided bin count, `frame_size / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    pub fn num_frames(&self) -> usize {
        frame_count(self.num_samples, self.hop_size)
    }
}

fn frame_count(num_samples: usize, hop_size: usize) -> usize {
    num_samples.div_ceil(hop_size) + 1
}

fn validate_frame(frame_size: usize, hop_size: usize) -> Result<()> {
    if frame_size < 2 || !frame_size.is_power_of_two() {
        return Err(Error::FrameSizeNotPowerOfTwo(frame_size));
    }
    if hop_size == 0 || hop_size > frame_size || !frame_size.is_multiple_of(hop_size) {
        return Err(Error::InvalidHop {
            hop: hop_size,
            frame: frame_size,
        });
    }
    Ok(())
}

/// One-sided complex STFT, bins × frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    bins: Array2<Complex64>,
    geometry: Geometry,
}

impl ComplexSpectrogram {
    pub fn new(bins: Array2<Complex64>, geometry: Geometry) -> Result<Self> {
        check_shape(bins.dim(), &geometry)?;
        Ok(Self { bins, geometry })
    }

    pub fn bins(&self) -> &Array2<Complex64> {
        &self.bins
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn num_bins(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.bins.ncols()
    }
}

/// Elementwise modulus of a [`ComplexSpectrogram`], or any nonnegative
/// bins × frames matrix sharing its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    values: Array2<f64>,
    geometry: Geometry,
}

impl MagnitudeSpectrogram {
    pub fn new(values: Array2<f64>, geometry: Geometry) -> Result<Self> {
        check_shape(values.dim(), &geometry)?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::GeometryMismatch(
                "magnitude spectrogram must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { values, geometry })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn num_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.ncols()
    }
}

fn check_shape((bins, frames): (usize, usize), geometry: &Geometry) -> Result<()> {
    validate_frame(geometry.frame_size, geometry.hop_size)?;
    if bins != geometry.num_bins() {
        return Err(Error::GeometryMismatch(format!(
            "{bins} bins, frame size {} needs {}",
            geometry.frame_size,
            geometry.num_bins()
        )));
    }
    if frames != geometry.num_frames() {
        return Err(Error::GeometryMismatch(format!(
            "{frames} frames, {} samples at hop {} needs {}",
            geometry.num_samples,
            geometry.hop_size,
            geometry.num_frames()
        )));
    }
    Ok(())
}

/// Periodic Hann window of length `size`.
pub fn hann_window(size: usize) -> Vec<f64> {
    (0..size)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / size as f64).cos())
        .collect()
}

pub fn stft(signal: &AudioSignal, frame_size: usize, hop_size: usize) -> Result<ComplexSpectrogram> {
    validate_frame(frame_size, hop_size)?;
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    let geometry = Geometry::new(frame_size, hop_size, signal.sample_rate(), signal.len())?;
    let window = hann_window(frame_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_size);
    let num_bins = geometry.num_bins();
    let num_frames = geometry.num_frames();
    let pad = (frame_size / 2) as isize;
    let x = signal.samples();

    let mut bins = Array2::<Complex64>::zeros((num_bins, num_frames));
    let mut buffer = vec![Complex64::default(); frame_size];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for t in 0..num_frames {
        let start = (t * hop_size) as isize - pad;
        for (j, slot) in buffer.iter_mut().enumerate() {
            let n = start + j as isize;
            let sample = if n >= 0 && (n as usize) < x.len() {
                x[n as usize]
            } else {
                0.0
            };
            *slot = Complex64::new(sample * window[j], 0.0);
        }
        fft.process_with_scratch(&mut buffer, &mut scratch);
        for (f, value) in buffer.iter().take(num_bins).enumerate() {
            bins[[f, t]] = *value;
        }
    }
    Ok(ComplexSpectrogram { bins, geometry })
}

pub fn magnitude(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        values: spec.bins.mapv(|c| c.norm()),
        geometry: spec.geometry,
    }
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioSignal> {
    let geometry = spec.geometry;
    check_shape(spec.bins.dim(), &geometry)?;
    let Geometry {
        frame_size,
        hop_size,
        sample_rate,
        num_samples,
    } = geometry;
    let window = hann_window(frame_size);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(frame_size);
    let num_bins = geometry.num_bins();
    let num_frames = spec.num_frames();
    let span = (num_frames - 1) * hop_size + frame_size;

    let mut acc = vec![0.0; span];
    let mut weight = vec![0.0; span];
    let mut buffer = vec![Complex64::default(); frame_size];
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    let scale = 1.0 / frame_size as f64;
    for t in 0..num_frames {
        for (slot, value) in buffer.iter_mut().zip(spec.bins.column(t)) {
            *slot = *value;
        }
        for f in 1..num_bins - 1 {
            buffer[frame_size - f] = spec.bins[[f, t]].conj();
        }
        ifft.process_with_scratch(&mut buffer, &mut scratch);
        let offset = t * hop_size;
        for j in 0..frame_size {
            acc[offset + j] += buffer[j].re * scale * window[j];
            weight[offset + j] += window[j] * window[j];
        }
    }

    let pad = frame_size / 2;
    let samples = (0..num_samples)
        .map(|n| {
            let w = weight[n + pad];
            if w > WINDOW_SUM_FLOOR {
                acc[n + pad] / w
            } else {
                0.0
            }
        })
        .collect();
    AudioSignal::new(samples, sample_rate)
}

/// Where each source's phase comes from when turning magnitude estimates
/// back into complex spectrograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconstructionMode {
    /// Estimated magnitude with the mixture phase.
    Direct,
    /// Mixture scaled by each estimate's share of the total estimate.
    #[default]
    SoftMask,
}

impl std::str::FromStr for ReconstructionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "soft_mask" | "soft-mask" => Ok(Self::SoftMask),
            other => Err(Error::Config(format!("unknown reconstruction mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for ReconstructionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Direct => "direct",
            Self::SoftMask => "soft_mask",
        })
    }
}

pub fn masked_reconstruct(
    estimates: &[MagnitudeSpectrogram],
    mixture: &ComplexSpectrogram,
    mode: ReconstructionMode,
) -> Result<Vec<ComplexSpectrogram>> {
    if estimates.is_empty() {
        return Err(Error::GeometryMismatch("no estimates to reconstruct".into()));
    }
    for est in estimates {
        if est.geometry != mixture.geometry || est.values.dim() != mixture.bins.dim() {
            return Err(Error::GeometryMismatch(
                "estimate geometry differs from the mixture".into(),
            ));
        }
    }

    let out = match mode {
        ReconstructionMode::Direct => estimates
            .iter()
            .map(|est| {
                let mut bins = mixture.bins.clone();
                Zip::from(&mut bins).and(&est.values).for_each(|b, &m| {
                    let norm = b.norm();
                    *b = if norm > 0.0 {
                        *b * (m / norm)
                    } else {
                        Complex64::new(m, 0.0)
                    };
                });
                bins
            })
            .collect::<Vec<_>>(),
        ReconstructionMode::SoftMask => {
            let mut total = Array2::<f64>::zeros(mixture.bins.dim());
            for est in estimates {
                total += &est.values;
            }
            estimates
                .iter()
                .map(|est| {
                    let mut bins = mixture.bins.clone();
                    Zip::from(&mut bins)
                        .and(&est.values)
                        .and(&total)
                        .for_each(|b, &m, &sum| *b *= m / (sum + SOFT_MASK_EPSILON));
                    bins
                })
                .collect()
        }
    };
    Ok(out
        .into_iter()
        .map(|bins| ComplexSpectrogram {
            bins,
            geometry: mixture.geometry,
        })
        .collect())
}
