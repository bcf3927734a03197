//! Linear prediction on magnitude spectra.
//!
//! A nonnegative one-sided magnitude spectrum is squared, mirrored into a
//! Hermitian power spectrum and inverse transformed to obtain its
//! autocorrelation (Wiener–Khinchin). Levinson–Durbin turns the first `M + 1`
//! lags into all-pole coefficients whose magnitude response, normalized to
//! unit L1 norm, is the spectral envelope. Dividing a basis by its envelope
//! leaves the excitation.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::config::SeparationConfig;
use crate::spectrogram::{magnitude, stft, AudioSignal, MagnitudeSpectrogram};
use crate::{Error, Result};

/// Floor on the prediction-error power, relative to `r(0)`.
pub const PREDICTION_ERROR_FLOOR: f64 = 1e-12;
/// Floor on `|A(e^{iω})|` when evaluating the envelope.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;
/// Added to every bin, relative to the spectrum maximum, before fitting.
pub const SPECTRAL_FLOOR: f64 = 1e-12;
/// Frames whose L1 norm falls below this are ignored during training.
pub const FRAME_ENERGY_FLOOR: f64 = 1e-10;

/// Autocorrelation lags `r(0) ..= r(M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrelationVector(Vec<f64>);

impl AutocorrelationVector {
    pub fn new(lags: Vec<f64>) -> Self {
        Self(lags)
    }

    pub fn lags(&self) -> &[f64] {
        &self.0
    }

    /// Highest lag, i.e. the LPC order this vector supports.
    pub fn order(&self) -> usize {
        self.0.len().saturating_sub(1)
    }
}

/// All-pole predictor `x[n] ≈ Σ a_m x[n-m]`, i.e. `A(z) = 1 - Σ a_m z^-m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel {
    coeffs: Vec<f64>,
    prediction_error: f64,
    error_clamped: bool,
}

impl LpcModel {
    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self {
            coeffs,
            prediction_error: 1.0,
            error_clamped: false,
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// `a_1 ..= a_M`; `a_0 = 1` is implicit.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Final forward prediction-error power of the recursion.
    pub fn prediction_error(&self) -> f64 {
        self.prediction_error
    }

    /// Set when the recursion hit a (near) perfectly predictable input.
    pub fn error_clamped(&self) -> bool {
        self.error_clamped
    }
}

/// Strictly positive spectral envelope with unit L1 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    values: Vec<f64>,
    gain: f64,
    floored: bool,
}

impl Envelope {
    /// Normalizes `values` to unit L1 norm. Values must be positive and finite.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::DegenerateSpectrum);
        }
        let sum: f64 = values.iter().sum();
        let gain = 1.0 / sum;
        Ok(Self {
            values: values.into_iter().map(|v| v * gain).collect(),
            gain,
            floored: false,
        })
    }

    pub fn flat(len: usize) -> Self {
        Self {
            values: vec![1.0 / len as f64; len],
            gain: 1.0 / len as f64,
            floored: false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Normalization constant η that was applied to the raw response.
    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// True if the all-pole denominator had to be floored at some bin.
    pub fn floored(&self) -> bool {
        self.floored
    }
}

/// Basis divided by its envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation(Vec<f64>);

impl Excitation {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// LPC machinery for one spectrum size and order, with a cached inverse FFT
/// and twiddle table. Cheap to share across threads.
#[derive(Clone)]
pub struct LpcAnalyzer {
    order: usize,
    frame_size: usize,
    ifft: Arc<dyn Fft<f64>>,
    cos_table: Arc<[f64]>,
    sin_table: Arc<[f64]>,
}

impl std::fmt::Debug for LpcAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LpcAnalyzer")
            .field("order", &self.order)
            .field("frame_size", &self.frame_size)
            .finish()
    }
}

impl LpcAnalyzer {
    /// Analyzer for one-sided spectra of `num_bins` bins (`frame_size = 2 (num_bins - 1)`).
    pub fn new(num_bins: usize, order: usize) -> Result<Self> {
        if num_bins < 2 || order + 1 > num_bins {
            return Err(Error::OrderTooLarge {
                order,
                bins: num_bins,
                needed: order + 1,
            });
        }
        let frame_size = 2 * (num_bins - 1);
        let ifft = FftPlanner::<f64>::new().plan_fft_inverse(frame_size);
        let (cos_table, sin_table): (Vec<f64>, Vec<f64>) = (0..frame_size)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / frame_size as f64;
                (phase.cos(), phase.sin())
            })
            .unzip();
        Ok(Self {
            order,
            frame_size,
            ifft,
            cos_table: cos_table.into(),
            sin_table: sin_table.into(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn autocorrelation(&self, mag: &[f64]) -> Result<AutocorrelationVector> {
        let num_bins = self.num_bins();
        if mag.len() != num_bins {
            return Err(Error::EnvelopeLength {
                expected: num_bins,
                got: mag.len(),
            });
        }
        if mag.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::DegenerateSpectrum);
        }
        if mag.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateSpectrum);
        }
        let n = self.frame_size;
        let mut buffer = vec![Complex64::default(); n];
        for (f, &m) in mag.iter().enumerate() {
            buffer[f] = Complex64::new(m * m, 0.0);
        }
        for f in 1..num_bins - 1 {
            buffer[n - f] = buffer[f];
        }
        self.ifft.process(&mut buffer);
        let scale = 1.0 / n as f64;
        Ok(AutocorrelationVector(
            buffer[..=self.order].iter().map(|c| c.re * scale).collect(),
        ))
    }

    /// Evaluates the normalized all-pole magnitude response at every bin.
    pub fn envelope(&self, model: &LpcModel) -> Envelope {
        let n = self.frame_size;
        let mut floored = false;
        let mut values: Vec<f64> = (0..self.num_bins())
            .map(|f| {
                let (mut re, mut im) = (1.0, 0.0);
                for (m, &a) in model.coeffs.iter().enumerate() {
                    let idx = (f * (m + 1)) % n;
                    // exp(-iθ) = cos θ - i sin θ
                    re -= a * self.cos_table[idx];
                    im += a * self.sin_table[idx];
                }
                let mut denom = (re * re + im * im).sqrt();
                if !(denom >= DENOMINATOR_FLOOR) {
                    denom = DENOMINATOR_FLOOR;
                    floored = true;
                }
                1.0 / denom
            })
            .collect();
        let gain = 1.0 / values.iter().sum::<f64>();
        values.iter_mut().for_each(|v| *v *= gain);
        Envelope {
            values,
            gain,
            floored,
        }
    }

    /// Envelope of a magnitude spectrum, with the spectral floor applied.
    pub fn spectrum_envelope(&self, mag: &[f64]) -> Result<Envelope> {
        let peak = mag.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::DegenerateSpectrum);
        }
        let floor = SPECTRAL_FLOOR * peak;
        let floored: Vec<f64> = mag.iter().map(|v| v + floor).collect();
        let r = self.autocorrelation(&floored)?;
        let model = levinson_durbin(&r)?;
        Ok(self.envelope(&model))
    }

    /// Splits a basis column into envelope and excitation, `w = v ⊙ e`.
    pub fn split_basis(&self, w: &[f64]) -> Result<(Envelope, Excitation)> {
        let envelope = self.spectrum_envelope(w)?;
        let excitation = w
            .iter()
            .zip(&envelope.values)
            .map(|(wf, vf)| wf / vf)
            .collect();
        Ok((envelope, Excitation(excitation)))
    }

    /// `‖x_t‖₁`-weighted mean of per-frame envelopes, renormalized.
    pub fn train_from_spectrogram(&self, spec: &MagnitudeSpectrogram) -> Result<Envelope> {
        let values = spec.values();
        let mut acc = vec![0.0; self.num_bins()];
        let mut used = 0usize;
        for column in values.columns() {
            let frame: Vec<f64> = column.to_vec();
            let weight: f64 = frame.iter().sum();
            if !(weight >= FRAME_ENERGY_FLOOR) {
                continue;
            }
            let env = self.spectrum_envelope(&frame)?;
            for (a, v) in acc.iter_mut().zip(env.values()) {
                *a += weight * v;
            }
            used += 1;
        }
        if used == 0 {
            return Err(Error::SilentClip);
        }
        Envelope::from_values(acc)
    }
}

pub fn autocorr_from_magnitude(mag: &[f64], order: usize) -> Result<AutocorrelationVector> {
    LpcAnalyzer::new(mag.len(), order)?.autocorrelation(mag)
}

/// Solves the order-`M` Yule–Walker system in `O(M²)`.
pub fn levinson_durbin(r: &AutocorrelationVector) -> Result<LpcModel> {
    let lags = r.lags();
    let r0 = lags.first().copied().unwrap_or(0.0);
    if !(r0 > 0.0) {
        return Err(Error::NonPositiveEnergy(r0));
    }
    let order = r.order();
    let floor = PREDICTION_ERROR_FLOOR * r0;
    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut err = r0;
    let mut clamped = false;
    for i in 0..order {
        let acc = lags[i + 1] - (0..i).map(|j| a[j] * lags[i - j]).sum::<f64>();
        let k = acc / err;
        prev[..i].copy_from_slice(&a[..i]);
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if !(err > floor) {
            err = floor;
            clamped = true;
        }
    }
    Ok(LpcModel {
        coeffs: a,
        prediction_error: err,
        error_clamped: clamped,
    })
}

/// Normalized envelope of `model` at `num_bins` bins of a `frame_size` FFT.
pub fn envelope_from_lpc(model: &LpcModel, num_bins: usize, frame_size: usize) -> Result<Envelope> {
    if frame_size != 2 * (num_bins.max(1) - 1) {
        return Err(Error::GeometryMismatch(format!(
            "{num_bins} bins do not match frame size {frame_size}"
        )));
    }
    Ok(LpcAnalyzer::new(num_bins, model.order())?.envelope(model))
}

pub fn split_basis(w: &[f64], order: usize) -> Result<(Envelope, Excitation)> {
    LpcAnalyzer::new(w.len(), order)?.split_basis(w)
}

/// Trains an instrument envelope from a clip using the analysis settings of `config`.
pub fn train_true_envelope(clip: &AudioSignal, config: &SeparationConfig) -> Result<Envelope> {
    if clip.len() < config.frame_size {
        return Err(Error::SignalTooShort {
            len: clip.len(),
            needed: config.frame_size,
        });
    }
    let spec = magnitude(&stft(clip, config.frame_size, config.hop_size)?);
    LpcAnalyzer::new(spec.num_bins(), config.lpc_order)?.train_from_spectrogram(&spec)
}
