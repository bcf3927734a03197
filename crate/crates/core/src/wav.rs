//! WAV input and output.
//!
//! Reads 16/24/32-bit integer PCM and 32-bit float files; multi-channel input
//! is averaged to mono. Writes mono 32-bit float.

use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use log::warn;

use crate::spectrogram::AudioSignal;
use crate::{Error, Result};

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err(path))?
        }
        _ => {
            return Err(Error::Wav {
                path: path.to_path_buf(),
                source: hound::Error::Unsupported,
            })
        }
    };
    let channels = spec.channels.max(1) as usize;
    let samples = if channels == 1 {
        interleaved
    } else {
        warn!(
            "{}: downmixing {channels} channels to mono",
            path.display()
        );
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioSignal::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, signal: &AudioSignal) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in signal.samples() {
        writer.write_sample(s as f32).map_err(wav_err(path))?;
    }
    writer.finalize().map_err(wav_err(path))
}

/// `*.wav` files directly inside `dir`, sorted by file name.
pub fn list_wavs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|ext| ext.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    Ok(files)
}
