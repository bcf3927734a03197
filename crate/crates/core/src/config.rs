//! Separation settings and the plain-text `key=value` format used by the CLI.

use std::fmt;
use std::str::FromStr;

use crate::constraint::{AlphaSchedule, ConstraintSchedule};
use crate::nmf::InitMode;
use crate::spectrogram::ReconstructionMode;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationConfig {
    pub sample_rate: u32,
    pub frame_size: usize,
    pub hop_size: usize,
    pub iterations: usize,
    pub bases_per_instrument: usize,
    pub lpc_order: usize,
    pub init_mode: InitMode,
    pub schedule: ConstraintSchedule,
    pub reconstruction_mode: ReconstructionMode,
    pub seed: u64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100,
            frame_size: 4096,
            hop_size: 1024,
            iterations: 100,
            bases_per_instrument: 40,
            lpc_order: 4,
            init_mode: InitMode::Normal,
            schedule: ConstraintSchedule::default(),
            reconstruction_mode: ReconstructionMode::SoftMask,
            seed: 0,
        }
    }
}

pub const MAX_LPC_ORDER: usize = 32;

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive");
        }
        if !self.frame_size.is_power_of_two() || self.frame_size < 2 {
            return Err(Error::FrameSizeNotPowerOfTwo(self.frame_size));
        }
        if self.hop_size == 0 || self.hop_size > self.frame_size || !self.frame_size.is_multiple_of(self.hop_size)
        {
            return Err(Error::InvalidHop {
                hop: self.hop_size,
                frame: self.frame_size,
            });
        }
        if self.iterations == 0 {
            return fail("iterations must be positive");
        }
        if self.bases_per_instrument == 0 {
            return fail("bases_per_instrument must be positive");
        }
        if !(1..=MAX_LPC_ORDER).contains(&self.lpc_order) {
            return fail("lpc_order must be in 1..=32");
        }
        if self.lpc_order > self.frame_size / 2 {
            return Err(Error::OrderTooLarge {
                order: self.lpc_order,
                bins: self.frame_size / 2 + 1,
                needed: self.lpc_order + 1,
            });
        }
        self.schedule.validate()
    }

    /// Applies one `key=value` setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "sample_rate" => self.sample_rate = parse(key, value)?,
            "frame_size" => self.frame_size = parse(key, value)?,
            "hop_size" => self.hop_size = parse(key, value)?,
            "iterations" | "iters" => self.iterations = parse(key, value)?,
            "bases_per_instrument" | "bases" => self.bases_per_instrument = parse(key, value)?,
            "lpc_order" => self.lpc_order = parse(key, value)?,
            "init_mode" | "init" => self.init_mode = value.parse()?,
            "alpha_step" => self.schedule.alpha = AlphaSchedule::Linear { step: parse(key, value)? },
            "alpha" => self.schedule.alpha = value.parse()?,
            "beta" => self.schedule.beta = parse(key, value)?,
            "p" => self.schedule.p = parse(key, value)?,
            "reconstruction_mode" | "recon" => self.reconstruction_mode = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Settings in a stable order, suitable for `key=value` output.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("sample_rate", self.sample_rate.to_string()),
            ("frame_size", self.frame_size.to_string()),
            ("hop_size", self.hop_size.to_string()),
            ("iterations", self.iterations.to_string()),
            ("bases_per_instrument", self.bases_per_instrument.to_string()),
            ("lpc_order", self.lpc_order.to_string()),
            ("init_mode", self.init_mode.to_string()),
            ("alpha", self.schedule.alpha.to_string()),
            ("beta", self.schedule.beta.to_string()),
            ("p", self.schedule.p.to_string()),
            ("reconstruction_mode", self.reconstruction_mode.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn write_pairs<K: fmt::Display, V: fmt::Display>(pairs: impl IntoIterator<Item = (K, V)>) -> String {
    pairs
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = SeparationConfig::default();
        assert_eq!((c.sample_rate, c.frame_size, c.hop_size), (44_100, 4096, 1024));
        assert_eq!((c.iterations, c.bases_per_instrument, c.lpc_order), (100, 40, 4));
        assert_eq!(c.schedule.beta, 0.0);
        assert_eq!(c.schedule.p, 5.0);
        c.validate().unwrap();
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = SeparationConfig::default();
        let text = "# comment\nbases = 20\ninit=sparse\nalpha_step=0.02\nrecon=direct\nseed=9\n";
        for (k, v) in parse_pairs(text).unwrap() {
            c.set(&k, &v).unwrap();
        }
        assert_eq!(c.bases_per_instrument, 20);
        assert_eq!(c.init_mode, InitMode::Sparse);
        assert_eq!(c.reconstruction_mode, ReconstructionMode::Direct);
        let mut d = SeparationConfig::default();
        for (k, v) in c.to_pairs() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = SeparationConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("iterations", "x").is_err());
        assert!(parse_pairs("novalue").is_err());
        c.lpc_order = 0;
        assert!(c.validate().is_err());
    }
}
