//! Envelope constraints applied to normalized bases after each NMF iteration.
//!
//! Every constrained basis is split into envelope and excitation; its envelope
//! is swapped for a target envelope and the recombined column is mixed with
//! the original: `w ← λ ŵ + (1 - λ) target ⊙ e`. Informed mode takes one
//! trained target per instrument and ramps λ with the iteration index; blind
//! mode uses the activation-weighted mean envelope of each group with a fixed
//! λ. Columns are not renormalized here; the next iteration does that.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::lpc::{Envelope, LpcAnalyzer};
use crate::nmf::Partition;
use crate::{Error, Result, EPSILON};

/// Mixing weight of the unconstrained basis as a function of iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule {
    /// `min(step * l, 1)` for iteration `l = 0, 1, ...`.
    Linear { step: f64 },
    Constant(f64),
}

impl AlphaSchedule {
    pub fn alpha_at(&self, iteration: usize) -> f64 {
        let a = match *self {
            Self::Linear { step } => step * iteration as f64,
            Self::Constant(a) => a,
        };
        a.clamp(0.0, 1.0)
    }
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self::Linear { step: 0.01 }
    }
}

impl fmt::Display for AlphaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { step } => write!(f, "linear:{step}"),
            Self::Constant(a) => write!(f, "constant:{a}"),
        }
    }
}

impl FromStr for AlphaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad alpha schedule '{s}'"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        match kind.trim() {
            "linear" => Ok(Self::Linear { step: value }),
            "constant" => Ok(Self::Constant(value)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSchedule {
    pub alpha: AlphaSchedule,
    /// Fixed blind-mode mixing weight.
    pub beta: f64,
    /// Exponent of the activation-mass weights in the blind group average.
    pub p: f64,
}

impl Default for ConstraintSchedule {
    fn default() -> Self {
        Self {
            alpha: AlphaSchedule::default(),
            beta: 0.0,
            p: 5.0,
        }
    }
}

impl ConstraintSchedule {
    pub fn validate(&self) -> Result<()> {
        let alpha_ok = match self.alpha {
            AlphaSchedule::Linear { step } => step.is_finite() && step >= 0.0,
            AlphaSchedule::Constant(a) => a.is_finite(),
        };
        if !alpha_ok {
            return Err(Error::Config("alpha schedule must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("beta must be in [0, 1]".into()));
        }
        if !(self.p.is_finite() && self.p >= 0.0) {
            return Err(Error::Config("p must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.beta.clamp(0.0, 1.0)
    }
}

fn check_partition(w_hat: &Array2<f64>, partition: &Partition) -> Result<()> {
    if partition.num_bases() != w_hat.ncols() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} bases, matrix has {}",
            partition.num_bases(),
            w_hat.ncols()
        )));
    }
    Ok(())
}

/// Replaces the envelope of column `k` by `target`, mixing with weight `keep`.
fn mix_column(
    out: &mut Array2<f64>,
    w_hat: &Array2<f64>,
    k: usize,
    target: &Envelope,
    keep: f64,
    analyzer: &LpcAnalyzer,
) -> Result<()> {
    let column = w_hat.column(k).to_vec();
    let (_, excitation) = analyzer.split_basis(&column)?;
    let mut dest = out.column_mut(k);
    for (f, d) in dest.iter_mut().enumerate() {
        let shaped = target.values()[f] * excitation.values()[f];
        *d = (keep * column[f] + (1.0 - keep) * shaped).max(EPSILON);
    }
    Ok(())
}

/// Pulls each group's bases toward that instrument's trained envelope.
pub fn apply_informed(
    w_hat: &Array2<f64>,
    true_envelopes: &[Envelope],
    partition: &Partition,
    alpha: f64,
    analyzer: &LpcAnalyzer,
) -> Result<Array2<f64>> {
    check_partition(w_hat, partition)?;
    if true_envelopes.len() != partition.num_groups() {
        return Err(Error::InvalidPartition(format!(
            "{} envelopes for {} groups",
            true_envelopes.len(),
            partition.num_groups()
        )));
    }
    for env in true_envelopes {
        if env.len() != w_hat.nrows() {
            return Err(Error::EnvelopeLength {
                expected: w_hat.nrows(),
                got: env.len(),
            });
        }
    }
    let alpha = alpha.clamp(0.0, 1.0);
    let mut out = w_hat.clone();
    if alpha == 1.0 {
        return Ok(out);
    }
    for (group, target) in partition.groups().iter().zip(true_envelopes) {
        for &k in group {
            mix_column(&mut out, w_hat, k, target, alpha, analyzer)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BlindOutcome {
    pub w: Array2<f64>,
    /// Weighted mean envelope of each group.
    pub group_envelopes: Vec<Envelope>,
    /// Groups whose activations were all zero and fell back to equal weights.
    pub uniform_fallback: Vec<usize>,
}

/// Weights `ν_k = ‖h_k‖₁^p` for one group, rescaled by the group maximum.
/// The rescaling cancels in the normalized mean and keeps large `p` finite.
pub fn group_weights(activation_mass: &[f64], p: f64) -> Option<Vec<f64>> {
    let max = activation_mass.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    Some(activation_mass.iter().map(|m| (m / max).powf(p)).collect())
}

/// `Σ ν_k v_k / ‖Σ ν_k v_k‖₁`.
pub fn weighted_mean_envelope(envelopes: &[&Envelope], weights: &[f64]) -> Result<Envelope> {
    let len = envelopes.first().map_or(0, |e| e.len());
    let mut acc = vec![0.0; len];
    for (env, &nu) in envelopes.iter().zip(weights) {
        for (a, v) in acc.iter_mut().zip(env.values()) {
            *a += nu * v;
        }
    }
    Envelope::from_values(acc)
}

/// Pulls each group's bases toward the group's activation-weighted mean envelope.
pub fn apply_blind(
    w_hat: &Array2<f64>,
    h: &Array2<f64>,
    partition: &Partition,
    beta: f64,
    p: f64,
    analyzer: &LpcAnalyzer,
) -> Result<BlindOutcome> {
    check_partition(w_hat, partition)?;
    if h.nrows() != w_hat.ncols() {
        return Err(Error::GeometryMismatch(format!(
            "{} activation rows for {} bases",
            h.nrows(),
            w_hat.ncols()
        )));
    }
    let beta = beta.clamp(0.0, 1.0);
    let mut out = w_hat.clone();
    let mut group_envelopes = Vec::with_capacity(partition.num_groups());
    let mut uniform_fallback = Vec::new();
    for (i, group) in partition.groups().iter().enumerate() {
        let mut envelopes = Vec::with_capacity(group.len());
        let mut excitations = Vec::with_capacity(group.len());
        for &k in group {
            let (v, e) = analyzer.split_basis(&w_hat.column(k).to_vec())?;
            envelopes.push(v);
            excitations.push(e);
        }
        let mass: Vec<f64> = group.iter().map(|&k| h.row(k).sum()).collect();
        let weights = group_weights(&mass, p).unwrap_or_else(|| {
            uniform_fallback.push(i);
            vec![1.0; group.len()]
        });
        let refs: Vec<&Envelope> = envelopes.iter().collect();
        let mean = weighted_mean_envelope(&refs, &weights)?;
        for (&k, e) in group.iter().zip(&excitations) {
            let mut dest = out.column_mut(k);
            for (f, d) in dest.iter_mut().enumerate() {
                let shaped = mean.values()[f] * e.values()[f];
                *d = (beta * w_hat[[f, k]] + (1.0 - beta) * shaped).max(EPSILON);
            }
        }
        group_envelopes.push(mean);
    }
    Ok(BlindOutcome {
        w: out,
        group_envelopes,
        uniform_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpc::{envelope_from_lpc, LpcModel};
    use crate::nmf::{init_bases, InitMode};

    const BINS: usize = 257;

    fn analyzer() -> LpcAnalyzer {
        LpcAnalyzer::new(BINS, 4).unwrap()
    }

    fn shaped_basis(coeffs: Vec<f64>, comb: usize) -> Vec<f64> {
        let env = envelope_from_lpc(&LpcModel::from_coeffs(coeffs), BINS, 2 * (BINS - 1)).unwrap();
        env.values()
            .iter()
            .enumerate()
            .map(|(f, v)| v * if f % comb == 0 { 1.0 } else { 0.05 })
            .collect()
    }

    fn matrix(columns: &[Vec<f64>]) -> Array2<f64> {
        let mut w = Array2::zeros((BINS, columns.len()));
        for (k, c) in columns.iter().enumerate() {
            let sum: f64 = c.iter().sum();
            for f in 0..BINS {
                w[[f, k]] = c[f] / sum;
            }
        }
        w
    }

    #[test]
    fn alpha_schedule_ramps_and_clips() {
        let s = AlphaSchedule::default();
        assert_eq!(s.alpha_at(0), 0.0);
        assert!((s.alpha_at(50) - 0.5).abs() < 1e-15);
        assert_eq!(s.alpha_at(100), 1.0);
        assert_eq!(s.alpha_at(250), 1.0);
        assert_eq!(AlphaSchedule::Constant(1.7).alpha_at(3), 1.0);
        assert_eq!("linear:0.02".parse::<AlphaSchedule>().unwrap(), AlphaSchedule::Linear { step: 0.02 });
        assert_eq!(s.to_string().parse::<AlphaSchedule>().unwrap(), s);
        assert!("ramp:1".parse::<AlphaSchedule>().is_err());
    }

    #[test]
    fn saturated_weights_are_identities() {
        let w = init_bases(BINS, 4, InitMode::Normal, 1);
        let h = Array2::from_elem((4, 6), 0.3);
        let p = Partition::contiguous(2, 2).unwrap();
        let env = vec![Envelope::flat(BINS), Envelope::flat(BINS)];
        assert_eq!(apply_informed(&w, &env, &p, 1.0, &analyzer()).unwrap(), w);
        assert_eq!(apply_blind(&w, &h, &p, 1.0, 5.0, &analyzer()).unwrap().w, w);
    }

    #[test]
    fn informed_with_own_envelope_recovers_basis() {
        let a = analyzer();
        let w = matrix(&[shaped_basis(vec![1.2, -0.6], 7), shaped_basis(vec![-0.5], 5)]);
        let p = Partition::new(vec![vec![0], vec![1]]).unwrap();
        let own: Vec<Envelope> = (0..2)
            .map(|k| a.split_basis(&w.column(k).to_vec()).unwrap().0)
            .collect();
        let out = apply_informed(&w, &own, &p, 0.0, &a).unwrap();
        for (x, y) in out.iter().zip(w.iter()) {
            assert!((x - y).abs() <= 1e-12 * y.max(1e-300) + 1e-18);
        }
    }

    #[test]
    fn informed_flat_target_composes_sub_operations() {
        let a = analyzer();
        let w = matrix(&[shaped_basis(vec![1.2, -0.6], 7)]);
        let p = Partition::new(vec![vec![0]]).unwrap();
        let out = apply_informed(&w, &[Envelope::flat(BINS)], &p, 0.0, &a).unwrap();
        let (_, e) = a.split_basis(&w.column(0).to_vec()).unwrap();
        for f in 0..BINS {
            let expected = (e.values()[f] / BINS as f64).max(EPSILON);
            assert!((out[[f, 0]] - expected).abs() <= 1e-14 * expected);
        }
    }

    #[test]
    fn informed_rejects_wrong_envelope_length() {
        let w = init_bases(BINS, 2, InitMode::Normal, 2);
        let p = Partition::new(vec![vec![0], vec![1]]).unwrap();
        let env = vec![Envelope::flat(BINS), Envelope::flat(BINS - 1)];
        assert!(matches!(
            apply_informed(&w, &env, &p, 0.5, &analyzer()),
            Err(Error::EnvelopeLength { .. })
        ));
    }

    #[test]
    fn blind_singleton_group_is_identity() {
        let a = analyzer();
        let w = matrix(&[shaped_basis(vec![1.2, -0.6], 7), shaped_basis(vec![-0.5], 5)]);
        let h = Array2::from_elem((2, 3), 1.0);
        let p = Partition::new(vec![vec![0], vec![1]]).unwrap();
        let out = apply_blind(&w, &h, &p, 0.0, 5.0, &a).unwrap();
        for (x, y) in out.w.iter().zip(w.iter()) {
            assert!((x - y).abs() <= 1e-12 * y.max(1e-300) + 1e-18);
        }
    }

    #[test]
    fn blind_weighting_follows_activation_mass() {
        let a = analyzer();
        let w = matrix(&[shaped_basis(vec![1.2, -0.6], 7), shaped_basis(vec![-0.5], 5)]);
        let mut h = Array2::zeros((2, 4));
        h.row_mut(0).fill(2.0);
        h.row_mut(1).fill(1.0);
        let p = Partition::new(vec![vec![0, 1]]).unwrap();
        let out = apply_blind(&w, &h, &p, 0.0, 5.0, &a).unwrap();

        let v0 = a.split_basis(&w.column(0).to_vec()).unwrap().0;
        let v1 = a.split_basis(&w.column(1).to_vec()).unwrap().0;
        let raw: Vec<f64> = (0..BINS).map(|f| 32.0 * v0.values()[f] + v1.values()[f]).collect();
        let norm: f64 = raw.iter().sum();
        for (got, want) in out.group_envelopes[0].values().iter().zip(&raw) {
            assert!((got - want / norm).abs() < 1e-12);
        }

        let eq = apply_blind(&w, &h, &p, 0.0, 0.0, &a).unwrap();
        for f in 0..BINS {
            let mean = 0.5 * (v0.values()[f] + v1.values()[f]);
            assert!((eq.group_envelopes[0].values()[f] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn blind_zero_activations_fall_back_to_uniform() {
        let w = init_bases(BINS, 4, InitMode::Normal, 3);
        let mut h = Array2::from_elem((4, 2), 1.0);
        h.row_mut(2).fill(0.0);
        h.row_mut(3).fill(0.0);
        let p = Partition::contiguous(2, 2).unwrap();
        let out = apply_blind(&w, &h, &p, 0.0, 5.0, &analyzer()).unwrap();
        assert_eq!(out.uniform_fallback, vec![1]);
        let env = &out.group_envelopes[1];
        assert!((env.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(env.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn group_weights_ratio() {
        let w = group_weights(&[2.0, 1.0], 5.0).unwrap();
        assert!((w[0] / w[1] - 32.0).abs() < 1e-12);
        assert_eq!(group_weights(&[0.0, 0.0], 5.0), None);
        assert_eq!(group_weights(&[3.0, 1.0], 0.0).unwrap(), vec![1.0, 1.0]);
    }
}
