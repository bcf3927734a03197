//! BSS-style source separation metrics.
//!
//! An estimate is decomposed by orthogonal projection: `s_target` is its
//! projection onto the span of `filter_len` delayed copies of the target
//! reference, `s_target + e_interf` the projection onto the delayed copies of
//! all references, and `e_artif` the remainder. Signals are zero-extended by
//! `filter_len - 1` samples so that every delayed copy is kept whole; the
//! three parts therefore have that extended length.

use std::io::Write;
use std::sync::Arc;

use itertools::Itertools;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::spectrogram::AudioSignal;
use crate::{Error, Result};

/// Delayed copies per reference in the projection.
pub const DEFAULT_FILTER_LEN: usize = 512;
/// Metrics are clamped to `±DB_CAP`.
pub const DB_CAP: f64 = 120.0;
const RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BssDecomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

impl BssDecomposition {
    pub fn from_parts(s_target: Vec<f64>, e_interf: Vec<f64>, e_artif: Vec<f64>) -> Result<Self> {
        if s_target.len() != e_interf.len() || s_target.len() != e_artif.len() {
            return Err(Error::GeometryMismatch("decomposition parts differ in length".into()));
        }
        Ok(Self {
            s_target,
            e_interf,
            e_artif,
        })
    }

    /// Sum of the three parts.
    pub fn estimate(&self) -> Vec<f64> {
        self.s_target
            .iter()
            .zip(&self.e_interf)
            .zip(&self.e_artif)
            .map(|((t, i), a)| t + i + a)
            .collect()
    }
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `20 log10(num / den)`, capped at `±DB_CAP`.
pub fn capped_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { DB_CAP };
    }
    if num == 0.0 {
        return -DB_CAP;
    }
    (20.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

pub fn sdr(d: &BssDecomposition) -> f64 {
    capped_db(
        norm(d.s_target.iter().copied()),
        norm(d.e_interf.iter().zip(&d.e_artif).map(|(i, a)| i + a)),
    )
}

pub fn sir(d: &BssDecomposition) -> f64 {
    capped_db(norm(d.s_target.iter().copied()), norm(d.e_interf.iter().copied()))
}

pub fn sar(d: &BssDecomposition) -> f64 {
    capped_db(
        norm(d.s_target.iter().zip(&d.e_interf).map(|(t, i)| t + i)),
        norm(d.e_artif.iter().copied()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceMetrics {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

impl SourceMetrics {
    pub fn of(d: &BssDecomposition) -> Self {
        Self {
            sdr: sdr(d),
            sir: sir(d),
            sar: sar(d),
        }
    }
}

/// Projection machinery for a fixed set of references; reuse it to score
/// several estimates against the same ground truth.
pub struct BssEvaluator {
    len: usize,
    filter_len: usize,
    fft_len: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    spectra: Vec<Vec<Complex64>>,
    target_solvers: Vec<Cholesky<f64, Dyn>>,
    full_solver: Cholesky<f64, Dyn>,
}

fn factor(mut gram: DMatrix<f64>) -> Cholesky<f64, Dyn> {
    if let Some(c) = Cholesky::new(gram.clone()) {
        return c;
    }
    let lambda = RIDGE * gram.trace().max(f64::MIN_POSITIVE);
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    Cholesky::new(gram).expect("ridge-regularized Gram matrix is positive definite")
}

impl BssEvaluator {
    pub fn new(references: &[AudioSignal], filter_len: usize) -> Result<Self> {
        let refs: Vec<&[f64]> = references.iter().map(AudioSignal::samples).collect();
        Self::from_slices(&refs, filter_len)
    }

    pub fn from_slices(references: &[&[f64]], filter_len: usize) -> Result<Self> {
        let len = references.first().map_or(0, |r| r.len());
        if references.is_empty() || len == 0 {
            return Err(Error::EmptySignal);
        }
        if filter_len == 0 {
            return Err(Error::Config("filter length must be positive".into()));
        }
        for (j, r) in references.iter().enumerate() {
            if r.len() != len {
                return Err(Error::GeometryMismatch(format!(
                    "reference {j} has {} samples, expected {len}",
                    r.len()
                )));
            }
            if r.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroReference(j));
            }
        }
        let fft_len = (len + filter_len).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(fft_len);
        let ifft = planner.plan_fft_inverse(fft_len);
        let spectra: Vec<Vec<Complex64>> = references
            .iter()
            .map(|r| {
                let mut buf = vec![Complex64::default(); fft_len];
                for (b, &x) in buf.iter_mut().zip(r.iter()) {
                    b.re = x;
                }
                fft.process(&mut buf);
                buf
            })
            .collect();

        let n = references.len();
        let l = filter_len;
        let mut gram = DMatrix::<f64>::zeros(n * l, n * l);
        let scale = 1.0 / fft_len as f64;
        for a in 0..n {
            for b in a..n {
                // c[τ] = Σ_m s_a[m] s_b[m + τ]
                let mut buf: Vec<Complex64> = spectra[a]
                    .iter()
                    .zip(&spectra[b])
                    .map(|(x, y)| x.conj() * y)
                    .collect();
                ifft.process(&mut buf);
                let corr = |tau: isize| buf[tau.rem_euclid(fft_len as isize) as usize].re * scale;
                for d in 0..l {
                    for e in 0..l {
                        // <s_a shifted by d, s_b shifted by e> = c[d - e]
                        let v = corr(d as isize - e as isize);
                        gram[(a * l + d, b * l + e)] = v;
                        gram[(b * l + e, a * l + d)] = v;
                    }
                }
            }
        }
        let target_solvers = (0..n)
            .map(|j| factor(gram.view((j * l, j * l), (l, l)).into_owned()))
            .collect();
        let full_solver = factor(gram);
        Ok(Self {
            len,
            filter_len,
            fft_len,
            fft,
            ifft,
            spectra,
            target_solvers,
            full_solver,
        })
    }

    pub fn num_references(&self) -> usize {
        self.spectra.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); self.fft_len];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.fft.process(&mut buf);
        buf
    }

    /// Filters the references selected by `refs` with `coeffs` and sums them.
    fn synthesize(&self, refs: &[usize], coeffs: &DVector<f64>) -> Vec<f64> {
        let l = self.filter_len;
        let mut acc = vec![Complex64::default(); self.fft_len];
        for (slot, &j) in refs.iter().enumerate() {
            let taps: Vec<f64> = (0..l).map(|d| coeffs[slot * l + d]).collect();
            let spectrum = self.forward(&taps);
            for ((a, s), c) in acc.iter_mut().zip(&self.spectra[j]).zip(&spectrum) {
                *a += s * c;
            }
        }
        self.ifft.process(&mut acc);
        let scale = 1.0 / self.fft_len as f64;
        acc[..self.len + l - 1].iter().map(|c| c.re * scale).collect()
    }

    pub fn decompose(&self, estimate: &[f64], target: usize) -> Result<BssDecomposition> {
        if estimate.len() != self.len {
            return Err(Error::GeometryMismatch(format!(
                "estimate has {} samples, references {}",
                estimate.len(),
                self.len
            )));
        }
        let n = self.num_references();
        if target >= n {
            return Err(Error::CountMismatch {
                estimates: target + 1,
                references: n,
            });
        }
        let l = self.filter_len;
        let est_spec = self.forward(estimate);
        let scale = 1.0 / self.fft_len as f64;
        let mut rhs = DVector::<f64>::zeros(n * l);
        for j in 0..n {
            let mut buf: Vec<Complex64> = self.spectra[j]
                .iter()
                .zip(&est_spec)
                .map(|(s, e)| s.conj() * e)
                .collect();
            self.ifft.process(&mut buf);
            for d in 0..l {
                rhs[j * l + d] = buf[d].re * scale;
            }
        }
        let target_rhs = rhs.rows(target * l, l).into_owned();
        let target_coeffs = self.target_solvers[target].solve(&target_rhs);
        let all_coeffs = self.full_solver.solve(&rhs);

        let s_target = self.synthesize(&[target], &target_coeffs);
        let all: Vec<usize> = (0..n).collect();
        let projected = self.synthesize(&all, &all_coeffs);
        let mut padded = estimate.to_vec();
        padded.resize(self.len + l - 1, 0.0);
        let e_interf: Vec<f64> = projected.iter().zip(&s_target).map(|(p, t)| p - t).collect();
        // remainder chosen so the three parts add back to the padded estimate
        let e_artif: Vec<f64> = padded
            .iter()
            .zip(&s_target)
            .zip(&e_interf)
            .map(|((x, t), i)| x - t - i)
            .collect();
        BssDecomposition::from_parts(s_target, e_interf, e_artif)
    }
}

pub fn decompose(
    estimate: &AudioSignal,
    references: &[AudioSignal],
    target_index: usize,
) -> Result<BssDecomposition> {
    BssEvaluator::new(references, DEFAULT_FILTER_LEN)?.decompose(estimate.samples(), target_index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Metrics of each estimate against its assigned reference.
    pub per_source: Vec<SourceMetrics>,
    /// `permutation[i]` is the reference assigned to estimate `i`.
    pub permutation: Vec<usize>,
}

impl MetricsReport {
    pub fn mean(&self) -> SourceMetrics {
        let n = self.per_source.len().max(1) as f64;
        let sum = |f: fn(&SourceMetrics) -> f64| self.per_source.iter().map(f).sum::<f64>() / n;
        SourceMetrics {
            sdr: sum(|m| m.sdr),
            sir: sum(|m| m.sir),
            sar: sum(|m| m.sar),
        }
    }

    /// CSV with columns `source_id,permuted_ref,SDR,SIR,SAR`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["source_id", "permuted_ref", "SDR", "SIR", "SAR"])?;
        for (i, (m, r)) in self.per_source.iter().zip(&self.permutation).enumerate() {
            csv.write_record([
                i.to_string(),
                r.to_string(),
                format!("{:.4}", m.sdr),
                format!("{:.4}", m.sir),
                format!("{:.4}", m.sar),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Scores every estimate against every reference and keeps the assignment
/// with the highest mean SDR.
pub fn evaluate_permuted_with(
    evaluator: &BssEvaluator,
    estimates: &[&[f64]],
) -> Result<MetricsReport> {
    let n = evaluator.num_references();
    if estimates.len() != n {
        return Err(Error::CountMismatch {
            estimates: estimates.len(),
            references: n,
        });
    }
    let mut table = Vec::with_capacity(n);
    for est in estimates {
        let row = (0..n)
            .map(|j| evaluator.decompose(est, j).map(|d| SourceMetrics::of(&d)))
            .collect::<Result<Vec<_>>>()?;
        table.push(row);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let score: f64 = perm.iter().enumerate().map(|(i, &j)| table[i][j].sdr).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm));
        }
    }
    let (_, permutation) = best.expect("at least one permutation");
    let per_source = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| table[i][j])
        .collect();
    Ok(MetricsReport {
        per_source,
        permutation,
    })
}

pub fn evaluate_permuted(
    estimates: &[AudioSignal],
    references: &[AudioSignal],
) -> Result<MetricsReport> {
    if estimates.len() != references.len() {
        return Err(Error::CountMismatch {
            estimates: estimates.len(),
            references: references.len(),
        });
    }
    let evaluator = BssEvaluator::new(references, DEFAULT_FILTER_LEN)?;
    let slices: Vec<&[f64]> = estimates.iter().map(AudioSignal::samples).collect();
    evaluate_permuted_with(&evaluator, &slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn energy(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum()
    }

    #[test]
    fn perfect_parts_cap_all_metrics() {
        let d = BssDecomposition::from_parts(vec![1.0, -2.0], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let m = SourceMetrics::of(&d);
        assert_eq!((m.sdr, m.sir, m.sar), (DB_CAP, DB_CAP, DB_CAP));
    }

    #[test]
    fn unit_ratio_sar_is_zero() {
        let d = BssDecomposition::from_parts(vec![3.0, 0.0], vec![0.0, 4.0], vec![5.0, 0.0]).unwrap();
        assert!(sar(&d).abs() < 1e-12);
    }

    #[test]
    fn estimate_equal_to_reference() {
        let refs = [noise(4000, 1), noise(4000, 2)];
        let slices: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
        let eval = BssEvaluator::from_slices(&slices, 32).unwrap();
        let d = eval.decompose(&refs[0], 0).unwrap();
        let total = energy(&refs[0]);
        assert!(energy(&d.e_interf) / total < 1e-10);
        assert!(energy(&d.e_artif) / total < 1e-10);

        let d = eval.decompose(&refs[1], 0).unwrap();
        assert!(energy(&d.s_target) / total < 1e-2);
        assert!(energy(&d.e_interf) / energy(&refs[1]) > 0.99);
    }

    #[test]
    fn parts_sum_to_padded_estimate() {
        let refs = [noise(3000, 3), noise(3000, 4)];
        let slices: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
        let eval = BssEvaluator::from_slices(&slices, 16).unwrap();
        let est = noise(3000, 5);
        let d = eval.decompose(&est, 1).unwrap();
        let sum = d.estimate();
        assert_eq!(sum.len(), 3000 + 15);
        for (i, s) in sum.iter().enumerate() {
            let x = est.get(i).copied().unwrap_or(0.0);
            assert!((s - x).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_references() {
        let zero = vec![0.0; 100];
        let one = noise(100, 1);
        assert!(matches!(
            BssEvaluator::from_slices(&[&one, &zero], 8),
            Err(Error::ZeroReference(1))
        ));
        let short = noise(50, 2);
        assert!(BssEvaluator::from_slices(&[&one, &short], 8).is_err());
    }

    #[test]
    fn duplicate_references_are_ridge_regularized() {
        let one = noise(500, 6);
        let eval = BssEvaluator::from_slices(&[&one, &one], 8).unwrap();
        let d = eval.decompose(&one, 0).unwrap();
        assert!(d.s_target.iter().all(|v| v.is_finite()));
        assert!(SourceMetrics::of(&d).sdr > 40.0);
    }

    #[test]
    fn permutation_is_recovered() {
        let sr = 8000;
        let refs: Vec<AudioSignal> = (0..3)
            .map(|s| AudioSignal::new(noise(3000, 10 + s), sr).unwrap())
            .collect();
        let shuffled = vec![refs[2].clone(), refs[0].clone(), refs[1].clone()];
        let report = evaluate_permuted(&shuffled, &refs).unwrap();
        assert_eq!(report.permutation, vec![2, 0, 1]);
        assert!(report.per_source.iter().all(|m| m.sdr > 100.0));
        assert!(evaluate_permuted(&shuffled[..2], &refs).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let report = MetricsReport {
            per_source: vec![SourceMetrics {
                sdr: 1.0,
                sir: 2.5,
                sar: -3.0,
            }],
            permutation: vec![0],
        };
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "source_id,permuted_ref,SDR,SIR,SAR\n0,0,1.0000,2.5000,-3.0000\n"
        );
    }

    #[test]
    fn scaling_estimate_leaves_metrics_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let refs = [noise(2000, 20), noise(2000, 21)];
        let slices: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
        let eval = BssEvaluator::from_slices(&slices, 16).unwrap();
        let est: Vec<f64> = refs[0]
            .iter()
            .zip(&refs[1])
            .map(|(a, b)| a + 0.3 * b + 0.2 * rng.random_range(-1.0..1.0))
            .collect();
        let base = SourceMetrics::of(&eval.decompose(&est, 0).unwrap());
        let scaled: Vec<f64> = est.iter().map(|x| 7.5 * x).collect();
        let other = SourceMetrics::of(&eval.decompose(&scaled, 0).unwrap());
        assert!((base.sdr - other.sdr).abs() < 1e-9);
        assert!((base.sir - other.sir).abs() < 1e-9);
        assert!((base.sar - other.sar).abs() < 1e-9);
    }
}
