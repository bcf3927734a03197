//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use envsep::lpc::LpcModel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn white_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Lags `0..=order` of the biased autocorrelation of a random sequence,
/// which always form a positive-definite Toeplitz matrix.
pub fn random_pd_autocorrelation<R: Rng>(order: usize, rng: &mut R) -> Vec<f64> {
    let len = 4 * order + 16;
    let x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    (0..=order)
        .map(|m| (0..len - m).map(|n| x[n] * x[n + m]).sum::<f64>() / len as f64)
        .collect()
}

/// Solves `R a = (r_1..r_M)` with a dense LU factorization.
pub fn dense_yule_walker(r: &[f64]) -> Vec<f64> {
    let order = r.len() - 1;
    let toeplitz = DMatrix::from_fn(order, order, |i, j| r[i.abs_diff(j)]);
    let rhs = DVector::from_iterator(order, r[1..].iter().copied());
    toeplitz
        .lu()
        .solve(&rhs)
        .expect("positive-definite system")
        .iter()
        .copied()
        .collect()
}

/// `1 / |1 - Σ a_m exp(-i 2π f m / N)|`, L1-normalized over `num_bins`.
pub fn direct_envelope(model: &LpcModel, num_bins: usize) -> Vec<f64> {
    let n = 2 * (num_bins - 1);
    let raw: Vec<f64> = (0..num_bins)
        .map(|f| {
            let mut a = Complex64::new(1.0, 0.0);
            for (m, c) in model.coeffs().iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (f * (m + 1)) as f64 / n as f64;
                a -= Complex64::from_polar(*c, phase);
            }
            1.0 / a.norm()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Autocorrelation of the mirrored power spectrum by direct cosine sums.
pub fn cosine_sum_autocorrelation(mag: &[f64], order: usize) -> Vec<f64> {
    let num_bins = mag.len();
    let n = 2 * (num_bins - 1);
    let power = |k: usize| {
        let f = if k < num_bins { k } else { n - k };
        mag[f] * mag[f]
    };
    (0..=order)
        .map(|m| {
            (0..n)
                .map(|k| power(k) * (2.0 * std::f64::consts::PI * (k * m) as f64 / n as f64).cos())
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

pub fn relative_error(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got.iter().zip(want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Energy ratio of `err` to `reference` in dB.
pub fn error_db(err: &[f64], reference: &[f64]) -> f64 {
    let e: f64 = err.iter().map(|x| x * x).sum();
    let r: f64 = reference.iter().map(|x| x * x).sum();
    10.0 * (e / r).log10()
}
