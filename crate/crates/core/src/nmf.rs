//! KL-divergence NMF with column-normalized bases.
//!
//! One iteration updates the activations with the current bases, the bases
//! with the new activations, then moves each basis column's L1 mass into its
//! activation row so every column sums to one. The envelope constraint (see
//! [`crate::constraint`]) is applied by the caller after this step.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// i.i.d. uniform(0, 1) entries.
    #[default]
    Normal,
    /// Uniform entries squared, which biases columns toward sparse shapes.
    Sparse,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "sparse" => Ok(Self::Sparse),
            other => Err(Error::Config(format!("unknown init mode '{other}'"))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Normal => "normal",
            Self::Sparse => "sparse",
        })
    }
}

/// Disjoint groups of basis indices, one group per instrument, covering `0..K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
    num_bases: usize,
}

impl Partition {
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        let num_bases: usize = groups.iter().map(Vec::len).sum();
        let mut seen = vec![false; num_bases];
        for (i, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::InvalidPartition(format!("group {i} is empty")));
            }
            for &k in group {
                if k >= num_bases || seen[k] {
                    return Err(Error::InvalidPartition(format!(
                        "index {k} is out of range or repeated"
                    )));
                }
                seen[k] = true;
            }
        }
        if groups.is_empty() {
            return Err(Error::InvalidPartition("no groups".into()));
        }
        Ok(Self { groups, num_bases })
    }

    /// `num_groups` consecutive blocks of `per_group` indices.
    pub fn contiguous(num_groups: usize, per_group: usize) -> Result<Self> {
        Self::new(
            (0..num_groups)
                .map(|i| (i * per_group..(i + 1) * per_group).collect())
                .collect(),
        )
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_bases(&self) -> usize {
        self.num_bases
    }
}

fn normalize_columns(w: &mut Array2<f64>) {
    for mut col in w.columns_mut() {
        let sum = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
}

/// Random `F × K` bases with unit-L1 columns, deterministic in `seed`.
pub fn init_bases(num_bins: usize, num_bases: usize, mode: InitMode, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::from_shape_simple_fn((num_bins, num_bases), || {
        let u: f64 = rng.random();
        let u = u.max(EPSILON);
        match mode {
            InitMode::Normal => u,
            InitMode::Sparse => u * u,
        }
    });
    normalize_columns(&mut w);
    w
}

/// Random `K × T` activations scaled to the mean frame mass of `x`.
pub fn init_activations(x: &Array2<f64>, num_bases: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let frames = x.ncols().max(1);
    let scale = (x.sum() / (frames * num_bases) as f64).max(EPSILON);
    Array2::from_shape_simple_fn((num_bases, x.ncols()), || {
        let u: f64 = rng.random();
        (u * scale).max(EPSILON)
    })
}

/// `max(W H, ε)`.
pub fn reconstruct(w: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    let mut x = w.dot(h);
    x.mapv_inplace(|v| v.max(EPSILON));
    x
}

fn ratio(x: &Array2<f64>, approx: &Array2<f64>) -> Array2<f64> {
    let mut r = x.clone();
    Zip::from(&mut r).and(approx).for_each(|r, &a| *r /= a);
    r
}

/// Multiplicative activation update with the current bases.
pub fn update_activations(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    let r = ratio(x, &reconstruct(w, h));
    let numer = w.t().dot(&r);
    let col_sums = w.sum_axis(Axis(0));
    let mut out = h.clone();
    Zip::indexed(&mut out).and(&numer).for_each(|(k, _), o, &n| {
        *o = (*o * n / col_sums[k].max(EPSILON)).max(EPSILON);
    });
    out
}

/// Multiplicative basis update with the freshly updated activations.
pub fn update_bases(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    let r = ratio(x, &reconstruct(w, h));
    let numer = r.dot(&h.t());
    let row_sums = h.sum_axis(Axis(1));
    let mut out = w.clone();
    Zip::indexed(&mut out).and(&numer).for_each(|(_, k), o, &n| {
        *o = (*o * n / row_sums[k].max(EPSILON)).max(EPSILON);
    });
    out
}

/// Result of moving basis mass into the activations.
#[derive(Debug, Clone)]
pub struct Renormalized {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    /// Columns whose sum was zero; reset to flat with a zeroed activation row.
    pub reset_columns: Vec<usize>,
}

/// Columns of `w` are scaled to unit L1 norm and the scale moves into `h`.
/// Entries are kept at or above `EPSILON`.
pub fn renormalize(w: &Array2<f64>, h: &Array2<f64>) -> Renormalized {
    let mut w = w.clone();
    let mut h = h.clone();
    let num_bins = w.nrows() as f64;
    let mut reset_columns = Vec::new();
    for (k, (mut col, mut row)) in w.columns_mut().into_iter().zip(h.rows_mut()).enumerate() {
        let sum = col.sum();
        if sum > 0.0 && sum.is_finite() {
            row.mapv_inplace(|v| (v * sum).max(EPSILON));
            col.mapv_inplace(|v| (v / sum).max(EPSILON));
        } else {
            col.fill(1.0 / num_bins);
            row.fill(0.0);
            reset_columns.push(k);
        }
    }
    Renormalized {
        w,
        h,
        reset_columns,
    }
}

/// Generalized KL divergence `Σ X log(X / X̃) - X + X̃`, with `0 log 0 = 0`.
pub fn kl_divergence(x: &Array2<f64>, approx: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    Zip::from(x).and(approx).for_each(|&x, &a| {
        let a = a.max(EPSILON);
        total += if x > 0.0 { x * (x / a).ln() - x + a } else { a };
    });
    total
}

/// One unconstrained iteration: activations, bases, then renormalization.
pub fn iterate(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> Renormalized {
    let h_hat = update_activations(x, w, h);
    let w_tilde = update_bases(x, w, &h_hat);
    renormalize(&w_tilde, &h_hat)
}

/// Hoyer sparsity of a nonnegative vector, 0 for flat and 1 for one-hot.
pub fn hoyer_sparsity(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let l2: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2 == 0.0 || n <= 1.0 {
        return 0.0;
    }
    (n.sqrt() - l1 / l2) / (n.sqrt() - 1.0)
}
