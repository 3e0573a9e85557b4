//! Seeded randomness and the sampling routines built on it.
//!
//! Every stochastic routine takes an explicit [`Rng`]. The generator is
//! ChaCha8 keyed by a 64-bit seed, so a seed reproduces the same stream on
//! every platform.

use std::fmt;
use std::str::FromStr;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

#[derive(Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl fmt::Debug for Rng {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Rng").field("seed", &self.seed).finish()
    }
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-task `index`, derived from the seed
    /// only (not from how much of this stream has been consumed).
    pub fn child(&self, index: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(0x9E37_79B9))))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Zero-mean coordinate laws, each parameterized by its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Gaussian,
    Laplace,
    Logistic,
    Uniform,
}

impl Distribution {
    pub const ALL: [Distribution; 4] = [
        Distribution::Gaussian,
        Distribution::Laplace,
        Distribution::Logistic,
        Distribution::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::Laplace => "laplace",
            Distribution::Logistic => "logistic",
            Distribution::Uniform => "uniform",
        }
    }

    /// Scale parameter giving variance `sigma²`: Laplace `b`, logistic `s`,
    /// uniform half-width, or `sigma` itself for the Gaussian.
    pub fn scale_for_std(self, sigma: f64) -> f64 {
        match self {
            Distribution::Gaussian => sigma,
            Distribution::Laplace => sigma / std::f64::consts::SQRT_2,
            Distribution::Logistic => sigma * 3f64.sqrt() / std::f64::consts::PI,
            Distribution::Uniform => sigma * 3f64.sqrt(),
        }
    }

    pub fn sample(self, sigma: f64, rng: &mut Rng) -> f64 {
        let scale = self.scale_for_std(sigma);
        match self {
            Distribution::Gaussian => scale * rng.normal(),
            Distribution::Laplace => {
                let u = rng.uniform_open() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Distribution::Logistic => {
                let u = rng.uniform_open();
                scale * (u / (1.0 - u)).ln()
            }
            Distribution::Uniform => scale * (2.0 * rng.uniform() - 1.0),
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Distribution::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown distribution '{s}'")))
    }
}

/// `k` directions drawn uniformly from the unit sphere in `R^d`, as the rows
/// of a `k × d` matrix.
pub fn sample_unit_directions(d: usize, k: usize, rng: &mut Rng) -> Result<Matrix> {
    if d == 0 || k == 0 {
        return Err(Error::Dimension(format!(
            "unit directions need d >= 1 and k >= 1 (got d = {d}, k = {k})"
        )));
    }
    let mut data = Vec::with_capacity(d * k);
    for _ in 0..k {
        loop {
            let v = rng.normal_vec(d);
            let len = norm(&v);
            if len > 1e-300 {
                data.extend(v.iter().map(|x| x / len));
                break;
            }
        }
    }
    Ok(Matrix::from_vec_unchecked(k, d, data))
}

/// An `n × d` batch of i.i.d. coordinates with mean 0 and variance `sigma²`.
pub fn sample_distribution(dist: Distribution, sigma: f64, n: usize, d: usize, rng: &mut Rng) -> Result<Matrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let data = (0..n * d).map(|_| dist.sample(sigma, rng)).collect();
    Ok(Matrix::from_vec_unchecked(n, d, data))
}

/// Random orthogonal matrix (Haar-distributed up to column signs) from
/// Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(d: usize, rng: &mut Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v = rng.normal_vec(d);
        for _ in 0..2 {
            for c in &cols {
                let p = crate::linalg::dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        let len = norm(&v);
        if len > 1e-8 {
            v.iter_mut().for_each(|x| *x /= len);
            cols.push(v);
        }
    }
    let mut q = Matrix::zeros(d, d);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[(i, j)] = c[i];
        }
    }
    q
}

/// `Q diag(eigenvalues) Qᵀ` for a random orthogonal `Q`.
pub fn random_spd_with_spectrum(eigenvalues: &[f64], rng: &mut Rng) -> Matrix {
    let d = eigenvalues.len();
    let q = random_orthogonal(d, rng);
    let mut scaled = q.clone();
    for r in 0..d {
        for c in 0..d {
            scaled[(r, c)] *= eigenvalues[c];
        }
    }
    let mut m = scaled.matmul_nt(&q).expect("square");
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Random SPD matrix with eigenvalues drawn log-uniformly from
/// `[min_eig, max_eig]`.
pub fn random_spd(d: usize, min_eig: f64, max_eig: f64, rng: &mut Rng) -> Matrix {
    let (lo, hi) = (min_eig.ln(), max_eig.ln());
    let spectrum: Vec<f64> = (0..d).map(|_| (lo + (hi - lo) * rng.uniform()).exp()).collect();
    random_spd_with_spectrum(&spectrum, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let xs: Vec<u64> = (0..8).map(|_| a.normal().to_bits()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.normal().to_bits()).collect();
        assert_eq!(xs, ys);
        assert_ne!(Rng::new(1).child(0).uniform(), Rng::new(1).child(1).uniform());
    }

    #[test]
    fn unit_directions_in_one_dimension_are_signs() {
        let v = sample_unit_directions(1, 50, &mut Rng::new(3)).unwrap();
        assert!(v.data().iter().all(|x| x.abs() == 1.0));
    }

    #[test]
    fn unit_directions_paper_default_count() {
        let v = sample_unit_directions(16, 16, &mut Rng::new(0)).unwrap();
        assert_eq!(v.shape(), (16, 16));
        for r in 0..16 {
            assert!((norm(v.row(r)) - 1.0).abs() < 1e-12);
        }
        assert!(sample_unit_directions(0, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn uniform_respects_support() {
        let b = sample_distribution(Distribution::Uniform, 1.0, 10_000, 1, &mut Rng::new(5)).unwrap();
        let edge = 3f64.sqrt();
        assert!(b.data().iter().all(|&x| (-edge..=edge).contains(&x)));
    }

    #[test]
    fn unknown_tag_is_config_error() {
        assert!(matches!("cauchy".parse::<Distribution>(), Err(Error::Config(_))));
        assert_eq!("laplace".parse::<Distribution>().unwrap(), Distribution::Laplace);
        assert!(sample_distribution(Distribution::Gaussian, 0.0, 1, 1, &mut Rng::new(0)).is_err());
    }
}
