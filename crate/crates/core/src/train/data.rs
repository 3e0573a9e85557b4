//! Clustered synthetic classification data and label permutations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub input_dim: usize,
    /// Distance of every class center from the origin.
    pub cluster_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_per_class: 200,
            input_dim: 32,
            cluster_separation: 3.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("data.n_classes must be at least 2".into()));
        }
        if self.n_per_class == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "data.n_per_class and data.input_dim must be positive".into(),
            ));
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            return Err(Error::Config("data.cluster_separation must be non-negative".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("data.noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One sample per row, grouped by class.
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Gaussian clusters around seeded random directions of length
/// `cluster_separation`. Fully determined by the config, including its seed.
pub fn make_synthetic_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let d = cfg.input_dim;
    let centers: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| {
            let v = rng.normal_vec(d);
            let len = norm(&v).max(f64::MIN_POSITIVE);
            v.iter().map(|x| cfg.cluster_separation * x / len).collect()
        })
        .collect();
    let n = cfg.n_classes * cfg.n_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.n_per_class {
            data.extend(center.iter().map(|m| m + cfg.noise_std * rng.normal()));
            labels.push(c);
        }
    }
    Ok(Dataset {
        inputs: Matrix::new(n, d, data)?,
        labels,
        n_classes: cfg.n_classes,
    })
}

/// Uniformly random non-identity permutation of `0..n_classes`.
pub fn sample_permutation(n_classes: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::Config("a label permutation needs at least 2 classes".into()));
    }
    loop {
        let mut perm: Vec<usize> = (0..n_classes).collect();
        rng.shuffle(&mut perm);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Relabels with a fresh non-identity permutation; returns the new labels
/// and the permutation applied (`new = perm[old]`).
pub fn permute_labels(labels: &[usize], n_classes: usize, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let perm = sample_permutation(n_classes, rng)?;
    Ok((labels.iter().map(|&y| perm[y]).collect(), perm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_classes_always_swap() {
        let mut rng = Rng::new(9);
        for _ in 0..20 {
            assert_eq!(sample_permutation(2, &mut rng).unwrap(), vec![1, 0]);
        }
        assert!(sample_permutation(1, &mut rng).is_err());
    }

    #[test]
    fn inverse_recovers_labels() {
        let labels = vec![0, 1, 2, 3, 3, 1];
        let (new, perm) = permute_labels(&labels, 4, &mut Rng::new(2)).unwrap();
        let inv = invert_permutation(&perm);
        let back: Vec<usize> = new.iter().map(|&y| inv[y]).collect();
        assert_eq!(back, labels);
    }

    #[test]
    fn dataset_is_balanced_and_seeded() {
        let cfg = DatasetConfig {
            n_classes: 3,
            n_per_class: 5,
            input_dim: 4,
            ..Default::default()
        };
        let a = make_synthetic_dataset(&cfg).unwrap();
        assert_eq!(a, make_synthetic_dataset(&cfg).unwrap());
        for c in 0..3 {
            assert_eq!(a.labels.iter().filter(|&&y| y == c).count(), 5);
        }
    }
}
