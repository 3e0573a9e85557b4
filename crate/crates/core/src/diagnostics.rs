//! Representation-health metrics: effective rank, dormant units, PCA
//! concentration, and the regularizer loss as a probe.
//!
//! Thresholds default to `delta = 0.01` for the rank and `tau = 0.1` for
//! dormancy. Both are configurable; reported values depend on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{singular_values, top_pca, Matrix};
use crate::rng::{sample_unit_directions, Rng};
use crate::sigreg::{sigreg_value, SigregConfig};
use crate::table::{fmt_f64, parse_f64, Table};

pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub delta: f64,
    pub tau: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            tau: DEFAULT_TAU,
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Config(format!("delta must lie in (0, 0.5), got {}", self.delta)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be non-negative, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankEstimate {
    pub rank: usize,
    /// The centered features were identically zero.
    pub degenerate: bool,
}

/// Smallest `k` whose leading singular values of the centered features
/// carry at least `1 − delta` of their total.
pub fn effective_rank(features: &Matrix, delta: f64) -> Result<RankEstimate> {
    if features.rows() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: features.rows(),
        });
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Config(format!("delta must lie in (0, 0.5), got {delta}")));
    }
    let centered = features.sub_row(&features.col_means())?;
    let s = singular_values(&centered)?;
    let total: f64 = s.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Ok(RankEstimate {
            rank: 0,
            degenerate: true,
        });
    }
    let mut acc = 0.0;
    for (k, v) in s.iter().enumerate() {
        acc += v;
        if acc / total >= 1.0 - delta {
            return Ok(RankEstimate {
                rank: k + 1,
                degenerate: false,
            });
        }
    }
    Ok(RankEstimate {
        rank: s.len(),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DormantEstimate {
    pub fraction: f64,
    pub dormant: usize,
    pub units: usize,
    /// Some layer had no activity at all.
    pub degenerate: bool,
}

/// Fraction of units whose mean absolute activation, relative to the
/// layer average, is at most `tau`.
pub fn dormant_fraction(activations: &Matrix, tau: f64) -> Result<DormantEstimate> {
    dormant_fraction_layers(std::slice::from_ref(activations), tau)
}

/// Pooled dormant fraction over several layers, each normalized by its
/// own average activity.
pub fn dormant_fraction_layers(layers: &[Matrix], tau: f64) -> Result<DormantEstimate> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be non-negative, got {tau}")));
    }
    let (mut dormant, mut units, mut degenerate) = (0, 0, false);
    for a in layers {
        let (n, h) = a.shape();
        if h == 0 {
            return Err(Error::Dimension("layer with no units".into()));
        }
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let mut activity = vec![0.0; h];
        for r in 0..n {
            for (acc, x) in activity.iter_mut().zip(a.row(r)) {
                *acc += x.abs();
            }
        }
        let layer_mean = activity.iter().sum::<f64>() / h as f64;
        units += h;
        if layer_mean.is_nan() || layer_mean <= 0.0 {
            degenerate = true;
            dormant += h;
            continue;
        }
        dormant += activity.iter().filter(|&&x| x / layer_mean <= tau).count();
    }
    if units == 0 {
        return Err(Error::Dimension("no layers given".into()));
    }
    Ok(DormantEstimate {
        fraction: dormant as f64 / units as f64,
        dormant,
        units,
        degenerate,
    })
}

/// Regularizer loss of `features` against freshly drawn directions.
pub fn sigreg_probe(features: &Matrix, cfg: &SigregConfig, rng: &mut Rng) -> Result<f64> {
    let directions = sample_unit_directions(features.cols(), cfg.k_projections, rng)?;
    sigreg_value(features, cfg, &directions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub effective_rank: usize,
    pub dormant_fraction: f64,
    pub sigreg_probe_loss: f64,
    pub top2_explained: (f64, f64),
    pub n: usize,
    pub d: usize,
    pub rank_degenerate: bool,
    pub dormant_degenerate: bool,
}

/// All four metrics with default thresholds and probe configuration.
pub fn diagnostics_report(
    features: &Matrix,
    activations: &[Matrix],
    sigreg_cfg: &SigregConfig,
    rng: &mut Rng,
) -> Result<DiagnosticsReport> {
    diagnostics_report_with(features, activations, &DiagnosticsConfig::default(), sigreg_cfg, rng)
}

pub fn diagnostics_report_with(
    features: &Matrix,
    activations: &[Matrix],
    cfg: &DiagnosticsConfig,
    sigreg_cfg: &SigregConfig,
    rng: &mut Rng,
) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let n = features.rows();
    if let Some(a) = activations.iter().find(|a| a.rows() != n) {
        return Err(Error::Dimension(format!(
            "activations have {} rows, features have {n}",
            a.rows()
        )));
    }
    let rank = effective_rank(features, cfg.delta)?;
    let dormant = dormant_fraction_layers(activations, cfg.tau)?;
    let pca = top_pca(features, features.cols().min(2))?;
    let ratio = |i: usize| pca.explained_variance_ratios.get(i).copied().unwrap_or(0.0);
    Ok(DiagnosticsReport {
        effective_rank: rank.rank,
        dormant_fraction: dormant.fraction,
        sigreg_probe_loss: sigreg_probe(features, sigreg_cfg, rng)?,
        top2_explained: (ratio(0), ratio(1)),
        n,
        d: features.cols(),
        rank_degenerate: rank.degenerate,
        dormant_degenerate: dormant.degenerate,
    })
}

impl DiagnosticsReport {
    pub const CSV_COLUMNS: [&'static str; 8] = [
        "n",
        "d",
        "effective_rank",
        "dormant_fraction",
        "sigreg_probe_loss",
        "top1_explained",
        "top2_explained",
        "degenerate",
    ];

    pub fn to_table(reports: &[DiagnosticsReport]) -> Table {
        let mut t = Table::new(&Self::CSV_COLUMNS);
        for r in reports {
            let flags = match (r.rank_degenerate, r.dormant_degenerate) {
                (false, false) => "none",
                (true, false) => "rank",
                (false, true) => "dormant",
                (true, true) => "rank+dormant",
            };
            t.push(vec![
                r.n.to_string(),
                r.d.to_string(),
                r.effective_rank.to_string(),
                fmt_f64(r.dormant_fraction),
                fmt_f64(r.sigreg_probe_loss),
                fmt_f64(r.top2_explained.0),
                fmt_f64(r.top2_explained.1),
                flags.to_string(),
            ]);
        }
        t
    }

    pub fn from_table(t: &Table) -> Result<Vec<DiagnosticsReport>> {
        if t.header != Self::CSV_COLUMNS {
            return Err(Error::Io(format!("unexpected diagnostics header {:?}", t.header)));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Io(format!("not a count: '{s}'")));
        t.rows
            .iter()
            .map(|row| {
                let flags = row[7].as_str();
                Ok(DiagnosticsReport {
                    n: int(&row[0])?,
                    d: int(&row[1])?,
                    effective_rank: int(&row[2])?,
                    dormant_fraction: parse_f64(&row[3])?,
                    sigreg_probe_loss: parse_f64(&row[4])?,
                    top2_explained: (parse_f64(&row[5])?, parse_f64(&row[6])?),
                    rank_degenerate: flags.contains("rank"),
                    dormant_degenerate: flags.contains("dormant"),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_batch() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        for delta in [0.01, 0.2, 0.49] {
            assert_eq!(effective_rank(&m, delta).unwrap().rank, 1);
        }
    }

    #[test]
    fn zero_features_are_degenerate() {
        let r = effective_rank(&Matrix::filled(5, 3, 2.0), 0.01).unwrap();
        assert_eq!(
            r,
            RankEstimate {
                rank: 0,
                degenerate: true
            }
        );
        assert!(effective_rank(&Matrix::zeros(1, 3), 0.01).is_err());
        assert!(effective_rank(&Matrix::zeros(4, 3), 0.5).is_err());
    }

    #[test]
    fn one_silent_unit() {
        let mut a = Matrix::filled(8, 4, 1.0);
        for r in 0..8 {
            a[(r, 2)] = 0.0;
        }
        let est = dormant_fraction(&a, 0.1).unwrap();
        assert_eq!(est.fraction, 0.25);
        assert_eq!(dormant_fraction(&a.scale(10.0), 0.1).unwrap().fraction, 0.25);
        assert_eq!(
            dormant_fraction(&Matrix::filled(3, 3, 0.7), 0.99).unwrap().fraction,
            0.0
        );
    }

    #[test]
    fn all_zero_layer() {
        let est = dormant_fraction(&Matrix::zeros(4, 5), 0.1).unwrap();
        assert_eq!(est.fraction, 1.0);
        assert!(est.degenerate);
    }

    #[test]
    fn layers_pool_units() {
        let mut a = Matrix::filled(2, 2, 1.0);
        a[(0, 0)] = 0.0;
        a[(1, 0)] = 0.0;
        let b = Matrix::filled(2, 6, 3.0);
        let est = dormant_fraction_layers(&[a, b], 0.1).unwrap();
        assert_eq!((est.dormant, est.units), (1, 8));
    }
}
