//! Sketched isotropic Gaussian regularization.
//!
//! The batch is projected onto `K` random unit directions and, for each
//! projection, the empirical characteristic function is compared with an
//! analytic univariate target on a grid of `J` frequencies
//! `t_j = j · t_max / J`, `j = 1..=J`:
//!
//! ```text
//! loss = 1/(K·J) Σ_k Σ_j [ (Re φ̂_k(t_j) − Re φ*(t_j))² + (Im φ̂_k(t_j) − Im φ*(t_j))² ]
//! ```
//!
//! `t = 0` is left out because every distribution matches there. Either
//! squared part can be switched off through [`Component`].
//!
//! All targets are variance-matched to `σ²`, so swapping the target only
//! changes tail shape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{sample_unit_directions, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Gaussian,
    Laplace,
    Logistic,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Gaussian => "gaussian",
            Target::Laplace => "laplace",
            Target::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Target::Gaussian),
            "laplace" => Ok(Target::Laplace),
            "logistic" => Ok(Target::Logistic),
            other => Err(Error::Config(format!("unknown SIGReg target '{other}'"))),
        }
    }
}

/// Which parts of the characteristic-function mismatch enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Both,
    RealOnly,
    ImagOnly,
}

impl Component {
    fn selects(self) -> (bool, bool) {
        match self {
            Component::Both => (true, true),
            Component::RealOnly => (true, false),
            Component::ImagOnly => (false, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Both => "both",
            Component::RealOnly => "real_only",
            Component::ImagOnly => "imag_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigregConfig {
    pub target: Target,
    /// Standard deviation of the target along every direction.
    pub sigma: f64,
    pub k_projections: usize,
    pub j_frequencies: usize,
    pub t_max: f64,
    pub component: Component,
    /// Weight of the loss when added to a training objective.
    pub lambda: f64,
    /// Draw fresh directions on every evaluation instead of reusing them.
    pub resample_each_step: bool,
}

impl Default for SigregConfig {
    fn default() -> Self {
        Self {
            target: Target::Gaussian,
            sigma: 1.0,
            k_projections: 16,
            j_frequencies: 8,
            t_max: 5.0,
            component: Component::Both,
            lambda: 1.0,
            resample_each_step: true,
        }
    }
}

impl SigregConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| Err(Error::Config(format!("sigreg.{field}: {why}")));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail("sigma", "must be positive");
        }
        if self.k_projections == 0 {
            return fail("k_projections", "must be at least 1");
        }
        if self.j_frequencies == 0 {
            return fail("j_frequencies", "must be at least 1");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return fail("t_max", "must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda", "must be non-negative");
        }
        Ok(())
    }

    /// The frequency grid `j · t_max / J` for `j = 1..=J`.
    pub fn frequencies(&self) -> Vec<f64> {
        let j = self.j_frequencies as f64;
        (1..=self.j_frequencies).map(|i| i as f64 * self.t_max / j).collect()
    }
}

/// `(mean cos(t z), mean sin(t z))`.
pub fn empirical_cf(z: &[f64], t: f64) -> Result<(f64, f64)> {
    if z.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let (mut re, mut im) = (0.0, 0.0);
    for &x in z {
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite projection".into()));
        }
        let (s, c) = (t * x).sin_cos();
        re += c;
        im += s;
    }
    let n = z.len() as f64;
    Ok((re / n, im / n))
}

/// Characteristic function of the zero-mean, variance-`sigma²` target.
///
/// All three targets are symmetric, so the imaginary part is zero.
pub fn target_cf(target: Target, sigma: f64, t: f64) -> (f64, f64) {
    let re = match target {
        Target::Gaussian => (-0.5 * sigma * sigma * t * t).exp(),
        Target::Laplace => 1.0 / (1.0 + 0.5 * sigma * sigma * t * t),
        Target::Logistic => {
            let s = sigma * 3f64.sqrt() / std::f64::consts::PI;
            let x = std::f64::consts::PI * s * t;
            if x.abs() < 1e-8 {
                1.0 - x * x / 6.0
            } else if x.abs() > 700.0 {
                0.0
            } else {
                x / x.sinh()
            }
        }
    };
    (re, 0.0)
}

fn check_directions(batch_cols: usize, directions: &Matrix, cfg: &SigregConfig) -> Result<()> {
    if directions.cols() != batch_cols {
        return Err(Error::Dimension(format!(
            "directions have dimension {}, batch has {}",
            directions.cols(),
            batch_cols
        )));
    }
    if directions.rows() != cfg.k_projections {
        return Err(Error::Dimension(format!(
            "expected {} directions, got {}",
            cfg.k_projections,
            directions.rows()
        )));
    }
    Ok(())
}

/// Loss value for a fixed `K × d` set of directions, without a tape.
pub fn sigreg_value(batch: &Matrix, cfg: &SigregConfig, directions: &Matrix) -> Result<f64> {
    cfg.validate()?;
    if batch.rows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    check_directions(batch.cols(), directions, cfg)?;
    let (use_re, use_im) = cfg.component.selects();
    let projections = batch.matmul_nt(directions)?.transpose();
    let mut total = 0.0;
    for k in 0..cfg.k_projections {
        let z = projections.row(k);
        for t in cfg.frequencies() {
            let (re, im) = empirical_cf(z, t)?;
            let (re_t, im_t) = target_cf(cfg.target, cfg.sigma, t);
            if use_re {
                total += (re - re_t).powi(2);
            }
            if use_im {
                total += (im - im_t).powi(2);
            }
        }
    }
    Ok(total / (cfg.k_projections * cfg.j_frequencies) as f64)
}

/// Differentiable loss for a fixed `K × d` set of directions.
pub fn sigreg_on_tape(tape: &mut Tape, batch: Var, cfg: &SigregConfig, directions: &Matrix) -> Result<Var> {
    cfg.validate()?;
    if batch.rows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    check_directions(batch.cols(), directions, cfg)?;
    let (use_re, use_im) = cfg.component.selects();
    let k = cfg.k_projections;

    let dirs_t = tape.constant(directions.transpose());
    let z = tape.matmul(batch, dirs_t)?;
    let mut terms = Vec::with_capacity(2 * cfg.j_frequencies);
    for t in cfg.frequencies() {
        let zt = tape.scale(z, t);
        let (re_t, im_t) = target_cf(cfg.target, cfg.sigma, t);
        let mut parts = Vec::with_capacity(2);
        if use_re {
            parts.push((tape.cos(zt), re_t));
        }
        if use_im {
            parts.push((tape.sin(zt), im_t));
        }
        for (wave, target) in parts {
            let ecf = tape.col_mean(wave);
            let goal = tape.constant(Matrix::filled(1, k, target));
            let diff = tape.sub(ecf, goal)?;
            let sq = tape.square(diff);
            terms.push(tape.sum(sq));
        }
    }
    let mut acc = terms[0];
    for &term in &terms[1..] {
        acc = tape.add(acc, term)?;
    }
    Ok(tape.scale(acc, 1.0 / (k * cfg.j_frequencies) as f64))
}

/// Differentiable loss with `K` directions freshly drawn from `rng`.
pub fn sigreg_loss(tape: &mut Tape, batch: Var, cfg: &SigregConfig, rng: &mut Rng) -> Result<Var> {
    cfg.validate()?;
    let directions = sample_unit_directions(batch.cols(), cfg.k_projections, rng)?;
    sigreg_on_tape(tape, batch, cfg, &directions)
}

/// Holds the projection directions across training steps, redrawing them
/// per call when `resample_each_step` is set.
#[derive(Debug, Clone)]
pub struct Sketch {
    cfg: SigregConfig,
    directions: Option<Matrix>,
}

impl Sketch {
    pub fn new(cfg: SigregConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, directions: None })
    }

    pub fn config(&self) -> &SigregConfig {
        &self.cfg
    }

    /// Directions for the next evaluation on a `d`-dimensional batch.
    pub fn directions(&mut self, d: usize, rng: &mut Rng) -> Result<&Matrix> {
        let stale = match &self.directions {
            None => true,
            Some(m) => self.cfg.resample_each_step || m.cols() != d,
        };
        if stale {
            self.directions = Some(sample_unit_directions(d, self.cfg.k_projections, rng)?);
        }
        Ok(self.directions.as_ref().expect("just set"))
    }

    pub fn loss(&mut self, tape: &mut Tape, batch: Var, rng: &mut Rng) -> Result<Var> {
        let cfg = self.cfg.clone();
        let dirs = self.directions(batch.cols(), rng)?.clone();
        sigreg_on_tape(tape, batch, &cfg, &dirs)
    }
}

/// Covariance-whitening penalty
/// `‖Σ̂ − σ²I‖_F² / d² + ‖mean‖² / d` with the centered, divisor-`n`
/// covariance.
pub fn whitening_loss(tape: &mut Tape, batch: Var, sigma: f64) -> Result<Var> {
    let (n, d) = batch.shape();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = tape.col_mean(batch);
    let centered = tape.sub_row(batch, mean)?;
    let centered_t = tape.transpose(centered);
    let gram = tape.matmul(centered_t, centered)?;
    let cov = tape.scale(gram, 1.0 / n as f64);
    let goal = tape.constant(Matrix::identity(d).scale(sigma * sigma));
    let diff = tape.sub(cov, goal)?;
    let sq = tape.square(diff);
    let cov_term = tape.sum(sq);
    let cov_term = tape.scale(cov_term, 1.0 / (d * d) as f64);
    let mean_sq = tape.square(mean);
    let mean_term = tape.sum(mean_sq);
    let mean_term = tape.scale(mean_term, 1.0 / d as f64);
    tape.add(cov_term, mean_term)
}

/// [`whitening_loss`] evaluated without a tape.
pub fn whitening_value(batch: &Matrix, sigma: f64) -> Result<f64> {
    let (mean, cov) = crate::linalg::covariance(batch, true)?;
    let d = batch.cols();
    let diff = cov.sub(&Matrix::identity(d).scale(sigma * sigma))?;
    let cov_term = diff.data().iter().map(|v| v * v).sum::<f64>() / (d * d) as f64;
    let mean_term = mean.iter().map(|v| v * v).sum::<f64>() / d as f64;
    Ok(cov_term + mean_term)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_at_zero_has_unit_cf() {
        let (re, im) = empirical_cf(&[0.0; 5], 3.7).unwrap();
        assert_eq!((re, im), (1.0, 0.0));
    }

    #[test]
    fn single_point_cf() {
        let (re, im) = empirical_cf(&[0.4], 2.0).unwrap();
        assert!((re - 0.8f64.cos()).abs() < 1e-15);
        assert!((im - 0.8f64.sin()).abs() < 1e-15);
        assert!(empirical_cf(&[], 1.0).is_err());
    }

    #[test]
    fn target_cf_closed_forms() {
        for t in [Target::Gaussian, Target::Laplace, Target::Logistic] {
            assert_eq!(target_cf(t, 1.0, 0.0), (1.0, 0.0));
        }
        let s2 = 2f64.sqrt();
        assert!((target_cf(Target::Gaussian, 1.0, s2).0 - (-1f64).exp()).abs() < 1e-15);
        assert!((target_cf(Target::Laplace, 1.0, s2).0 - 0.5).abs() < 1e-15);
        // Logistic CF π s t / sinh(π s t) with s = √3/π.
        let x = 3f64.sqrt() * 1.3;
        assert!((target_cf(Target::Logistic, 1.0, 1.3).0 - x / x.sinh()).abs() < 1e-15);
        assert!("student".parse::<Target>().is_err());
    }

    #[test]
    fn frequency_grid_excludes_zero() {
        let cfg = SigregConfig::default();
        let f = cfg.frequencies();
        assert_eq!(f.len(), 8);
        assert_eq!(f[0], 0.625);
        assert_eq!(f[7], 5.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            SigregConfig {
                sigma: 0.0,
                ..Default::default()
            },
            SigregConfig {
                k_projections: 0,
                ..Default::default()
            },
            SigregConfig {
                j_frequencies: 0,
                ..Default::default()
            },
            SigregConfig {
                t_max: -1.0,
                ..Default::default()
            },
            SigregConfig {
                lambda: -0.1,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn tape_and_plain_values_agree() {
        let mut rng = Rng::new(9);
        let batch = crate::rng::sample_distribution(crate::rng::Distribution::Laplace, 1.3, 40, 5, &mut rng).unwrap();
        for component in [Component::Both, Component::RealOnly, Component::ImagOnly] {
            let cfg = SigregConfig {
                component,
                ..Default::default()
            };
            let dirs = sample_unit_directions(5, cfg.k_projections, &mut rng).unwrap();
            let plain = sigreg_value(&batch, &cfg, &dirs).unwrap();
            let mut tape = Tape::new();
            let b = tape.leaf(batch.clone());
            let l = sigreg_on_tape(&mut tape, b, &cfg, &dirs).unwrap();
            assert!((tape.scalar_value(l) - plain).abs() < 1e-14);
        }
    }

    #[test]
    fn fixed_sketch_reuses_directions() {
        let cfg = SigregConfig {
            resample_each_step: false,
            ..Default::default()
        };
        let mut sketch = Sketch::new(cfg).unwrap();
        let mut rng = Rng::new(1);
        let first = sketch.directions(4, &mut rng).unwrap().clone();
        assert_eq!(&first, sketch.directions(4, &mut rng).unwrap());

        let mut resampling = Sketch::new(SigregConfig::default()).unwrap();
        let a = resampling.directions(4, &mut rng).unwrap().clone();
        assert_ne!(&a, resampling.directions(4, &mut rng).unwrap());
    }

    #[test]
    fn whitening_needs_two_rows() {
        let mut tape = Tape::new();
        let b = tape.leaf(Matrix::zeros(1, 3));
        assert!(matches!(
            whitening_loss(&mut tape, b, 1.0),
            Err(Error::InsufficientData { .. })
        ));
    }
}
