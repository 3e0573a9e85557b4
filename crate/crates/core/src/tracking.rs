//! Tracking-error dynamics of a linear readout under drifting targets.
//!
//! The readout follows the gradient flow `ẇ = −2Σ(t)w + 2b(t)` of the
//! quadratic loss `wᵀΣw − 2wᵀb`. Its instantaneous optimum is `w* = Σ⁻¹b`
//! and the tracking error is `e = w − w*`. The Lyapunov function
//! `Γ = ‖e‖²` then evolves as
//!
//! ```text
//! Γ̇ = −4 eᵀΣe  −  2 eᵀΣ⁻¹ḃ  +  2 eᵀΣ⁻¹Σ̇Σ⁻¹b
//!     contraction  target drift  representation drift
//! ```
//!
//! This module integrates the flow, evaluates the three terms analytically,
//! and provides the conditioning bounds and Stein-residual Monte Carlo used
//! to compare covariance geometries and embedding laws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number_of, dot, norm, sym_eigendecomp, Cholesky, Matrix};
use crate::rng::{Distribution, Rng};

/// Drifting cross-moment `b(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Signal {
    /// `b(t) = b0 + amplitude · sin(omega t) · direction`.
    Sinusoidal {
        b0: Vec<f64>,
        amplitude: f64,
        omega: f64,
        direction: Vec<f64>,
    },
    /// `b(t) = b0 + t · velocity`.
    Linear { b0: Vec<f64>, velocity: Vec<f64> },
    /// `values[i]` holds on `[switch_times[i-1], switch_times[i])`;
    /// right-continuous at each switch.
    Piecewise {
        switch_times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl Signal {
    pub fn constant(b: Vec<f64>) -> Self {
        let d = b.len();
        Signal::Linear {
            b0: b,
            velocity: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Signal::Sinusoidal { b0, .. } | Signal::Linear { b0, .. } => b0.len(),
            Signal::Piecewise { values, .. } => values.first().map_or(0, Vec::len),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Dimension(format!("signal: {what}")));
        match self {
            Signal::Sinusoidal {
                b0,
                direction,
                amplitude,
                omega,
            } => {
                if b0.len() != d || direction.len() != d {
                    return bad("vector length does not match Σ");
                }
                if !amplitude.is_finite() || !omega.is_finite() {
                    return bad("non-finite amplitude or frequency");
                }
            }
            Signal::Linear { b0, velocity } => {
                if b0.len() != d || velocity.len() != d {
                    return bad("vector length does not match Σ");
                }
            }
            Signal::Piecewise { switch_times, values } => {
                if values.len() != switch_times.len() + 1 {
                    return bad("need one more value than switch times");
                }
                if values.iter().any(|v| v.len() != d) {
                    return bad("vector length does not match Σ");
                }
                if switch_times.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("switch times must increase");
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        match self {
            Signal::Sinusoidal {
                b0,
                amplitude,
                omega,
                direction,
            } => {
                let s = amplitude * (omega * t).sin();
                b0.iter().zip(direction).map(|(b, u)| b + s * u).collect()
            }
            Signal::Linear { b0, velocity } => b0.iter().zip(velocity).map(|(b, v)| b + t * v).collect(),
            Signal::Piecewise { switch_times, values } => {
                let idx = switch_times.iter().take_while(|&&s| s <= t).count();
                values[idx].clone()
            }
        }
    }

    /// Analytic `ḃ(t)`; piecewise signals report the one-sided value 0.
    pub fn derivative(&self, t: f64) -> Vec<f64> {
        match self {
            Signal::Sinusoidal {
                amplitude,
                omega,
                direction,
                ..
            } => {
                let s = amplitude * omega * (omega * t).cos();
                direction.iter().map(|u| s * u).collect()
            }
            Signal::Linear { velocity, .. } => velocity.clone(),
            Signal::Piecewise { values, .. } => vec![0.0; values[0].len()],
        }
    }
}

/// Covariance drift `Σ(t) = Σ₀ + sin(omega t) · delta`.
#[derive(Debug, Clone)]
pub struct SigmaDrift {
    pub delta: Matrix,
    pub omega: f64,
}

#[derive(Debug, Clone)]
pub struct TrackingScenario {
    pub sigma: Matrix,
    pub signal: Signal,
    /// Initial weights; zero when absent.
    pub w0: Option<Vec<f64>>,
    pub horizon: f64,
    /// Integration step; `0.01 / λ_max(Σ)` when absent.
    pub dt: Option<f64>,
    pub drift_sigma: Option<SigmaDrift>,
}

impl TrackingScenario {
    pub fn new(sigma: Matrix, signal: Signal, horizon: f64) -> Self {
        Self {
            sigma,
            signal,
            w0: None,
            horizon,
            dt: None,
            drift_sigma: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.rows()
    }

    /// Same scenario with `Σ` replaced by `(tr Σ / d) I`.
    pub fn isotropic_counterpart(&self) -> Self {
        let d = self.dim();
        let mut iso = self.clone();
        iso.sigma = Matrix::identity(d).scale(self.sigma.trace() / d as f64);
        iso
    }

    fn sigma_at(&self, t: f64) -> Matrix {
        match &self.drift_sigma {
            None => self.sigma.clone(),
            Some(drift) => {
                let mut s = self.sigma.clone();
                s.add_assign_scaled(&drift.delta, (drift.omega * t).sin());
                s
            }
        }
    }

    fn sigma_dot_at(&self, t: f64) -> Option<Matrix> {
        self.drift_sigma
            .as_ref()
            .map(|drift| drift.delta.scale(drift.omega * (drift.omega * t).cos()))
    }

    /// Checks invariants and returns the step size to use.
    pub fn validate(&self) -> Result<f64> {
        let d = self.dim();
        let eig = sym_eigendecomp(&self.sigma)?;
        if eig.lambda_min() <= 1e-10 {
            return Err(Error::Singular(format!(
                "Σ must be positive definite (λ_min = {:.3e})",
                eig.lambda_min()
            )));
        }
        self.signal.validate(d)?;
        if let Some(w0) = &self.w0 {
            if w0.len() != d {
                return Err(Error::Dimension(format!("w0 has length {}, Σ is {d}×{d}", w0.len())));
            }
        }
        if let Some(drift) = &self.drift_sigma {
            if drift.delta.shape() != (d, d) {
                return Err(Error::Dimension("drift delta must match Σ".into()));
            }
            let delta_eig = sym_eigendecomp(&drift.delta)?;
            let spread = delta_eig.lambda_max().abs().max(delta_eig.lambda_min().abs());
            if spread >= eig.lambda_min() {
                return Err(Error::Config(
                    "drift delta is large enough to make Σ(t) indefinite".into(),
                ));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let dt = self.dt.unwrap_or(0.01 / eig.lambda_max());
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        Ok(dt)
    }
}

/// The three additive parts of `Γ̇`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovTerms {
    pub contraction: f64,
    pub target_drift: f64,
    pub representation_drift: f64,
}

impl LyapunovTerms {
    pub fn sum(&self) -> f64 {
        self.contraction + self.target_drift + self.representation_drift
    }
}

/// `w* = Σ⁻¹ b`.
pub fn instantaneous_optimum(sigma: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Cholesky::new(sigma)?.solve(b)
}

/// Analytic decomposition of `Γ̇` at state `e`.
pub fn gamma_dot_analytic(
    sigma: &Matrix,
    sigma_dot: Option<&Matrix>,
    e: &[f64],
    b: &[f64],
    b_dot: &[f64],
) -> Result<LyapunovTerms> {
    let chol = Cholesky::new(sigma)?;
    gamma_dot_with(&chol, sigma, sigma_dot, e, b, b_dot)
}

fn gamma_dot_with(
    chol: &Cholesky,
    sigma: &Matrix,
    sigma_dot: Option<&Matrix>,
    e: &[f64],
    b: &[f64],
    b_dot: &[f64],
) -> Result<LyapunovTerms> {
    let contraction = -4.0 * sigma.quadratic_form(e)?;
    // Σ is symmetric, so eᵀΣ⁻¹x = (Σ⁻¹e)ᵀx.
    let sinv_e = chol.solve(e)?;
    let target_drift = -2.0 * dot(&sinv_e, b_dot);
    let representation_drift = match sigma_dot {
        None => 0.0,
        Some(sd) => {
            let w_star = chol.solve(b)?;
            2.0 * dot(&sinv_e, &sd.matvec(&w_star)?)
        }
    };
    Ok(LyapunovTerms {
        contraction,
        target_drift,
        representation_drift,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrackingTrace {
    pub times: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub w_star: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub term_contraction: Vec<f64>,
    pub term_target_drift: Vec<f64>,
    pub term_sigma_drift: Vec<f64>,
    /// Finite-difference estimate of `Γ̇` from the recorded `Γ` series.
    pub gamma_dot_numeric: Vec<f64>,
}

impl TrackingTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn analytic_sum(&self, i: usize) -> f64 {
        self.term_contraction[i] + self.term_target_drift[i] + self.term_sigma_drift[i]
    }

    /// Indices where the five-point stencil was used for `gamma_dot_numeric`.
    pub fn interior(&self) -> std::ops::Range<usize> {
        2..self.len().saturating_sub(2)
    }

    fn window(&self, from: f64) -> impl Iterator<Item = f64> + '_ {
        self.times
            .iter()
            .zip(&self.gamma)
            .filter(move |(t, _)| **t >= from)
            .map(|(_, g)| *g)
    }

    /// Time average of `Γ` over samples with `t >= from`.
    pub fn mean_gamma(&self, from: f64) -> f64 {
        let (sum, count) = self.window(from).fold((0.0, 0usize), |(s, c), g| (s + g, c + 1));
        sum / count.max(1) as f64
    }

    pub fn max_gamma(&self, from: f64) -> f64 {
        self.window(from).fold(f64::NEG_INFINITY, f64::max)
    }

    pub const CSV_COLUMNS: [&'static str; 6] = [
        "t",
        "gamma",
        "term_contraction",
        "term_target_drift",
        "term_sigma_drift",
        "gamma_dot_numeric",
    ];

    /// Rows in the order of [`Self::CSV_COLUMNS`].
    pub fn csv_rows(&self) -> impl Iterator<Item = [f64; 6]> + '_ {
        (0..self.len()).map(move |i| {
            [
                self.times[i],
                self.gamma[i],
                self.term_contraction[i],
                self.term_target_drift[i],
                self.term_sigma_drift[i],
                self.gamma_dot_numeric[i],
            ]
        })
    }
}

/// Integrates the gradient flow with fixed-step RK4 and records the error,
/// `Γ`, the analytic terms, and a finite-difference `Γ̇`.
pub fn simulate_tracking(s: &TrackingScenario) -> Result<TrackingTrace> {
    let dt = s.validate()?;
    let d = s.dim();
    let steps = (s.horizon / dt).round().max(1.0) as usize;
    let constant_chol = match s.drift_sigma {
        None => Some(Cholesky::new(&s.sigma)?),
        Some(_) => None,
    };

    let flow = |t: f64, w: &[f64]| -> Vec<f64> {
        let sigma = s.sigma_at(t);
        let sw = sigma.matvec(w).expect("dimensions validated");
        let b = s.signal.value(t);
        sw.iter().zip(&b).map(|(x, y)| -2.0 * x + 2.0 * y).collect()
    };

    let mut trace = TrackingTrace::default();
    let mut w = s.w0.clone().unwrap_or_else(|| vec![0.0; d]);
    for step in 0..=steps {
        let t = step as f64 * dt;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                step,
                what: "non-finite readout weights".into(),
            });
        }
        let sigma = s.sigma_at(t);
        let owned;
        let chol = match &constant_chol {
            Some(c) => c,
            None => {
                owned = Cholesky::new(&sigma).map_err(|_| Error::Divergence {
                    step,
                    what: "Σ(t) lost positive definiteness".into(),
                })?;
                &owned
            }
        };
        let b = s.signal.value(t);
        let w_star = chol.solve(&b)?;
        let e: Vec<f64> = w.iter().zip(&w_star).map(|(a, b)| a - b).collect();
        let sigma_dot = s.sigma_dot_at(t);
        let terms = gamma_dot_with(chol, &sigma, sigma_dot.as_ref(), &e, &b, &s.signal.derivative(t))?;

        trace.times.push(t);
        trace.gamma.push(dot(&e, &e));
        trace.term_contraction.push(terms.contraction);
        trace.term_target_drift.push(terms.target_drift);
        trace.term_sigma_drift.push(terms.representation_drift);
        trace.w.push(w.clone());
        trace.w_star.push(w_star);
        trace.e.push(e);

        if step == steps {
            break;
        }
        let k1 = flow(t, &w);
        let w2: Vec<f64> = w.iter().zip(&k1).map(|(x, k)| x + 0.5 * dt * k).collect();
        let k2 = flow(t + 0.5 * dt, &w2);
        let w3: Vec<f64> = w.iter().zip(&k2).map(|(x, k)| x + 0.5 * dt * k).collect();
        let k3 = flow(t + 0.5 * dt, &w3);
        let w4: Vec<f64> = w.iter().zip(&k3).map(|(x, k)| x + dt * k).collect();
        let k4 = flow(t + dt, &w4);
        for i in 0..d {
            w[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    trace.gamma_dot_numeric = finite_difference(&trace.gamma, dt);
    Ok(trace)
}

/// Five-point centered differences in the interior, three-point centered
/// next to the ends, second-order one-sided at the ends.
fn finite_difference(g: &[f64], h: f64) -> Vec<f64> {
    let n = g.len();
    let mut out = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let s = (g[1] - g[0]) / h;
            out = vec![s, s];
        }
        return out;
    }
    for i in 0..n {
        out[i] = if i >= 2 && i + 2 < n {
            (-g[i + 2] + 8.0 * g[i + 1] - 8.0 * g[i - 1] + g[i - 2]) / (12.0 * h)
        } else if i >= 1 && i + 1 < n {
            (g[i + 1] - g[i - 1]) / (2.0 * h)
        } else if i == 0 {
            (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h)
        } else {
            (3.0 * g[n - 1] - 4.0 * g[n - 2] + g[n - 3]) / (2.0 * h)
        };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionBound {
    /// Weakest contraction rate over unit errors.
    pub lambda_min: f64,
    /// Its ceiling for a fixed trace, reached only by isotropic `Σ`.
    pub trace_over_d: f64,
}

pub fn min_contraction_bound(sigma: &Matrix) -> Result<ContractionBound> {
    let eig = sym_eigendecomp(sigma)?;
    if eig.lambda_min() <= 0.0 {
        return Err(Error::Singular(format!(
            "Σ must be positive definite (λ_min = {:.3e})",
            eig.lambda_min()
        )));
    }
    Ok(ContractionBound {
        lambda_min: eig.lambda_min(),
        trace_over_d: sigma.trace() / sigma.rows() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftBound {
    /// `|eᵀ Σ⁻¹ ḃ|` with `ḃ = Σ ẇ*`.
    pub lhs: f64,
    /// `κ(Σ) ‖e‖`.
    pub bound: f64,
}

/// Target-drift magnitude against its condition-number bound, for a unit
/// optimum velocity `ẇ*`.
pub fn drift_term_bound(sigma: &Matrix, e: &[f64], w_star_dot_unit: &[f64]) -> Result<DriftBound> {
    let len = norm(w_star_dot_unit);
    if (len - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("ẇ* must be a unit vector (norm {len})")));
    }
    let chol = Cholesky::new(sigma)?;
    let kappa = condition_number_of(&sym_eigendecomp(sigma)?)?;
    let b_dot = sigma.matvec(w_star_dot_unit)?;
    let lhs = dot(&chol.solve(e)?, &b_dot).abs();
    Ok(DriftBound {
        lhs,
        bound: kappa * norm(e),
    })
}

/// Stein residual `r(φ) = φ + Σ ∇log p(φ)`.
///
/// The Gaussian case uses `p = N(0, Σ)` for any SPD `Σ`. The other laws are
/// products of zero-mean coordinates whose variances are the diagonal of
/// `Σ`, which must therefore be diagonal. At the Laplace kink the
/// symmetric subgradient 0 is used.
pub fn stein_residual(dist: Distribution, sigma: &Matrix, phi: &[f64]) -> Result<Vec<f64>> {
    let d = sigma.rows();
    if phi.len() != d || !sigma.is_square() {
        return Err(Error::Dimension(format!(
            "φ has length {}, Σ is {:?}",
            phi.len(),
            sigma.shape()
        )));
    }
    if dist == Distribution::Gaussian {
        let x = Cholesky::new(sigma)?.solve(phi)?;
        let sx = sigma.matvec(&x)?;
        return Ok(phi.iter().zip(&sx).map(|(p, s)| p - s).collect());
    }
    let scale = sigma.max_abs();
    for i in 0..d {
        for j in 0..d {
            if i != j && sigma[(i, j)].abs() > 1e-12 * scale {
                return Err(Error::Domain(format!(
                    "{dist} residual needs a diagonal Σ (entry ({i}, {j}) is {})",
                    sigma[(i, j)]
                )));
            }
        }
    }
    (0..d)
        .map(|i| {
            let var = sigma[(i, i)];
            if var <= 0.0 {
                return Err(Error::Singular(format!("Σ[{i},{i}] = {var}")));
            }
            let s = dist.scale_for_std(var.sqrt());
            let x = phi[i];
            let score = match dist {
                Distribution::Gaussian => unreachable!(),
                Distribution::Laplace => -x.signum() * f64::from(x != 0.0) / s,
                Distribution::Logistic => -(x / (2.0 * s)).tanh() / s,
                Distribution::Uniform => {
                    if x.abs() >= s {
                        return Err(Error::Domain(format!(
                            "φ[{i}] = {x} is outside the open support (−{s}, {s})"
                        )));
                    }
                    0.0
                }
            };
            Ok(x + var * score)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftVarianceEstimate {
    pub dist: Distribution,
    pub mean: f64,
    /// Sample variance of `eᵀΣ⁻¹ y(φ) r(φ)`.
    pub variance: f64,
    /// Standard error of `variance`.
    pub std_error: f64,
    pub n: usize,
}

/// Monte Carlo variance of the residual drift contribution
/// `eᵀΣ⁻¹ y(φ) r(φ)` with `y(φ) = target_weightsᵀ φ`, for embeddings drawn
/// from each law with covariance `sigma_scale² I`.
///
/// The error direction `e` is a unit vector drawn once from `rng`; each law
/// then samples from its own child stream, so results do not depend on the
/// order of `dists`.
pub fn drift_variance_experiment(
    dists: &[Distribution],
    sigma_scale: f64,
    d: usize,
    n_mc: usize,
    target_weights: &[f64],
    rng: &mut Rng,
) -> Result<Vec<DriftVarianceEstimate>> {
    if n_mc < 1000 {
        return Err(Error::Config(format!(
            "n_mc = {n_mc} is too small to compare variances (need >= 1000)"
        )));
    }
    if target_weights.len() != d {
        return Err(Error::Dimension(format!(
            "target weights have length {}, expected {d}",
            target_weights.len()
        )));
    }
    if !(sigma_scale > 0.0 && sigma_scale.is_finite()) {
        return Err(Error::Config("sigma_scale must be positive".into()));
    }
    let sigma = Matrix::identity(d).scale(sigma_scale * sigma_scale);
    let chol = Cholesky::new(&sigma)?;
    let mut e = rng.normal_vec(d);
    let len = norm(&e);
    e.iter_mut().for_each(|x| *x /= len);
    let sinv_e = chol.solve(&e)?;

    dists
        .iter()
        .map(|&dist| {
            let mut local = rng.child(dist as u64);
            let mut moments = Moments::default();
            let mut phi = vec![0.0; d];
            for _ in 0..n_mc {
                phi.iter_mut().for_each(|x| *x = dist.sample(sigma_scale, &mut local));
                let y = dot(target_weights, &phi);
                let r = stein_residual(dist, &sigma, &phi)?;
                moments.push(y * dot(&sinv_e, &r));
            }
            let (mean, variance, std_error) = moments.finish();
            Ok(DriftVarianceEstimate {
                dist,
                mean,
                variance,
                std_error,
                n: n_mc,
            })
        })
        .collect()
}

#[derive(Default)]
struct Moments {
    values: Vec<f64>,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.values.push(x);
    }

    /// Mean, unbiased variance, and the standard error of the variance.
    fn finish(&self) -> (f64, f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let (mut m2, mut m4) = (0.0, 0.0);
        for &x in &self.values {
            let c = (x - mean) * (x - mean);
            m2 += c;
            m4 += c * c;
        }
        let variance = m2 / (n - 1.0);
        let m4 = m4 / n;
        let pop_var = m2 / n;
        let se = ((m4 - pop_var * pop_var).max(0.0) / n).sqrt();
        (mean, variance, se)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimum_hand_cases() {
        assert_eq!(
            instantaneous_optimum(&Matrix::identity(2), &[1.0, 2.0]).unwrap(),
            vec![1.0, 2.0]
        );
        let w = instantaneous_optimum(&Matrix::from_diag(&[2.0, 4.0]), &[2.0, 4.0]).unwrap();
        assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-15));
        assert!(matches!(
            instantaneous_optimum(&Matrix::from_diag(&[1.0, 0.0]), &[1.0, 1.0]),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn terms_at_equilibrium_and_unit_case() {
        let t = gamma_dot_analytic(&Matrix::identity(3), None, &[0.0; 3], &[1.0, 0.0, 2.0], &[1.0; 3]).unwrap();
        assert_eq!(t.sum(), 0.0);
        let u = [0.6, 0.8];
        let t = gamma_dot_analytic(&Matrix::identity(2), None, &u, &[0.3, 0.1], &u).unwrap();
        assert!((t.contraction + 4.0).abs() < 1e-15);
        assert!((t.target_drift + 2.0).abs() < 1e-15);
        assert_eq!(t.representation_drift, 0.0);
    }

    #[test]
    fn contraction_bound_hand_cases() {
        let b = min_contraction_bound(&Matrix::from_diag(&[1.5, 0.5])).unwrap();
        assert!((b.lambda_min - 0.5).abs() < 1e-15);
        assert!((b.trace_over_d - 1.0).abs() < 1e-15);
        let iso = min_contraction_bound(&Matrix::identity(4).scale(0.75)).unwrap();
        assert!((iso.lambda_min - iso.trace_over_d).abs() < 1e-15);
    }

    #[test]
    fn drift_bound_aligned_and_orthogonal() {
        let e = [0.0, 2.0];
        let aligned = drift_term_bound(&Matrix::identity(2), &e, &[0.0, 1.0]).unwrap();
        assert!((aligned.lhs - 2.0).abs() < 1e-15);
        assert!((aligned.bound - 2.0).abs() < 1e-15);
        let ortho = drift_term_bound(&Matrix::from_diag(&[3.0, 1.0]), &e, &[1.0, 0.0]).unwrap();
        assert_eq!(ortho.lhs, 0.0);
        assert!(drift_term_bound(&Matrix::identity(2), &e, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn signal_values_and_derivatives() {
        let s = Signal::Piecewise {
            switch_times: vec![1.0, 2.0],
            values: vec![vec![0.0], vec![1.0], vec![2.0]],
        };
        assert_eq!(s.value(0.5), vec![0.0]);
        assert_eq!(s.value(1.0), vec![1.0]);
        assert_eq!(s.value(7.0), vec![2.0]);
        assert_eq!(s.derivative(1.5), vec![0.0]);
        let sin = Signal::Sinusoidal {
            b0: vec![1.0],
            amplitude: 2.0,
            omega: 3.0,
            direction: vec![1.0],
        };
        assert!((sin.derivative(0.0)[0] - 6.0).abs() < 1e-15);
    }

    #[test]
    fn scenario_validation() {
        let mut s = TrackingScenario::new(Matrix::from_diag(&[1.0, 0.0]), Signal::constant(vec![1.0, 1.0]), 1.0);
        assert!(matches!(simulate_tracking(&s), Err(Error::Singular(_))));
        s.sigma = Matrix::identity(2);
        s.w0 = Some(vec![1.0]);
        assert!(matches!(simulate_tracking(&s), Err(Error::Dimension(_))));
        s.w0 = None;
        s.dt = Some(-1.0);
        assert!(simulate_tracking(&s).is_err());
        s.dt = None;
        s.drift_sigma = Some(SigmaDrift {
            delta: Matrix::identity(2).scale(2.0),
            omega: 1.0,
        });
        assert!(matches!(simulate_tracking(&s), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_residual_outside_support_is_domain_error() {
        let sigma = Matrix::identity(2);
        assert!(matches!(
            stein_residual(Distribution::Uniform, &sigma, &[0.0, 2.0]),
            Err(Error::Domain(_))
        ));
        assert_eq!(
            stein_residual(Distribution::Uniform, &sigma, &[0.5, -1.0]).unwrap(),
            vec![0.5, -1.0]
        );
        let full = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert!(matches!(
            stein_residual(Distribution::Laplace, &full, &[0.1, 0.2]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn small_monte_carlo_rejected() {
        let err = drift_variance_experiment(&[Distribution::Gaussian], 1.0, 2, 999, &[1.0, 0.0], &mut Rng::new(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn five_point_stencil_is_exact_on_quartics() {
        let h = 0.1;
        let g: Vec<f64> = (0..20).map(|i| (i as f64 * h).powi(4)).collect();
        let d = finite_difference(&g, h);
        for (i, di) in d.iter().enumerate().take(18).skip(2) {
            let x = i as f64 * h;
            assert!((di - 4.0 * x.powi(3)).abs() < 1e-10);
        }
    }
}
