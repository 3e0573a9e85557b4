//! Non-stationary supervised training: an MLP classifier on clustered data
//! whose labels are periodically permuted, optionally regularized on its
//! penultimate features, with representation metrics logged along the way.

mod data;
mod mlp;
mod optim;

pub use data::{
    invert_permutation, make_synthetic_dataset, permute_labels, sample_permutation, Dataset, DatasetConfig,
};
pub use mlp::{argmax_rows, Forward, Mlp};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::diagnostics::{dormant_fraction_layers, effective_rank, DiagnosticsConfig};
use crate::error::{Error, Result};
use crate::linalg::{norm, top_pca, Matrix};
use crate::rng::{sample_unit_directions, Rng};
use crate::sigreg::{sigreg_value, whitening_loss, whitening_value, SigregConfig, Sketch};
use crate::table::{fmt_f64, parse_f64, Table};

/// Auxiliary loss on the tapped features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aux {
    None,
    Sigreg(SigregConfig),
    Whitening {
        weight: f64,
        #[serde(default = "one")]
        sigma: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Aux {
    pub fn weight(&self) -> f64 {
        match self {
            Aux::None => 0.0,
            Aux::Sigreg(cfg) => cfg.lambda,
            Aux::Whitening { weight, .. } => *weight,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Aux::None => "none",
            Aux::Sigreg(_) => "sigreg",
            Aux::Whitening { .. } => "whitening",
        }
    }
}

/// Which view of the last hidden layer counts as the representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTap {
    /// Affine output before the ReLU.
    PreActivation,
    PostActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub total_steps: usize,
    /// Steps between label permutations; 0 keeps the labels fixed.
    pub shuffle_period: usize,
    pub log_interval: usize,
    /// Size of the fixed subset on which metrics are evaluated.
    pub eval_size: usize,
    pub aux: Aux,
    pub feature_tap: FeatureTap,
    pub diagnostics: DiagnosticsConfig,
    /// Configuration of the regularizer loss logged as a probe.
    pub probe: SigregConfig,
    /// Clip the global gradient norm to this value when set.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            optimizer: OptimizerConfig::default(),
            batch_size: 256,
            total_steps: 6000,
            shuffle_period: 2000,
            log_interval: 100,
            eval_size: 512,
            aux: Aux::Sigreg(SigregConfig::default()),
            feature_tap: FeatureTap::PreActivation,
            diagnostics: DiagnosticsConfig::default(),
            probe: SigregConfig::default(),
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.diagnostics.validate()?;
        self.probe.validate()?;
        let fail = |msg: &str| Err(Error::Config(format!("train.{msg}")));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden must list at least one positive width");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        if self.total_steps == 0 {
            return fail("total_steps must be positive");
        }
        if self.shuffle_period != 0 && self.shuffle_period >= self.total_steps {
            return fail("shuffle_period must be smaller than total_steps");
        }
        if self.log_interval == 0 {
            return fail("log_interval must be positive");
        }
        if self.eval_size < 2 {
            return fail("eval_size must be at least 2");
        }
        match &self.aux {
            Aux::None => {}
            Aux::Sigreg(cfg) => cfg.validate()?,
            Aux::Whitening { weight, sigma } => {
                if !(*weight >= 0.0 && weight.is_finite() && *sigma > 0.0 && sigma.is_finite()) {
                    return fail("aux whitening needs weight >= 0 and sigma > 0");
                }
            }
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail("max_grad_norm must be positive");
            }
        }
        Ok(())
    }

    pub fn is_shuffle_step(&self, step: usize) -> bool {
        self.shuffle_period != 0 && step > 0 && step.is_multiple_of(self.shuffle_period)
    }
}

/// One logged evaluation on the fixed metrics subset.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub task_loss: f64,
    /// Unweighted auxiliary loss; 0 without an auxiliary term.
    pub aux_loss: f64,
    /// `task_loss + weight · aux_loss`.
    pub total_loss: f64,
    pub train_accuracy: f64,
    pub effective_rank: usize,
    pub dormant_fraction: f64,
    /// Probe loss against directions fixed for the whole run.
    pub sigreg_probe: f64,
    /// Probe loss against directions redrawn at every evaluation.
    pub sigreg_probe_resampled: f64,
    pub top2_explained: (f64, f64),
    pub shuffle_event: bool,
}

impl MetricsRow {
    pub const CSV_COLUMNS: [&'static str; 12] = [
        "step",
        "task_loss",
        "aux_loss",
        "total_loss",
        "train_accuracy",
        "effective_rank",
        "dormant_fraction",
        "sigreg_probe",
        "sigreg_probe_resampled",
        "top1_explained",
        "top2_explained",
        "shuffle_event",
    ];

    pub fn to_table(rows: &[MetricsRow]) -> Table {
        let mut t = Table::new(&Self::CSV_COLUMNS);
        for r in rows {
            t.push(vec![
                r.step.to_string(),
                fmt_f64(r.task_loss),
                fmt_f64(r.aux_loss),
                fmt_f64(r.total_loss),
                fmt_f64(r.train_accuracy),
                r.effective_rank.to_string(),
                fmt_f64(r.dormant_fraction),
                fmt_f64(r.sigreg_probe),
                fmt_f64(r.sigreg_probe_resampled),
                fmt_f64(r.top2_explained.0),
                fmt_f64(r.top2_explained.1),
                u8::from(r.shuffle_event).to_string(),
            ]);
        }
        t
    }

    pub fn from_table(t: &Table) -> Result<Vec<MetricsRow>> {
        if t.header != Self::CSV_COLUMNS {
            return Err(Error::Io(format!("unexpected metrics header {:?}", t.header)));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Io(format!("not a count: '{s}'")));
        t.rows
            .iter()
            .map(|r| {
                Ok(MetricsRow {
                    step: int(&r[0])?,
                    task_loss: parse_f64(&r[1])?,
                    aux_loss: parse_f64(&r[2])?,
                    total_loss: parse_f64(&r[3])?,
                    train_accuracy: parse_f64(&r[4])?,
                    effective_rank: int(&r[5])?,
                    dormant_fraction: parse_f64(&r[6])?,
                    sigreg_probe: parse_f64(&r[7])?,
                    sigreg_probe_resampled: parse_f64(&r[8])?,
                    top2_explained: (parse_f64(&r[9])?, parse_f64(&r[10])?),
                    shuffle_event: int(&r[11])? != 0,
                })
            })
            .collect()
    }
}

/// Metrics logged before the run ended, and the error that ended it early.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub rows: Vec<MetricsRow>,
    pub failure: Option<Error>,
}

impl TrainRun {
    pub fn into_result(self) -> Result<Vec<MetricsRow>> {
        match self.failure {
            None => Ok(self.rows),
            Some(e) => Err(e),
        }
    }
}

/// The scalar being optimized, split into its parts.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub task: Var,
    pub aux: Option<Var>,
    pub total: Var,
}

/// Builds `cross-entropy + weight · aux(features)` on the tape.
pub fn build_loss(
    tape: &mut Tape,
    fwd: &Forward,
    labels: &[usize],
    cfg: &TrainConfig,
    sketch: Option<(&mut Sketch, &mut Rng)>,
) -> Result<LossParts> {
    let task = tape.cross_entropy(fwd.logits, labels)?;
    let features = tapped(fwd, cfg.feature_tap);
    let aux = match (&cfg.aux, sketch) {
        (Aux::None, _) => None,
        (Aux::Sigreg(_), Some((sketch, rng))) => Some(sketch.loss(tape, features, rng)?),
        (Aux::Sigreg(_), None) => {
            return Err(Error::Config("sigreg auxiliary loss needs a sketch".into()));
        }
        (Aux::Whitening { sigma, .. }, _) => Some(whitening_loss(tape, features, *sigma)?),
    };
    let total = match aux {
        None => task,
        Some(a) => {
            let weighted = tape.scale(a, cfg.aux.weight());
            tape.add(task, weighted)?
        }
    };
    Ok(LossParts { task, aux, total })
}

fn tapped(fwd: &Forward, tap: FeatureTap) -> Var {
    match tap {
        FeatureTap::PreActivation => *fwd.pre.last().expect("at least one hidden layer"),
        FeatureTap::PostActivation => *fwd.post.last().expect("at least one hidden layer"),
    }
}

/// Independent random streams of one run.
struct Streams {
    init: Rng,
    eval: Rng,
    batches: Rng,
    labels: Rng,
    sketch: Rng,
    probe_fixed: Rng,
    probe_fresh: Rng,
}

impl Streams {
    fn new(rng: &Rng) -> Self {
        Self {
            init: rng.child(0),
            eval: rng.child(1),
            batches: rng.child(2),
            labels: rng.child(3),
            sketch: rng.child(4),
            probe_fixed: rng.child(5),
            probe_fresh: rng.child(6),
        }
    }
}

/// Trains for `total_steps` minibatch steps, permuting labels at every
/// multiple of `shuffle_period` (before that step's update) and logging
/// metrics every `log_interval` steps, at every permutation, and at the end.
///
/// Labels change only the targets: the features evaluated at a shuffle step
/// are the ones the previous update produced.
pub fn train_nonstationary(cfg: &TrainConfig, data_cfg: &DatasetConfig, rng: &Rng) -> Result<TrainRun> {
    cfg.validate()?;
    let data = make_synthetic_dataset(data_cfg)?;
    let mut streams = Streams::new(rng);

    let mut sizes = vec![data_cfg.input_dim];
    sizes.extend(&cfg.hidden);
    sizes.push(data.n_classes);
    let mut model = Mlp::new(&sizes, &mut streams.init)?;
    let mut optimizer = Optimizer::new(cfg.optimizer.clone())?;
    let mut sketch = match &cfg.aux {
        Aux::Sigreg(s) => Some(Sketch::new(s.clone())?),
        _ => None,
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    streams.eval.shuffle(&mut order);
    let eval_idx: Vec<usize> = order.into_iter().take(cfg.eval_size).collect();
    let eval_inputs = data.inputs.select_rows(&eval_idx);
    let width = *cfg.hidden.last().expect("validated");
    let probe_dirs = sample_unit_directions(width, cfg.probe.k_projections, &mut streams.probe_fixed)?;

    let mut labels = data.labels.clone();
    let mut rows = Vec::new();
    let aux_dirs = match &cfg.aux {
        Aux::Sigreg(s) => Some(sample_unit_directions(
            width,
            s.k_projections,
            &mut streams.probe_fixed,
        )?),
        _ => None,
    };
    let fixed = FixedDirections {
        probe: probe_dirs,
        aux: aux_dirs,
    };
    let log_row = |model: &Mlp, labels: &[usize], step: usize, shuffle_event: bool, fresh: &mut Rng| {
        let eval_labels: Vec<usize> = eval_idx.iter().map(|&i| labels[i]).collect();
        evaluate(
            model,
            &eval_inputs,
            &eval_labels,
            cfg,
            &fixed,
            fresh,
            step,
            shuffle_event,
        )
    };

    let result = (|| -> Result<()> {
        for step in 0..cfg.total_steps {
            let shuffle = cfg.is_shuffle_step(step);
            if shuffle {
                labels = permute_labels(&labels, data.n_classes, &mut streams.labels)?.0;
            }
            if shuffle || step % cfg.log_interval == 0 {
                rows.push(log_row(&model, &labels, step, shuffle, &mut streams.probe_fresh)?);
            }

            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| streams.batches.below(data.len())).collect();
            let inputs = data.inputs.select_rows(&idx);
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &inputs)?;
            let parts = build_loss(
                &mut tape,
                &fwd,
                &batch_labels,
                cfg,
                sketch.as_mut().map(|s| (s, &mut streams.sketch)),
            )?;
            let loss = tape.scalar_value(parts.total);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: "non-finite training loss".into(),
                });
            }
            let grads = tape.backward(parts.total)?;
            let mut g: Vec<Matrix> = fwd.params.iter().map(|&p| grads.wrt(p)).collect();
            if let Some(limit) = cfg.max_grad_norm {
                clip_global_norm(&mut g, limit);
            }
            optimizer.step(&mut model.params, &g).map_err(|e| match e {
                Error::Divergence { what, .. } => Error::Divergence { step, what },
                other => other,
            })?;
        }
        rows.push(log_row(
            &model,
            &labels,
            cfg.total_steps,
            false,
            &mut streams.probe_fresh,
        )?);
        Ok(())
    })();

    Ok(TrainRun {
        rows,
        failure: result.err(),
    })
}

fn clip_global_norm(grads: &mut [Matrix], limit: f64) {
    let total = grads.iter().map(|g| norm(g.data()).powi(2)).sum::<f64>().sqrt();
    if total > limit {
        let s = limit / total;
        for g in grads {
            *g = g.scale(s);
        }
    }
}

/// Directions held fixed over a run so logged losses are comparable.
struct FixedDirections {
    probe: Matrix,
    aux: Option<Matrix>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &Mlp,
    inputs: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
    fixed: &FixedDirections,
    fresh: &mut Rng,
    step: usize,
    shuffle_event: bool,
) -> Result<MetricsRow> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, inputs)?;
    let task_loss = tape.cross_entropy(fwd.logits, labels)?;
    let task_loss = tape.scalar_value(task_loss);
    let features = tape.value(tapped(&fwd, cfg.feature_tap)).clone();
    if !task_loss.is_finite() || !features.is_finite() {
        return Err(Error::Divergence {
            step,
            what: "non-finite features or loss at evaluation".into(),
        });
    }
    let aux_loss = match &cfg.aux {
        Aux::None => 0.0,
        Aux::Sigreg(s) => sigreg_value(&features, s, fixed.aux.as_ref().expect("drawn for sigreg"))?,
        Aux::Whitening { sigma, .. } => whitening_value(&features, *sigma)?,
    };
    let hits = argmax_rows(tape.value(fwd.logits))
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    let post: Vec<Matrix> = fwd.post.iter().map(|&v| tape.value(v).clone()).collect();
    let fresh_dirs = sample_unit_directions(features.cols(), cfg.probe.k_projections, fresh)?;
    let pca = top_pca(&features, features.cols().min(2))?;
    let ratio = |i: usize| pca.explained_variance_ratios.get(i).copied().unwrap_or(0.0);
    Ok(MetricsRow {
        step,
        task_loss,
        aux_loss,
        total_loss: task_loss + cfg.aux.weight() * aux_loss,
        train_accuracy: hits as f64 / labels.len() as f64,
        effective_rank: effective_rank(&features, cfg.diagnostics.delta)?.rank,
        dormant_fraction: dormant_fraction_layers(&post, cfg.diagnostics.tau)?.fraction,
        sigreg_probe: sigreg_value(&features, &cfg.probe, &fixed.probe)?,
        sigreg_probe_resampled: sigreg_value(&features, &cfg.probe, &fresh_dirs)?,
        top2_explained: (ratio(0), ratio(1)),
        shuffle_event,
    })
}

/// Normalized area under the accuracy curve: the trapezoid integral over
/// logged steps divided by the step span, so a constant accuracy `a`
/// scores `a`.
pub fn accuracy_auc(rows: &[MetricsRow]) -> f64 {
    match rows {
        [] => 0.0,
        [only] => only.train_accuracy,
        _ => {
            let area: f64 = rows
                .windows(2)
                .map(|w| 0.5 * (w[0].train_accuracy + w[1].train_accuracy) * (w[1].step - w[0].step) as f64)
                .sum();
            let span = (rows[rows.len() - 1].step - rows[0].step) as f64;
            if span > 0.0 {
                area / span
            } else {
                rows[0].train_accuracy
            }
        }
    }
}

/// Height of the fixed-direction probe after each label shuffle: the
/// largest value within `window` steps of the event minus the last value
/// logged before it.
pub fn post_shuffle_spikes(rows: &[MetricsRow], window: usize) -> Vec<f64> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.shuffle_event)
        .filter_map(|(i, event)| {
            let before = rows[..i].last()?.sigreg_probe;
            let peak = rows[i..]
                .iter()
                .take_while(|r| r.step <= event.step + window)
                .map(|r| r.sigreg_probe)
                .fold(f64::NEG_INFINITY, f64::max);
            Some(peak - before)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, acc: f64, probe: f64, shuffle: bool) -> MetricsRow {
        MetricsRow {
            step,
            task_loss: 0.0,
            aux_loss: 0.0,
            total_loss: 0.0,
            train_accuracy: acc,
            effective_rank: 1,
            dormant_fraction: 0.0,
            sigreg_probe: probe,
            sigreg_probe_resampled: probe,
            top2_explained: (0.5, 0.5),
            shuffle_event: shuffle,
        }
    }

    #[test]
    fn auc_of_constant_and_ramp() {
        let flat = [
            row(0, 0.4, 0.0, false),
            row(10, 0.4, 0.0, false),
            row(30, 0.4, 0.0, false),
        ];
        assert!((accuracy_auc(&flat) - 0.4).abs() < 1e-15);
        let ramp = [row(0, 0.0, 0.0, false), row(10, 1.0, 0.0, false)];
        assert!((accuracy_auc(&ramp) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spike_measured_from_pre_event_value() {
        let rows = [
            row(0, 0.0, 0.2, false),
            row(10, 0.0, 0.1, false),
            row(20, 0.0, 0.1, true),
            row(30, 0.0, 0.5, false),
            row(40, 0.0, 0.9, false),
        ];
        let spikes = post_shuffle_spikes(&rows, 10);
        assert_eq!(spikes.len(), 1);
        assert!((spikes[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn config_rejects_long_shuffle_period() {
        let cfg = TrainConfig {
            total_steps: 100,
            shuffle_period: 100,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn metrics_csv_round_trip() {
        let rows = vec![row(0, 0.25, 0.125, false), row(5, 1.0 / 3.0, 0.1, true)];
        let back = MetricsRow::from_table(&MetricsRow::to_table(&rows)).unwrap();
        assert_eq!(back, rows);
    }
}
