use isogauss_core::autodiff::Tape;
use isogauss_core::linalg::{dot, Matrix};
use isogauss_core::sigreg::{SigregConfig, Sketch};
use isogauss_core::train::{
    build_loss, make_synthetic_dataset, permute_labels, train_nonstationary, Aux, DatasetConfig, Mlp, Optimizer,
    OptimizerConfig, OptimizerKind, TrainConfig,
};
use isogauss_core::{Error, Rng};

fn small_data(seed: u64) -> DatasetConfig {
    DatasetConfig {
        n_classes: 4,
        n_per_class: 60,
        input_dim: 8,
        cluster_separation: 4.0,
        noise_std: 0.5,
        seed,
    }
}

fn small_train() -> TrainConfig {
    TrainConfig {
        hidden: vec![16, 16],
        batch_size: 32,
        total_steps: 120,
        shuffle_period: 40,
        log_interval: 10,
        eval_size: 64,
        optimizer: OptimizerConfig {
            lr: 3e-3,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Nearest-centroid rule, which is a linear classifier.
fn centroid_accuracy(train: &DatasetConfig, test_rows: std::ops::Range<usize>) -> f64 {
    let data = make_synthetic_dataset(train).unwrap();
    let per = train.n_per_class;
    let d = train.input_dim;
    let fit: Vec<usize> = (0..data.len()).filter(|i| !test_rows.contains(&(i % per))).collect();
    let mut centroids = vec![vec![0.0; d]; train.n_classes];
    let mut counts = vec![0.0; train.n_classes];
    for &i in &fit {
        let c = data.labels[i];
        counts[c] += 1.0;
        centroids[c]
            .iter_mut()
            .zip(data.inputs.row(i))
            .for_each(|(a, x)| *a += x);
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|a| *a /= n);
    }
    let test: Vec<usize> = (0..data.len()).filter(|i| test_rows.contains(&(i % per))).collect();
    let hits = test
        .iter()
        .filter(|&&i| {
            let x = data.inputs.row(i);
            let score = |c: &Vec<f64>| 2.0 * dot(c, x) - dot(c, c);
            let best = (0..train.n_classes)
                .max_by(|&a, &b| score(&centroids[a]).total_cmp(&score(&centroids[b])))
                .unwrap();
            best == data.labels[i]
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn separable_data_is_linearly_separable() {
    let cfg = DatasetConfig {
        n_classes: 2,
        n_per_class: 200,
        cluster_separation: 10.0,
        noise_std: 0.1,
        ..small_data(1)
    };
    assert_eq!(centroid_accuracy(&cfg, 150..200), 1.0);
}

#[test]
fn zero_separation_is_chance() {
    let cfg = DatasetConfig {
        n_classes: 4,
        n_per_class: 1000,
        cluster_separation: 0.0,
        noise_std: 1.0,
        ..small_data(2)
    };
    let acc = centroid_accuracy(&cfg, 500..1000);
    assert!((acc - 0.25).abs() < 0.05, "{acc}");
}

#[test]
fn permutation_preserves_class_histogram() {
    let data = make_synthetic_dataset(&small_data(3)).unwrap();
    let (new, perm) = permute_labels(&data.labels, 4, &mut Rng::new(0)).unwrap();
    assert!(perm.iter().enumerate().any(|(i, &p)| i != p));
    for c in 0..4 {
        assert_eq!(new.iter().filter(|&&y| y == c).count(), 60);
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut opt = Optimizer::new(OptimizerConfig {
        lr: 1e-2,
        ..Default::default()
    })
    .unwrap();
    let mut p = vec![Matrix::scalar(1.0)];
    for _ in 0..500 {
        let g = Matrix::scalar(2.0 * p[0].as_scalar());
        opt.step(&mut p, &[g]).unwrap();
    }
    assert!(p[0].as_scalar().abs() < 1e-2, "{}", p[0].as_scalar());
}

#[test]
fn radam_eventually_rectifies() {
    let cfg = OptimizerConfig {
        kind: OptimizerKind::Radam,
        lr: 1e-2,
        ..Default::default()
    };
    let mut opt = Optimizer::new(cfg).unwrap();
    let mut p = vec![Matrix::scalar(1.0)];
    for _ in 0..2000 {
        let g = Matrix::scalar(2.0 * p[0].as_scalar());
        opt.step(&mut p, &[g]).unwrap();
    }
    assert!(p[0].as_scalar().abs() < 1e-2);
}

#[test]
fn stationary_training_fits_separable_data() {
    let cfg = TrainConfig {
        total_steps: 300,
        shuffle_period: 0,
        log_interval: 50,
        ..small_train()
    };
    let rows = train_nonstationary(&cfg, &small_data(4), &Rng::new(0))
        .unwrap()
        .into_result()
        .unwrap();
    assert!(rows.last().unwrap().train_accuracy > 0.95);
    assert!(rows.iter().all(|r| !r.shuffle_event));
    assert_eq!(rows.last().unwrap().step, 300);
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = small_train();
    cfg.aux = Aux::Sigreg(SigregConfig::default());
    let a = train_nonstationary(&cfg, &small_data(5), &Rng::new(3))
        .unwrap()
        .into_result()
        .unwrap();
    let b = train_nonstationary(&cfg, &small_data(5), &Rng::new(3))
        .unwrap()
        .into_result()
        .unwrap();
    assert_eq!(a, b);
    let c = train_nonstationary(&cfg, &small_data(5), &Rng::new(4))
        .unwrap()
        .into_result()
        .unwrap();
    assert_ne!(a, c);
}

#[test]
fn shuffles_change_targets_but_not_features() {
    let with = small_train();
    let without = TrainConfig {
        shuffle_period: 0,
        ..small_train()
    };
    let a = train_nonstationary(&with, &small_data(6), &Rng::new(1))
        .unwrap()
        .into_result()
        .unwrap();
    let b = train_nonstationary(&without, &small_data(6), &Rng::new(1))
        .unwrap()
        .into_result()
        .unwrap();
    let ra = a.iter().find(|r| r.step == 40).unwrap();
    let rb = b.iter().find(|r| r.step == 40).unwrap();
    assert!(ra.shuffle_event && !rb.shuffle_event);
    assert_eq!(ra.effective_rank, rb.effective_rank);
    assert_eq!(ra.sigreg_probe, rb.sigreg_probe);
    assert_eq!(ra.top2_explained, rb.top2_explained);
    assert_eq!(ra.dormant_fraction, rb.dormant_fraction);
    assert_ne!(ra.task_loss, rb.task_loss);
    assert_eq!(a.iter().filter(|r| r.shuffle_event).count(), 2);
}

#[test]
fn logged_parts_add_up_to_the_optimized_scalar() {
    let data = make_synthetic_dataset(&small_data(7)).unwrap();
    let model = Mlp::new(&[8, 16, 16, 4], &mut Rng::new(0)).unwrap();
    for aux in [
        Aux::None,
        Aux::Sigreg(SigregConfig {
            lambda: 0.2,
            ..Default::default()
        }),
        Aux::Whitening {
            weight: 0.7,
            sigma: 1.0,
        },
    ] {
        let cfg = TrainConfig {
            aux: aux.clone(),
            ..small_train()
        };
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &data.inputs).unwrap();
        let mut sketch = match &aux {
            Aux::Sigreg(s) => Some(Sketch::new(s.clone()).unwrap()),
            _ => None,
        };
        let mut rng = Rng::new(1);
        let parts = build_loss(
            &mut tape,
            &fwd,
            &data.labels,
            &cfg,
            sketch.as_mut().map(|s| (s, &mut rng)),
        )
        .unwrap();
        let task = tape.scalar_value(parts.task);
        let aux_v = parts.aux.map_or(0.0, |a| tape.scalar_value(a));
        let total = tape.scalar_value(parts.total);
        assert!((task + aux.weight() * aux_v - total).abs() < 1e-10);
    }
}

#[test]
fn logged_rows_satisfy_the_loss_decomposition() {
    let mut cfg = small_train();
    cfg.aux = Aux::Whitening {
        weight: 0.3,
        sigma: 1.0,
    };
    let rows = train_nonstationary(&cfg, &small_data(8), &Rng::new(0))
        .unwrap()
        .into_result()
        .unwrap();
    for r in &rows {
        assert!((r.task_loss + 0.3 * r.aux_loss - r.total_loss).abs() < 1e-10);
        assert!((0.0..=1.0).contains(&r.train_accuracy));
    }
    assert!(rows.windows(2).all(|w| w[0].step < w[1].step));
}

#[test]
fn divergence_keeps_the_rows_logged_so_far() {
    let mut cfg = small_train();
    cfg.optimizer = OptimizerConfig {
        kind: OptimizerKind::Sgd,
        lr: 1.0,
        ..Default::default()
    };
    // A quartic penalty under a large fixed step overshoots without bound.
    cfg.aux = Aux::Whitening {
        weight: 1e3,
        sigma: 1.0,
    };
    cfg.log_interval = 1;
    let run = train_nonstationary(&cfg, &small_data(9), &Rng::new(0)).unwrap();
    match run.failure {
        Some(Error::Divergence { step, .. }) => {
            assert!(step > 0);
            assert!(!run.rows.is_empty());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}
