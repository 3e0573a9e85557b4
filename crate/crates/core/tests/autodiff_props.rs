use isogauss_core::autodiff::{check_gradient, Tape, Var};
use isogauss_core::linalg::{Cholesky, Matrix};
use isogauss_core::rng::sample_distribution;
use isogauss_core::{Distribution, Rng, Result};
use proptest::prelude::*;

/// A small random expression of a 3×2 input, reduced to a scalar. `code`
/// picks the unary op applied at each stage.
fn graph(tape: &mut Tape, x: Var, code: &[u8], mix: &Matrix) -> Result<Var> {
    let mut h = x;
    for &op in code {
        h = match op % 6 {
            0 => tape.square(h),
            1 => tape.cos(h),
            2 => tape.sin(h),
            3 => tape.scale(h, -0.7),
            4 => {
                let m = tape.constant(mix.clone());
                tape.matmul(h, m)?
            }
            _ => {
                let c = tape.col_mean(h);
                tape.sub_row(h, c)?
            }
        };
    }
    let s = tape.square(h);
    Ok(tape.mean(s))
}

fn gradient(x: &Matrix, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> Matrix {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v).unwrap();
    tape.backward(out).unwrap().wrt(v)
}

fn random_input(seed: u64) -> (Matrix, Matrix) {
    let mut rng = Rng::new(seed);
    let x = sample_distribution(Distribution::Gaussian, 1.0, 3, 2, &mut rng).unwrap();
    let mix = sample_distribution(Distribution::Gaussian, 0.8, 2, 2, &mut rng).unwrap();
    (x, mix)
}

#[test]
fn least_squares_gradient_vanishes_at_the_solution() {
    let mut rng = Rng::new(3);
    let a = sample_distribution(Distribution::Gaussian, 1.0, 40, 5, &mut rng).unwrap();
    let y = rng.normal_vec(40);
    // Normal equations AᵀA w = Aᵀy.
    let w = Cholesky::new(&a.matmul_tn(&a).unwrap())
        .unwrap()
        .solve(&a.transpose().matvec(&y).unwrap())
        .unwrap();
    let grad = gradient(&Matrix::column_vector(&w), |t, v| {
        let ac = t.constant(a.clone());
        let yc = t.constant(Matrix::column_vector(&y));
        let pred = t.matmul(ac, v)?;
        let r = t.sub(pred, yc)?;
        let sq = t.square(r);
        Ok(t.mean(sq))
    });
    assert!(grad.max_abs() < 1e-8, "{}", grad.max_abs());
}

#[test]
fn identical_tapes_give_identical_gradients() {
    let (x, mix) = random_input(11);
    let code = [4, 1, 5, 0, 2, 4];
    let a = gradient(&x, |t, v| graph(t, v, &code, &mix));
    let b = gradient(&x, |t, v| graph(t, v, &code, &mix));
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_of_a_sum_is_the_sum_of_gradients(
        seed in 0u64..10_000,
        f in prop::collection::vec(0u8..6, 1..6),
        g in prop::collection::vec(0u8..6, 1..6),
    ) {
        let (x, mix) = random_input(seed);
        let gf = gradient(&x, |t, v| graph(t, v, &f, &mix));
        let gg = gradient(&x, |t, v| graph(t, v, &g, &mix));
        let gsum = gradient(&x, |t, v| {
            let a = graph(t, v, &f, &mix)?;
            let b = graph(t, v, &g, &mix)?;
            t.add(a, b)
        });
        let expected = gf.add(&gg).unwrap();
        let scale = expected.max_abs().max(1.0);
        prop_assert!(gsum.sub(&expected).unwrap().max_abs() <= 1e-12 * scale);
    }

    #[test]
    fn random_graphs_match_finite_differences(
        seed in 0u64..10_000,
        code in prop::collection::vec(0u8..6, 1..5),
    ) {
        let (x, mix) = random_input(seed);
        let err = check_gradient(|t, v| graph(t, v, &code, &mix), &x, 1e-5).unwrap();
        prop_assert!(err < 1e-5, "{}", err);
    }
}
