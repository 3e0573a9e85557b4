#![allow(clippy::needless_range_loop)]

//! Linear algebra checked against independent reference computations.

use isogauss_core::linalg::{
    condition_number, covariance, dot, singular_values, sym_eigendecomp, top_pca, Cholesky, Matrix,
};
use isogauss_core::rng::{random_orthogonal, random_spd, random_spd_with_spectrum};
use isogauss_core::Rng;
use proptest::prelude::*;

/// Textbook classical Jacobi: always annihilate the largest off-diagonal
/// entry, using the explicit angle `½ atan2(2a_pq, a_qq − a_pp)`.
fn classical_jacobi_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _ in 0..10_000 {
        let (mut p, mut q, mut big) = (0, 1, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if a[i][j].abs() > big {
                    big = a[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if big < 1e-14 {
            break;
        }
        let theta = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
        let (c, s) = (theta.cos(), theta.sin());
        // A ← Jᵀ A J with J the rotation in the (p, q) plane.
        for k in 0..n {
            let (akp, akq) = (a[k][p], a[k][q]);
            a[k][p] = c * akp - s * akq;
            a[k][q] = s * akp + c * akq;
        }
        for k in 0..n {
            let (apk, aqk) = (a[p][k], a[q][k]);
            a[p][k] = c * apk - s * aqk;
            a[q][k] = s * apk + c * aqk;
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn random_symmetric(n: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.normal();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[test]
fn eigenvalues_match_classical_jacobi() {
    let mut rng = Rng::new(11);
    for n in [2, 3, 5, 8, 16] {
        for _ in 0..5 {
            let m = random_symmetric(n, &mut rng);
            let ours = sym_eigendecomp(&m).unwrap().eigenvalues;
            let oracle = classical_jacobi_eigenvalues(&m);
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{ours:?} vs {oracle:?}");
            }
        }
    }
}

#[test]
fn prescribed_spectrum_is_recovered() {
    let mut rng = Rng::new(2);
    let spectrum = [9.0, 4.0, 1.0, 0.25, 0.01];
    let m = random_spd_with_spectrum(&spectrum, &mut rng);
    let eig = sym_eigendecomp(&m).unwrap();
    for (a, b) in eig.eigenvalues.iter().zip(&spectrum) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((condition_number(&m).unwrap() - 900.0).abs() < 1e-8);
}

#[test]
fn singular_values_match_gram_eigenvalues() {
    let mut rng = Rng::new(5);
    for (r, c) in [(10, 3), (3, 10), (6, 6), (40, 8)] {
        let data = rng.normal_vec(r * c);
        let a = Matrix::new(r, c, data).unwrap();
        let s = singular_values(&a).unwrap();
        let gram = if r >= c {
            a.matmul_tn(&a).unwrap()
        } else {
            a.matmul_nt(&a).unwrap()
        };
        let oracle = classical_jacobi_eigenvalues(&gram);
        assert_eq!(s.len(), r.min(c));
        for (sv, lam) in s.iter().zip(&oracle) {
            assert!((sv * sv - lam).abs() < 1e-9 * (1.0 + lam), "{sv} vs {lam}");
        }
    }
}

#[test]
fn cholesky_solve_and_inverse() {
    let mut rng = Rng::new(8);
    let m = random_spd(6, 0.1, 10.0, &mut rng);
    let chol = Cholesky::new(&m).unwrap();
    let b = rng.normal_vec(6);
    let x = chol.solve(&b).unwrap();
    let back = m.matvec(&x).unwrap();
    for (u, v) in back.iter().zip(&b) {
        assert!((u - v).abs() < 1e-10);
    }
    let prod = m.matmul(&chol.inverse().unwrap()).unwrap();
    assert!(prod.sub(&Matrix::identity(6)).unwrap().max_abs() < 1e-10);
}

#[test]
fn covariance_of_hand_batch() {
    let batch = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 2.0], vec![0.0, -2.0]]).unwrap();
    let (mean, cov) = covariance(&batch, true).unwrap();
    assert_eq!(mean, vec![0.0, 0.0]);
    assert_eq!(cov, Matrix::from_diag(&[0.5, 2.0]));
    let pca = top_pca(&batch, 2).unwrap();
    assert!((pca.explained_variance_ratios[0] - 0.8).abs() < 1e-15);
    assert!((pca.components[0][1].abs() - 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigendecomposition_reconstructs(seed in 0u64..10_000, n in 1usize..10) {
        let m = random_symmetric(n, &mut Rng::new(seed));
        let eig = sym_eigendecomp(&m).unwrap();
        let err = eig.reconstruct().sub(&m).unwrap().max_abs();
        prop_assert!(err < 1e-11 * (1.0 + m.max_abs()));
        for i in 0..n {
            for j in 0..n {
                let p = dot(&eig.eigenvector(i), &eig.eigenvector(j));
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((p - want).abs() < 1e-12);
            }
        }
        prop_assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn singular_values_invariant_under_rotation(seed in 0u64..10_000, n in 3usize..20, d in 1usize..8) {
        let mut rng = Rng::new(seed);
        let a = Matrix::new(n, d, rng.normal_vec(n * d)).unwrap();
        let q = random_orthogonal(d, &mut rng);
        let s1 = singular_values(&a).unwrap();
        let s2 = singular_values(&a.matmul(&q).unwrap()).unwrap();
        for (x, y) in s1.iter().zip(&s2) {
            prop_assert!((x - y).abs() < 1e-10 * (1.0 + x));
        }
    }
}
