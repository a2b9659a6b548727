use koppa_core::linalg::{self, Matrix};
use koppa_core::{PromptPool, SubspaceBasis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn shaped(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c))
}

/// Keys (`m x d`) together with an orthonormal basis of `d`.
fn keys_and_basis() -> impl Strategy<Value = (Matrix, Matrix)> {
    (2usize..7, 1usize..5)
        .prop_flat_map(|(d, m)| (matrix(m, d), matrix(d, d), 1..=d))
        .prop_map(|(k, raw, cols)| {
            let basis = linalg::svd(&raw).unwrap().u.leading_columns(cols);
            (k, basis)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs(a in shaped(8, 8)) {
        let dec = linalg::svd(&a).unwrap();
        let err = dec.reconstruct().sub(&a).unwrap().max_abs();
        prop_assert!(err < 1e-10 * (1.0 + a.max_abs()), "err {}", err);
        prop_assert!(dec.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(dec.sigma.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn projection_is_orthogonal_idempotent_and_shrinks((k, q) in keys_and_basis()) {
        let p = linalg::project_onto_complement(&k, &q).unwrap();
        prop_assert!(p.matmul(&q).unwrap().max_abs() < 1e-12);
        let pp = linalg::project_onto_complement(&p, &q).unwrap();
        prop_assert!(pp.sub(&p).unwrap().max_abs() < 1e-12);
        for r in 0..k.rows() {
            let before = koppa_core::math::norm(k.row(r));
            let after = koppa_core::math::norm(p.row(r));
            prop_assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn k_rank_is_minimal(a in shaped(6, 9), eps in 0.05f64..0.995) {
        prop_assume!(a.frobenius_norm() > 1e-6);
        let sigma = linalg::svd(&a).unwrap().sigma;
        let k = linalg::energy_rank(&sigma, eps).unwrap();
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        let captured = |j: usize| sigma[..j].iter().map(|s| s * s).sum::<f64>() / total;
        prop_assert!(captured(k) >= eps - 1e-12);
        prop_assert!(k == 1 || captured(k - 1) < eps);
    }

    #[test]
    fn update_contains_old_span(a in matrix(6, 3), b in matrix(6, 4), eps in 0.5f64..0.999) {
        prop_assume!(a.frobenius_norm() > 1e-6 && b.frobenius_norm() > 1e-6);
        let s1 = SubspaceBasis::empty(6).update(&a, eps).unwrap();
        let s2 = s1.update(&b, eps).unwrap();
        prop_assert!(s2.columns() >= s1.columns());
        let lead = s2.basis().leading_columns(s1.columns());
        prop_assert!(lead.sub(s1.basis()).unwrap().max_abs() == 0.0);
        let gram = s2.basis().transpose().matmul(s2.basis()).unwrap();
        prop_assert!(gram.sub(&Matrix::identity(s2.columns())).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn compose_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = PromptPool::new(4, 3, 2);
        pool.expand(&mut rng, false);
        pool.expand(&mut rng, false);
        let x: Vec<f64> = (0..4).map(|i| (i as f64 * 0.7 + a).sin()).collect();
        let y: Vec<f64> = (0..4).map(|i| (i as f64 * 1.3 - b).cos()).collect();
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = pool.compose(&mixed).unwrap();
        let px = pool.compose(&x).unwrap();
        let py = pool.compose(&y).unwrap();
        for i in 0..3 {
            prop_assert!((lhs[i] - (a * px[i] + b * py[i])).abs() < 1e-12);
        }
    }
}
