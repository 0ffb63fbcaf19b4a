//! Randomized decomposition invariants: 100 instances per operation,
//! dimensions 2 to 32.

use jadpp::numerics::{
    c, generalized_eig, hermitian_eig, identity, inverse_hpd, kron, orthonormality_defect, orthonormalize_columns,
    pseudo_inverse_with_rank, solve, solve_hpd, CMatrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

fn random_hpd(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let a = random_matrix(rng, n, n);
    &a * a.adjoint() + identity(n) * c(0.1 * n as f64, 0.0)
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let a = random_matrix(rng, n, n);
    (&a + a.adjoint()) * c(0.5, 0.0)
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(100)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn hermitian_eig_reconstructs(seed in any::<u64>(), n in 2usize..=32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_hermitian(&mut rng, n);
        let eig = hermitian_eig(&a).unwrap();
        let lambda = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, eig.values.iter().map(|&v| c(v, 0.0))));
        let rebuilt = &eig.vectors * lambda * eig.vectors.adjoint();
        prop_assert!((&rebuilt - &a).norm() <= 1e-10 * a.norm().max(1.0));
        prop_assert!(orthonormality_defect(&eig.vectors) <= 1e-10);
        prop_assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn generalized_eig_residual(seed in any::<u64>(), n in 2usize..=32, frac in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_hermitian(&mut rng, n);
        let b = random_hpd(&mut rng, n);
        let d = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let ge = generalized_eig(&a, &b, d).unwrap();
        for j in 0..d {
            let v = ge.vectors.column(j).into_owned();
            let r = &a * &v - (&b * &v) * c(ge.values[j], 0.0);
            prop_assert!(r.norm() <= 1e-8 * (a.norm() + b.norm()) * v.norm());
        }
        let gram = ge.vectors.adjoint() * &b * &ge.vectors;
        prop_assert!((gram - identity(d)).norm() <= 1e-8);
        prop_assert!(ge.values.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }

    #[test]
    fn pseudo_inverse_penrose_conditions(seed in any::<u64>(), m in 2usize..=32, n in 2usize..=32, deficit in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = m.min(n).saturating_sub(deficit).max(1);
        let a = random_matrix(&mut rng, m, r) * random_matrix(&mut rng, r, n);
        let (p, rank) = pseudo_inverse_with_rank(&a, 1e-10);
        prop_assert_eq!(rank, r);
        let scale = a.norm() * p.norm();
        prop_assert!((&a * &p * &a - &a).norm() <= 1e-8 * a.norm() * scale);
        prop_assert!((&p * &a * &p - &p).norm() <= 1e-8 * p.norm() * scale);
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!((&ap - ap.adjoint()).norm() <= 1e-8 * scale);
        prop_assert!((&pa - pa.adjoint()).norm() <= 1e-8 * scale);
    }

    #[test]
    fn hpd_inverse_and_solves(seed in any::<u64>(), n in 2usize..=32, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_hpd(&mut rng, n);
        let inv = inverse_hpd(&a, "A").unwrap();
        prop_assert!((&a * &inv - identity(n)).norm() <= 1e-9 * n as f64);
        let b = random_matrix(&mut rng, n, k);
        let x = solve_hpd(&a, &b, "A").unwrap();
        prop_assert!((&a * &x - &b).norm() <= 1e-9 * a.norm() * x.norm().max(1.0));
        let g = random_matrix(&mut rng, n, n) + identity(n) * c(n as f64, 0.0);
        let y = solve(&g, &b, "G").unwrap();
        prop_assert!((&g * &y - &b).norm() <= 1e-9 * g.norm() * y.norm().max(1.0));
    }

    #[test]
    fn orthonormalize_spans_input(seed in any::<u64>(), n in 2usize..=32, frac in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let a = random_matrix(&mut rng, n, d);
        let q = orthonormalize_columns(&a);
        prop_assert_eq!(q.shape(), (n, d));
        prop_assert!(orthonormality_defect(&q) <= 1e-10);
        // Every input column lies in span(Q).
        let resid = &a - &q * (q.adjoint() * &a);
        prop_assert!(resid.norm() <= 1e-9 * a.norm());
    }

    #[test]
    fn kron_mixed_product(seed in any::<u64>(), p in 2usize..=5, q in 2usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, p, p);
        let b = random_matrix(&mut rng, q, q);
        let c1 = random_matrix(&mut rng, p, p);
        let d1 = random_matrix(&mut rng, q, q);
        let lhs = kron(&a, &b) * kron(&c1, &d1);
        let rhs = kron(&(&a * &c1), &(&b * &d1));
        prop_assert!((lhs - &rhs).norm() <= 1e-10 * rhs.norm().max(1.0));
        let k = kron(&a, &b);
        prop_assert_eq!(k[(q + 1, 1)], a[(1, 0)] * b[(1, 1)]);
    }
}
