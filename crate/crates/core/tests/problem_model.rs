mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_matrix, random_vector, small_instance, Matrix, Vector};
use nestadmm::diagnostics::finite_diff_gradient;
use nestadmm::generators::{generate_instance, GeneratorKind, GeneratorSpec};
use nestadmm::linalg::{spectral_bounds, spectral_norm};
use nestadmm::problem::{
    eval_f1, eval_grad_f2, eval_jac_f1, exact_nested_gradient, exact_value, full_f1, full_grad_f2,
    full_jac_f1, Mode, Population, ProblemInstance,
};
use nestadmm::prox::Regularizer;
use nestadmm::Error;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut s: Matrix) -> Vec<f64> {
    let n = s.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| s[(i, j)].powi(2))
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if s[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * s[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                let mut rot = Matrix::identity(n, n);
                rot[(p, p)] = c;
                rot[(q, q)] = c;
                rot[(p, q)] = sn;
                rot[(q, p)] = -sn;
                s = rot.transpose() * &s * &rot;
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[test]
fn spectral_bounds_match_jacobi() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 6, 4);
        let (lo, hi) = spectral_bounds(&m).unwrap();
        let ev = jacobi_eigenvalues(m.tr_mul(&m));
        assert!((lo - ev[0]).abs() <= 1e-8 * ev[3], "{lo} vs {}", ev[0]);
        assert!((hi - ev[3]).abs() <= 1e-8 * ev[3], "{hi} vs {}", ev[3]);
        assert!((spectral_norm(&m).unwrap() - ev[3].sqrt()).abs() <= 1e-8);
    }
}

proptest! {
    #[test]
    fn rayleigh_quotient_within_bounds(seed in 0u64..1000, rows in 3usize..8, cols in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, rows, cols);
        let (lo, hi) = spectral_bounds(&m).unwrap();
        for _ in 0..100 {
            let v = random_vector(&mut rng, cols, 1.0).normalize();
            let q = (&m * &v).norm_squared();
            prop_assert!(q >= lo - 1e-8 && q <= hi + 1e-8);
        }
    }

    #[test]
    fn means_invariant_to_index_order(seed in 0u64..500) {
        let problem = small_instance(seed);
        let o = problem.oracle.as_ref();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_vector(&mut rng, 5, 1.0);
        let w = random_vector(&mut rng, 4, 1.0);
        let mut inner: Vec<u64> = (0..30).collect();
        let mut outer: Vec<u64> = (0..20).collect();
        let f = eval_f1(o, &inner, &x).unwrap();
        let j = eval_jac_f1(o, &inner, &x).unwrap();
        let g = eval_grad_f2(o, &outer, &w).unwrap();
        inner.shuffle(&mut rng);
        outer.shuffle(&mut rng);
        prop_assert!((eval_f1(o, &inner, &x).unwrap() - &f).norm() <= 1e-12);
        prop_assert!((eval_jac_f1(o, &inner, &x).unwrap() - &j).norm() <= 1e-12);
        prop_assert!((eval_grad_f2(o, &outer, &w).unwrap() - &g).norm() <= 1e-12);
    }
}

#[test]
fn full_means_match_componentwise_summation() {
    let problem = small_instance(4);
    let o = problem.oracle.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_vector(&mut rng, 5, 1.0);
    let w = random_vector(&mut rng, 4, 1.0);
    let sum_f: Vector = (0..30)
        .map(|i| o.inner_value(i, &x))
        .fold(Vector::zeros(4), |a, v| a + v)
        / 30.0;
    let sum_j: Matrix = (0..30)
        .map(|i| o.inner_jacobian(i, &x))
        .fold(Matrix::zeros(4, 5), |a, v| a + v)
        / 30.0;
    let sum_g: Vector = (0..20)
        .map(|j| o.outer_gradient(j, &w))
        .fold(Vector::zeros(4), |a, v| a + v)
        / 20.0;
    assert!((full_f1(o, &x).unwrap() - sum_f).norm() <= 1e-12);
    assert!((full_jac_f1(o, &x).unwrap() - sum_j).norm() <= 1e-12);
    assert!((full_grad_f2(o, &w).unwrap() - sum_g).norm() <= 1e-12);
}

#[test]
fn chain_rule_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in [
        GeneratorKind::QuadraticComposition,
        GeneratorKind::LogisticComposition,
        GeneratorKind::GraphGuidedLasso,
    ] {
        let problem = generate_instance(
            &GeneratorSpec::quadratic(6, 5, Some(25), Some(15), 8).with_kind(kind),
        )
        .unwrap();
        for _ in 0..20 {
            let x = random_vector(&mut rng, 6, 1.0);
            let g = exact_nested_gradient(problem.oracle.as_ref(), &x).unwrap();
            let fd = finite_diff_gradient(&problem, &x, 1e-5).unwrap();
            assert!((&fd - &g).norm() <= 1e-5 * g.norm().max(1.0), "{kind:?}");
        }
    }
}

#[test]
fn single_component_population_is_its_own_mean() {
    let problem = generate_instance(&GeneratorSpec::quadratic(3, 3, Some(1), Some(1), 2)).unwrap();
    let o = problem.oracle.as_ref();
    let x = Vector::from_column_slice(&[0.3, -0.2, 0.7]);
    let w = o.inner_value(0, &x);
    let g = o.inner_jacobian(0, &x).tr_mul(&o.outer_gradient(0, &w));
    assert!((exact_nested_gradient(o, &x).unwrap() - g).norm() <= 1e-14);
    assert!((exact_value(o, &x).unwrap() - o.outer_value(0, &w)).abs() <= 1e-14);
}

#[test]
fn stream_means_have_closed_forms() {
    let problem = generate_instance(&GeneratorSpec::quadratic(4, 3, None, None, 6)).unwrap();
    let o = problem.oracle.as_ref();
    assert_eq!(o.inner_population(), Population::Stream);
    assert_eq!(problem.mode(), Mode::Online);
    assert!(o.has_exact_means());
    let x = Vector::from_column_slice(&[0.1, 0.2, -0.3, 0.4]);
    let sampled: Vec<u64> = (0..200_000u64)
        .map(|i| i.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .collect();
    let est = eval_f1(o, &sampled, &x).unwrap();
    assert!((est - full_f1(o, &x).unwrap()).norm() <= 0.02);
}

#[test]
fn certified_profile_bounds_components() {
    let problem = small_instance(12);
    let profile = problem.profile.unwrap();
    let o = problem.oracle.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let x = random_vector(&mut rng, 5, 0.5);
        for i in 0..30 {
            assert!(
                spectral_norm(&o.inner_jacobian(i, &x)).unwrap() <= profile.ell1 * (1.0 + 1e-9)
            );
        }
        let w = full_f1(o, &x).unwrap();
        for j in 0..20 {
            assert!(o.outer_gradient(j, &w).norm() <= profile.ell2 * (1.0 + 1e-9));
        }
    }
}

#[test]
fn rank_deficient_coupling_rejected() {
    let problem = small_instance(1);
    let mut a = problem.a.clone();
    let col = a.column(0).into_owned();
    a.set_column(1, &col);
    let err = ProblemInstance::new(
        a,
        problem.b.clone(),
        problem.c.clone(),
        vec![Regularizer::zero()],
        Arc::clone(&problem.oracle),
    );
    assert!(matches!(err, Err(Error::InvalidMatrix(_))), "{err:?}");
}

#[test]
fn out_of_range_index_rejected() {
    let problem = small_instance(1);
    let x = Vector::zeros(5);
    assert!(matches!(
        eval_f1(problem.oracle.as_ref(), &[30], &x),
        Err(Error::IndexError {
            index: 30,
            population: 30
        })
    ));
    assert!(matches!(
        eval_f1(problem.oracle.as_ref(), &[], &x),
        Err(Error::EmptyBatch)
    ));
    assert!(matches!(
        eval_f1(problem.oracle.as_ref(), &[0], &Vector::zeros(2)),
        Err(Error::DimensionError(_))
    ));
}
