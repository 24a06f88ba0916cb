#![allow(non_snake_case)]

mod common;

use approx::{assert_abs_diff_eq, assert_relative_eq};
use nalgebra::{dmatrix, DMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ceq_core::model::PriceTrajectory;
use ceq_core::riccati::{best_response, dare, finite_riccati};

use common::{random_agent, scalar_agent};

#[test]
fn scalar_two_step_recursion() {
    // A=0.5, B=1, Q=R=H=1, free prices: P = (77/68, 9/8, 1),
    // gains (-9/34, -1/4), worked by hand from the scalar recursion.
    let a = scalar_agent(0.5, 1.0, 1.0, 1.0, 1.0, 1.0);
    let sol = finite_riccati(&a, &PriceTrajectory::zeros(2), 2).unwrap();
    assert_eq!(sol.P.len(), 3);
    assert_abs_diff_eq!(sol.P[2][(0, 0)], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(sol.P[1][(0, 0)], 1.125, epsilon = 1e-14);
    assert_abs_diff_eq!(sol.P[0][(0, 0)], 77.0 / 68.0, epsilon = 1e-14);
    assert_abs_diff_eq!(sol.gains[1][(0, 0)], -0.25, epsilon = 1e-14);
    assert_abs_diff_eq!(sol.gains[0][(0, 0)], -9.0 / 34.0, epsilon = 1e-14);
}

#[test]
fn no_state_propagation_freezes_terminal_weight() {
    let a = scalar_agent(0.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    let sol = finite_riccati(&a, &PriceTrajectory::zeros(4), 4).unwrap();
    for k in 0..=4 {
        assert_abs_diff_eq!(sol.P[k][(0, 0)], 1.0, epsilon = 1e-15);
    }
    for k in 0..4 {
        assert_abs_diff_eq!(sol.gains[k][(0, 0)], 0.0, epsilon = 1e-15);
    }
}

#[test]
fn one_step_priced_recursion() {
    // A=B=Q=H=1, R=0.1, lambda_0=1.7284: P_0 = 2 - 1/2.8284.
    let a = scalar_agent(1.0, 1.0, 1.0, 0.1, 1.0, 1.0);
    let prices = PriceTrajectory::new(vec![1.7284]).unwrap();
    let sol = finite_riccati(&a, &prices, 1).unwrap();
    assert_abs_diff_eq!(sol.P[0][(0, 0)], 2.0 - 1.0 / 2.8284, epsilon = 1e-12);
}

#[test]
fn priced_best_response_scalar_closed_form() {
    // For A=B=N=1 the optimum is u = -x0 P1 / (P1 + R + lambda) with P1 = Q.
    let a = scalar_agent(1.0, 1.0, 1.0, 0.1, 1.0, 2.0);
    let shut = best_response(&a, &PriceTrajectory::new(vec![1.7284]).unwrap(), 1).unwrap();
    assert_abs_diff_eq!(shut.controls[(0, 0)], -2.0 / 2.8284, epsilon = 1e-12);

    let free = best_response(&a, &PriceTrajectory::zeros(1), 1).unwrap();
    assert_abs_diff_eq!(free.controls[(0, 0)], -2.0 / 1.1, epsilon = 1e-12);
}

#[test]
fn best_response_at_origin_is_idle() {
    let a = scalar_agent(0.9, 1.0, 1.0, 0.5, 1.0, 0.0);
    let br = best_response(&a, &PriceTrajectory::new(vec![0.3, 0.0, 2.0]).unwrap(), 3).unwrap();
    assert_eq!(br.controls, DMatrix::zeros(1, 3));
    assert_eq!(br.payoff, 0.0);
}

#[test]
fn dare_trivial_fixed_point() {
    let (P, K) = dare(
        &DMatrix::zeros(2, 2),
        &DMatrix::identity(2, 2),
        &DMatrix::identity(2, 2),
        &DMatrix::identity(2, 2),
    )
    .unwrap();
    assert_relative_eq!(P, DMatrix::identity(2, 2), max_relative = 1e-12);
    assert_abs_diff_eq!(K.amax(), 0.0, epsilon = 1e-12);
}

#[test]
fn dare_scalar_quadratic_root() {
    // p^2 - 0.25 p - 1 = 0 for A=0.5, B=Q=R=1.
    let (P, K) = dare(&dmatrix![0.5], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
    let root = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
    assert_abs_diff_eq!(P[(0, 0)], root, epsilon = 1e-12);
    assert_abs_diff_eq!(K[(0, 0)], -root * 0.5 / (root + 1.0), epsilon = 1e-12);
    assert_abs_diff_eq!(P[(0, 0)], 1.132782, epsilon = 1e-6);
    assert_abs_diff_eq!(K[(0, 0)], -0.265564, epsilon = 1e-6);
}

#[test]
fn dare_golden_ratio_pair() {
    // Identity A, B, Q, R decouples into scalars with p^2 - p - 1 = 0.
    let I = DMatrix::identity(2, 2);
    let (P, K) = dare(&I, &I, &I, &I).unwrap();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    assert_relative_eq!(P, &I * phi, max_relative = 1e-12);
    assert_relative_eq!(K, &I * (-phi / (1.0 + phi)), max_relative = 1e-12);
}

#[test]
fn riccati_requires_nonnegative_prices() {
    let a = scalar_agent(0.5, 1.0, 1.0, 1.0, 1.0, 1.0);
    // PriceTrajectory construction already rejects negatives, so drive the
    // recursion directly with a doctored trajectory.
    let bad = PriceTrajectory {
        values: vec![-0.5],
    };
    assert!(finite_riccati(&a, &bad, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Value identity: the payoff of the rolled-out best response equals the
    /// value function at x0 predicted by the recursion.
    #[test]
    fn best_response_payoff_matches_value(seed in any::<u64>(), d in 1usize..4, m in 1usize..3, N in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = random_agent(&mut rng, d, m, 1.2, 1.0, 2.0);
        let lambda = PriceTrajectory::new(
            (0..N).map(|_| rng.gen_range(0.0..2.0)).collect()
        ).unwrap();
        let ric = finite_riccati(&agent, &lambda, N).unwrap();
        let br = best_response(&agent, &lambda, N).unwrap();
        let value = ric.value_at(&agent.x0);
        prop_assert!(
            (br.payoff - value).abs() <= 1e-10 * value.abs().max(1.0),
            "payoff {} vs value {}", br.payoff, value
        );
    }

    /// Growth chain: ||P_{N-p}|| never exceeds (1 + a^2 + ... + a^{2p}) ||Q||
    /// with a the spectral norm of A.
    #[test]
    fn value_matrix_growth_chain(seed in any::<u64>(), d in 1usize..4, m in 1usize..3, N in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = random_agent(&mut rng, d, m, 1.5, 1.0, 1.0);
        let lambda = PriceTrajectory::new(
            (0..N).map(|_| rng.gen_range(0.0..3.0)).collect()
        ).unwrap();
        let ric = finite_riccati(&agent, &lambda, N).unwrap();
        let a = agent.A.singular_values()[0];
        let q_norm = agent.Q.singular_values()[0];
        for p in 0..=N {
            let bound: f64 = (0..=p).map(|j| a.powi(2 * j as i32)).sum::<f64>() * q_norm;
            let p_norm = ric.P[N - p].singular_values()[0];
            prop_assert!(
                p_norm <= bound * (1.0 + 1e-9) + 1e-12,
                "||P_{}|| = {} exceeds chain bound {}", N - p, p_norm, bound
            );
        }
    }

    /// Every P_k stays symmetric positive semidefinite.
    #[test]
    fn value_matrices_stay_psd(seed in any::<u64>(), d in 1usize..4, N in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = random_agent(&mut rng, d, 2, 1.3, 1.0, 1.0);
        let lambda = PriceTrajectory::new(
            (0..N).map(|_| rng.gen_range(0.0..1.0)).collect()
        ).unwrap();
        let ric = finite_riccati(&agent, &lambda, N).unwrap();
        for P in &ric.P {
            prop_assert!((P - P.transpose()).amax() <= 1e-12);
            let min_eig = P.clone().symmetric_eigenvalues().min();
            prop_assert!(min_eig >= -1e-10, "min eigenvalue {}", min_eig);
        }
    }

    /// Raising the price never increases first-step consumption for the
    /// scalar one-step family (closed form u = -Q x0 / (Q + R + lambda)).
    #[test]
    fn consumption_monotone_in_price(
        q in 0.1f64..3.0, r in 0.1f64..3.0, x0 in -3.0f64..3.0,
    ) {
        let agent = scalar_agent(1.0, 1.0, q, r, 1.0, x0);
        let mut last = f64::INFINITY;
        for step in 0..8 {
            let lam = 0.5 * step as f64;
            let br = best_response(&agent, &PriceTrajectory::new(vec![lam]).unwrap(), 1).unwrap();
            let mag = br.controls[(0, 0)].abs();
            prop_assert!(mag <= last + 1e-12);
            last = mag;
        }
    }

    /// DARE: fixed-point residual within 1e-12 ||P|| and the closed loop is a
    /// strict contraction in spectral radius.
    #[test]
    fn dare_fixed_point_and_stability(seed in any::<u64>(), d in 1usize..4, m in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = random_agent(&mut rng, d, m, 0.95, 1.0, 1.0);
        let (P, K) = dare(&agent.A, &agent.B, &agent.Q, &agent.R).unwrap();
        let G = &agent.B.transpose() * &P * &agent.B + &agent.R;
        let M = &agent.B.transpose() * &P * &agent.A;
        let residual = &agent.A.transpose() * &P * &agent.A + &agent.Q
            - M.transpose() * G.clone().cholesky().unwrap().solve(&M)
            - &P;
        let p_norm = P.singular_values()[0];
        prop_assert!(residual.singular_values()[0] <= 1e-11 * p_norm.max(1.0));

        let acl = &agent.A + &agent.B * &K;
        let rho = acl.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        prop_assert!(rho < 1.0, "closed-loop spectral radius {}", rho);
    }
}
