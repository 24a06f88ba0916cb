#![allow(non_snake_case)]
#![allow(dead_code)]

//! Scenario builders shared by the integration tests: the closed-form
//! two-agent micro scenario, the three-agent sinusoid-supply shaping scenario,
//! the coupled trio used for the infinite-horizon experiments, and randomized
//! generators for the property suites.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;

use ceq_core::model::{AgentSpec, Scenario};

/// Two identical scalar agents, one step, supply (1, 0). The equilibrium is
/// closed-form: u_i = -1/sqrt(2), lambda_0 = 2 sqrt(2) - 1.1, e = (0.5, -0.5).
pub fn scalar_pair() -> Scenario {
    let one = dmatrix![1.0];
    let agent = AgentSpec::new(
        one.clone(),
        one.clone(),
        one.clone(),
        dmatrix![0.1],
        one.clone(),
        dvector![2.0],
    )
    .unwrap();
    let supply = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    Scenario::new(vec![agent.clone(), agent], 1, supply, None).unwrap()
}

pub const SCALAR_PAIR_LAMBDA: f64 = 2.0 * std::f64::consts::SQRT_2 - 1.1;

/// Three heterogeneous 3-state/2-input agents with a price threshold of 20
/// and sinusoid supply peaking mid-horizon; the workhorse for the shaping
/// bounds and the bisection run. Utility weight Q_i = q I for all agents.
pub fn sinusoid_trio(q: f64) -> Scenario {
    let A1 = dmatrix![0.4, -0.1, 0.2; 0.2, 0.3, 0.1; 0.3, -0.1, -0.2];
    let B1 = dmatrix![4.0, 5.0; 2.0, 1.0; 3.0, 5.0];
    let A2 = dmatrix![-0.1, 0.2, -0.3; 0.3, 0.4, -0.1; -0.1, 0.2, -0.7];
    let B2 = dmatrix![1.0, 4.0; 2.0, 5.0; 6.0, 3.0];
    let A3 = dmatrix![0.5, -0.2, 0.6; -0.4, 0.9, 0.3; 0.5, 0.3, -0.8];
    let B3 = dmatrix![2.0, 3.0; 1.0, 2.0; 5.0, 4.0];
    let H1 = dmatrix![2.0, 3.0; 3.0, 6.0];
    let H2 = dmatrix![1.0, -2.0; -2.0, 5.0];
    let H3 = dmatrix![4.0, 1.0; 1.0, 3.0];
    let R = DMatrix::identity(2, 2) * 0.3;
    let Q = DMatrix::identity(3, 3) * q;
    let agents = vec![
        AgentSpec::new(A1, B1, Q.clone(), R.clone(), H1, dvector![25.0, 35.0, 75.0]).unwrap(),
        AgentSpec::new(A2, B2, Q.clone(), R.clone(), H2, dvector![40.0, 50.0, 70.0]).unwrap(),
        AgentSpec::new(A3, B3, Q, R, H3, dvector![50.0, 80.0, 90.0]).unwrap(),
    ];
    let supply = DMatrix::from_fn(3, 6, |i, t| {
        let s = (std::f64::consts::PI * t as f64 / 6.0).sin();
        match i {
            0 => -s + 1.2,
            1 => -2.0 * s + 2.2,
            _ => 0.0,
        }
    });
    Scenario::new(agents, 6, supply, Some(20.0)).unwrap()
}

/// Three strongly coupled (open-loop unstable) agents with constant supply
/// totalling 2.8 per step, Q = 0.005 I; the infinite-horizon workhorse.
pub fn coupled_trio(x0: [[f64; 3]; 3]) -> Scenario {
    let A1 = dmatrix![1.1, -0.5, 1.8; -0.4, 0.6, 0.7; -0.3, 0.7, -0.6];
    let A2 = dmatrix![0.4, 1.2, -0.1; -0.8, -1.3, 0.6; 0.1, 0.7, 0.5];
    let A3 = dmatrix![0.6, -1.2, 0.9; -1.4, 0.7, 0.3; -1.5, 0.7, 0.1];
    let B1 = dmatrix![4.0, 5.0; 2.0, 1.0; 3.0, 5.0];
    let B2 = dmatrix![1.0, 4.0; 2.0, 5.0; 6.0, 3.0];
    let B3 = dmatrix![2.0, 3.0; 1.0, 2.0; 5.0, 4.0];
    let H1 = dmatrix![2.0, 3.0; 3.0, 6.0];
    let H2 = dmatrix![1.0, -2.0; -2.0, 5.0];
    let H3 = dmatrix![4.0, 1.0; 1.0, 3.0];
    let R = DMatrix::identity(2, 2) * 0.3;
    let Q = DMatrix::identity(3, 3) * 0.005;
    let As = [A1, A2, A3];
    let Bs = [B1, B2, B3];
    let Hs = [H1, H2, H3];
    let agents = (0..3)
        .map(|i| {
            AgentSpec::new(
                As[i].clone(),
                Bs[i].clone(),
                Q.clone(),
                R.clone(),
                Hs[i].clone(),
                DVector::from_row_slice(&x0[i]),
            )
            .unwrap()
        })
        .collect();
    let supply = DMatrix::from_fn(3, 6, |i, _| match i {
        0 => 1.0,
        1 => 1.8,
        _ => 0.0,
    });
    Scenario::new(agents, 6, supply, None).unwrap()
}

/// Initial states far outside the invariant ball (norms near 90).
pub const X0_FAR: [[f64; 3]; 3] = [
    [25.0, 35.0, 75.0],
    [40.0, 50.0, 70.0],
    [50.0, 80.0, 90.0],
];

/// Initial states close to the origin; the zero-price regime.
pub const X0_NEAR: [[f64; 3]; 3] = [
    [0.2, 0.1, 0.08],
    [0.1, 0.06, 0.3],
    [0.5, 0.2, 0.1],
];

/// Single scalar agent. Handy for closed-form oracles.
pub fn scalar_agent(a: f64, b: f64, q: f64, r: f64, h: f64, x0: f64) -> AgentSpec {
    AgentSpec::new(
        dmatrix![a],
        dmatrix![b],
        dmatrix![q],
        dmatrix![r],
        dmatrix![h],
        dvector![x0],
    )
    .unwrap()
}

/// Random symmetric positive definite matrix with eigenvalues in
/// [eig_min, eig_max]: V diag(eigs) V' for a random orthogonal V.
pub fn random_spd<R: Rng>(rng: &mut R, dim: usize, eig_min: f64, eig_max: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let v = raw.qr().q();
    let eigs = DVector::from_fn(dim, |_, _| rng.gen_range(eig_min..=eig_max));
    let m = &v * DMatrix::from_diagonal(&eigs) * v.transpose();
    // Exact symmetry despite roundoff in the triple product.
    (&m + m.transpose()) * 0.5
}

/// Random agent with spectral norm of A capped at `a_cap` and B scaled to
/// unit spectral norm so consumption stays at a sane scale.
pub fn random_agent<R: Rng>(
    rng: &mut R,
    d: usize,
    m: usize,
    a_cap: f64,
    q_max: f64,
    x0_scale: f64,
) -> AgentSpec {
    let mut A = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let a_norm = A.singular_values()[0];
    if a_norm > 0.0 {
        A *= rng.gen_range(0.1..a_cap) / a_norm;
    }
    let mut B = DMatrix::from_fn(d, m, |_, _| rng.gen_range(-1.0..1.0));
    let b_norm = B.singular_values()[0];
    if b_norm < 0.3 {
        // Keep the input channel alive so solves stay well conditioned.
        B = DMatrix::from_fn(d, m, |i, j| if i == j { 1.0 } else { 0.0 }) + B;
    }
    let Q = random_spd(rng, d, 0.05 * q_max, q_max);
    let Rm = random_spd(rng, m, 0.2, 1.5);
    let H = random_spd(rng, m, 0.3, 2.0);
    let x0 = DVector::from_fn(d, |_, _| rng.gen_range(-x0_scale..x0_scale));
    AgentSpec::new(A, B, Q, Rm, H, x0).unwrap()
}

/// Random feasible scenario: n agents of shared dimensions, strictly positive
/// per-step supply totals.
pub fn random_scenario<R: Rng>(
    rng: &mut R,
    n: usize,
    d: usize,
    m: usize,
    N: usize,
    threshold: Option<f64>,
) -> Scenario {
    let agents: Vec<AgentSpec> = (0..n)
        .map(|_| random_agent(rng, d, m, 0.95, 0.8, 1.5))
        .collect();
    let supply = DMatrix::from_fn(n, N, |_, _| rng.gen_range(0.05..1.5));
    Scenario::new(agents, N, supply, threshold).unwrap()
}
