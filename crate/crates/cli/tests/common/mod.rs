#![allow(non_snake_case)]
#![allow(dead_code)]

//! Randomized scenario generators for the behavior and acceptance suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use ceq_core::model::{AgentSpec, Scenario};

/// Random symmetric positive definite matrix with eigenvalues in
/// [eig_min, eig_max]: V diag(eigs) V' for a random orthogonal V.
pub fn random_spd<R: Rng>(rng: &mut R, dim: usize, eig_min: f64, eig_max: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let v = raw.qr().q();
    let eigs = DVector::from_fn(dim, |_, _| rng.gen_range(eig_min..=eig_max));
    let m = &v * DMatrix::from_diagonal(&eigs) * v.transpose();
    (&m + m.transpose()) * 0.5
}

/// Random agent with the spectral norm of A capped at `a_cap`.
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

/// Replaces each agent's state weight with the given matrix.
pub fn with_state_weight(sc: &Scenario, Q: &DMatrix<f64>) -> Scenario {
    let agents = sc
        .agents
        .iter()
        .map(|a| {
            AgentSpec::new(
                a.A.clone(),
                a.B.clone(),
                Q.clone(),
                a.R.clone(),
                a.H.clone(),
                a.x0.clone(),
            )
            .unwrap()
        })
        .collect();
    Scenario::new(agents, sc.N, sc.supply.clone(), sc.threshold).unwrap()
}

/// Path of a bundled scenario file.
pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}
