#![allow(non_snake_case)]

//! Finite-horizon Riccati recursion with a price-dependent input penalty, the
//! per-agent best response it induces, and the discrete algebraic Riccati
//! equation for the infinite horizon.
//!
//! At price lambda_k the agent's step-k input penalty is R + lambda_k H, so the
//! innovation term is G_k = B'P_{k+1}B + R + lambda_k H. The affine consumption
//! extension (h_lin, h_const) keeps the value function quadratic plus linear:
//! V_k(x) = -x'P_k x - 2 p_k'x - c_k.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::model::{AgentSpec, PriceTrajectory};
use crate::Result;

/// Innovation matrices with condition number beyond this raise
/// [`Error::Conditioning`].
const COND_LIMIT: f64 = 1e12;

const DARE_MAX_ITERS: usize = 10_000;

/// Backward value recursion at fixed prices.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// N+1 symmetric quadratic terms; P[N] = Q.
    pub P: Vec<DMatrix<f64>>,
    /// N+1 linear terms; zero in the pure regulation case.
    pub p: Vec<DVector<f64>>,
    /// N feedback gains; u(k) = gains[k] x(k) + offsets[k].
    pub gains: Vec<DMatrix<f64>>,
    /// N affine control offsets; zero in pure regulation.
    pub offsets: Vec<DVector<f64>>,
    /// N+1 scalar value-function constants c_k; zero in pure regulation.
    pub value_const: Vec<f64>,
}

impl RiccatiSolution {
    /// Value function at the start of the horizon:
    /// V_0(x0) = -x0'P_0 x0 - 2 p_0'x0 - c_0.
    pub fn value_at(&self, x0: &DVector<f64>) -> f64 {
        -(x0.transpose() * &self.P[0] * x0)[(0, 0)] - 2.0 * self.p[0].dot(x0) - self.value_const[0]
    }
}

/// One agent's optimal plan against fixed prices.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    /// m x N optimal controls.
    pub controls: DMatrix<f64>,
    /// d x (N+1) induced states.
    pub states: DMatrix<f64>,
    /// Objective value excluding the price-times-supply constant
    /// sum_t lambda_t a_i(t), which does not depend on the decision.
    pub payoff: f64,
}

/// Symmetric positive-definite inverse of the innovation term, with a
/// condition check. G is symmetrized before factorization.
fn spd_inverse(G: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let sym = (G + G.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let mut min_eig = f64::INFINITY;
    let mut max_eig = f64::NEG_INFINITY;
    for v in eig.eigenvalues.iter() {
        min_eig = min_eig.min(*v);
        max_eig = max_eig.max(*v);
    }
    if min_eig <= 0.0 {
        return Err(Error::Conditioning(format!(
            "{context}: innovation matrix not positive definite (min eigenvalue {min_eig:.3e})"
        )));
    }
    if max_eig / min_eig > COND_LIMIT {
        return Err(Error::Conditioning(format!(
            "{context}: innovation matrix condition number {:.3e} exceeds {COND_LIMIT:.0e}",
            max_eig / min_eig
        )));
    }
    // G^{-1} = V diag(1/d) V'
    let V = &eig.eigenvectors;
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    Ok(V * inv_diag * V.transpose())
}

/// Backward recursion P_k = A'P_{k+1}A + Q - M'G^{-1}M with
/// G = B'P_{k+1}B + R + lambda_k H and M = B'P_{k+1}A, plus the linear-term
/// recursion when the consumption map has an affine part.
pub fn finite_riccati(
    agent: &AgentSpec,
    prices: &PriceTrajectory,
    N: usize,
) -> Result<RiccatiSolution> {
    if prices.len() != N {
        return Err(Error::InvalidInput(format!(
            "price trajectory has length {}, expected {N}",
            prices.len()
        )));
    }
    let d = agent.state_dim();
    let m = agent.input_dim();

    let mut P = vec![DMatrix::zeros(d, d); N + 1];
    let mut p = vec![DVector::zeros(d); N + 1];
    let mut c = vec![0.0; N + 1];
    let mut gains = vec![DMatrix::zeros(m, d); N];
    let mut offsets = vec![DVector::zeros(m); N];

    P[N] = agent.Q.clone();
    for k in (0..N).rev() {
        let lam = prices.values[k].max(0.0);
        if prices.values[k] < -crate::model::PRICE_NEG_TOL {
            return Err(Error::InvalidInput(format!(
                "negative price {:.3e} at step {k}",
                prices.values[k]
            )));
        }
        let Bt_P = agent.B.transpose() * &P[k + 1];
        let G = &Bt_P * &agent.B + &agent.R + &agent.H * lam;
        let G_inv = spd_inverse(&G, &format!("riccati step {k}"))?;
        let M = &Bt_P * &agent.A;
        let v = agent.B.transpose() * &p[k + 1] + &agent.h_lin * lam;

        let G_inv_M = &G_inv * &M;
        let G_inv_v = &G_inv * &v;
        gains[k] = -&G_inv_M;
        offsets[k] = -&G_inv_v;

        let Pk = agent.A.transpose() * &P[k + 1] * &agent.A + &agent.Q
            - M.transpose() * &G_inv_M;
        // Symmetrize to suppress drift.
        P[k] = (&Pk + Pk.transpose()) * 0.5;
        p[k] = agent.A.transpose() * &p[k + 1] - M.transpose() * &G_inv_v;
        c[k] = c[k + 1] + lam * agent.h_const - v.dot(&G_inv_v);
    }

    Ok(RiccatiSolution {
        P,
        p,
        gains,
        offsets,
        value_const: c,
    })
}

/// Optimal plan against fixed prices: u(k) = K_k x(k) + offset_k. The payoff is
/// evaluated along the trajectory (the closed form -x0'P_0 x0 - 2p_0'x0 - c_0
/// is checked against it in the tests).
pub fn best_response(agent: &AgentSpec, prices: &PriceTrajectory, N: usize) -> Result<BestResponse> {
    let rs = finite_riccati(agent, prices, N)?;
    let d = agent.state_dim();
    let m = agent.input_dim();
    let mut states = DMatrix::zeros(d, N + 1);
    let mut controls = DMatrix::zeros(m, N);
    states.column_mut(0).copy_from(&agent.x0);

    let mut payoff = 0.0;
    for k in 0..N {
        let x = states.column(k).clone_owned();
        let u = &rs.gains[k] * &x + &rs.offsets[k];
        let lam = prices.values[k].max(0.0);
        payoff -= (x.transpose() * &agent.Q * &x)[(0, 0)];
        payoff -= (u.transpose() * &agent.R * &u)[(0, 0)];
        payoff -= lam * agent.consumption(&u);
        let next = &agent.A * &x + &agent.B * &u;
        states.column_mut(k + 1).copy_from(&next);
        controls.column_mut(k).copy_from(&u);
    }
    let xN = states.column(N).clone_owned();
    payoff -= (xN.transpose() * &agent.Q * xN)[(0, 0)];

    Ok(BestResponse {
        controls,
        states,
        payoff,
    })
}

/// Spectral norm (largest singular value).
pub(crate) fn spectral_norm(M: &DMatrix<f64>) -> f64 {
    if M.is_empty() {
        return 0.0;
    }
    M.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Spectral radius via complex eigenvalues.
pub(crate) fn spectral_radius(M: &DMatrix<f64>) -> f64 {
    M.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Discrete algebraic Riccati equation, solved by backward iteration of the
/// finite recursion from P = Q. Returns (P, K) with K = -(R + B'PB)^{-1}B'PA
/// and a contractive closed loop A + BK.
pub fn dare(
    A: &DMatrix<f64>,
    B: &DMatrix<f64>,
    Q: &DMatrix<f64>,
    R: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = A.nrows();
    if A.ncols() != d || B.nrows() != d || Q.shape() != (d, d) || R.shape() != (B.ncols(), B.ncols())
    {
        return Err(Error::InvalidInput("dare: inconsistent dimensions".into()));
    }
    crate::model::check_spd("Q", Q)?;
    crate::model::check_spd("R", R)?;

    let step = |P: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let Bt_P = B.transpose() * P;
        let G = &Bt_P * B + R;
        let G_inv = spd_inverse(&G, "dare")?;
        let M = &Bt_P * A;
        let Pn = A.transpose() * P * A + Q - M.transpose() * (&G_inv * &M);
        Ok((&Pn + Pn.transpose()) * 0.5)
    };

    let mut P = Q.clone();
    let mut converged = false;
    for _ in 0..DARE_MAX_ITERS {
        let Pn = step(&P)?;
        let diff = spectral_norm(&(&Pn - &P));
        P = Pn;
        if diff < 1e-13 * spectral_norm(&P).max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonStabilizable(format!(
            "DARE iteration did not converge within {DARE_MAX_ITERS} iterations"
        )));
    }

    // Fixed-point residual check.
    let residual = spectral_norm(&(step(&P)? - &P));
    let P_norm = spectral_norm(&P);
    if residual > 1e-12 * P_norm.max(1.0) {
        return Err(Error::Conditioning(format!(
            "DARE residual {residual:.3e} exceeds 1e-12 * |P| = {:.3e}",
            1e-12 * P_norm
        )));
    }

    let G = B.transpose() * &P * B + R;
    let G_inv = spd_inverse(&G, "dare gain")?;
    let K = -(&G_inv * (B.transpose() * &P * A));

    let closed_loop = A + B * &K;
    let rho = spectral_radius(&closed_loop);
    if rho >= 1.0 {
        return Err(Error::NonStabilizable(format!(
            "closed-loop spectral radius {rho:.6} >= 1"
        )));
    }

    Ok((P, K))
}
