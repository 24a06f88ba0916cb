#![allow(non_snake_case)]

//! Infinite-horizon analysis: stacked closed-loop system, invariant-set
//! radius, zero-price certificates, and the time after which the equilibrium
//! price vanishes (computed by verified truncation).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{AgentSpec, PriceTrajectory, Scenario};
use crate::riccati::{dare, spectral_norm};
use crate::solver::{consumption_block, solve_welfare_finite, SolverOptions};
use crate::Result;

/// Block-diagonal stacking of all agents, with the stabilizing solution of
/// the joint Riccati equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedSystem {
    pub A_blk: DMatrix<f64>,
    pub B_blk: DMatrix<f64>,
    pub Q_blk: DMatrix<f64>,
    pub R_blk: DMatrix<f64>,
    pub H_blk: DMatrix<f64>,
    /// Stabilizing Riccati solution for the stacked problem.
    pub P: DMatrix<f64>,
    /// Stabilizing gain: spectral radius of A_blk + B_blk K is < 1.
    pub K: DMatrix<f64>,
}

fn block_diag(blocks: impl Iterator<Item = DMatrix<f64>>) -> DMatrix<f64> {
    let blocks: Vec<_> = blocks.collect();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut M = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        M.view_mut((r, c), b.shape()).copy_from(&b);
        r += b.nrows();
        c += b.ncols();
    }
    M
}

/// All agents' initial states concatenated in agent order.
pub fn stacked_x0(scenario: &Scenario) -> DVector<f64> {
    let d = scenario.state_dim();
    let mut x0 = DVector::zeros(scenario.n() * d);
    for (i, agent) in scenario.agents.iter().enumerate() {
        x0.rows_mut(i * d, d).copy_from(&agent.x0);
    }
    x0
}

/// Stacks the scenario and solves the joint Riccati equation. Requires pure
/// quadratic consumption maps: the invariant-set geometry is built on
/// u'H_blk u, which an affine consumption term would falsify.
pub fn stack(scenario: &Scenario) -> Result<StackedSystem> {
    scenario.validate()?;
    if let Some(i) = scenario.agents.iter().position(|a| !a.is_pure_quadratic()) {
        return Err(Error::InvalidInput(format!(
            "agent {i} has an affine consumption term; infinite-horizon analysis \
             requires pure quadratic consumption (reduce tracking specs first)"
        )));
    }
    let A_blk = block_diag(scenario.agents.iter().map(|a| a.A.clone()));
    let B_blk = block_diag(scenario.agents.iter().map(|a| a.B.clone()));
    let Q_blk = block_diag(scenario.agents.iter().map(|a| a.Q.clone()));
    let R_blk = block_diag(scenario.agents.iter().map(|a| a.R.clone()));
    let H_blk = consumption_block(scenario);
    let (P, K) = dare(&A_blk, &B_blk, &Q_blk, &R_blk)?;
    Ok(StackedSystem {
        A_blk,
        B_blk,
        Q_blk,
        R_blk,
        H_blk,
        P,
        K,
    })
}

/// Radius of the invariant ball around the origin within which the
/// closed-loop consumption never exceeds the per-step supply floor:
/// sqrt( C_min sigma_min(P) / (sigma_max(P) sigma_max(K'H_blk K)) ).
/// +infinity when K = 0 (the constraint is never active).
pub fn invariant_radius(scenario: &Scenario) -> Result<f64> {
    let sys = stack(scenario)?;
    let c_min = supply_floor(scenario);
    Ok(radius_from(&sys, c_min))
}

fn supply_floor(scenario: &Scenario) -> f64 {
    scenario
        .total_supply()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn radius_from(sys: &StackedSystem, c_min: f64) -> f64 {
    if sys.K.amax() == 0.0 {
        return f64::INFINITY;
    }
    let eigs = sys.P.symmetric_eigenvalues();
    let p_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let p_max = eigs.iter().cloned().fold(0.0f64, f64::max);
    let T = sys.K.transpose() * &sys.H_blk * &sys.K;
    let t_max = spectral_norm(&T);
    (c_min * p_min / (p_max * t_max)).sqrt()
}

/// Largest level beta such that every x with x'Px <= beta satisfies
/// (Kx)'H_blk(Kx) <= c_min. The sublevel set {x'Px <= beta} is forward
/// invariant (x'Px is a Lyapunov function of the closed loop), so it
/// certifies a zero price from any state inside it. It always contains the
/// invariant ball: this level only widens the certified region.
pub fn absorption_level(sys: &StackedSystem, c_min: f64) -> f64 {
    let T = sys.K.transpose() * &sys.H_blk * &sys.K;
    // lambda_max(P^{-1/2} T P^{-1/2}) via the Cholesky factor of P.
    let chol = match sys.P.clone().cholesky() {
        Some(c) => c,
        None => return 0.0,
    };
    let L = chol.l();
    let Linv = L
        .clone()
        .try_inverse()
        .expect("triangular factor of an SPD matrix is invertible");
    let M = &Linv * T * Linv.transpose();
    let lam_max = ((&M + M.transpose()) * 0.5)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    if lam_max <= 0.0 {
        f64::INFINITY
    } else {
        c_min / lam_max
    }
}

/// Zero-price certificate for one initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroPriceCertificate {
    /// True when the closed-loop trajectory from x0 is certified feasible
    /// forever, so the zero price trajectory is the equilibrium price.
    pub inside: bool,
    /// Invariant-ball radius (+infinity when the gain is zero).
    pub radius: f64,
    /// Smallest index with the whole price tail below tolerance; 0 when
    /// inside.
    pub n_bar: Option<usize>,
    /// Prices from the truncated solve; identically zero (over the checked
    /// window) when inside.
    pub price_tail: PriceTrajectory,
    /// Step at which the checked trajectory entered the absorbing sublevel
    /// set of x'Px; None when the certificate fell back to a truncated solve.
    pub absorption_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfiniteOptions {
    /// Steps of the closed-loop feasibility check before giving up on
    /// absorption.
    pub window: usize,
    /// Initial truncation length for the finite solve fallback.
    pub horizon_cap: usize,
    /// Prices below this are treated as zero.
    pub price_tol: f64,
    pub solver: SolverOptions,
}

impl Default for InfiniteOptions {
    fn default() -> Self {
        InfiniteOptions {
            window: 200,
            horizon_cap: 60,
            price_tol: 1e-6,
            solver: SolverOptions::default(),
        }
    }
}

/// Slack allowed on the per-step consumption check, absolute.
const FEAS_SLACK: f64 = 1e-9;

/// Certifies a zero equilibrium price from x0 when possible. The trajectory
/// under u = Kx is rolled forward: if it stays feasible (consumption at most
/// the supply floor) with non-increasing x'Px until it enters the absorbing
/// sublevel set, the zero-price equilibrium u*(t) = K x(t) is certified and
/// n_bar = 0. Otherwise the certificate falls back to `zero_price_time`.
pub fn zero_price_certificate(
    scenario: &Scenario,
    x0: &DVector<f64>,
    opts: &InfiniteOptions,
) -> Result<ZeroPriceCertificate> {
    let sys = stack(scenario)?;
    let nd = sys.A_blk.nrows();
    if x0.len() != nd {
        return Err(Error::InvalidInput(format!(
            "stacked initial state has length {}, expected {nd}",
            x0.len()
        )));
    }
    let c_min = supply_floor(scenario);
    let radius = radius_from(&sys, c_min);
    let beta = absorption_level(&sys, c_min);

    let mut absorption_step = None;
    let mut x = x0.clone();
    let mut v_prev = f64::INFINITY;
    for t in 0..=opts.window {
        let v = (x.transpose() * &sys.P * &x)[(0, 0)];
        if v > v_prev * (1.0 + 1e-12) {
            break;
        }
        if v <= beta * (1.0 + 1e-12) {
            absorption_step = Some(t);
            break;
        }
        let u = &sys.K * &x;
        let cons = (u.transpose() * &sys.H_blk * &u)[(0, 0)];
        if cons > c_min + FEAS_SLACK {
            break;
        }
        v_prev = v;
        x = &sys.A_blk * &x + &sys.B_blk * u;
    }

    if absorption_step.is_some() {
        return Ok(ZeroPriceCertificate {
            inside: true,
            radius,
            n_bar: Some(0),
            price_tail: PriceTrajectory::zeros(opts.window),
            absorption_step,
        });
    }

    let decay = zero_price_time(scenario, x0, opts.horizon_cap, opts.price_tol, &opts.solver)?;
    Ok(ZeroPriceCertificate {
        inside: false,
        radius,
        n_bar: Some(decay.n_bar),
        price_tail: decay.solution.prices.clone(),
        absorption_step: None,
    })
}

/// Result of the truncated price-decay analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceDecay {
    /// Smallest index such that every price from it onward is below tolerance.
    pub n_bar: usize,
    /// Truncation length the quiet tail was certified at.
    pub horizon: usize,
    pub solution: crate::model::EquilibriumSolution,
}

/// The scenario truncated to `horizon` steps with the supply extended
/// cyclically and the agents' initial states replaced by slices of x0.
fn truncated(scenario: &Scenario, x0: &DVector<f64>, horizon: usize) -> Result<Scenario> {
    let d = scenario.state_dim();
    let agents: Vec<AgentSpec> = scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut a = a.clone();
            a.x0 = x0.rows(i * d, d).clone_owned();
            a
        })
        .collect();
    let supply =
        DMatrix::from_fn(scenario.n(), horizon, |i, t| scenario.supply[(i, t % scenario.N)]);
    Scenario::new(agents, horizon, supply, scenario.threshold)
}

/// Smallest N_bar with lambda_t < price_tol for every t >= N_bar, by a
/// truncated solve with a verified quiet tail: the last quarter of the window
/// must be silent and the terminal state contracted to 1e-3 of the initial
/// norm. A noisy tail doubles the truncation length, up to four times.
pub fn zero_price_time(
    scenario: &Scenario,
    x0: &DVector<f64>,
    horizon_cap: usize,
    price_tol: f64,
    solver: &SolverOptions,
) -> Result<PriceDecay> {
    scenario.validate()?;
    if horizon_cap == 0 {
        return Err(Error::InvalidInput("horizon cap must be positive".into()));
    }
    if !(price_tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "price tolerance {price_tol} must be > 0"
        )));
    }
    let x0_norm = x0.norm();

    let mut horizon = horizon_cap;
    let mut last_report = String::new();
    for _ in 0..5 {
        let sc = truncated(scenario, x0, horizon)?;
        let solution = solve_welfare_finite(&sc, solver)?;
        let lambda = &solution.prices.values;

        let tail_start = horizon - horizon / 4;
        let tail_quiet = lambda[tail_start..].iter().all(|l| *l < price_tol);
        let terminal: f64 = solution
            .states
            .iter()
            .map(|xs| xs.column(horizon).norm_squared())
            .sum::<f64>()
            .sqrt();
        let contracted = terminal <= 1e-3 * x0_norm;

        if tail_quiet && contracted {
            let n_bar = lambda
                .iter()
                .rposition(|l| *l >= price_tol)
                .map_or(0, |t| t + 1);
            return Ok(PriceDecay {
                n_bar,
                horizon,
                solution,
            });
        }
        last_report = format!(
            "at truncation {horizon}: quiet tail = {tail_quiet}, terminal norm = \
             {terminal:.3e} vs required {:.3e}",
            1e-3 * x0_norm
        );
        horizon *= 2;
    }
    Err(Error::Truncation(format!(
        "no quiet price tail up to truncation {}; the initial condition may be \
         infeasible or the horizon cap too small ({last_report})",
        horizon / 2
    )))
}
