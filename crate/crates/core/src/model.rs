#![allow(non_snake_case)]

//! Domain types and the operations every solver shares: dynamics rollout,
//! welfare evaluation, trading reconstruction, and equilibrium verification.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::riccati;
use crate::Result;

/// Entry-wise symmetry tolerance for the weight matrices.
const SYM_TOL: f64 = 1e-12;

/// Prices this far below zero are still accepted (pure roundoff).
pub const PRICE_NEG_TOL: f64 = 1e-12;

/// One agent: LTI dynamics, quadratic utility weights, quadratic (possibly
/// affine, when produced by the tracking reduction) consumption map, and the
/// initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub A: DMatrix<f64>,
    pub B: DMatrix<f64>,
    /// State penalty; also the terminal weight.
    pub Q: DMatrix<f64>,
    pub R: DMatrix<f64>,
    /// Consumption quadratic form: h(u) = u'Hu + 2 h_lin'u + h_const.
    pub H: DMatrix<f64>,
    /// Linear consumption term; zero unless produced by the tracking reduction.
    pub h_lin: DVector<f64>,
    /// Constant consumption offset; zero unless produced by the tracking reduction.
    pub h_const: f64,
    pub x0: DVector<f64>,
}

impl AgentSpec {
    /// Pure-quadratic agent (no affine consumption terms).
    pub fn new(
        A: DMatrix<f64>,
        B: DMatrix<f64>,
        Q: DMatrix<f64>,
        R: DMatrix<f64>,
        H: DMatrix<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let m = B.ncols();
        Self::with_affine(A, B, Q, R, H, DVector::zeros(m), 0.0, x0)
    }

    /// Agent with an affine consumption map, as produced by the tracking
    /// reduction.
    #[allow(clippy::too_many_arguments)]
    pub fn with_affine(
        A: DMatrix<f64>,
        B: DMatrix<f64>,
        Q: DMatrix<f64>,
        R: DMatrix<f64>,
        H: DMatrix<f64>,
        h_lin: DVector<f64>,
        h_const: f64,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let spec = AgentSpec {
            A,
            B,
            Q,
            R,
            H,
            h_lin,
            h_const,
            x0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn state_dim(&self) -> usize {
        self.A.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.B.ncols()
    }

    /// Resource consumed by one control action: u'Hu + 2 h_lin'u + h_const.
    pub fn consumption(&self, u: &DVector<f64>) -> f64 {
        (u.transpose() * &self.H * u)[(0, 0)] + 2.0 * self.h_lin.dot(u) + self.h_const
    }

    /// True when the consumption map has no affine part.
    pub fn is_pure_quadratic(&self) -> bool {
        self.h_const == 0.0 && self.h_lin.iter().all(|v| *v == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.A.nrows();
        let m = self.B.ncols();
        if self.A.ncols() != d {
            return Err(Error::InvalidInput("A must be square".into()));
        }
        if self.B.nrows() != d {
            return Err(Error::InvalidInput(format!(
                "B has {} rows, expected {} to match A",
                self.B.nrows(),
                d
            )));
        }
        if self.Q.shape() != (d, d) {
            return Err(Error::InvalidInput("Q must be d x d".into()));
        }
        if self.R.shape() != (m, m) {
            return Err(Error::InvalidInput("R must be m x m".into()));
        }
        if self.H.shape() != (m, m) {
            return Err(Error::InvalidInput("H must be m x m".into()));
        }
        if self.h_lin.len() != m {
            return Err(Error::InvalidInput("h_lin must have length m".into()));
        }
        if self.x0.len() != d {
            return Err(Error::InvalidInput("x0 must have length d".into()));
        }
        check_spd("Q", &self.Q)?;
        check_spd("R", &self.R)?;
        check_spd("H", &self.H)?;
        Ok(())
    }
}

/// Symmetry to 1e-12 and positive definiteness via the smallest eigenvalue.
pub(crate) fn check_spd(name: &str, M: &DMatrix<f64>) -> Result<()> {
    let scale = M.amax().max(1.0);
    let asym = (M - M.transpose()).amax();
    if asym > SYM_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "{name} is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let sym = (M + M.transpose()) * 0.5;
    let eigs = sym.symmetric_eigenvalues();
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "{name} is not positive definite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

/// Per-step non-negative clearing prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTrajectory {
    pub values: Vec<f64>,
}

impl PriceTrajectory {
    /// Accepts prices that are non-negative up to roundoff (>= -1e-12).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| **v < -PRICE_NEG_TOL) {
            return Err(Error::InvalidInput(format!(
                "negative price {v:.3e} in trajectory"
            )));
        }
        Ok(PriceTrajectory { values })
    }

    pub fn zeros(N: usize) -> Self {
        PriceTrajectory {
            values: vec![0.0; N],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest price over the horizon; 0 for an empty trajectory.
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// An agent population with horizon, per-step excess supply, and an optional
/// affordability threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub agents: Vec<AgentSpec>,
    /// Horizon length; control steps are t = 0..N-1.
    pub N: usize,
    /// n x N matrix of per-agent excess supply a_i(t).
    pub supply: DMatrix<f64>,
    /// Affordability threshold for the shaping problem, if any.
    pub threshold: Option<f64>,
}

impl Scenario {
    pub fn new(
        agents: Vec<AgentSpec>,
        N: usize,
        supply: DMatrix<f64>,
        threshold: Option<f64>,
    ) -> Result<Self> {
        let sc = Scenario {
            agents,
            N,
            supply,
            threshold,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn state_dim(&self) -> usize {
        self.agents[0].state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.agents[0].input_dim()
    }

    /// Total excess supply C(t) = sum_i a_i(t), length N.
    pub fn total_supply(&self) -> DVector<f64> {
        DVector::from_fn(self.N, |t, _| self.supply.column(t).sum())
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::InvalidInput("scenario has no agents".into()));
        }
        if self.N == 0 {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            a.validate()
                .map_err(|e| Error::InvalidInput(format!("agent {i}: {e}")))?;
        }
        // All agents share d and m: block stacking requires it.
        let d = self.agents[0].state_dim();
        let m = self.agents[0].input_dim();
        for (i, a) in self.agents.iter().enumerate() {
            if a.state_dim() != d || a.input_dim() != m {
                return Err(Error::InvalidInput(format!(
                    "agent {i} has dimensions ({}, {}), expected ({d}, {m})",
                    a.state_dim(),
                    a.input_dim()
                )));
            }
        }
        if self.supply.shape() != (self.agents.len(), self.N) {
            return Err(Error::InvalidInput(format!(
                "supply must be {} x {}, got {} x {}",
                self.agents.len(),
                self.N,
                self.supply.nrows(),
                self.supply.ncols()
            )));
        }
        for t in 0..self.N {
            let c = self.supply.column(t).sum();
            if c <= 0.0 {
                return Err(Error::InvalidInput(format!("C({t}) = {c} <= 0")));
            }
        }
        if let Some(th) = self.threshold {
            if !(th > 0.0) {
                return Err(Error::InvalidInput(format!("threshold {th} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Residuals of the equilibrium conditions for one candidate solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// max_t |sum_i e_i(t)|
    pub balance_residual: f64,
    /// min over i, t of a_i(t) - h_i(u_i(t)) - e_i(t); negative means violation.
    pub feasibility_slack: f64,
    /// max_t |lambda_t (sum_i h_i(u_i(t)) - C(t))|
    pub complementarity_residual: f64,
    /// max(0, -min_t lambda_t)
    pub price_negativity: f64,
    /// max over agents of (recomputed best-response payoff - supplied payoff).
    pub best_response_gap: f64,
    pub passed: bool,
}

/// Verification tolerances. The best-response gap is relative to
/// max(1, |welfare|); everything else is absolute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub balance: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub best_response_gap: f64,
    pub price_negativity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        // One to two orders looser than the solver stopping tolerances.
        Tolerances {
            balance: 1e-9,
            feasibility: 1e-9,
            complementarity: 1e-6,
            best_response_gap: 1e-6,
            price_negativity: PRICE_NEG_TOL,
        }
    }
}

/// Controls, trading, prices, welfare, and the residual report for one solved
/// scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    /// One m x N control matrix per agent (columns are time steps).
    pub controls: Vec<DMatrix<f64>>,
    /// One d x (N+1) state matrix per agent, the rollout of `controls`.
    pub states: Vec<DMatrix<f64>>,
    /// n x N traded amounts e_i(t).
    pub trading: DMatrix<f64>,
    pub prices: PriceTrajectory,
    pub welfare: f64,
    pub residuals: VerificationReport,
}

/// States under x(t+1) = A x(t) + B u(t) from the agent's initial state.
/// Returns a d x (N+1) matrix whose column t is x(t).
pub fn rollout(agent: &AgentSpec, controls: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = agent.state_dim();
    let m = agent.input_dim();
    if controls.nrows() != m {
        return Err(Error::InvalidInput(format!(
            "controls have {} rows, expected m = {m}",
            controls.nrows()
        )));
    }
    let N = controls.ncols();
    let mut xs = DMatrix::zeros(d, N + 1);
    xs.column_mut(0).copy_from(&agent.x0);
    for t in 0..N {
        let x = xs.column(t).clone_owned();
        let next = &agent.A * x + &agent.B * controls.column(t);
        xs.column_mut(t + 1).copy_from(&next);
    }
    Ok(xs)
}

/// Objective of the welfare problem at the given controls:
/// sum_i [ -x_i(N)'Q_i x_i(N) + sum_t ( -x_i(t)'Q_i x_i(t) - u_i(t)'R_i u_i(t) ) ].
pub fn evaluate_welfare(scenario: &Scenario, controls: &[DMatrix<f64>]) -> Result<f64> {
    check_controls(scenario, controls)?;
    let mut w = 0.0;
    for (agent, U) in scenario.agents.iter().zip(controls) {
        let xs = rollout(agent, U)?;
        for t in 0..scenario.N {
            let x = xs.column(t);
            let u = U.column(t);
            w -= (x.transpose() * &agent.Q * x)[(0, 0)];
            w -= (u.transpose() * &agent.R * u)[(0, 0)];
        }
        let xN = xs.column(scenario.N);
        w -= (xN.transpose() * &agent.Q * xN)[(0, 0)];
    }
    Ok(w)
}

/// Canonical trading completion:
/// e_i(t) = a_i(t) - h_i(u_i(t)) + (1/n)(sum_j h_j(u_j(t)) - sum_j a_j(t)).
/// Sums to zero per step by construction.
pub fn construct_trading(scenario: &Scenario, controls: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    check_controls(scenario, controls)?;
    let n = scenario.n();
    let mut E = DMatrix::zeros(n, scenario.N);
    for t in 0..scenario.N {
        let h: Vec<f64> = scenario
            .agents
            .iter()
            .zip(controls)
            .map(|(agent, U)| agent.consumption(&U.column(t).clone_owned()))
            .collect();
        let correction = (h.iter().sum::<f64>() - scenario.supply.column(t).sum()) / n as f64;
        for i in 0..n {
            E[(i, t)] = scenario.supply[(i, t)] - h[i] + correction;
        }
    }
    Ok(E)
}

fn check_controls(scenario: &Scenario, controls: &[DMatrix<f64>]) -> Result<()> {
    if controls.len() != scenario.n() {
        return Err(Error::InvalidInput(format!(
            "{} control matrices for {} agents",
            controls.len(),
            scenario.n()
        )));
    }
    for (i, U) in controls.iter().enumerate() {
        if U.shape() != (scenario.input_dim(), scenario.N) {
            return Err(Error::InvalidInput(format!(
                "agent {i} controls are {} x {}, expected {} x {}",
                U.nrows(),
                U.ncols(),
                scenario.input_dim(),
                scenario.N
            )));
        }
    }
    Ok(())
}

/// Checks the equilibrium conditions for a candidate solution. Failures are
/// reported in the residual fields, never raised.
pub fn verify_equilibrium(
    scenario: &Scenario,
    solution: &EquilibriumSolution,
    tol: &Tolerances,
) -> VerificationReport {
    let n = scenario.n();
    let N = scenario.N;
    let lambda = &solution.prices.values;

    let mut balance = 0.0f64;
    let mut slack = f64::INFINITY;
    let mut comp = 0.0f64;
    for t in 0..N {
        let mut e_sum = 0.0;
        let mut h_sum = 0.0;
        for i in 0..n {
            let u = solution.controls[i].column(t).clone_owned();
            let h = scenario.agents[i].consumption(&u);
            let e = solution.trading[(i, t)];
            e_sum += e;
            h_sum += h;
            slack = slack.min(scenario.supply[(i, t)] - h - e);
        }
        balance = balance.max(e_sum.abs());
        let c = scenario.supply.column(t).sum();
        if t < lambda.len() {
            comp = comp.max((lambda[t] * (h_sum - c)).abs());
        }
    }
    let min_price = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    let price_neg = (-min_price).max(0.0);

    // Best-response gap: each agent's payoff at the supplied prices, with the
    // active-constraint trading rule e_i = a_i - h_i(u_i), against the payoff
    // of the supplied plan.
    let mut gap = f64::NEG_INFINITY;
    for (i, agent) in scenario.agents.iter().enumerate() {
        let prices = PriceTrajectory {
            values: lambda.clone(),
        };
        let supplied = agent_payoff(scenario, agent, i, solution);
        let best = match riccati::best_response(agent, &prices, N) {
            // best_response reports the payoff without the sum_t lambda_t a_i(t)
            // constant; under e_i = a_i - h_i that constant completes it.
            Ok(br) => {
                let price_supply: f64 = (0..N).map(|t| lambda[t] * scenario.supply[(i, t)]).sum();
                br.payoff + price_supply
            }
            Err(_) => f64::INFINITY,
        };
        gap = gap.max(best - supplied);
    }

    let gap_scale = solution.welfare.abs().max(1.0);
    let passed = balance <= tol.balance
        && slack >= -tol.feasibility
        && comp <= tol.complementarity
        && price_neg <= tol.price_negativity
        && gap <= tol.best_response_gap * gap_scale;

    VerificationReport {
        balance_residual: balance,
        feasibility_slack: slack,
        complementarity_residual: comp,
        price_negativity: price_neg,
        best_response_gap: gap,
        passed,
    }
}

/// Payoff of agent i's supplied plan at the solution prices:
/// utility along the rollout plus sum_t lambda_t e_i(t).
fn agent_payoff(
    scenario: &Scenario,
    agent: &AgentSpec,
    i: usize,
    solution: &EquilibriumSolution,
) -> f64 {
    let U = &solution.controls[i];
    let xs = match rollout(agent, U) {
        Ok(xs) => xs,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut payoff = 0.0;
    for t in 0..scenario.N {
        let x = xs.column(t);
        let u = U.column(t);
        payoff -= (x.transpose() * &agent.Q * x)[(0, 0)];
        payoff -= (u.transpose() * &agent.R * u)[(0, 0)];
        payoff += solution.prices.values[t] * solution.trading[(i, t)];
    }
    let xN = xs.column(scenario.N);
    payoff -= (xN.transpose() * &agent.Q * xN)[(0, 0)];
    payoff
}
