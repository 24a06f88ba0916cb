#![allow(non_snake_case)]

//! Reference tracking reduced to regulation: a shared target state and
//! per-agent steady-state inputs are folded into error coordinates, turning
//! the consumption maps affine and shifting the supply.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{AgentSpec, EquilibriumSolution, Scenario};
use crate::Result;

/// Residual allowed on the steady-state consistency equation A x̄ + B ū = x̄.
const CONSISTENCY_TOL: f64 = 1e-9;

/// A regulation scenario with a tracking target: all agents steer toward the
/// shared state x_ref, each holding it with its own steady input u_ref[i].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSpec {
    pub base: Scenario,
    pub x_ref: DVector<f64>,
    /// One steady-state input per agent.
    pub u_ref: Vec<DVector<f64>>,
}

impl TrackingSpec {
    pub fn new(base: Scenario, x_ref: DVector<f64>, u_ref: Vec<DVector<f64>>) -> Result<Self> {
        let spec = TrackingSpec { base, x_ref, u_ref };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let d = self.base.state_dim();
        let m = self.base.input_dim();
        if self.x_ref.len() != d {
            return Err(Error::InvalidInput(format!(
                "x_ref has length {}, expected {d}",
                self.x_ref.len()
            )));
        }
        if self.u_ref.len() != self.base.n() {
            return Err(Error::InvalidInput(format!(
                "{} steady inputs for {} agents",
                self.u_ref.len(),
                self.base.n()
            )));
        }
        for (i, (agent, ur)) in self.base.agents.iter().zip(&self.u_ref).enumerate() {
            if ur.len() != m {
                return Err(Error::InvalidInput(format!(
                    "u_ref[{i}] has length {}, expected {m}",
                    ur.len()
                )));
            }
            if !agent.is_pure_quadratic() {
                return Err(Error::InvalidInput(format!(
                    "agent {i} already has an affine consumption term; tracking \
                     expects a pure quadratic base"
                )));
            }
            let residual = (&agent.A * &self.x_ref + &agent.B * ur - &self.x_ref).amax();
            if residual > CONSISTENCY_TOL {
                return Err(Error::InvalidInput(format!(
                    "agent {i}: steady-state consistency A x_ref + B u_ref = x_ref \
                     fails with residual {residual:.3e}"
                )));
            }
        }
        // The reference consumption must leave supply to trade at every step.
        let steady: f64 = self
            .base
            .agents
            .iter()
            .zip(&self.u_ref)
            .map(|(agent, ur)| (ur.transpose() * &agent.H * ur)[(0, 0)])
            .sum();
        let C = self.base.total_supply();
        for t in 0..self.base.N {
            if C[t] <= steady {
                return Err(Error::InvalidInput(format!(
                    "transformed supply positivity fails at t = {t}: total supply \
                     {} does not exceed steady consumption {steady}",
                    C[t]
                )));
            }
        }
        Ok(())
    }
}

/// The tracking problem in error coordinates x - x_ref, u - u_ref:
/// initial states shift, supply drops by each agent's steady consumption,
/// and the consumption maps pick up the linear term H u_ref.
pub fn to_regulation(spec: &TrackingSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut agents = Vec::with_capacity(spec.base.n());
    let mut supply = spec.base.supply.clone();
    for (i, (agent, ur)) in spec.base.agents.iter().zip(&spec.u_ref).enumerate() {
        let steady = (ur.transpose() * &agent.H * ur)[(0, 0)];
        let shifted = AgentSpec::with_affine(
            agent.A.clone(),
            agent.B.clone(),
            agent.Q.clone(),
            agent.R.clone(),
            agent.H.clone(),
            &agent.H * ur,
            0.0,
            &agent.x0 - &spec.x_ref,
        )?;
        agents.push(shifted);
        for t in 0..spec.base.N {
            supply[(i, t)] -= steady;
        }
    }
    Scenario::new(agents, spec.base.N, supply, spec.base.threshold)
}

/// Maps a solution of the regulation problem back to tracking coordinates:
/// controls and states get the references added back; prices, trading,
/// welfare, and residuals are unchanged (trades and prices live in original
/// resource units, and the welfare value is the tracking objective).
pub fn recover_tracking(
    solution: &EquilibriumSolution,
    spec: &TrackingSpec,
) -> Result<EquilibriumSolution> {
    let n = spec.base.n();
    let d = spec.base.state_dim();
    let m = spec.base.input_dim();
    if solution.controls.len() != n || solution.states.len() != n {
        return Err(Error::InvalidInput(format!(
            "solution has {} agents, spec has {n}",
            solution.controls.len()
        )));
    }
    let mut recovered = solution.clone();
    for i in 0..n {
        let U = &mut recovered.controls[i];
        if U.shape() != (m, spec.base.N) {
            return Err(Error::InvalidInput(format!(
                "agent {i} controls are {} x {}, expected {m} x {}",
                U.nrows(),
                U.ncols(),
                spec.base.N
            )));
        }
        for t in 0..U.ncols() {
            let mut col = U.column_mut(t);
            col += &spec.u_ref[i];
        }
        let X = &mut recovered.states[i];
        if X.nrows() != d {
            return Err(Error::InvalidInput(format!(
                "agent {i} states have {} rows, expected {d}",
                X.nrows()
            )));
        }
        for t in 0..X.ncols() {
            let mut col = X.column_mut(t);
            col += &spec.x_ref;
        }
    }
    Ok(recovered)
}

/// Least-squares steady-state input for one agent: the minimum-norm solution
/// of B u = (I - A) x_ref, rejected unless it closes the consistency equation
/// to 1e-9. A convenience for writing specs; any consistent input works.
pub fn steady_state_input(agent: &AgentSpec, x_ref: &DVector<f64>) -> Result<DVector<f64>> {
    if x_ref.len() != agent.state_dim() {
        return Err(Error::InvalidInput(format!(
            "x_ref has length {}, expected {}",
            x_ref.len(),
            agent.state_dim()
        )));
    }
    let rhs = x_ref - &agent.A * x_ref;
    let svd = agent.B.clone().svd(true, true);
    let u = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Conditioning(format!("steady-state solve failed: {e}")))?;
    let residual = (&agent.B * &u - &rhs).amax();
    if residual > CONSISTENCY_TOL {
        return Err(Error::InvalidInput(format!(
            "no steady-state input holds x_ref: best residual {residual:.3e}"
        )));
    }
    Ok(u)
}
