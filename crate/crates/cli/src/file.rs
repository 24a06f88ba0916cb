//! Scenario files: a small JSON schema that builds the core model types.
//!
//! Top-level keys: `horizon`, optional `threshold`, `agents`, `supply`,
//! optional `tracking`. Matrices are nested row-major arrays; `q_scalar` is
//! shorthand for Q = q_scalar * I. Supply rows are either explicit per-step
//! arrays or `{"kind": "sinusoid", "amp": a, "freq": f, "offset": c}`,
//! expanded to a * sin(f * pi * t) + c for t = 0..horizon-1.

#![allow(non_snake_case)]

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use ceq_core::model::{AgentSpec, Scenario};
use ceq_core::tracking::TrackingSpec;
use ceq_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub agents: Vec<AgentEntry>,
    pub supply: Vec<SupplyEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub A: Vec<Vec<f64>>,
    pub B: Vec<Vec<f64>>,
    /// Full state weight matrix; exclusive with `q_scalar`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub Q: Option<Vec<Vec<f64>>>,
    /// Shorthand for Q = q_scalar * I.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_scalar: Option<f64>,
    pub R: Vec<Vec<f64>>,
    pub H: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_lin: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_const: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SupplyEntry {
    Explicit(Vec<f64>),
    Expression {
        kind: String,
        amp: f64,
        freq: f64,
        offset: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingEntry {
    pub x_ref: Vec<f64>,
    /// One steady input per agent.
    pub u_ref: Vec<Vec<f64>>,
}

/// A validated scenario, with or without a tracking reference.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Plain(Scenario),
    Tracking(TrackingSpec),
}

impl Loaded {
    pub fn scenario(&self) -> &Scenario {
        match self {
            Loaded::Plain(sc) => sc,
            Loaded::Tracking(spec) => &spec.base,
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{name} has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput(format!(
            "{name} rows must be non-empty and of equal length"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl AgentEntry {
    fn build(&self, index: usize) -> Result<AgentSpec> {
        let label = format!("agent {index}");
        let A = matrix(&format!("{label} A"), &self.A)?;
        let B = matrix(&format!("{label} B"), &self.B)?;
        let Q = match (&self.Q, self.q_scalar) {
            (Some(rows), None) => matrix(&format!("{label} Q"), rows)?,
            (None, Some(q)) => DMatrix::identity(A.nrows(), A.nrows()) * q,
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput(format!(
                    "{label}: give Q or q_scalar, not both"
                )))
            }
            (None, None) => {
                return Err(Error::InvalidInput(format!(
                    "{label}: one of Q or q_scalar is required"
                )))
            }
        };
        let R = matrix(&format!("{label} R"), &self.R)?;
        let H = matrix(&format!("{label} H"), &self.H)?;
        let x0 = DVector::from_vec(self.x0.clone());
        let m = B.ncols();
        let h_lin = match &self.h_lin {
            Some(v) => DVector::from_vec(v.clone()),
            None => DVector::zeros(m),
        };
        AgentSpec::with_affine(A, B, Q, R, H, h_lin, self.h_const.unwrap_or(0.0), x0)
            .map_err(|e| Error::InvalidInput(format!("{label}: {e}")))
    }
}

impl SupplyEntry {
    fn expand(&self, index: usize, N: usize) -> Result<Vec<f64>> {
        match self {
            SupplyEntry::Explicit(values) => {
                if values.len() != N {
                    return Err(Error::InvalidInput(format!(
                        "supply row {index} has {} entries, expected horizon {N}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
            SupplyEntry::Expression {
                kind,
                amp,
                freq,
                offset,
            } => {
                if kind != "sinusoid" {
                    return Err(Error::InvalidInput(format!(
                        "supply row {index}: unknown expression kind {kind:?}"
                    )));
                }
                Ok((0..N)
                    .map(|t| amp * (freq * std::f64::consts::PI * t as f64).sin() + offset)
                    .collect())
            }
        }
    }
}

/// Builds and validates the core objects from a parsed file. All core-model
/// invariants are re-checked here through the constructors.
pub fn build(file: &ScenarioFile) -> Result<Loaded> {
    if file.horizon == 0 {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    let agents = file
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| a.build(i))
        .collect::<Result<Vec<_>>>()?;
    if file.supply.len() != agents.len() {
        return Err(Error::InvalidInput(format!(
            "{} supply rows for {} agents",
            file.supply.len(),
            agents.len()
        )));
    }
    let n = agents.len();
    let N = file.horizon;
    let mut supply = DMatrix::zeros(n, N);
    for (i, entry) in file.supply.iter().enumerate() {
        let row = entry.expand(i, N)?;
        for t in 0..N {
            supply[(i, t)] = row[t];
        }
    }
    let base = Scenario::new(agents, N, supply, file.threshold)?;
    match &file.tracking {
        None => Ok(Loaded::Plain(base)),
        Some(tr) => {
            let x_ref = DVector::from_vec(tr.x_ref.clone());
            let u_ref = tr.u_ref.iter().cloned().map(DVector::from_vec).collect();
            Ok(Loaded::Tracking(TrackingSpec::new(base, x_ref, u_ref)?))
        }
    }
}

/// Re-encodes a validated scenario. Supply comes back explicit (expression
/// rows are expanded at load time), everything else is field-for-field, so a
/// load/emit/load round trip is exact.
pub fn to_file(loaded: &Loaded) -> ScenarioFile {
    let sc = loaded.scenario();
    let agents = sc
        .agents
        .iter()
        .map(|a| AgentEntry {
            A: matrix_rows(&a.A),
            B: matrix_rows(&a.B),
            Q: Some(matrix_rows(&a.Q)),
            q_scalar: None,
            R: matrix_rows(&a.R),
            H: matrix_rows(&a.H),
            x0: a.x0.iter().copied().collect(),
            h_lin: if a.h_lin.iter().all(|v| *v == 0.0) {
                None
            } else {
                Some(a.h_lin.iter().copied().collect())
            },
            h_const: if a.h_const == 0.0 {
                None
            } else {
                Some(a.h_const)
            },
        })
        .collect();
    let supply = (0..sc.n())
        .map(|i| SupplyEntry::Explicit((0..sc.N).map(|t| sc.supply[(i, t)]).collect()))
        .collect();
    let tracking = match loaded {
        Loaded::Plain(_) => None,
        Loaded::Tracking(spec) => Some(TrackingEntry {
            x_ref: spec.x_ref.iter().copied().collect(),
            u_ref: spec
                .u_ref
                .iter()
                .map(|u| u.iter().copied().collect())
                .collect(),
        }),
    };
    ScenarioFile {
        horizon: sc.N,
        threshold: sc.threshold,
        agents,
        supply,
        tracking,
    }
}

pub fn parse_str(text: &str, origin: &str) -> Result<ScenarioFile> {
    serde_json::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("parse error in {origin}: {e}")))
}

/// Reads, parses, and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidInput(format!("failed to read {}: {e}", path.display()))
    })?;
    build(&parse_str(&text, &path.display().to_string())?)
}
