//! Deterministic report emission.
//!
//! JSON reports are printed by a small canonical writer: object keys come out
//! in sorted order (serde_json's default map is a BTreeMap) and every float
//! is written with 17 significant digits, enough to round-trip f64 exactly.
//! The wall-clock duration lives outside the `report` object so that the
//! payload for identical inputs is byte-identical across runs.

#![allow(non_snake_case)]

use serde_json::Value;

use ceq_core::model::EquilibriumSolution;
use ceq_core::model::Scenario;

/// 17 significant digits; round-trips every finite f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Wraps a float for JSON: finite values stay numbers, non-finite become
/// strings (JSON has no literal for them).
pub fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else {
        Value::String(fmt_f64(x))
    }
}

fn write_json(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(f) = n.as_f64().filter(|_| n.is_f64()) {
                out.push_str(&fmt_f64(f));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => {
            // serde_json's string escaping is already canonical.
            out.push_str(&serde_json::to_string(s).expect("string serialization"));
        }
        Value::Array(items) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_json(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (k, (key, item)) in map.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("key serialization"));
                out.push(':');
                write_json(out, item);
            }
            out.push('}');
        }
    }
}

/// Canonical JSON text: sorted keys, 17-significant-digit floats, no spaces.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_json(&mut out, v);
    out
}

/// The full envelope: the deterministic `report` plus the timing outside it.
pub fn envelope(command: &str, options: Value, result: Value, duration_seconds: f64) -> String {
    let report = serde_json::json!({
        "command": command,
        "options": options,
        "result": result,
    });
    let mut text = canonical_json(&serde_json::json!({
        "report": report,
        "duration_seconds": duration_seconds,
    }));
    text.push('\n');
    text
}

/// Solution trajectories as plain nested arrays (time-major columns), which
/// read better than raw matrix serialization in the report.
pub fn solution_value(sc: &Scenario, sol: &EquilibriumSolution) -> Value {
    let n = sc.n();
    let N = sc.N;
    let controls: Vec<Value> = (0..n)
        .map(|i| {
            Value::Array(
                (0..N)
                    .map(|t| {
                        Value::Array(
                            sol.controls[i]
                                .column(t)
                                .iter()
                                .map(|v| json_f64(*v))
                                .collect(),
                        )
                    })
                    .collect(),
            )
        })
        .collect();
    let states: Vec<Value> = (0..n)
        .map(|i| {
            Value::Array(
                (0..=N)
                    .map(|t| {
                        Value::Array(
                            sol.states[i]
                                .column(t)
                                .iter()
                                .map(|v| json_f64(*v))
                                .collect(),
                        )
                    })
                    .collect(),
            )
        })
        .collect();
    let trading: Vec<Value> = (0..n)
        .map(|i| Value::Array((0..N).map(|t| json_f64(sol.trading[(i, t)])).collect()))
        .collect();
    let consumption: Vec<Value> = (0..n)
        .map(|i| {
            Value::Array(
                (0..N)
                    .map(|t| {
                        json_f64(sc.agents[i].consumption(&sol.controls[i].column(t).clone_owned()))
                    })
                    .collect(),
            )
        })
        .collect();
    serde_json::json!({
        "welfare": json_f64(sol.welfare),
        "prices": sol.prices.values.iter().map(|v| json_f64(*v)).collect::<Vec<_>>(),
        "controls": controls,
        "states": states,
        "trading": trading,
        "consumption": consumption,
        "residuals": residuals_value(sol),
    })
}

pub fn residuals_value(sol: &EquilibriumSolution) -> Value {
    let r = &sol.residuals;
    serde_json::json!({
        "balance_residual": json_f64(r.balance_residual),
        "feasibility_slack": json_f64(r.feasibility_slack),
        "complementarity_residual": json_f64(r.complementarity_residual),
        "price_negativity": json_f64(r.price_negativity),
        "best_response_gap": json_f64(r.best_response_gap),
        "passed": r.passed,
    })
}

/// CSV for solve/track/verify: time series with one row per step and a
/// terminal row (t = N) carrying only the states. Columns, in order:
/// t, lambda, h_1..h_n, e_1..e_n, a_1..a_n, then u_i_j for each agent i and
/// input component j, then x_i_j for each agent i and state component j.
pub fn solution_csv(sc: &Scenario, sol: &EquilibriumSolution) -> String {
    let n = sc.n();
    let N = sc.N;
    let mut header = vec!["t".to_string(), "lambda".to_string()];
    for tag in ["h", "e", "a"] {
        for i in 0..n {
            header.push(format!("{tag}_{}", i + 1));
        }
    }
    for (i, agent) in sc.agents.iter().enumerate() {
        for j in 0..agent.input_dim() {
            header.push(format!("u_{}_{}", i + 1, j + 1));
        }
    }
    for (i, agent) in sc.agents.iter().enumerate() {
        for j in 0..agent.state_dim() {
            header.push(format!("x_{}_{}", i + 1, j + 1));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for t in 0..=N {
        let mut row = vec![t.to_string()];
        if t < N {
            row.push(fmt_f64(sol.prices.values[t]));
            for i in 0..n {
                let u = sol.controls[i].column(t).clone_owned();
                row.push(fmt_f64(sc.agents[i].consumption(&u)));
            }
            for i in 0..n {
                row.push(fmt_f64(sol.trading[(i, t)]));
            }
            for i in 0..n {
                row.push(fmt_f64(sc.supply[(i, t)]));
            }
            for i in 0..n {
                for j in 0..sc.agents[i].input_dim() {
                    row.push(fmt_f64(sol.controls[i][(j, t)]));
                }
            }
        } else {
            // Terminal row: states only.
            let blanks = 1 + 3 * n + sc.agents.iter().map(|a| a.input_dim()).sum::<usize>();
            row.extend(std::iter::repeat(String::new()).take(blanks));
        }
        for i in 0..n {
            for j in 0..sc.agents[i].state_dim() {
                row.push(fmt_f64(sol.states[i][(j, t)]));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// CSV of key,value rows for scalar summaries (bounds).
pub fn key_value_csv(rows: &[(String, String)]) -> String {
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        out.push_str(k);
        out.push(',');
        out.push_str(v);
        out.push('\n');
    }
    out
}
