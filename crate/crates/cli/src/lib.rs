//! `ceq`: command-line front end for the equilibrium solver.
//!
//! Subcommands load a scenario file, run one library entry point, and emit a
//! deterministic report (JSON by default, CSV for plot ingestion). Exit codes:
//! 0 success, 1 solver non-convergence or a failed equilibrium check, 2
//! invalid input or usage.

pub mod file;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use ceq_core::infinite::{
    absorption_level, invariant_radius, stack, stacked_x0, zero_price_certificate,
    InfiniteOptions,
};
use ceq_core::model::{verify_equilibrium, AgentSpec, Scenario, Tolerances};
use ceq_core::shaping::{
    bisection_shape, bound_params, delta_max_dp, delta_max_qp, price_upper_bound, BoxMode,
    PriceBoundMethod, ShapingResult,
};
use ceq_core::solver::{solve_welfare_finite, SolverOptions};
use ceq_core::tracking::{recover_tracking, to_regulation};
use ceq_core::{Error, Result};

use file::{load_scenario, Loaded};
use report::{envelope, fmt_f64, json_f64, key_value_csv, solution_csv, solution_value};

#[derive(Parser)]
#[command(
    name = "ceq",
    version,
    about = "Competitive-equilibrium prices, trajectories, and trading for \
             linear agents sharing a scarce resource"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the finite-horizon equilibrium and report trajectories.
    Solve(SolveArgs),
    /// Report the a priori weight and price bounds for a thresholded scenario.
    Bounds(CommonArgs),
    /// Bisect for the largest weight bound whose peak price meets the threshold.
    Shape(ShapeArgs),
    /// Infinite-horizon certificates: invariant radius, absorption, price decay.
    Infinite(InfiniteArgs),
    /// Solve, then re-check the equilibrium conditions; exit 1 on failure.
    Verify(SolveArgs),
    /// Solve a tracking scenario in error coordinates and map the result back.
    Track(SolveArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long, value_name = "PATH")]
    scenario: PathBuf,
    /// Output path; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Dual residual tolerance for the solver.
    #[arg(long)]
    tol: Option<f64>,
    /// Dual iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Overrides the scenario's affordability threshold.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Overrides every agent's state weight with Q = q * I.
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args)]
struct ShapeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Upper endpoint of the bisection interval; its peak price must exceed
    /// the threshold.
    #[arg(long)]
    d_rho: f64,
    /// Bisection iteration cap.
    #[arg(long, default_value_t = 30)]
    iters: usize,
    /// Equality tolerance on the peak price, relative to the threshold.
    #[arg(long)]
    price_tol: Option<f64>,
    /// Where to evaluate the worst case over the weight box: `corner` or
    /// `grid:<points>`.
    #[arg(long, default_value = "corner")]
    mode: String,
}

#[derive(Args)]
struct InfiniteArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Initial truncation length for the price-decay solve.
    #[arg(long)]
    horizon_cap: Option<usize>,
    /// Prices below this are treated as zero.
    #[arg(long)]
    price_tol: Option<f64>,
    /// Steps of the closed-loop feasibility check.
    #[arg(long)]
    window: Option<usize>,
}

impl CommonArgs {
    fn solver_options(&self) -> SolverOptions {
        let mut opts = SolverOptions::default();
        if let Some(tol) = self.tol {
            opts.residual_tol = tol;
        }
        if let Some(iters) = self.max_iters {
            opts.max_iters = iters;
        }
        opts
    }

    /// Loads the scenario and applies the flag overrides.
    fn load(&self, q: Option<f64>) -> Result<Loaded> {
        let mut loaded = load_scenario(&self.scenario)?;
        if self.threshold.is_some() || q.is_some() {
            loaded = rebuild(&loaded, self.threshold, q)?;
        }
        Ok(loaded)
    }

    fn options_value(&self, q: Option<f64>) -> Value {
        json!({
            "scenario": self.scenario.display().to_string(),
            "format": match self.format { Format::Json => "json", Format::Csv => "csv" },
            "tol": self.tol.map(json_f64),
            "max_iters": self.max_iters,
            "threshold": self.threshold.map(json_f64),
            "q": q.map(json_f64),
        })
    }

    fn write(&self, text: &str) -> Result<()> {
        match &self.out {
            None => {
                print!("{text}");
                Ok(())
            }
            Some(path) => std::fs::write(path, text).map_err(|e| {
                Error::InvalidInput(format!("failed to write {}: {e}", path.display()))
            }),
        }
    }
}

/// Rebuilds the loaded scenario with a new threshold and/or Q override,
/// re-running every constructor check.
fn rebuild(loaded: &Loaded, threshold: Option<f64>, q: Option<f64>) -> Result<Loaded> {
    let sc = loaded.scenario();
    let agents = sc
        .agents
        .iter()
        .map(|a| match q {
            None => Ok(a.clone()),
            Some(q) => AgentSpec::with_affine(
                a.A.clone(),
                a.B.clone(),
                DMatrix::identity(a.state_dim(), a.state_dim()) * q,
                a.R.clone(),
                a.H.clone(),
                a.h_lin.clone(),
                a.h_const,
                a.x0.clone(),
            ),
        })
        .collect::<Result<Vec<_>>>()?;
    let base = Scenario::new(
        agents,
        sc.N,
        sc.supply.clone(),
        threshold.or(sc.threshold),
    )?;
    match loaded {
        Loaded::Plain(_) => Ok(Loaded::Plain(base)),
        Loaded::Tracking(spec) => Ok(Loaded::Tracking(ceq_core::tracking::TrackingSpec::new(
            base,
            spec.x_ref.clone(),
            spec.u_ref.clone(),
        )?)),
    }
}

fn require_plain(loaded: Loaded) -> Result<Scenario> {
    match loaded {
        Loaded::Plain(sc) => Ok(sc),
        Loaded::Tracking(_) => Err(Error::InvalidInput(
            "scenario has a tracking section; use the track subcommand".into(),
        )),
    }
}

fn require_threshold(sc: &Scenario) -> Result<f64> {
    sc.threshold.ok_or_else(|| {
        Error::InvalidInput(
            "no affordability threshold: set `threshold` in the scenario or pass --threshold"
                .into(),
        )
    })
}

fn parse_mode(text: &str) -> Result<BoxMode> {
    if text == "corner" {
        return Ok(BoxMode::Corner);
    }
    if let Some(points) = text.strip_prefix("grid:") {
        let points: usize = points
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad grid size in --mode {text:?}")))?;
        return Ok(BoxMode::Grid(points));
    }
    Err(Error::InvalidInput(format!(
        "--mode must be corner or grid:<points>, got {text:?}"
    )))
}

fn shaping_value(result: &ShapingResult) -> Value {
    json!({
        "delta_max": json_f64(result.delta_max),
        "converged": result.converged,
        "iterations": result.iterations,
        "trace": result.trace.iter().map(|it| json!({
            "b": json_f64(it.b),
            "d": json_f64(it.d),
            "L": json_f64(it.L),
            "lambda": json_f64(it.lambda),
        })).collect::<Vec<_>>(),
    })
}

fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let sc = require_plain(args.common.load(args.q)?)?;
    let opts = args.common.solver_options();
    let started = Instant::now();
    let sol = solve_welfare_finite(&sc, &opts)?;
    let duration = started.elapsed().as_secs_f64();
    let text = match args.common.format {
        Format::Csv => solution_csv(&sc, &sol),
        Format::Json => envelope(
            "solve",
            args.common.options_value(args.q),
            solution_value(&sc, &sol),
            duration,
        ),
    };
    args.common.write(&text)?;
    Ok(0)
}

fn cmd_verify(args: &SolveArgs) -> Result<i32> {
    let sc = require_plain(args.common.load(args.q)?)?;
    let opts = args.common.solver_options();
    let started = Instant::now();
    let sol = solve_welfare_finite(&sc, &opts)?;
    let checked = verify_equilibrium(&sc, &sol, &Tolerances::default());
    let duration = started.elapsed().as_secs_f64();
    let result = json!({
        "residuals": report::residuals_value(&sol),
        "welfare": json_f64(sol.welfare),
        "max_price": json_f64(sol.prices.max()),
        "passed": checked.passed,
    });
    let text = match args.common.format {
        Format::Csv => solution_csv(&sc, &sol),
        Format::Json => envelope("verify", args.common.options_value(args.q), result, duration),
    };
    args.common.write(&text)?;
    Ok(if checked.passed { 0 } else { 1 })
}

fn cmd_track(args: &SolveArgs) -> Result<i32> {
    let spec = match args.common.load(args.q)? {
        Loaded::Tracking(spec) => spec,
        Loaded::Plain(_) => {
            return Err(Error::InvalidInput(
                "scenario has no tracking section; use the solve subcommand".into(),
            ))
        }
    };
    let opts = args.common.solver_options();
    let started = Instant::now();
    let reg = to_regulation(&spec)?;
    let sol = solve_welfare_finite(&reg, &opts)?;
    let rec = recover_tracking(&sol, &spec)?;
    let duration = started.elapsed().as_secs_f64();
    let text = match args.common.format {
        Format::Csv => solution_csv(&spec.base, &rec),
        Format::Json => envelope(
            "track",
            args.common.options_value(args.q),
            solution_value(&spec.base, &rec),
            duration,
        ),
    };
    args.common.write(&text)?;
    Ok(0)
}

fn cmd_bounds(common: &CommonArgs) -> Result<i32> {
    let sc = require_plain(common.load(None)?)?;
    require_threshold(&sc)?;
    let started = Instant::now();
    let params = bound_params(&sc)?;
    let dqp = delta_max_qp(&params);
    let ddp = delta_max_dp(&params);
    let mut bound_qp = Vec::with_capacity(params.N);
    let mut bound_dp = Vec::with_capacity(params.N);
    for k in 0..params.N {
        // Price bounds evaluated at each family's own delta_max; infinite
        // deltas (no state/input coupling) admit every weight, with the
        // trivial zero bound.
        bound_qp.push(if dqp.is_finite() {
            price_upper_bound(&params, dqp, PriceBoundMethod::Qp, k)?
        } else {
            0.0
        });
        bound_dp.push(if ddp.is_finite() {
            price_upper_bound(&params, ddp, PriceBoundMethod::Dp, k)?
        } else {
            0.0
        });
    }
    let duration = started.elapsed().as_secs_f64();
    let result = json!({
        "alpha": json_f64(params.alpha),
        "beta": json_f64(params.beta),
        "gamma": json_f64(params.gamma),
        "rho": json_f64(params.rho),
        "n": params.n,
        "horizon": params.N,
        "lambda_dag": json_f64(params.lambda_dag),
        "delta_max_qp": json_f64(dqp),
        "delta_max_dp": json_f64(ddp),
        "price_bound_qp": bound_qp.iter().map(|v| json_f64(*v)).collect::<Vec<_>>(),
        "price_bound_dp": bound_dp.iter().map(|v| json_f64(*v)).collect::<Vec<_>>(),
    });
    let text = match common.format {
        Format::Csv => {
            let mut rows = vec![
                ("alpha".to_string(), fmt_f64(params.alpha)),
                ("beta".to_string(), fmt_f64(params.beta)),
                ("gamma".to_string(), fmt_f64(params.gamma)),
                ("rho".to_string(), fmt_f64(params.rho)),
                ("n".to_string(), params.n.to_string()),
                ("horizon".to_string(), params.N.to_string()),
                ("lambda_dag".to_string(), fmt_f64(params.lambda_dag)),
                ("delta_max_qp".to_string(), fmt_f64(dqp)),
                ("delta_max_dp".to_string(), fmt_f64(ddp)),
            ];
            for (k, v) in bound_qp.iter().enumerate() {
                rows.push((format!("price_bound_qp_{k}"), fmt_f64(*v)));
            }
            for (k, v) in bound_dp.iter().enumerate() {
                rows.push((format!("price_bound_dp_{k}"), fmt_f64(*v)));
            }
            key_value_csv(&rows)
        }
        Format::Json => envelope("bounds", common.options_value(None), result, duration),
    };
    common.write(&text)?;
    Ok(0)
}

fn cmd_shape(args: &ShapeArgs) -> Result<i32> {
    let sc = require_plain(args.common.load(None)?)?;
    let lambda_dag = require_threshold(&sc)?;
    let mode = parse_mode(&args.mode)?;
    let opts = args.common.solver_options();
    let started = Instant::now();
    let result = bisection_shape(&sc, lambda_dag, args.d_rho, args.iters, args.price_tol, mode, &opts)?;
    let duration = started.elapsed().as_secs_f64();
    let text = match args.common.format {
        Format::Csv => {
            let mut out = String::from("k,b,d,L,lambda\n");
            for (k, it) in result.trace.iter().enumerate() {
                out.push_str(&format!(
                    "{k},{},{},{},{}\n",
                    fmt_f64(it.b),
                    fmt_f64(it.d),
                    fmt_f64(it.L),
                    fmt_f64(it.lambda)
                ));
            }
            out
        }
        Format::Json => {
            let mut options = args.common.options_value(None);
            let extra = json!({
                "d_rho": json_f64(args.d_rho),
                "iters": args.iters,
                "price_tol": args.price_tol.map(json_f64),
                "mode": args.mode,
            });
            merge(&mut options, extra);
            envelope("shape", options, shaping_value(&result), duration)
        }
    };
    args.common.write(&text)?;
    Ok(0)
}

fn cmd_infinite(args: &InfiniteArgs) -> Result<i32> {
    let sc = require_plain(args.common.load(None)?)?;
    let mut opts = InfiniteOptions {
        solver: args.common.solver_options(),
        ..InfiniteOptions::default()
    };
    if let Some(cap) = args.horizon_cap {
        opts.horizon_cap = cap;
    }
    if let Some(tol) = args.price_tol {
        opts.price_tol = tol;
    }
    if let Some(window) = args.window {
        opts.window = window;
    }
    let started = Instant::now();
    let sys = stack(&sc)?;
    let radius = invariant_radius(&sc)?;
    let c_min = sc.total_supply().min();
    let absorption = absorption_level(&sys, c_min);
    let x0 = stacked_x0(&sc);
    let cert = zero_price_certificate(&sc, &x0, &opts)?;
    let duration = started.elapsed().as_secs_f64();
    let text = match args.common.format {
        Format::Csv => {
            let mut out = String::from("t,lambda\n");
            for (t, l) in cert.price_tail.values.iter().enumerate() {
                out.push_str(&format!("{t},{}\n", fmt_f64(*l)));
            }
            out
        }
        Format::Json => {
            let mut options = args.common.options_value(None);
            let extra = json!({
                "horizon_cap": args.horizon_cap,
                "price_tol": args.price_tol.map(json_f64),
                "window": args.window,
            });
            merge(&mut options, extra);
            let result = json!({
                "inside": cert.inside,
                "radius": json_f64(radius),
                "absorption_level": json_f64(absorption),
                "n_bar": cert.n_bar,
                "absorption_step": cert.absorption_step,
                "horizon": cert.price_tail.values.len(),
                "price_tail": cert.price_tail.values.iter().map(|v| json_f64(*v)).collect::<Vec<_>>(),
            });
            envelope("infinite", options, result, duration)
        }
    };
    args.common.write(&text)?;
    Ok(0)
}

fn merge(base: &mut Value, extra: Value) {
    if let (Value::Object(base), Value::Object(extra)) = (base, extra) {
        for (k, v) in extra {
            base.insert(k, v);
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) => 2,
        _ => 1,
    }
}

/// Parses argv, dispatches, and returns the process exit code. Diagnostics go
/// to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.cmd {
        Cmd::Solve(args) => cmd_solve(args),
        Cmd::Bounds(common) => cmd_bounds(common),
        Cmd::Shape(args) => cmd_shape(args),
        Cmd::Infinite(args) => cmd_infinite(args),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Track(args) => cmd_track(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
