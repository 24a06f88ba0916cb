mod common;

use approx::assert_abs_diff_eq;

use ceq_cli::file::{build, load_scenario, parse_str, to_file, Loaded};
use ceq_cli::report::canonical_json;
use ceq_cli::run;

use common::scenario_path;

fn run_args(args: &[&str]) -> i32 {
    let mut argv = vec!["ceq"];
    argv.extend_from_slice(args);
    run(argv)
}

#[test]
fn bundled_scenarios_load() {
    for name in [
        "two_agent_scalar.json",
        "three_agent_sinusoid.json",
        "three_agent_coupled_far_start.json",
        "three_agent_coupled_near_origin.json",
    ] {
        let loaded = load_scenario(&scenario_path(name)).unwrap();
        assert!(matches!(loaded, Loaded::Plain(_)), "{name}");
    }
    let tracking = load_scenario(&scenario_path("scalar_tracking_pair.json")).unwrap();
    assert!(matches!(tracking, Loaded::Tracking(_)));
}

#[test]
fn sinusoid_supply_expansion() {
    let loaded = load_scenario(&scenario_path("three_agent_sinusoid.json")).unwrap();
    let sc = loaded.scenario();
    assert_eq!(sc.n(), 3);
    assert_eq!(sc.N, 6);
    assert_eq!(sc.threshold, Some(20.0));
    for t in 0..6 {
        let s = (std::f64::consts::PI * t as f64 / 6.0).sin();
        assert_abs_diff_eq!(sc.supply[(0, t)], -s + 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(sc.supply[(1, t)], -2.0 * s + 2.2, epsilon = 1e-15);
        assert_eq!(sc.supply[(2, t)], 0.0);
        // Totals match the closed form used throughout the experiments.
        assert_abs_diff_eq!(sc.total_supply()[t], -3.0 * s + 3.4, epsilon = 1e-14);
    }
}

#[test]
fn load_emit_round_trip_is_exact() {
    for name in [
        "two_agent_scalar.json",
        "three_agent_sinusoid.json",
        "three_agent_coupled_far_start.json",
        "three_agent_coupled_near_origin.json",
        "scalar_tracking_pair.json",
    ] {
        let loaded = load_scenario(&scenario_path(name)).unwrap();
        let emitted = serde_json::to_string(&to_file(&loaded)).unwrap();
        let reloaded = build(&parse_str(&emitted, "emitted").unwrap()).unwrap();
        assert_eq!(loaded, reloaded, "round trip changed {name}");
    }
}

#[test]
fn q_scalar_and_full_matrix_are_exclusive() {
    let both = r#"{"horizon": 1, "agents": [{"A": [[1.0]], "B": [[1.0]],
        "Q": [[1.0]], "q_scalar": 1.0, "R": [[1.0]], "H": [[1.0]], "x0": [0.0]}],
        "supply": [[1.0]]}"#;
    let err = build(&parse_str(both, "inline").unwrap()).unwrap_err();
    assert!(err.to_string().contains("not both"), "{err}");

    let neither = r#"{"horizon": 1, "agents": [{"A": [[1.0]], "B": [[1.0]],
        "R": [[1.0]], "H": [[1.0]], "x0": [0.0]}], "supply": [[1.0]]}"#;
    let err = build(&parse_str(neither, "inline").unwrap()).unwrap_err();
    assert!(err.to_string().contains("Q or q_scalar"), "{err}");
}

#[test]
fn validation_names_the_failing_check() {
    // Indefinite H: eigenvalues 4 and -2.
    let bad_h = r#"{"horizon": 1, "agents": [{"A": [[1.0, 0.0], [0.0, 1.0]],
        "B": [[1.0, 0.0], [0.0, 1.0]], "q_scalar": 1.0,
        "R": [[1.0, 0.0], [0.0, 1.0]], "H": [[1.0, 3.0], [3.0, 1.0]],
        "x0": [0.0, 0.0]}], "supply": [[1.0]]}"#;
    let err = build(&parse_str(bad_h, "inline").unwrap()).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains('H') && msg.contains("positive definite"),
        "{msg}"
    );

    // Supply total hits zero at the second step.
    let bad_supply = r#"{"horizon": 2, "agents": [{"A": [[1.0]], "B": [[1.0]],
        "q_scalar": 1.0, "R": [[1.0]], "H": [[1.0]], "x0": [0.0]}],
        "supply": [[1.0, 0.0]]}"#;
    let err = build(&parse_str(bad_supply, "inline").unwrap()).unwrap_err();
    assert!(err.to_string().contains("C(1)"), "{err}");

    // Supply row length disagrees with the horizon.
    let short_row = r#"{"horizon": 3, "agents": [{"A": [[1.0]], "B": [[1.0]],
        "q_scalar": 1.0, "R": [[1.0]], "H": [[1.0]], "x0": [0.0]}],
        "supply": [[1.0, 1.0]]}"#;
    let err = build(&parse_str(short_row, "inline").unwrap()).unwrap_err();
    assert!(err.to_string().contains("expected horizon"), "{err}");

    // One supply row for two agents.
    let arity = r#"{"horizon": 1, "agents": [
        {"A": [[1.0]], "B": [[1.0]], "q_scalar": 1.0, "R": [[1.0]], "H": [[1.0]], "x0": [0.0]},
        {"A": [[1.0]], "B": [[1.0]], "q_scalar": 1.0, "R": [[1.0]], "H": [[1.0]], "x0": [0.0]}],
        "supply": [[1.0]]}"#;
    let err = build(&parse_str(arity, "inline").unwrap()).unwrap_err();
    assert!(err.to_string().contains("supply rows"), "{err}");

    // Expression row with an unknown kind.
    let kind = r#"{"horizon": 2, "agents": [{"A": [[1.0]], "B": [[1.0]],
        "q_scalar": 1.0, "R": [[1.0]], "H": [[1.0]], "x0": [0.0]}],
        "supply": [{"kind": "sawtooth", "amp": 1.0, "freq": 0.5, "offset": 2.0}]}"#;
    let err = build(&parse_str(kind, "inline").unwrap()).unwrap_err();
    assert!(err.to_string().contains("sawtooth"), "{err}");
}

#[test]
fn parse_errors_carry_location() {
    let err = parse_str("{\n  \"horizon\": oops\n}", "broken.json").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("broken.json") && msg.contains("line"), "{msg}");
}

#[test]
fn exit_codes() {
    let scalar = scenario_path("two_agent_scalar.json");
    let scalar = scalar.to_str().unwrap();
    let tracking = scenario_path("scalar_tracking_pair.json");
    let tracking = tracking.to_str().unwrap();
    let out = tempfile::tempdir().unwrap();
    let sink = out.path().join("report.json");
    let sink = sink.to_str().unwrap();

    assert_eq!(run_args(&["--help"]), 0);
    assert_eq!(run_args(&["solve"]), 2, "missing required flag");
    assert_eq!(run_args(&["solve", "--bogus"]), 2, "unknown flag");
    assert_eq!(
        run_args(&["solve", "--scenario", "does_not_exist.json"]),
        2,
        "missing file"
    );
    assert_eq!(
        run_args(&["solve", "--scenario", scalar, "--out", sink]),
        0
    );
    assert_eq!(
        run_args(&[
            "solve",
            "--scenario",
            scalar,
            "--tol",
            "1e-300",
            "--max-iters",
            "5",
            "--out",
            sink,
        ]),
        1,
        "unreachable tolerance must exit 1"
    );
    assert_eq!(
        run_args(&["solve", "--scenario", tracking, "--out", sink]),
        2,
        "tracking scenario needs the track subcommand"
    );
    assert_eq!(
        run_args(&["track", "--scenario", scalar, "--out", sink]),
        2,
        "plain scenario has nothing to track"
    );
    assert_eq!(
        run_args(&["track", "--scenario", tracking, "--out", sink]),
        0
    );
    assert_eq!(
        run_args(&["verify", "--scenario", scalar, "--out", sink]),
        0
    );
    assert_eq!(
        run_args(&["bounds", "--scenario", scalar, "--out", sink]),
        2,
        "bounds need a threshold"
    );
    assert_eq!(
        run_args(&["bounds", "--scenario", scalar, "--threshold", "5", "--out", sink]),
        0
    );
    let sinusoid = scenario_path("three_agent_sinusoid.json");
    let sinusoid = sinusoid.to_str().unwrap();
    assert_eq!(
        run_args(&["shape", "--scenario", sinusoid, "--d-rho", "1", "--mode", "spiral", "--out", sink]),
        2,
        "unknown box mode"
    );
    assert_eq!(
        run_args(&["shape", "--scenario", sinusoid, "--d-rho", "1", "--mode", "grid:0", "--out", sink]),
        2,
        "empty grid"
    );
    assert_eq!(
        run_args(&["solve", "--scenario", scalar, "--out", "/no/such/dir/report.json"]),
        2,
        "unwritable output"
    );
}

#[test]
fn csv_solve_layout() {
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("series.csv");
    let scalar = scenario_path("two_agent_scalar.json");
    assert_eq!(
        run_args(&[
            "solve",
            "--scenario",
            scalar.to_str().unwrap(),
            "--format",
            "csv",
            "--out",
            path.to_str().unwrap(),
        ]),
        0
    );
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "t,lambda,h_1,h_2,e_1,e_2,a_1,a_2,u_1_1,u_2_1,x_1_1,x_2_1"
    );
    // One step plus the terminal state row.
    assert_eq!(lines.len(), 3);
    let terminal: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(terminal.len(), 12);
    assert_eq!(terminal[0], "1");
    assert!(terminal[1..10].iter().all(|f| f.is_empty()));
    assert!(terminal[10].parse::<f64>().is_ok());

    // Prices parse back to the closed-form equilibrium.
    let step: Vec<&str> = lines[1].split(',').collect();
    let lambda: f64 = step[1].parse().unwrap();
    assert_abs_diff_eq!(lambda, 2.0 * std::f64::consts::SQRT_2 - 1.1, epsilon = 1e-6);
}

#[test]
fn reports_are_deterministic() {
    let out = tempfile::tempdir().unwrap();
    let first = out.path().join("a.json");
    let second = out.path().join("b.json");
    let scalar = scenario_path("two_agent_scalar.json");
    for path in [&first, &second] {
        assert_eq!(
            run_args(&[
                "solve",
                "--scenario",
                scalar.to_str().unwrap(),
                "--out",
                path.to_str().unwrap(),
            ]),
            0
        );
    }
    let a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&first).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&second).unwrap()).unwrap();
    // The payload is byte-identical; only the duration outside it may differ.
    assert_eq!(
        canonical_json(&a["report"]),
        canonical_json(&b["report"])
    );
    assert!(a["duration_seconds"].as_f64().unwrap() >= 0.0);

    // CSV runs are byte-identical in full.
    let c1 = out.path().join("a.csv");
    let c2 = out.path().join("b.csv");
    for path in [&c1, &c2] {
        assert_eq!(
            run_args(&[
                "solve",
                "--scenario",
                scalar.to_str().unwrap(),
                "--format",
                "csv",
                "--out",
                path.to_str().unwrap(),
            ]),
            0
        );
    }
    assert_eq!(
        std::fs::read(&c1).unwrap(),
        std::fs::read(&c2).unwrap()
    );
}

#[test]
fn shape_csv_lists_bisection_trace() {
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("trace.csv");
    let sinusoid = scenario_path("three_agent_sinusoid.json");
    assert_eq!(
        run_args(&[
            "shape",
            "--scenario",
            sinusoid.to_str().unwrap(),
            "--d-rho",
            "1",
            "--iters",
            "2",
            "--format",
            "csv",
            "--out",
            path.to_str().unwrap(),
        ]),
        0
    );
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,b,d,L,lambda");
    assert_eq!(lines.len(), 3, "two probes requested");
    // First probe is the midpoint of (0, 1].
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row[0], "0");
    assert_abs_diff_eq!(row[3].parse::<f64>().unwrap(), 0.5, epsilon = 1e-15);
}

#[test]
fn q_override_changes_the_solution() {
    let out = tempfile::tempdir().unwrap();
    let strong = out.path().join("strong.json");
    let weak = out.path().join("weak.json");
    let sinusoid = scenario_path("three_agent_sinusoid.json");
    for (path, q) in [(&strong, "0.024"), (&weak, "0.00018")] {
        assert_eq!(
            run_args(&[
                "solve",
                "--scenario",
                sinusoid.to_str().unwrap(),
                "--q",
                q,
                "--out",
                path.to_str().unwrap(),
            ]),
            0
        );
    }
    let max_price = |path: &std::path::Path| -> f64 {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        v["report"]["result"]["prices"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .fold(0.0, f64::max)
    };
    // Heavier state weights buy more consumption, driving prices up.
    assert!(max_price(&strong) > 10.0 * max_price(&weak));
}
