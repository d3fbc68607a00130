use std::fs;
use std::path::PathBuf;

use satsync::config::parse_config;
use satsync::output::{config_hash, emit_trajectory_csv, execute, suite_config, RunKind, RunRequest, SuiteCase};
use satsync::prelude::*;

fn repo_config(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn shipped_configs_parse() {
    let case1 = parse_config(&repo_config("case1.toml")).unwrap();
    assert_eq!(case1.n_agents(), 3);
    assert_eq!(case1.roots.members(), &[0]);
    let edges: Vec<(usize, usize)> = (0..3)
        .flat_map(|i| case1.graph.in_edges(i).map(move |(j, _)| (j, i)).collect::<Vec<_>>())
        .collect();
    assert_eq!(edges, vec![(0, 1), (1, 2)]);
    assert_eq!(case1.graph, cases::case_i());

    assert_eq!(parse_config(&repo_config("case2.toml")).unwrap().graph, cases::case_ii());
    assert_eq!(parse_config(&repo_config("case3.toml")).unwrap().graph, cases::case_iii());
    let full = parse_config(&repo_config("case1-full-state.toml")).unwrap();
    assert_eq!(full.mode, CouplingMode::FullState);
    for name in ["case1.toml", "case2.toml", "case3.toml", "case1-full-state.toml"] {
        assert!(certify(&parse_config(&repo_config(name)).unwrap()).passed, "{name}");
    }
}

#[test]
fn csv_has_one_row_per_tick_and_agent() {
    let cfg = suite_config(SuiteCase::I, 1, 1, 10).unwrap().with_record_every(1);
    let tr = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    emit_trajectory_csv(&tr, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 34);
    assert_eq!(lines[0], "t,agent_id,x_1,x_2,xr_1,xr_2,u_1,sat_u_1,sync_error_inf");
    let keys: Vec<(usize, usize)> = lines[1..]
        .iter()
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().parse().unwrap(), f.next().unwrap().parse().unwrap())
        })
        .collect();
    let want: Vec<(usize, usize)> = (0..=10).flat_map(|t| (1..=3).map(move |i| (t, i))).collect();
    assert_eq!(keys, want);

    // The error column reads back bit-exactly.
    for (row, line) in lines[1..].iter().enumerate() {
        let last: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(last.to_bits(), tr.snapshots[row / 3].sync_error_inf.to_bits());
    }
}

#[test]
fn emit_reports_the_path_on_failure() {
    let tr = run(&suite_config(SuiteCase::I, 1, 1, 1).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("missing").join("out.csv");
    let err = emit_trajectory_csv(&tr, &bad).unwrap_err().to_string();
    assert!(err.contains("missing"), "{err}");
}

#[test]
fn run_directories_carry_a_matching_manifest() {
    let document = repo_config("case1.toml");
    let cfg = parse_config(&document).unwrap().with_steps(300);
    let out = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for kind in [RunKind::Certify, RunKind::Simulate, RunKind::Simulate, RunKind::Lyapunov] {
        let outcome = execute(RunRequest {
            kind,
            config: cfg.clone(),
            document: &document,
            output_dir: out.path(),
            label: "case1",
            force: false,
        })
        .unwrap();
        assert!(outcome.success(kind));
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(outcome.dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config_hash"], config_hash(&document));
        assert_eq!(fs::read_to_string(outcome.dir.join("config.toml")).unwrap(), document);
        for f in manifest["files"].as_array().unwrap() {
            assert!(PathBuf::from(f.as_str().unwrap()).exists(), "{f}");
        }
        assert!(!dirs.contains(&outcome.dir));
        dirs.push(outcome.dir);
    }
    let csv = |d: &PathBuf| fs::read(d.join("trajectory.csv")).unwrap();
    assert_eq!(csv(&dirs[1]), csv(&dirs[2]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dirs[0].join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report.get("rho_AmFC").is_some());
    let lyap = fs::read_to_string(dirs[3].join("lyapunov.csv")).unwrap();
    assert_eq!(lyap.lines().next(), Some("t,V1,V2,V,dV"));
    assert_eq!(lyap.lines().count(), 302);
}

#[test]
fn failed_certification_stops_before_simulating() {
    let document = repo_config("case1.toml").replace("roots = [1]", "roots = [3]");
    let cfg = parse_config(&document).unwrap();
    let out = tempfile::tempdir().unwrap();
    let req = |force| RunRequest {
        kind: RunKind::Simulate,
        config: cfg.clone().with_steps(50),
        document: &document,
        output_dir: out.path(),
        label: "detached",
        force,
    };
    let outcome = execute(req(false)).unwrap();
    assert!(!outcome.success(RunKind::Simulate));
    assert!(outcome.dir.join("manifest.json").exists());
    assert!(!outcome.dir.join("trajectory.csv").exists());
    assert!(fs::read_to_string(outcome.dir.join("report.txt")).unwrap().contains("graph set"));

    let forced = execute(req(true)).unwrap();
    assert!(forced.dir.join("trajectory.csv").exists());
    assert!(fs::read_to_string(forced.dir.join("report.txt")).unwrap().contains("WARNING"));
}
