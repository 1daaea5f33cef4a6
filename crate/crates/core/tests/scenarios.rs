use std::path::PathBuf;

use avgpred::harness::{
    certify_scenario, compare_controllers, run_scenario, sweep, ControllerKind, GridSpec, Scenario, SweepAxis,
};

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.scenario.json"));
    Scenario::from_path(&path).expect("bundled scenario parses")
}

fn coarse(mut s: Scenario) -> Scenario {
    s.grid = GridSpec::SamplesPerDelay(200);
    s
}

#[test]
fn bundled_scenarios_build() {
    for name in ["example1", "example2", "example2_mode1", "example2_mode2"] {
        let s = bundled(name);
        let setup = s.build().unwrap();
        assert_eq!(setup.plant.num_modes(), 2, "{name}");
        assert!(setup.signal.horizon() >= s.horizon + s.delay - 1e-12, "{name}");
    }
}

#[test]
fn scenario_file_roundtrip() {
    let s = bundled("example1");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(&s).unwrap()).unwrap();
    assert_eq!(Scenario::from_path(&path).unwrap(), s);
}

#[test]
fn run_writes_consistent_summary() {
    let out = run_scenario(&coarse(bundled("example1"))).unwrap();
    let s = &out.summary;
    assert_eq!(s.epsilon, out.certificate.epsilon);
    assert_eq!(s.epsilon_star, out.certificate.epsilon_star);
    assert_eq!(s.final_state_norm, out.trajectory.final_state().norm());
    assert_eq!(s.q_used, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    assert_eq!(s.bound_violations, 0);
    assert!(s.final_state_norm < 1e-6);

    let mut csv = Vec::new();
    out.trajectory.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,x1,x2,u,mode,V,W_abs,W_bound");
    assert_eq!(text.lines().count(), out.trajectory.len() + 1);
}

#[test]
fn certificate_matches_run() {
    let s = coarse(bundled("example2"));
    let cert = certify_scenario(&s).unwrap();
    assert_eq!(cert, run_scenario(&s).unwrap().certificate);
    assert!(!cert.stable);
}

#[test]
fn exact_oracle_equals_average_without_mismatch() {
    let mut s = coarse(bundled("example1"));
    s.epsilon_scale = 0.0;
    let cmp = compare_controllers(&s, &[ControllerKind::Average, ControllerKind::ExactOracle]).unwrap();
    let avg = cmp.entries[0].final_state_norm.unwrap();
    let exact = cmp.entries[1].final_state_norm.unwrap();
    assert!((avg - exact).abs() <= 1e-9 * (1.0 + avg.abs()), "{avg} vs {exact}");
}

#[test]
fn open_loop_is_ranked_last() {
    let s = coarse(bundled("example1"));
    let cmp = compare_controllers(&s, &[ControllerKind::None, ControllerKind::Average]).unwrap();
    assert_eq!(cmp.ranking, vec!["average".to_string(), "none".to_string()]);
}

#[test]
fn epsilon_sweep_is_linear_and_seeded() {
    let s = coarse(bundled("example1"));
    let rows = sweep(&s, SweepAxis::EpsilonScale, &[0.0, 0.5, 1.0], 2).unwrap();
    assert_eq!(rows.len(), 6);
    let base = rows.iter().find(|r| r.axis_value == 1.0).unwrap().epsilon.unwrap();
    for r in &rows {
        assert!(r.error.is_none(), "{:?}", r.error);
        assert!((r.epsilon.unwrap() - r.axis_value * base).abs() < 1e-12);
        assert!(r.seed == 2024 || r.seed == 2025);
    }
}
