//! Golden-report checks: the serialized report schema is a stable interface.
//!
//! If one of these fails because of an intentional schema or semantics
//! change, regenerate the files under `tests/golden/` with the CLI and
//! commit them together with the change.

use zlsim_harness::experiments;
use zlsim_harness::scenario::parse_scenario;

#[test]
fn fb_size_report_matches_golden() {
    let scn = parse_scenario(r#"{"seed": 0}"#).unwrap();
    let out = experiments::run_fb_size(&scn, false).unwrap();
    assert_eq!(out.report.to_json(), include_str!("golden/fb-size-report.json"));
    let curve = out.artifacts.iter().find(|a| a.name == "curve.csv").unwrap();
    assert_eq!(curve.contents, include_str!("golden/curve.csv"));
}

#[test]
fn sim_run_report_matches_golden() {
    let scn = parse_scenario(
        r#"{"seed": 41, "victim": {"kind": "custom-trace"}, "attacker": {"duration": 100000}}"#,
    )
    .unwrap();
    let cal = zlsim_harness::calibrate::shipped();
    let out = experiments::run_sim(&scn, cal).unwrap();
    assert_eq!(out.report.to_json(), include_str!("golden/sim-run-report.json"));
}
