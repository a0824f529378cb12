use std::path::Path;
use std::process::{Command, Output};

use absgraph_cli::{PlanOutput, SearchKind};

fn absgraph(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_absgraph"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_learn_plan_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&absgraph(
        &["generate", "--kind", "fruit-hom", "--seed", "4", "--out", "data"],
        dir,
    ));
    let learned = absgraph(&["learn", "data", "--out", "bundle"], dir);
    ok(&learned);
    assert!(String::from_utf8_lossy(&learned.stdout).contains("k_pick=3 k_place=3"));

    let evaluated = absgraph(
        &["evaluate", "bundle", "data", "--n-pairs", "50", "--ground-truth"],
        dir,
    );
    ok(&evaluated);
    let csv = std::fs::read_to_string(dir.join("bundle/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");

    // A map planned to itself yields the empty plan.
    let map = "data/maps/000000.csv";
    let out = absgraph(&["plan", "bundle", map, map], dir);
    ok(&out);
    let plan: PlanOutput = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(plan.start, plan.goal);
    assert_eq!(plan.search, SearchKind::Bfs);
    assert!(plan.actions.is_empty());

    let out = absgraph(&["plan", "bundle", map, "data/maps/000001.csv"], dir);
    ok(&out);
    let plan: PlanOutput = serde_json::from_slice(&out.stdout).unwrap();
    assert_ne!(plan.start, plan.goal);
    assert!(!plan.actions.is_empty());

    let out = absgraph(&["localize", "bundle", map], dir);
    ok(&out);
    let located: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(located.as_array().map(Vec::len), Some(1));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(absgraph(&["learn"], dir).status.code(), Some(2));
    assert_eq!(absgraph(&["learn", "missing"], dir).status.code(), Some(1));

    ok(&absgraph(&["generate", "--kind", "fruit-hom", "--out", "data"], dir));
    assert_eq!(absgraph(&["learn", "data", "--caps", ""], dir).status.code(), Some(2));
    // One cluster per role cannot separate three fruit actions.
    let out = absgraph(&["learn", "data", "--grid", "1x1", "--caps", "1", "--out", "b"], dir);
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("b/sweep_summary.csv").exists());
}
