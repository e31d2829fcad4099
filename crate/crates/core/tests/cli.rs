use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use rendezvous_core::output::{csv_header, load_trajectory_csv};

fn rendezvous(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rendezvous")).args(args).current_dir(dir).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

/// The error report is the last line on stderr; log lines may precede it.
fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let last = text.lines().last().unwrap_or("");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("{e}: {text}"))
}

const TWO_VEHICLES: &str = r#"
schema_version = 1
name = "pair"

[[vehicles]]
m = 1.0
J = [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.05]]
x = [1.0, 0.0, 0.0]

[[vehicles]]
m = 1.0
J = [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.05]]
x = [-1.0, 0.0, 0.0]

[graph]
"1" = [2]
"2" = [1]

[consensus]
a = 0.3
gamma = 30.0

[control]
k1 = 2.0
k2 = 0.45

[sim]
dt = 0.001
t_final = 1.0
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn check_bundled_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = rendezvous(&["check", "paper_fig5"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["certified"], true);
    assert_eq!(v["vehicles"], 5);
    assert!(v["globally_reachable_node"].is_u64());
    assert!(v["spectral_abscissa"].as_f64().unwrap() < 0.0);
}

#[test]
fn check_without_reachable_node_fails_certification() {
    let dir = tempfile::tempdir().unwrap();
    let text = TWO_VEHICLES.replace("\"1\" = [2]\n\"2\" = [1]", "\"1\" = []\n\"2\" = []");
    let path = write(dir.path(), "apart.toml", &text);
    let out = rendezvous(&["check", &path], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stdout_json(&out)["certified"], false);
}

#[test]
fn run_writes_csv_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "pair.toml", TWO_VEHICLES);
    let out = rendezvous(&["run", &path, "--record-every", "10", "--out-dir", "results"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = dir.path().join("results/pair.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header, csv_header(2, false));
    let run = load_trajectory_csv(&csv).unwrap();
    assert_eq!(run.times.len(), 101);
    for w in run.times.windows(2) {
        assert!((w[1] - w[0] - 0.01).abs() < 1e-12);
    }

    let metrics: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("results/pair.metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["metrics"]["vehicles"].as_array().unwrap().len(), 2);
    assert!(metrics["metrics"]["steady_state_max_distance"].as_f64().unwrap() < 2.0);
}

#[test]
fn invalid_scenario_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let text = TWO_VEHICLES
        .replace("m = 1.0\nJ = [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.05]]\nx = [-1.0, 0.0, 0.0]", "m = -1.0\nJ = [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.05]]\nx = [-1.0, 0.0, 0.0]\nR = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]")
        .replace("\"2\" = [1]", "\"2\" = [6]");
    let path = write(dir.path(), "bad.toml", &text);
    let out = rendezvous(&["run", &path], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["exit_code"], 2);
    let details: Vec<String> =
        err["details"].as_array().unwrap().iter().map(|d| d.as_str().unwrap().to_string()).collect();
    assert!(details.len() >= 3, "{details:?}");
    let all = details.join("\n");
    assert!(all.contains("6"), "{all}");
    assert!(all.to_lowercase().contains("det"), "{all}");
    assert!(!dir.path().join("bad.csv").exists());
}

#[test]
fn missing_file_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rendezvous(&["run", "no_such_scenario"], dir.path());
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("no_such_scenario"));
}

#[test]
fn bad_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = rendezvous(&["run", "paper_fig5", "--dt", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_aborts_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        TWO_VEHICLES.replace("k1 = 2.0\nk2 = 0.45", "k1 = 1000.0\nk2 = 1000.0").replace("dt = 0.001", "dt = 0.01");
    let path = write(dir.path(), "stiff.toml", &text);
    let out = rendezvous(&["run", &path], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "numerical");
}

#[test]
fn sweep_reports_each_gain() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "pair.toml", TWO_VEHICLES);
    let out = rendezvous(&["sweep", &path, "--gains", "2,0.45", "--gains", "4,0.9", "--seeds", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("pair.sweep.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 4);
    assert_eq!(report["summary"].as_array().unwrap().len(), 2);
}

#[test]
fn constants_report_is_labelled_as_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "pair.toml", TWO_VEHICLES);
    let out = rendezvous(&["constants", &path, "--samples", "4096", "--seed", "3"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let text = v.to_string();
    assert!(text.contains("estimate"));
    assert!(!text.contains("certified bound"));
    assert_eq!(v["estimates"]["sample_count"], 4096);
    assert_eq!(v["estimates"]["seed"], 3);
    assert!(v["estimates"]["alpha_star"]["witness"]["sample"].is_u64());
}

#[test]
fn monitor_on_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "pair.toml", TWO_VEHICLES);
    assert_eq!(
        rendezvous(&["run", &path, "--t-final", "5", "--record-every", "10"], dir.path()).status.code(),
        Some(0)
    );
    let out = rendezvous(&["monitor", &path, "--csv", "pair.csv", "--alpha", "50"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["alpha"], 50.0);
    assert!(v["decrease"]["intervals_checked"].as_u64().unwrap() > 0);
}

#[test]
fn monitor_rejects_csv_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.csv"), "t,x_1,y_1\n0,0,0\n").unwrap();
    let out = rendezvous(&["monitor", "paper_fig5", "--csv", "broken.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("z_1"));
}
