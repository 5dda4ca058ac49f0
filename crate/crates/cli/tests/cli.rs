use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn stochabs(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochabs"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("STOCHABS_OUT")
        .output()
        .unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nA = [[1.0]\n").unwrap();
    let out = dir.path().join("out");
    let res = stochabs(&["abstract", "--config", bad.to_str().unwrap()], &out);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());

    let res = stochabs(&["abstract", "--config", &config("running_example.toml"), "--set", "grid.colour=1"], &out);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("colour"));
    assert!(!out.exists());
}

#[test]
fn missing_block_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = stochabs(&["compose", "--config", &config("running_example.toml")], &out);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn abstract_writes_mdp_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = stochabs(
        &["abstract", "--config", &config("running_example.toml"), "--set", "grid.cells=[40]"],
        &out,
    );
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("mdp.csv")).unwrap();
    assert!(csv.lines().count() > 40);
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["subcommand"], "abstract");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let states = m["values"].as_array().unwrap().iter().find(|v| v["name"] == "states").unwrap();
    assert_eq!(states["value"], 41.0);
    assert_eq!(states["provenance"], "derived");
}

#[test]
fn rejected_certificate_exits_1_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = stochabs(&["verify-barrier", "--config", &config("barrier.toml")], &out);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stdout).contains("FAIL decrease"));
    assert!(out.join("barrier_conditions.csv").exists());
    assert_eq!(manifest(&out)["status"], "verification_failed");
}

#[test]
fn failing_small_gain_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = stochabs(
        &["compose", "--config", &config("two_room_network.toml"), "--set", "network.ssf.rho_int=1.2"],
        &out,
    );
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stdout));
    let m = manifest(&out);
    assert_eq!(m["status"], "verification_failed");
    let check = m["checks"].as_array().unwrap().iter().find(|c| c["name"] == "small_gain_max").unwrap();
    assert_eq!(check["passed"], false);
}

#[test]
fn reproduce_labels_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = stochabs(&["reproduce-paper", "--section", "6"], &out);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("delta_bar=0.0511609"), "{stdout}");
    assert!(stdout.contains("PASS safety_target"));
    let m = manifest(&out);
    let values = m["values"].as_array().unwrap();
    assert!(values.iter().all(|v| ["paper", "derived", "input"].contains(&v["provenance"].as_str().unwrap())));
    let target = values.iter().find(|v| v["name"] == "safety_target").unwrap();
    assert_eq!(target["provenance"], "paper");
}

#[test]
fn section_out_of_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let res = stochabs(&["reproduce-paper", "--section", "9"], dir.path());
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_stochabs"))
        .args(["bounds", "--config", &config("running_example.toml")])
        .env("STOCHABS_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stdout).contains("lambda1=0.195"));
    assert!(dir.path().join("bounds.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--config",
        &config("running_example.toml"),
        "--set",
        "sim.n_traj=300",
        "--set",
        "grid.cells=[80]",
    ];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(stochabs(&args, &a).status.code(), Some(0));
    let mut with_threads = vec!["--threads", "3"];
    with_threads.extend_from_slice(&args);
    assert_eq!(stochabs(&with_threads, &b).status.code(), Some(0));
    for f in ["trajectories.csv", "estimate.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
