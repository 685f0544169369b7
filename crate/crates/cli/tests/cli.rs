use std::path::Path;
use std::process::{Command, Output};

fn mvpure(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvpure"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MVPURE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, name: &str) {
    let o = mvpure(
        &["simulate", "--out", name, "--seed", "11", "--channels", "16", "--candidates", "24", "--snr", "1.5,1.0,0.8",
          "--noise", "seeded-spd", "--separation", "20", "--n-epochs", "20", "--n-times", "100"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn no_arguments_prints_help() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvpure(&[], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "sc");
    for f in ["manifest.json", "leadfield.mvpm", "Q0.mvpm", "N.mvpm", "R.mvpm", "epochs.mvpm", "epochs.mvpm.json"] {
        assert!(d.join("sc").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("sc/manifest.json")).unwrap()).unwrap();
    let mut keys: Vec<_> = manifest.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["N", "Q0", "R", "leadfield", "seed", "true_sources"]);

    let o = mvpure(&["spectrum", "--scenario", "sc", "--out", "spec"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let spec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("spec.json")).unwrap()).unwrap();
    assert_eq!(spec["l0_est"], 3);
    assert!(std::fs::read_to_string(d.join("spec.csv")).unwrap().starts_with("index,lambda\n"));

    let o = mvpure(&["localize", "--scenario", "sc", "--index", "mpz-mvp", "--out", "loc.json"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let loc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("loc.json")).unwrap()).unwrap();
    let mut found: Vec<u64> = loc["sources"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let mut truth: Vec<u64> = manifest["true_sources"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    found.sort();
    truth.sort();
    assert_eq!(found, truth);

    let o = mvpure(
        &["reconstruct", "--scenario", "sc", "--epochs", "sc/epochs.mvpm", "--sources", "loc.json", "--filter", "mvp-n",
          "--out", "rec.mvpm"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = mvpure::io::read_tensor(&d.join("rec.mvpm")).unwrap();
    assert_eq!(t.dims, vec![3, 100]);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("rec.mvpm.json")).unwrap()).unwrap();
    assert_eq!(side["kind"], "mvp_n");
    assert!(side["gain_check"].as_f64().unwrap() < 1e-8);

    let o = mvpure(
        &["reconstruct", "--leadfield", "sc/leadfield.mvpm", "--epochs", "sc/epochs.mvpm", "--noise-window=-0.2,0",
          "--data-window", "0,0.2", "--sources", "loc.json", "--per-epoch", "--out", "per.mvpm"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(mvpure::io::read_tensor(&d.join("per.mvpm")).unwrap().dims, vec![20, 3, 100]);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "a");
    simulate(d, "b");
    for f in ["R.mvpm", "N.mvpm", "leadfield.mvpm", "epochs.mvpm", "manifest.json"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let one = mvpure(&["localize", "--scenario", "a", "--record-candidates", "--threads", "1"], d);
    let many = mvpure(&["localize", "--scenario", "a", "--record-candidates", "--threads", "4"], d);
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn missing_file_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvpure(&["spectrum", "--data-cov", "nope.mvpm", "--noise-cov", "nope2.mvpm"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--data-cov"), "{}", stderr(&o));
}

#[test]
fn empty_config_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "").unwrap();
    let o = mvpure(&["localize", "--config", "empty.toml"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn config_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "sc");
    std::fs::write(d.join("c.json"), r#"{"scenario": "sc", "index": "no-such-index"}"#).unwrap();
    let bad = mvpure(&["localize", "--config", "c.json"], d);
    assert_eq!(code(&bad), 2);
    let good = mvpure(&["localize", "--config", "c.json", "--index", "mai"], d);
    assert_eq!(code(&good), 0, "{}", stderr(&good));
}

#[test]
fn infeasible_dimensions_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvpure(&["simulate", "--out", "x", "--channels", "3", "--snr", "1,1,1"], dir.path());
    assert_eq!(code(&o), 2);
    let o = mvpure(&["simulate", "--out", "x", "--snr", "1,1", "--n-sources", "3"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn identical_covariances_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "sc");
    let o = mvpure(&["spectrum", "--data-cov", "sc/N.mvpm", "--noise-cov", "sc/N.mvpm"], d);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("identical"), "{}", stderr(&o));
    let spec: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(spec["l0_est"], 0);
}

#[test]
fn non_positive_definite_noise_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("r.csv"), "2,0\n0,2\n").unwrap();
    std::fs::write(d.join("n.csv"), "1,0\n0,-1\n").unwrap();
    let o = mvpure(&["spectrum", "--data-cov", "r.csv", "--noise-cov", "n.csv"], d);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ok = mvpure(&["verify", "--json", "report.json"], dir.path());
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(dir.path().join("report.json").exists());
    let broken = mvpure(&["verify", "--break-unbiasedness"], dir.path());
    assert_eq!(code(&broken), 1);
    assert!(String::from_utf8_lossy(&broken.stdout).contains("FAIL"));
}

#[test]
fn thread_cap_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "sc");
    let run = |env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mvpure"));
        c.args(["localize", "--scenario", "sc", "--threads", "8"]).current_dir(d);
        match env {
            Some(v) => c.env("MVPURE_THREADS", v),
            None => c.env_remove("MVPURE_THREADS"),
        };
        c.output().unwrap()
    };
    let capped = run(Some("2"));
    assert_eq!(code(&capped), 0);
    assert_eq!(capped.stdout, run(None).stdout);
    assert_eq!(code(&run(Some("lots"))), 2);
}
