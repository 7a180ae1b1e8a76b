//! End-to-end checks of the binary: argument handling, exit codes, file
//! round trips, and byte determinism of emitted reports.

use std::path::Path;
use std::process::{Command, Output};

fn dashift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dashift"))
        .args(args)
        .output()
        .expect("spawn dashift")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_scenario(dir: &Path, name: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.json"));
    let out = dashift(&["scenario", name, "-o", path.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "scenario {name} failed: {}",
        stderr_of(&out)
    );
    path
}

#[test]
fn scenario_files_round_trip_into_analyses() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "memorize_line");
    let scenario = path.to_str().unwrap();

    let out = dashift(&[
        "decompose",
        "--scenario",
        scenario,
        "--source",
        "e1",
        "--target",
        "e0",
        "--rep",
        "phi_abs",
    ]);
    assert!(out.status.success(), "decompose failed: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.starts_with("# risk decomposition"));
    assert!(text.contains("- scenario: memorize_line"));
    assert!(text.contains("- extension: uniform"));
    assert!(text.contains("- residual_split: 0"));

    let out = dashift(&["multisource", "--scenario", scenario, "--rep", "phi_abs"]);
    assert!(out.status.success(), "multisource failed: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("- certified: true"));

    let out = dashift(&["eci", "--scenario", scenario, "--rep", "phi_abs"]);
    assert!(out.status.success(), "eci failed: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("- holds: true"));

    let out = dashift(&["dann", "--scenario", scenario, "--class", "thresholds"]);
    assert!(out.status.success(), "dann failed: {}", stderr_of(&out));

    let out = dashift(&["hdiv", "--scenario", scenario, "--class", "thresholds"]);
    assert!(out.status.success(), "hdiv failed: {}", stderr_of(&out));
}

#[test]
fn latent_scenario_invariance_reports_the_leaky_representation() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "cmnist_latent");
    let out = dashift(&[
        "eci",
        "--scenario",
        path.to_str().unwrap(),
        "--rep",
        "phi_xz",
    ]);
    assert!(out.status.success(), "eci failed: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("- holds: false"));
    assert!(text.contains("violations"));
}

#[test]
fn invalid_mass_sums_exit_with_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    let text = r#"{
        "schema_version": 1,
        "name": "broken",
        "k": 2,
        "environments": [
            {"name": "heavy", "k": 2, "atoms": [
                {"atom": "a", "label": 0, "mass": 0.7},
                {"atom": "a", "label": 1, "mass": 0.5}
            ]}
        ],
        "representations": [{"name": "id", "map": {"a": "a"}}],
        "predictor_classes": {},
        "roles": {"sources": ["heavy"], "target": "heavy"},
        "manifest": []
    }"#;
    std::fs::write(&path, text).unwrap();
    let out = dashift(&[
        "decompose",
        "--scenario",
        path.to_str().unwrap(),
        "--source",
        "heavy",
        "--target",
        "heavy",
        "--rep",
        "id",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("heavy"),
        "error should name the environment: {}",
        stderr_of(&out)
    );
}

#[test]
fn usage_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "memorize_line");
    let scenario = path.to_str().unwrap();

    // unknown extension mode
    let out = dashift(&[
        "decompose",
        "--scenario",
        scenario,
        "--source",
        "e1",
        "--target",
        "e0",
        "--rep",
        "phi_abs",
        "--ext",
        "sideways",
    ]);
    assert_eq!(out.status.code(), Some(1));

    // scenario generation needs an output file
    let out = dashift(&["scenario", "memorize_line"]);
    assert_eq!(out.status.code(), Some(1));

    // malformed seed range
    let out = dashift(&["verify", "--seeds", "banana"]);
    assert_eq!(out.status.code(), Some(1));

    // unknown subcommand is clap's problem but still exits 1
    let out = dashift(&["transmogrify"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_names_exit_with_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "memorize_line");
    let out = dashift(&[
        "decompose",
        "--scenario",
        path.to_str().unwrap(),
        "--source",
        "nope",
        "--target",
        "e0",
        "--rep",
        "phi_abs",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("nope"));
}

#[test]
fn log_base_two_rescales_the_decomposition() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "memorize_line");
    let scenario = path.to_str().unwrap();
    let base_args = [
        "decompose",
        "--scenario",
        scenario,
        "--source",
        "e1",
        "--target",
        "e0",
        "--rep",
        "phi_abs",
        "--format",
        "json",
    ];
    let nats = dashift(&base_args);
    let bits = dashift(&[&base_args[..], &["--base", "2"]].concat());
    assert!(nats.status.success() && bits.status.success());
    let nats: serde_json::Value = serde_json::from_str(&stdout_of(&nats)).unwrap();
    let bits: serde_json::Value = serde_json::from_str(&stdout_of(&bits)).unwrap();
    assert_eq!(nats["meta"]["log_base"], "e");
    assert_eq!(bits["meta"]["log_base"], "2");
    let a = nats["report"]["source_risk"].as_f64().unwrap();
    let b = bits["report"]["source_risk"].as_f64().unwrap();
    assert!((a / 2f64.ln() - b).abs() < 1e-9, "nats {a} vs bits {b}");
}

#[test]
fn emitted_reports_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "cmnist_latent");
    let scenario = path.to_str().unwrap();
    let once = dashift(&["multisource", "--scenario", scenario, "--rep", "phi_xz", "--format", "json"]);
    let twice = dashift(&["multisource", "--scenario", scenario, "--rep", "phi_xz", "--format", "json"]);
    assert!(once.status.success());
    assert_eq!(once.stdout, twice.stdout);

    let first = dir.path().join("v1.json");
    let second = dir.path().join("v2.json");
    for out in [&first, &second] {
        let run = dashift(&[
            "verify",
            "--seeds",
            "0..9",
            "--suite",
            "fairness",
            "-o",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success(), "verify failed: {}", stderr_of(&run));
    }
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
}

#[test]
fn verify_markdown_summarizes_the_suite() {
    let out = dashift(&["verify", "--seeds", "0..4", "--suite", "invariance"]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.starts_with("# verification"));
    assert!(text.contains("- passed: true"));
    assert!(text.contains("invariant"));
}

#[test]
fn matrix_flag_appends_pairwise_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "memorize_line");
    let report = dir.path().join("bound.json");
    let out = dashift(&[
        "multisource",
        "--scenario",
        path.to_str().unwrap(),
        "--rep",
        "phi_abs",
        "--matrix",
        "-o",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    assert!(text.starts_with("from,to,kl,delta,mu,total"));
    assert!(text.contains("e1,e2"));
    assert!(report.exists());
}

#[test]
fn custom_extension_files_feed_the_decomposition() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "memorize_disjoint");
    let ext_path = dir.path().join("ext.json");
    std::fs::write(&ext_path, r#"{"r0_tgt": [1.0, 0.0], "r1_tgt": [0.0, 1.0]}"#).unwrap();
    let out = dashift(&[
        "decompose",
        "--scenario",
        path.to_str().unwrap(),
        "--source",
        "e1",
        "--target",
        "e0",
        "--rep",
        "phi_mem",
        "--ext",
        &format!("file:{}", ext_path.display()),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("- extension: custom"));
    // the custom conditionals match the target's labels, so the memorizing
    // representation transfers perfectly under this extension
    assert!(text.contains("- target_risk: 0"));

    std::fs::write(&ext_path, r#"{"r0_tgt": [0.9, 0.9]}"#).unwrap();
    let out = dashift(&[
        "decompose",
        "--scenario",
        path.to_str().unwrap(),
        "--source",
        "e1",
        "--target",
        "e0",
        "--rep",
        "phi_mem",
        "--ext",
        &format!("file:{}", ext_path.display()),
    ]);
    assert_eq!(out.status.code(), Some(2), "bad vectors are a schema error");
}
