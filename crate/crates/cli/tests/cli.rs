use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sitaware_core::provenance::{hash_inputs, sha256_hex};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");

fn fixture(name: &str) -> PathBuf {
    Path::new(FIXTURES).join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sitaware"))
        .args(args)
        .current_dir(dir)
        .env_remove("SITAWARE_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn comment_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("# {key}: ")))
        .unwrap_or_else(|| panic!("no `{key}` line"))
        .to_owned()
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["ingest", "--in", "nope.csv", "--out", "t.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("t.json").exists());
}

#[test]
fn invalid_table_exits_3_with_violations() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.csv"),
        "source,year,a34\nX,2024,-5\nY,1800,3\n",
    )
    .unwrap();
    let out = run(
        dir.path(),
        &["ingest", "--in", "bad.csv", "--out", "t.json"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("a34"), "{err}");
    assert!(err.contains("year"), "{err}");
}

#[test]
fn bad_flag_value_is_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "prep",
            "--table",
            fixture("reports.csv").to_str().unwrap(),
            "--coeffs",
            "1,2",
            "--out",
            "d.csv",
        ],
    );
    assert!(!out.status.success());
    assert!(!dir.path().join("d.csv").exists());
}

#[test]
fn embedded_hashes_match_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let table = fixture("reports.csv");
    let table_s = table.to_str().unwrap();
    ok(d, &["ingest", "--in", table_s, "--out", "t.json"]);
    let t = json(&d.join("t.json"));
    assert_eq!(
        t["provenance"]["input_hash"],
        sha256_hex(&fs::read(&table).unwrap())
    );
    assert_eq!(t["provenance"]["seed"], 42);

    ok(
        d,
        &["prep", "--table", "t.json", "--seed", "5", "--out", "d.csv"],
    );
    let prep = fs::read_to_string(d.join("d.csv")).unwrap();
    assert_eq!(
        comment_value(&prep, "input_hash"),
        sha256_hex(&fs::read(d.join("t.json")).unwrap())
    );
    assert_eq!(comment_value(&prep, "seed"), "5");

    let rates = fixture("bias_rates.csv");
    ok(
        d,
        &[
            "meta-pooled",
            "--table",
            "t.json",
            "--col",
            "a35",
            "--bias-rates",
            rates.to_str().unwrap(),
            "--out",
            "m.json",
            "--plots",
            "p",
        ],
    );
    let expected = hash_inputs([
        fs::read(d.join("t.json")).unwrap().as_slice(),
        fs::read(&rates).unwrap().as_slice(),
    ]);
    assert_eq!(
        json(&d.join("m.json"))["provenance"]["input_hash"],
        expected
    );
    let svg = fs::read_to_string(d.join("p/forest.svg")).unwrap();
    assert!(svg.contains(&expected));
}

#[test]
fn meta_two_arm_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "meta-two-arm",
            "--table",
            fixture("reports.csv").to_str().unwrap(),
            "--arms",
            "a34,a35",
            "--ci",
            "0.95",
            "--out",
            "m.json",
            "--plots",
            "plots",
        ],
    );
    let m = json(&d.join("m.json"));
    let r = &m["result"];
    assert_eq!(r["weights_common"].as_array().unwrap().len(), 10);
    assert_eq!(r["weights_random"].as_array().unwrap().len(), 10);
    assert!(r["Q"].as_f64().unwrap() > 0.0);
    assert!(r["tau2"].as_f64().unwrap() > 0.0);
    for f in ["forest.svg", "funnel.svg", "residuals.svg"] {
        let svg = fs::read_to_string(d.join("plots").join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains(r#"width="800" height="600""#));
    }
    ok(
        d,
        &[
            "report",
            "--meta",
            "m.json",
            "--format",
            "csv",
            "--out-dir",
            "csv",
        ],
    );
    let forest = fs::read_to_string(d.join("csv/forest.csv")).unwrap();
    assert_eq!(
        forest.lines().filter(|l| !l.starts_with('#')).count(),
        1 + 12
    );
}

#[test]
fn pipeline_train_gw_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "prep",
            "--table",
            fixture("reports.csv").to_str().unwrap(),
            "--out",
            "d.csv",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--data",
            "d.csv",
            "--hidden",
            "10,5",
            "--seed",
            "7",
            "--out",
            "model.json",
        ],
    );
    let model = json(&d.join("model.json"));
    assert_eq!(model["result_matrix"].as_array().unwrap().len(), 114);
    assert_eq!(model["provenance"]["seed"], 7);

    ok(
        d,
        &[
            "gw",
            "--model",
            "model.json",
            "--data",
            "d.csv",
            "--out",
            "gw.csv",
        ],
    );
    let gw = fs::read_to_string(d.join("gw.csv")).unwrap();
    let body: Vec<&str> = gw.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.len(), 11);
    assert_eq!(body[0].split(',').count(), 4);

    ok(
        d,
        &[
            "search",
            "--data",
            "d.csv",
            "--depths",
            "5|10,5|4,5,3",
            "--restarts",
            "2",
            "--seed",
            "7",
            "--out",
            "table.txt",
        ],
    );
    let text = fs::read_to_string(d.join("table.txt")).unwrap();
    assert!(text.contains("Hidden layers"));
    assert!(text.contains("10,5") || text.contains("10, 5"), "{text}");
}

#[test]
fn seed_environment_variable_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_sitaware"))
        .args([
            "prep",
            "--table",
            fixture("reports.csv").to_str().unwrap(),
            "--out",
            "d.csv",
        ])
        .current_dir(d)
        .env("SITAWARE_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        comment_value(&fs::read_to_string(d.join("d.csv")).unwrap(), "seed"),
        "9"
    );
    ok(
        d,
        &[
            "prep",
            "--table",
            fixture("reports.csv").to_str().unwrap(),
            "--seed",
            "3",
            "--out",
            "e.csv",
        ],
    );
    assert_eq!(
        comment_value(&fs::read_to_string(d.join("e.csv")).unwrap(), "seed"),
        "3"
    );
}

#[test]
fn score_with_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "score",
            "--matrix",
            fixture("parameter_matrix.json").to_str().unwrap(),
            "--weights",
            fixture("situation_weights.json").to_str().unwrap(),
            "--target",
            "1.0",
            "--rate",
            "0.001",
            "--iterations",
            "20",
            "--out",
            "s.json",
        ],
    );
    let s = json(&d.join("s.json"));
    let res: Vec<f64> = s["residuals"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    // initial residual plus one per iteration
    assert_eq!(res.len(), 21);
    assert!(res.windows(2).all(|w| w[1].abs() <= w[0].abs()));
}
