use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rpmnet_core::dataio::{self, write_csv};
use rpmnet_core::synth::{self, Blob};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn data() -> PathBuf {
    fixture("synthetic.csv")
}

fn roles() -> PathBuf {
    fixture("synthetic-roles.toml")
}

fn rpmnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpmnet"))
        .args(args)
        .env("RPMNET_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = rpmnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(dir: &TempDir, name: &str, epochs: &str) -> PathBuf {
    let out = dir.path().join(name);
    ok(&[
        "train", "--data", s(&data()), "--roles", s(&roles()), "--out", s(&out), "--epochs", epochs,
    ]);
    out
}

fn calibrate(bundle: &Path, out: &Path) {
    ok(&[
        "calibrate", "--bundle", s(bundle), "--data", s(&data()), "--roles", s(&roles()), "--out", s(out),
    ]);
}

fn trained_and_calibrated(dir: &TempDir) -> PathBuf {
    calibrated_after(dir, "3")
}

fn calibrated_after(dir: &TempDir, epochs: &str) -> PathBuf {
    let bundle = train(dir, "m.rpmb", epochs);
    let calibrated = dir.path().join("c.rpmb");
    calibrate(&bundle, &calibrated);
    calibrated
}

#[test]
fn train_writes_bundle_history_and_manifest() {
    let dir = TempDir::new().unwrap();
    let bundle = train(&dir, "m.rpmb", "4");
    assert!(bundle.exists());
    let history = fs::read_to_string(dir.path().join("m.rpmb.history.tsv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    assert_eq!(lines[0], "epoch\tce\tmargin\tfisher\ttotal\tacc");
    let manifest = fs::read_to_string(dir.path().join("m.rpmb.manifest.toml")).unwrap();
    let manifest: toml::Table = toml::from_str(&manifest).unwrap();
    assert_eq!(manifest["command"].as_str(), Some("train"));
    assert_eq!(manifest["seed"].as_integer(), Some(42));
    assert_eq!(manifest["config"]["epochs"].as_integer(), Some(4));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert!(dataio::load_bundle(&bundle).unwrap().threshold.is_none());
}

#[test]
fn config_file_and_flags_merge() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "epochs = 2\nbeta = 0.5\nhidden_dims = [16]\nembed_dim = 4\nsplit_ratio = 0.5\n").unwrap();
    let out = dir.path().join("m.rpmb");
    ok(&[
        "train", "--data", s(&data()), "--roles", s(&roles()), "--config", s(&config),
        "--out", s(&out), "--beta", "0", "--seed", "7",
    ]);
    let b = dataio::load_bundle(&out).unwrap();
    assert_eq!(b.config.epochs, 2);
    assert_eq!(b.config.beta, 0.0);
    assert_eq!(b.config.seed, 7);
    assert_eq!(b.params.hidden_dims(), vec![16]);
    assert_eq!(b.split.ratio, 0.5);
    assert_eq!(b.split.seed, 7);
}

#[test]
fn bad_config_key_is_an_error() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "epoch = 2\n").unwrap();
    let out = rpmnet(&[
        "train", "--data", s(&data()), "--roles", s(&roles()), "--config", s(&config),
        "--out", s(&dir.path().join("m.rpmb")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("epoch"), "{}", stderr(&out));
}

#[test]
fn unassigned_class_is_named() {
    let dir = TempDir::new().unwrap();
    let roles = dir.path().join("roles.toml");
    fs::write(&roles, "known = ['k0', 'k1', 'k2', 'k3']\nvalidation_unknown = ['val_unknown']\n").unwrap();
    let out = rpmnet(&[
        "train", "--data", s(&data()), "--roles", s(&roles), "--out", s(&dir.path().join("m.rpmb")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown"), "{}", stderr(&out));
    assert!(!dir.path().join("m.rpmb").exists());
}

#[test]
fn conflicting_roles_are_named() {
    let dir = TempDir::new().unwrap();
    let roles = dir.path().join("roles.toml");
    fs::write(&roles, "known = ['k0', 'k1']\ntest_unknown = ['k1']\n").unwrap();
    let out = rpmnet(&[
        "train", "--data", s(&data()), "--roles", s(&roles), "--out", s(&dir.path().join("m.rpmb")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("`k1`"), "{}", stderr(&out));
}

#[test]
fn train_calibrate_eval_is_byte_identical_across_runs() {
    let run = |dir: &TempDir| {
        let calibrated = trained_and_calibrated(dir);
        let report = dir.path().join("report.toml");
        ok(&[
            "eval", "--bundle", s(&calibrated), "--data", s(&data()), "--roles", s(&roles()),
            "--report", s(&report),
        ]);
        (
            fs::read(dir.path().join("m.rpmb")).unwrap(),
            fs::read(&calibrated).unwrap(),
            fs::read(&report).unwrap(),
        )
    };
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(run(&a), run(&b));
}

#[test]
fn calibration_separates_a_clean_fixture() {
    let dir = TempDir::new().unwrap();
    let blobs = [
        Blob::new("a", 200, vec![-1.0, -1.0]),
        Blob::new("b", 200, vec![1.0, 1.0]),
        Blob::new("v", 100, vec![-3.0, 3.0]),
        Blob::new("u", 100, vec![-3.0, 3.0]),
    ];
    let records = synth::sample_blobs(&blobs, 0.1, 42).unwrap();
    let csv = dir.path().join("blobs.csv");
    write_csv(&csv, &["x".into(), "y".into()], "Label", &records).unwrap();
    let roles = dir.path().join("roles.toml");
    fs::write(&roles, "known = ['a', 'b']\nvalidation_unknown = ['v']\ntest_unknown = ['u']\n").unwrap();
    let bundle = dir.path().join("m.rpmb");
    ok(&[
        "train", "--data", s(&csv), "--roles", s(&roles), "--out", s(&bundle), "--epochs", "200",
    ]);
    let calibrated = dir.path().join("c.rpmb");
    ok(&[
        "calibrate", "--bundle", s(&bundle), "--data", s(&csv), "--roles", s(&roles), "--out", s(&calibrated),
    ]);
    let t = dataio::load_bundle(&calibrated).unwrap().threshold.unwrap();
    assert_eq!(t.f1, 1.0);
    assert!(t.unknown.max < t.tau && t.tau <= t.known.min);
}

#[test]
fn recalibration_records_supersession() {
    let dir = TempDir::new().unwrap();
    let first = trained_and_calibrated(&dir);
    let second = dir.path().join("c2.rpmb");
    calibrate(&first, &second);
    let manifest: toml::Table =
        toml::from_str(&fs::read_to_string(dir.path().join("c2.rpmb.manifest.toml")).unwrap()).unwrap();
    let prior = dataio::load_bundle(&first).unwrap().threshold.unwrap();
    assert_eq!(manifest["supersedes"]["previous_tau"].as_float(), Some(prior.tau));
    let plain: toml::Table =
        toml::from_str(&fs::read_to_string(dir.path().join("c.rpmb.manifest.toml")).unwrap()).unwrap();
    assert!(!plain.contains_key("supersedes"));
}

#[test]
fn calibrate_never_writes_in_place() {
    let dir = TempDir::new().unwrap();
    let bundle = train(&dir, "m.rpmb", "1");
    let before = fs::read(&bundle).unwrap();
    let out = rpmnet(&[
        "calibrate", "--bundle", s(&bundle), "--data", s(&data()), "--roles", s(&roles()), "--out", s(&bundle),
    ]);
    assert!(!out.status.success());
    assert_eq!(fs::read(&bundle).unwrap(), before);
}

#[test]
fn calibrate_without_validation_classes_cites_roles() {
    let dir = TempDir::new().unwrap();
    let bundle = train(&dir, "m.rpmb", "1");
    let roles = dir.path().join("no-val.toml");
    fs::write(
        &roles,
        "known = ['k0', 'k1', 'k2', 'k3']\ntest_unknown = ['unknown']\nignore = ['val_unknown']\n",
    )
    .unwrap();
    let out = rpmnet(&[
        "calibrate", "--bundle", s(&bundle), "--data", s(&data()), "--roles", s(&roles),
        "--out", s(&dir.path().join("c.rpmb")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no-val.toml"), "{}", stderr(&out));
}

#[test]
fn missing_bundle_argument_is_a_usage_error() {
    let out = rpmnet(&["calibrate", "--data", s(&data()), "--roles", s(&roles()), "--out", "x.rpmb"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--bundle"));
    let out = rpmnet(&[
        "calibrate", "--bundle", "/nonexistent/m.rpmb", "--data", s(&data()), "--roles", s(&roles()),
        "--out", "x.rpmb",
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/nonexistent/m.rpmb"));
}

#[test]
fn eval_needs_calibration() {
    let dir = TempDir::new().unwrap();
    let bundle = train(&dir, "m.rpmb", "1");
    let out = rpmnet(&[
        "eval", "--bundle", s(&bundle), "--data", s(&data()), "--roles", s(&roles()),
        "--report", s(&dir.path().join("r.toml")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("calibrate"));
}

#[test]
fn eval_prints_six_headline_metrics() {
    let dir = TempDir::new().unwrap();
    let bundle = trained_and_calibrated(&dir);
    let report = dir.path().join("r.toml");
    let out = ok(&[
        "eval", "--bundle", s(&bundle), "--data", s(&data()), "--roles", s(&roles()), "--report", s(&report),
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    for column in ["Precision", "Recall", "F1-Score", "AUROC", "AUPR-IN", "AUPR-OUT"] {
        assert!(stdout.contains(column), "{stdout}");
    }
    let parsed = rpmnet_core::metrics::EvalReport::from_toml(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed.known_count, 350);
    assert_eq!(parsed.unknown_count, 200);
    assert!(dir.path().join("r.toml.manifest.toml").exists());
}

#[test]
fn score_appends_columns_deterministically() {
    let dir = TempDir::new().unwrap();
    let bundle = trained_and_calibrated(&dir);
    let out1 = dir.path().join("s1.csv");
    let out2 = dir.path().join("s2.csv");
    ok(&["score", "--bundle", s(&bundle), "--data", s(&data()), "--out", s(&out1)]);
    ok(&["score", "--bundle", s(&bundle), "--data", s(&data()), "--out", s(&out2)]);
    let text = fs::read_to_string(&out1).unwrap();
    assert_eq!(text.as_bytes(), fs::read(&out2).unwrap().as_slice());
    let header = text.lines().next().unwrap();
    assert!(header.ends_with(",Label,predicted_label,score,is_unknown"));
    assert_eq!(text.lines().count(), 1 + 2150);
}

#[test]
fn known_cluster_rows_are_not_flagged() {
    let dir = TempDir::new().unwrap();
    let bundle = calibrated_after(&dir, "30");
    let records = synth::open_set_fixture(0, 7).unwrap();
    let known: Vec<_> = records.records.iter().filter(|r| r.label == "k0").take(100).cloned().collect();
    let input = dir.path().join("known.csv");
    write_csv(&input, &records.feature_names, "Label", &known).unwrap();
    let out = dir.path().join("scored.csv");
    ok(&["score", "--bundle", s(&bundle), "--data", s(&input), "--out", s(&out)]);
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 100);
    for row in rows {
        assert_eq!(&row[row.len() - 1], "false");
        assert_eq!(&row[row.len() - 3], "k0");
    }
}

#[test]
fn score_header_only_gives_header_only() {
    let dir = TempDir::new().unwrap();
    let bundle = trained_and_calibrated(&dir);
    let input = dir.path().join("empty.csv");
    let header = fs::read_to_string(data()).unwrap().lines().next().unwrap().to_string();
    fs::write(&input, format!("{header}\n")).unwrap();
    let out = dir.path().join("scored.csv");
    ok(&["score", "--bundle", s(&bundle), "--data", s(&input), "--out", s(&out)]);
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        format!("{header},predicted_label,score,is_unknown\n")
    );
}

#[test]
fn score_schema_mismatch_lists_columns() {
    let dir = TempDir::new().unwrap();
    let bundle = trained_and_calibrated(&dir);
    let input = dir.path().join("bad.csv");
    fs::write(&input, "f0,f1,bogus,Label\n1,2,3,k0\n").unwrap();
    let out = rpmnet(&["score", "--bundle", s(&bundle), "--data", s(&input), "--out", s(&dir.path().join("o.csv"))]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("missing columns: f2, f3"), "{err}");
    assert!(err.contains("extra columns: bogus"), "{err}");
}

#[test]
fn score_refuses_uncalibrated_bundle() {
    let dir = TempDir::new().unwrap();
    let bundle = train(&dir, "m.rpmb", "1");
    let out = rpmnet(&["score", "--bundle", s(&bundle), "--data", s(&data()), "--out", s(&dir.path().join("o.csv"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no threshold"), "{}", stderr(&out));
}

#[test]
fn unparsable_rows_are_left_unscored() {
    let dir = TempDir::new().unwrap();
    let bundle = trained_and_calibrated(&dir);
    let text = fs::read_to_string(data()).unwrap();
    let mut lines: Vec<String> = text.lines().take(3).map(String::from).collect();
    lines[1] = lines[1].replacen(|c: char| c.is_ascii_digit(), "Infinity", 1);
    let input = dir.path().join("dirty.csv");
    fs::write(&input, lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("scored.csv");
    ok(&["score", "--bundle", s(&bundle), "--data", s(&input), "--out", s(&out)]);
    let scored = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = scored.lines().collect();
    assert!(rows[1].ends_with(",,,"), "{}", rows[1]);
    assert!(!rows[2].ends_with(",,,"));
}

#[test]
fn tampered_bundle_is_rejected() {
    let dir = TempDir::new().unwrap();
    let bundle = trained_and_calibrated(&dir);
    let mut bytes = fs::read(&bundle).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(&bundle, bytes).unwrap();
    let out = rpmnet(&["score", "--bundle", s(&bundle), "--data", s(&data()), "--out", s(&dir.path().join("o.csv"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn inputs_are_never_modified() {
    let before = (fs::read(data()).unwrap(), fs::read(roles()).unwrap());
    let dir = TempDir::new().unwrap();
    let bundle = trained_and_calibrated(&dir);
    ok(&["score", "--bundle", s(&bundle), "--data", s(&data()), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!((fs::read(data()).unwrap(), fs::read(roles()).unwrap()), before);
}

#[test]
fn synth_reproduces_the_shipped_fixture() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("f.csv");
    let roles_out = dir.path().join("r.toml");
    ok(&["synth", "--out", s(&csv), "--roles", s(&roles_out), "--unknown", "200"]);
    assert_eq!(fs::read(&csv).unwrap(), fs::read(data()).unwrap());
    assert_eq!(fs::read(&roles_out).unwrap(), fs::read(roles()).unwrap());
}

#[test]
fn log_level_follows_env() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rpmnet"))
        .args(["train", "--data", s(&data()), "--roles", s(&roles()), "--epochs", "1"])
        .args(["--out", s(&dir.path().join("m.rpmb"))])
        .env("RPMNET_LOG", "info")
        .output()
        .unwrap();
    assert!(stderr(&out).contains("epoch"));
    let out = Command::new(env!("CARGO_BIN_EXE_rpmnet"))
        .args(["train", "--data", s(&data()), "--roles", s(&roles()), "--epochs", "1"])
        .args(["--out", s(&dir.path().join("m2.rpmb"))])
        .env("RPMNET_LOG", "error")
        .output()
        .unwrap();
    assert!(!stderr(&out).contains("INFO"));
}
