use std::path::Path;
use std::process::{Command, Output};

fn bvda(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bvda"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = bvda(args, cwd);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_world(dir: &Path) {
    ok(
        &["gen-data", "--out", "data", "--source-per-class", "12", "--target-per-class", "6", "--seed", "1"],
        dir,
    );
    ok(
        &["train-source", "--manifest", "data/source/manifest.tsv", "--out", "src.bvck", "--epochs", "3"],
        dir,
    );
    ok(
        &["dump-preds", "--checkpoint", "src.bvck", "--manifest", "data/target/manifest.tsv", "--out", "t.bvpd"],
        dir,
    );
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(bvda(&["gen-data", "--out", "x", "--classes", "1"], d).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "no_such_key = 1\n").unwrap();
    assert_eq!(bvda(&["gen-data", "--out", "x", "--config", "bad.toml"], d).status.code(), Some(2));
    assert_eq!(
        bvda(&["train-source", "--manifest", "missing.tsv", "--out", "m.bvck"], d).status.code(),
        Some(3)
    );

    small_world(d);
    let target = "data/target/manifest.tsv";
    let diverge = bvda(
        &["adapt", "--manifest", target, "--dump", "t.bvpd", "--out", "a.bvck", "--lr", "1e30", "--epochs", "2"],
        d,
    );
    assert_eq!(diverge.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverge.stderr));
    std::fs::write(d.join("junk.bvpd"), b"BVPD").unwrap();
    assert_eq!(
        bvda(&["adapt", "--manifest", target, "--dump", "junk.bvpd", "--out", "a.bvck"], d).status.code(),
        Some(3)
    );
}

#[test]
fn config_file_keys_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_world(d);
    std::fs::write(d.join("adapt.toml"), "epochs = 2\nbeta_reg = 0.5\nteacher_mode = \"hard\"\n").unwrap();
    ok(
        &[
            "adapt", "--manifest", "data/target/manifest.tsv", "--dump", "t.bvpd", "--out", "a.bvck", "--metrics", "m.jsonl",
            "--config", "adapt.toml", "--epochs", "3",
        ],
        d,
    );
    let text = std::fs::read_to_string(d.join("m.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    let summary = &lines[3];
    assert_eq!(summary["record"], "summary");
    assert_eq!(summary["config"]["epochs"], 3);
    assert_eq!(summary["config"]["beta_reg"], 0.5);
    assert_eq!(summary["config"]["teacher_mode"], "hard");
    assert!(lines[..3].iter().all(|l| l["record"] == "epoch" && l["accuracy"].is_null()));
}

#[test]
fn eval_predictions_reproduce_the_reported_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_world(d);
    let target = "data/target/manifest.tsv";
    ok(&["adapt", "--manifest", target, "--dump", "t.bvpd", "--out", "a.bvck", "--epochs", "3"], d);
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["eval", "--checkpoint", "a.bvck", "--manifest", target, "--predictions", "p.bvpd"], d))
            .unwrap();

    let dump = bvda_core::oracle::PredictionDump::load(&d.join("p.bvpd"), None).unwrap();
    let labels: std::collections::HashMap<String, usize> = std::fs::read_to_string(d.join(target))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            (cols[0].to_string(), cols[2].parse().unwrap())
        })
        .collect();
    let hits = dump
        .records
        .iter()
        .filter(|(id, p)| {
            let s = p.as_slice();
            let top = (0..s.len()).fold(0, |b, j| if s[j] > s[b] { j } else { b });
            labels[id] == top
        })
        .count();
    assert_eq!(report["videos"], labels.len());
    assert_eq!(report["accuracy"].as_f64().unwrap(), hits as f64 / labels.len() as f64);
}

#[test]
fn served_and_dumped_teachers_give_the_same_adaptation() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_world(d);
    let mut server = Command::new(env!("CARGO_BIN_EXE_bvda"))
        .args(["serve", "--checkpoint", "src.bvck", "--addr", "127.0.0.1:0"])
        .current_dir(d)
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    std::io::BufRead::read_line(&mut std::io::BufReader::new(server.stdout.take().unwrap()), &mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("address line").to_string();

    let target = "data/target/manifest.tsv";
    let common = ["--manifest", target, "--epochs", "3", "--seed", "5"];
    let mut a = vec!["adapt", "--endpoint", url.as_str(), "--out", "a.bvck", "--bank", "a.bvtb"];
    a.extend(common);
    let mut b = vec!["adapt", "--dump", "t.bvpd", "--out", "b.bvck", "--bank", "b.bvtb"];
    b.extend(common);
    let ra = bvda(&a, d);
    server.kill().ok();
    server.wait().ok();
    assert!(ra.status.success(), "{}", String::from_utf8_lossy(&ra.stderr));
    ok(&b, d);
    assert_eq!(std::fs::read(d.join("a.bvtb")).unwrap(), std::fs::read(d.join("b.bvtb")).unwrap());
    assert_eq!(std::fs::read(d.join("a.bvck")).unwrap(), std::fs::read(d.join("b.bvck")).unwrap());
}

#[test]
fn partial_target_classes_flow_through_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        &[
            "gen-data", "--out", "data", "--source-per-class", "12", "--target-per-class", "6",
            "--partial-target-classes", "0,1,2",
        ],
        d,
    );
    let text = std::fs::read_to_string(d.join("data/target/manifest.tsv")).unwrap();
    let labels: std::collections::BTreeSet<&str> =
        text.lines().filter(|l| !l.starts_with('#')).map(|l| l.rsplit('\t').next().unwrap()).collect();
    assert_eq!(labels.into_iter().collect::<Vec<_>>(), ["0", "1", "2"]);
    ok(&["train-source", "--manifest", "data/source/manifest.tsv", "--out", "s.bvck", "--epochs", "2"], d);
    ok(&["dump-preds", "--checkpoint", "s.bvck", "--manifest", "data/target/manifest.tsv", "--out", "t.bvpd"], d);
    let report: serde_json::Value = serde_json::from_str(&ok(
        &["eval", "--checkpoint", "s.bvck", "--manifest", "data/target/manifest.tsv", "--weighted", "false"],
        d,
    ))
    .unwrap();
    let per_class = report["per_class"].as_array().unwrap();
    assert_eq!(per_class.len(), 6);
    assert!(per_class[3..].iter().all(|x| x.is_null()));
}
