use std::path::Path;
use std::process::{Command, Output};

use dcpnet::report::{read_metrics, TABLE_HEADER};

fn dcpnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcpnet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = dcpnet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dcpnet(&[]).status.code(), Some(2));
    assert_eq!(dcpnet(&["gen", "--mode", "nowhere", "--out", "x"]).status.code(), Some(2));
    assert_eq!(dcpnet(&["frobnicate"]).status.code(), Some(2));
    assert!(dcpnet(&["--help"]).status.success());
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcpnet(&["eval", "--dataset", s(&dir.path().join("missing")), "--baseline", "no-interaction", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen", "--mode", "homo-cis", "--samples", "3", "--seed", "5", "--out", s(d)]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 1 + 3 * 8);
    assert_eq!(ta, tb);
}

#[test]
fn untrained_no_interaction_sends_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--mode", "homo-pis", "--samples", "4", "--out", s(&data)]);
    let out = dir.path().join("out");
    ok(&["eval", "--dataset", s(&data), "--baseline", "no-interaction", "--out", s(&out)]);
    let recs = read_metrics(&out.join("metrics.json")).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].comm_cost_mbpf, 0.0);
    assert_eq!(recs[0].mbpf_total, 0.0);
    assert_eq!(recs[0].frames, 4);
}

#[test]
fn gen_train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["gen", "--mode", "homo-cis", "--samples", "8", "--seed", "1", "--out", s(&p("train"))]);
    ok(&["gen", "--mode", "homo-cis", "--samples", "4", "--seed", "2", "--out", s(&p("val"))]);
    ok(&["train", "--dataset", s(&p("train")), "--ckpt", s(&p("dcp")), "--epochs", "1", "--batch", "4", "--val", s(&p("val"))]);
    ok(&["train", "--dataset", s(&p("train")), "--baseline", "no-interaction", "--ckpt", s(&p("ni")), "--epochs", "1", "--batch", "4"]);
    let curve = std::fs::read_to_string(p("dcp").join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("step,loss,val_miou"));
    assert_eq!(curve.lines().count(), 1 + 2);

    ok(&["eval", "--dataset", s(&p("val")), "--ckpt", s(&p("ni")), "--out", s(&p("eval-ni"))]);
    ok(&[
        "eval", "--dataset", s(&p("val")), "--ckpt", s(&p("dcp")), "--reference-ckpt", s(&p("ni")),
        "--request-threshold", "1.0", "--comm-accounting", "total", "--dump", "2", "--out", s(&p("eval-dcp")),
    ]);
    let table = std::fs::read_to_string(p("eval-dcp").join("tables.csv")).unwrap();
    assert_eq!(table.lines().next(), Some(TABLE_HEADER));
    let rec = &read_metrics(&p("eval-dcp").join("metrics.json")).unwrap()[0];
    assert_eq!(rec.method, "DCP-Net");
    assert_eq!(rec.accounting, "total");
    assert_eq!(rec.comm_cost_mbpf, rec.mbpf_total);
    assert!(rec.mbpf_total > rec.mbpf_feature_only);
    assert!(rec.degradation_detection_accuracy.is_some());
    assert_eq!(std::fs::read_dir(p("eval-dcp").join("frames")).unwrap().count(), 8);

    ok(&["sweep", "--dataset", s(&p("val")), "--ckpt", s(&p("dcp")), "--out", s(&p("sweep"))]);
    let sweep = std::fs::read_to_string(p("sweep").join("threshold.csv")).unwrap();
    assert!(sweep.lines().count() > 2);

    ok(&[
        "report", s(&p("eval-ni").join("metrics.json")), s(&p("eval-dcp").join("metrics.json")), "--out", s(&p("merged")),
    ]);
    let merged = read_metrics(&p("merged").join("metrics.json")).unwrap();
    assert_eq!(merged.len(), 2);
    let ni = merged.iter().find(|r| r.method == "No-Interaction").unwrap();
    let dcp = merged.iter().find(|r| r.method == "DCP-Net").unwrap();
    assert_eq!(dcp.reference_avg, Some(ni.avg));
    assert_eq!(std::fs::read_to_string(p("merged").join("tables.csv")).unwrap().lines().count(), 3);
}
