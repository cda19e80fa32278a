use std::path::Path;
use std::process::{Command, Output};

use grbe::io::{read_corpus, read_records};

fn grbe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grbe"))
        .args(args)
        .env_remove("GRBE_THREADS")
        .output()
        .expect("spawn grbe")
}

fn ok(args: &[&str]) -> Output {
    let out = grbe(args);
    assert!(
        out.status.success(),
        "grbe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_corpus(dir: &Path) -> std::path::PathBuf {
    let c = dir.join("c.jsonl");
    ok(&["gen-spmotif", "--bias", "0.9", "--n-train", "40", "--n-val", "10", "--n-test", "10", "--seed", "4", "--out", p(&c)]);
    c
}

fn trained(dir: &Path, corpus: &Path) -> std::path::PathBuf {
    let run = dir.join("run");
    ok(&["train", "--data", p(corpus), "--out", p(&run), "--seed", "1", "--epochs", "2", "--hidden", "8", "--quiet"]);
    run.join("checkpoint.json")
}

#[test]
fn gen_spmotif_counts_and_bias_check() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let graphs = read_corpus(&c).unwrap();
    assert_eq!(graphs.len(), 60);
    assert!(dir.path().join("c.jsonl.meta.json").exists());

    let bad = grbe(&["gen-spmotif", "--bias", "0.2", "--seed", "1", "--out", p(&dir.path().join("x.jsonl"))]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!dir.path().join("x.jsonl").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(grbe(&["train", "--out", p(dir.path())]).status.code(), Some(2));
    assert_eq!(grbe(&["frobnicate"]).status.code(), Some(2));
    let c = small_corpus(dir.path());
    let no_seed = grbe(&["train", "--data", p(&c), "--out", p(&dir.path().join("r"))]);
    assert_eq!(no_seed.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_grbe"))
        .args(["gradcheck", "--seed", "0"])
        .env("GRBE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("bad.jsonl");
    std::fs::write(&c, "{\"id\": 0, \"n\": 2}\n").unwrap();
    let out = grbe(&["train", "--data", p(&c), "--out", p(&dir.path().join("r")), "--seed", "0"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("r").join("checkpoint.json").exists());
}

#[test]
fn train_writes_artifacts_and_accepts_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let cfg = dir.path().join("spmotif09.ini");
    std::fs::write(&cfg, "alpha = 0.5\nbeta = 0.1\ngamma = 0.5\nr = 0.2\nr_s = 0.7\nseed = 2\nepochs = 2\nhidden = 8\n").unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--config", p(&cfg), "--data", p(&c), "--out", p(&run), "--quiet", "--beta", "0"]);
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,L_r,L_a,L_c,L_s,total,train_acc,val_acc,rationale_auc"));
    assert_eq!(history.lines().count(), 3);
    let snapshot = std::fs::read_to_string(run.join("config.ini")).unwrap();
    assert!(snapshot.contains("beta = 0\n"), "{snapshot}");
    assert!(snapshot.contains("seed = 2\n"));

    let ablation = dir.path().join("ablation");
    ok(&[
        "train", "--data", p(&c), "--out", p(&ablation), "--seed", "0", "--alpha", "0", "--beta", "0", "--r-aug", "0",
        "--epochs", "1", "--hidden", "8", "--quiet",
    ]);
}

#[test]
fn eval_reports_and_omits_auc_without_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let ck = trained(dir.path(), &c);
    let out = ok(&["eval", "--checkpoint", p(&ck), "--data", p(&c), "--split", "test"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["graphs"], 10);
    assert!(report["rationale_auc"].is_number());
    assert_eq!(report["per_class_accuracy"].as_array().unwrap().len(), 3);

    let again = ok(&["eval", "--checkpoint", p(&ck), "--data", p(&c), "--split", "test"]);
    assert_eq!(out.stdout, again.stdout);

    let text = std::fs::read_to_string(&c).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("gt_rationale");
            format!("{v}\n")
        })
        .collect();
    let plain = dir.path().join("plain.jsonl");
    std::fs::write(&plain, stripped).unwrap();
    let out = ok(&["eval", "--checkpoint", p(&ck), "--data", p(&plain)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.get("rationale_auc").is_none());
}

#[test]
fn augment_counts_labels_and_lambda_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let ck = trained(dir.path(), &c);
    let source = read_corpus(&c).unwrap();
    let aug = dir.path().join("aug.jsonl");
    let out = ok(&[
        "augment", "--checkpoint", p(&ck), "--data", p(&c), "--r-aug", "0.5", "--seed", "3", "--out", p(&aug),
    ]);
    let records = read_records(&aug).unwrap();
    let skipped = String::from_utf8_lossy(&out.stderr).matches("skipped degenerate pair").count();
    assert_eq!(records.len() + skipped, 30);
    for r in &records {
        let prov = r.provenance.as_ref().unwrap();
        let src = source.iter().find(|g| g.id == prov.i).unwrap();
        assert_eq!(r.y, src.label);
        assert!(prov.bridge_edges.len() <= prov.requested_bridges);
    }

    let aug1 = dir.path().join("aug1.jsonl");
    ok(&[
        "augment", "--checkpoint", p(&ck), "--data", p(&c), "--r-aug", "0.5", "--lambda", "1.0", "--seed", "3", "--out",
        p(&aug1),
    ]);
    // with λ = 1 the environment block only holds features of graph i
    for r in read_records(&aug1).unwrap() {
        let prov = r.provenance.unwrap();
        let src = source.iter().find(|g| g.id == prov.i).unwrap();
        let rows: Vec<Vec<f64>> = (0..src.node_count()).map(|v| src.features().row(v).to_vec()).collect();
        assert!(r.x.iter().all(|x| rows.contains(x)));
    }
}

#[test]
fn diversity_reports_bandwidth_and_zero_self_distance() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let ck = trained(dir.path(), &c);
    let hist = dir.path().join("run").join("history.csv");
    let out = ok(&[
        "diversity", "--checkpoint", p(&ck), "--data", p(&c), "--compare", p(&c), "--history", p(&hist),
    ]);
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["bandwidth"].as_f64().unwrap() > 0.0);
    assert_eq!(r["js_distance"]["raw"], 0.0);
    assert_eq!(r["data"]["env_category_count"], r["compare"]["env_category_count"]);
    assert_eq!(r["distance_series"].as_array().unwrap().len(), 2);
}

#[test]
fn gradcheck_passes_and_catches_injected_fault() {
    let out = ok(&["gradcheck", "--seed", "0"]);
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["passed"], true);
    assert!(r["params"].as_array().unwrap().len() > 4);
    let bad = grbe(&["gradcheck", "--seed", "0", "--inject-fault", "sigmoid-sign"]);
    assert!(!bad.status.success());
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = |d: &Path| {
        let c = small_corpus(d);
        let ck = trained(d, &c);
        let aug = d.join("aug.jsonl");
        ok(&["augment", "--checkpoint", p(&ck), "--data", p(&c), "--seed", "5", "--out", p(&aug)]);
        let report = d.join("report.json");
        ok(&["eval", "--checkpoint", p(&ck), "--data", p(&c), "--out", p(&report)]);
        [c, ck, d.join("run/history.csv"), aug, report]
            .iter()
            .map(|f| std::fs::read(f).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(files(a.path()), files(b.path()));
}
