mod common;

use common::{run, write_docs};
use formquery_core::data::{gen_corpus, SynthSpec};

#[test]
fn usage_errors_exit_2() {
    let out = run(&["retrieve", "--doc", "x.json", "--query", "total"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--ckpt"));
    assert_eq!(run(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.fqck");
    let doc = dir.path().join("d.json");
    std::fs::write(&doc, "{}").unwrap();
    let out = run(&[
        "retrieve",
        "--ckpt",
        missing.to_str().unwrap(),
        "--doc",
        doc.to_str().unwrap(),
        "--query",
        "q",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();

    let out = run(&[
        "gen",
        "--out",
        &p("train"),
        "--count",
        "6",
        "--seed",
        "3",
        "--fields",
        "4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(std::fs::read_dir(p("train")).unwrap().count(), 6);

    let cfg = p("run.cfg");
    std::fs::write(&cfg, "d=16\nlayers=1\nheads=2\nlr=0.001\nmax_len=128\n").unwrap();
    let out = run(&[
        "pretrain",
        "--data",
        &p("train"),
        "--out",
        &p("pre.fqck"),
        "--config",
        &cfg,
        "--set",
        "max_steps=3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = run(&[
        "finetune",
        "--data",
        &p("train"),
        "--out",
        &p("ft.fqck"),
        "--ckpt",
        &p("pre.fqck"),
        "--config",
        &cfg,
        "--set",
        "epochs=2",
        "--seed",
        "5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = run(&[
        "eval",
        "--ckpt",
        &p("ft.fqck"),
        "--data",
        &p("train"),
        "--query-mode",
        "field-name",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 24);
    let (tp, fp, fn_) = (
        report["tp"].as_u64().unwrap(),
        report["fp"].as_u64().unwrap(),
        report["fn"].as_u64().unwrap(),
    );
    assert_eq!(tp + fn_, 24);
    assert_eq!(tp + fp, 24);

    let doc = std::fs::read_dir(p("train"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let out = run(&[
        "retrieve",
        "--ckpt",
        &p("ft.fqck"),
        "--doc",
        doc.to_str().unwrap(),
        "--query",
        "Date:",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let pred: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(pred["schema_version"], 1);
    assert_eq!(pred["prediction"], pred["candidates"][0]);
    assert_eq!(pred["prediction"]["box_norm"].as_array().unwrap().len(), 4);
}

#[test]
fn funsd_conversion() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("form.json");
    std::fs::write(
        &input,
        r#"{"form": [
            {"id": 0, "text": "Name:", "box": [0, 0, 40, 10], "label": "question",
             "words": [{"text": "Name:", "box": [0, 0, 40, 10]}], "linking": [[0, 1]]},
            {"id": 1, "text": "Ann", "box": [50, 0, 80, 10], "label": "answer",
             "words": [{"text": "Ann", "box": [50, 0, 80, 10]}], "linking": [[0, 1]]}
        ]}"#,
    )
    .unwrap();
    let out_path = dir.path().join("out").with_extension("json");
    let out = run(&[
        "convert-funsd",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--page-size",
        "100x20",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc = formquery_core::data::load_document(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(doc.doc_id, "form");
    assert_eq!(doc.annotations[0].value_texts, vec!["Ann".to_string()]);
    assert_eq!(doc.words[1].bbox.as_array(), [500, 0, 800, 500]);

    // round trip through a store directory works too
    write_docs(
        &dir.path().join("docs"),
        &gen_corpus(&SynthSpec::default(), 1, 1).unwrap(),
    );
}
