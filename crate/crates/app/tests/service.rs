mod common;

use common::{block_on, client, write_docs, TestServer};
use formquery_core::data::{gen_corpus, SynthSpec};
use formquery_core::learn::{finetune, Checkpoint, Init, TrainConfig};
use serde_json::{json, Value};

fn tiny_checkpoint(docs: &[formquery_core::data::Document]) -> Checkpoint {
    let cfg = TrainConfig {
        d: 16,
        layers: 1,
        heads: 2,
        max_steps: Some(2),
        max_len: 128,
        ..TrainConfig::default()
    };
    finetune(docs, Init::Fresh, cfg).unwrap().checkpoint
}

#[test]
fn endpoints() {
    let docs = gen_corpus(&SynthSpec::default(), 3, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_docs(dir.path(), &docs);
    std::fs::write(
        dir.path().join(format!("{}.png", docs[0].doc_id)),
        b"\x89PNG fake",
    )
    .unwrap();
    let ckpt = tiny_checkpoint(&docs);
    let ckpt_bytes = ckpt.to_bytes();
    let server = TestServer::start(ckpt.clone(), dir.path());
    let base = server.base.clone();

    block_on(async {
        let c = client();
        let health = c.get(format!("{base}/healthz")).send().await.unwrap();
        assert_eq!(health.status(), 200);

        let list: Value = c
            .get(format!("{base}/api/documents"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let listed = list["documents"].as_array().unwrap();
        assert_eq!(listed.len(), 3);
        for k in ["doc_id", "page_width", "page_height", "word_count"] {
            assert!(listed[0].get(k).is_some(), "{k}");
        }

        let id = &docs[0].doc_id;
        let detail: Value = c
            .get(format!("{base}/api/documents/{id}"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(
            detail["words"].as_array().unwrap().len(),
            docs[0].words.len()
        );
        assert_eq!(detail["image"], format!("/api/documents/{id}/image"));

        let img = c
            .get(format!("{base}/api/documents/{id}/image"))
            .send()
            .await
            .unwrap();
        assert_eq!(img.status(), 200);
        assert_eq!(img.headers()["content-type"], "image/png");
        let no_img = c
            .get(format!("{base}/api/documents/{}/image", docs[1].doc_id))
            .send()
            .await
            .unwrap();
        assert_eq!(no_img.status(), 404);

        let missing = c
            .get(format!("{base}/api/documents/nope"))
            .send()
            .await
            .unwrap();
        assert_eq!(missing.status(), 404);

        let resp = c
            .post(format!("{base}/api/retrieve"))
            .json(&json!({"doc_id": id, "query": docs[0].annotations[0].key_text, "top_k": 3}))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        let body: Value = resp.json().await.unwrap();
        assert_eq!(body["candidates"].as_array().unwrap().len(), 3);
        assert_eq!(body["prediction"], body["candidates"][0]);

        let unknown = c
            .post(format!("{base}/api/retrieve"))
            .json(&json!({"doc_id": "nope", "query": "date"}))
            .send()
            .await
            .unwrap();
        assert_eq!(unknown.status(), 404);
        let err: Value = unknown.json().await.unwrap();
        assert!(err["error"].is_string());

        let bad = c
            .post(format!("{base}/api/retrieve"))
            .json(&json!({"doc_id": id, "query": ""}))
            .send()
            .await
            .unwrap();
        assert_eq!(bad.status(), 400);
    });
    drop(server);
    // serving never touched the checkpoint or the documents on disk
    assert_eq!(ckpt.to_bytes(), ckpt_bytes);
    let reloaded = formquery::store::DocStore::open(dir.path()).unwrap();
    for d in &docs {
        assert_eq!(&reloaded.docs[&d.doc_id], d);
    }
}

#[test]
fn port_in_use_is_a_startup_error() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap();
    let docs = gen_corpus(&SynthSpec::default(), 1, 2).unwrap();
    let state = formquery::server::ServeState::new(tiny_checkpoint(&docs), Default::default());
    let err = block_on(formquery::server::serve(addr, state, None)).unwrap_err();
    assert!(err.to_string().contains("binding"));
}
