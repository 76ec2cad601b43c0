#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use formquery::server::{serve_on, ServeState};
use formquery::store::DocStore;
use formquery_core::data::{serialize_document, Document};
use formquery_core::learn::Checkpoint;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_formquery"))
}

pub fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn write_docs(dir: &Path, docs: &[Document]) {
    std::fs::create_dir_all(dir).unwrap();
    for d in docs {
        std::fs::write(
            dir.join(format!("{}.json", d.doc_id)),
            serialize_document(d).unwrap(),
        )
        .unwrap();
    }
}

/// A running service on an ephemeral port; stops when dropped.
pub struct TestServer {
    pub base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl TestServer {
    pub fn start(ckpt: Checkpoint, docs_dir: &Path) -> Self {
        let store = DocStore::open(docs_dir).unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                let shutdown = async move {
                    let _ = rx.await;
                };
                serve_on(listener, ServeState::new(ckpt, store), None, shutdown)
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            stop: Some(tx),
            thread: Some(thread),
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn client() -> reqwest::Client {
    reqwest::Client::new()
}

pub fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(f)
}
