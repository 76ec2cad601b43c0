use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use formquery_core::data::{load_document, Document};

/// Documents of a directory, keyed by id, with optional page images.
#[derive(Debug, Default, Clone)]
pub struct DocStore {
    pub docs: BTreeMap<String, Document>,
    pub images: BTreeMap<String, PathBuf>,
}

/// Reads every `*.json` document under `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<(PathBuf, Document)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
            let doc = load_document(&bytes).with_context(|| format!("loading {}", p.display()))?;
            Ok((p, doc))
        })
        .collect()
}

pub fn load_docs(dir: &Path) -> Result<Vec<Document>> {
    Ok(load_dir(dir)?.into_iter().map(|(_, d)| d).collect())
}

impl DocStore {
    /// A `name.png` next to `name.json` is taken as that document's page image.
    pub fn open(dir: &Path) -> Result<Self> {
        let mut store = DocStore::default();
        for (path, doc) in load_dir(dir)? {
            let png = path.with_extension("png");
            if png.is_file() {
                store.images.insert(doc.doc_id.clone(), png);
            }
            let id = doc.doc_id.clone();
            if store.docs.insert(id.clone(), doc).is_some() {
                bail!("duplicate doc_id {id:?} in {}", dir.display());
            }
        }
        Ok(store)
    }
}
