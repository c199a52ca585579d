//! Corpus manifest: a JSON file listing Markdown bodies and their metadata
//! sidecars. Relative paths resolve against the manifest's directory.
//!
//! ```json
//! { "documents": [ { "markdown": "a.md", "metadata": "a.json" } ] }
//! ```
//!
//! A sidecar holds the [`DocumentMetadata`] fields plus an `abstract` string.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DocumentMetadata, IngestError, RawDocument};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub markdown: PathBuf,
    pub metadata: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub documents: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
struct Sidecar {
    #[serde(flatten)]
    metadata: DocumentMetadata,
    #[serde(rename = "abstract")]
    abstract_text: String,
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, IngestError> {
    let path = path.as_ref();
    let mut manifest: Manifest = serde_json::from_str(&read(path)?)
        .map_err(|e| IngestError::Manifest(format!("{}: {e}", path.display())))?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

impl Manifest {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Reads and validates every listed document. Duplicate doc ids are an
    /// error.
    pub fn load_documents(&self) -> Result<Vec<RawDocument>, IngestError> {
        let mut seen = HashSet::new();
        let mut docs = Vec::with_capacity(self.documents.len());
        for entry in &self.documents {
            let sidecar_path = self.resolve(&entry.metadata);
            let sidecar: Sidecar = serde_json::from_str(&read(&sidecar_path)?)
                .map_err(|e| IngestError::Manifest(format!("{}: {e}", sidecar_path.display())))?;
            let doc = RawDocument {
                metadata: sidecar.metadata,
                abstract_text: sidecar.abstract_text,
                body_markdown: read(&self.resolve(&entry.markdown))?,
            };
            doc.validate()?;
            if !seen.insert(doc.metadata.doc_id.clone()) {
                return Err(IngestError::Manifest(format!(
                    "duplicate doc_id {:?}",
                    doc.metadata.doc_id
                )));
            }
            docs.push(doc);
        }
        Ok(docs)
    }
}
