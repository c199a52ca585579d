//! Binary store file.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "LKBSTORE"
//! 8       4     format version (u32 LE)
//! 12      4     dimension (u32 LE)
//! 16      8     document count (u64 LE)
//! 24      8     chunk count (u64 LE)
//! 32      8     vector row count in the sub-chunk layer (u64 LE)
//! 40      8     metadata section length in bytes (u64 LE)
//! 48      4     CRC-32 of everything after the header (u32 LE)
//! 52      ..    metadata section (UTF-8 JSON)
//! ..      ..    summary vectors, then sub-chunk vectors (f32 LE, row major)
//! ```
//!
//! Sub-chunk rows are ordered chunk by chunk: the chunk's own vector, then
//! its question vectors in question order.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChunkRecord, DocRecord, RowOwner, StoreSnapshot, VectorStore};
use crate::ingest::{DocType, DocumentMetadata};

pub const MAGIC: &[u8; 8] = b"LKBSTORE";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 52;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("corrupt store file: {0}")]
    Corrupt(String),
    #[error("not a store file (bad magic)")]
    BadMagic,
    #[error("unsupported store format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("store file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("checksum mismatch: header says {expected:08x}, content hashes to {actual:08x}")]
    Checksum { expected: u32, actual: u32 },
    #[error("store dimension {found} does not match configured dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct MetaDoc {
    doc_type: DocType,
    metadata: DocumentMetadata,
}

#[derive(Serialize, Deserialize)]
struct MetaChunk {
    chunk_id: String,
    doc_id: String,
    heading_path: Vec<String>,
    text: String,
    question_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MetaSection {
    max_questions: usize,
    docs: Vec<MetaDoc>,
    chunks: Vec<MetaChunk>,
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl StoreSnapshot {
    /// Serializes the snapshot to bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = MetaSection {
            max_questions: self.max_questions,
            docs: self
                .docs
                .iter()
                .map(|d| MetaDoc {
                    doc_type: d.doc_type,
                    metadata: d.metadata.clone(),
                })
                .collect(),
            chunks: self
                .chunks
                .iter()
                .map(|c| MetaChunk {
                    chunk_id: c.chunk_id.clone(),
                    doc_id: c.doc_id.clone(),
                    heading_path: c.heading_path.clone(),
                    text: c.text.clone(),
                    question_ids: c.question_ids.clone(),
                })
                .collect(),
        };
        let meta_bytes = serde_json::to_vec(&meta).expect("metadata serializes");

        let mut body = Vec::with_capacity(meta_bytes.len() + (self.summary.len() + self.rows.len()) * 4);
        body.extend_from_slice(&meta_bytes);
        put_f32s(&mut body, &self.summary);
        // Rows are kept in canonical order by construction; emit them per
        // chunk anyway so the file layout never depends on insertion history.
        let mut per_chunk: Vec<Vec<usize>> = vec![Vec::new(); self.chunks.len()];
        for (r, owner) in self.row_owner.iter().enumerate() {
            per_chunk[owner.chunk as usize].push(r);
        }
        for rows in &mut per_chunk {
            rows.sort_by_key(|&r| self.row_owner[r].slot);
            for &r in rows.iter() {
                put_f32s(&mut body, self.row(r));
            }
        }

        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.docs.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.chunks.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.row_owner.len() as u64).to_le_bytes());
        out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    /// Parses bytes produced by [`StoreSnapshot::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LoadError> {
        if bytes.len() < HEADER_LEN {
            return Err(LoadError::Corrupt(format!("{} bytes", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(LoadError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(LoadError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let dimension = u32_at(12) as u64;
        let doc_count = u64_at(16);
        let chunk_count = u64_at(24);
        let row_count = u64_at(32);
        let meta_len = u64_at(40);
        let checksum = u32_at(48);

        let expected_len = (doc_count.checked_add(row_count))
            .and_then(|n| n.checked_mul(dimension))
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(meta_len))
            .and_then(|n| n.checked_add(HEADER_LEN as u64))
            .ok_or_else(|| LoadError::Corrupt("header counts overflow".into()))?;
        if bytes.len() as u64 != expected_len {
            return Err(LoadError::Truncated {
                expected: expected_len,
                found: bytes.len() as u64,
            });
        }
        let body = &bytes[HEADER_LEN..];
        let actual = crc32fast::hash(body);
        if actual != checksum {
            return Err(LoadError::Checksum {
                expected: checksum,
                actual,
            });
        }
        if dimension == 0 {
            return Err(LoadError::Corrupt("zero dimension".into()));
        }

        let meta_len = meta_len as usize;
        let meta: MetaSection = serde_json::from_slice(&body[..meta_len])
            .map_err(|e| LoadError::Corrupt(format!("metadata section: {e}")))?;
        if meta.docs.len() as u64 != doc_count || meta.chunks.len() as u64 != chunk_count {
            return Err(LoadError::Corrupt("metadata counts disagree with header".into()));
        }
        let rows_in_meta: u64 = meta
            .chunks
            .iter()
            .map(|c| 1 + c.question_ids.len() as u64)
            .sum();
        if rows_in_meta != row_count {
            return Err(LoadError::Corrupt("row count disagrees with metadata".into()));
        }

        let floats: Vec<f32> = body[meta_len..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let dim = dimension as usize;
        let split = doc_count as usize * dim;
        let summary = floats[..split].to_vec();
        let rows = floats[split..].to_vec();

        let mut snap = StoreSnapshot::empty(dim, meta.max_questions);
        for (i, d) in meta.docs.into_iter().enumerate() {
            if snap.doc_pos.insert(d.metadata.doc_id.clone(), i).is_some() {
                return Err(LoadError::Corrupt(format!("duplicate doc {}", d.metadata.doc_id)));
            }
            snap.docs.push(DocRecord {
                metadata: d.metadata,
                doc_type: d.doc_type,
            });
        }
        let mut doc_of: HashMap<&str, usize> = HashMap::new();
        for (id, &i) in &snap.doc_pos {
            doc_of.insert(id.as_str(), i);
        }
        let mut chunk_doc = Vec::with_capacity(meta.chunks.len());
        let mut row_owner = Vec::with_capacity(row_count as usize);
        for (ci, c) in meta.chunks.iter().enumerate() {
            let &d = doc_of
                .get(c.doc_id.as_str())
                .ok_or_else(|| LoadError::Corrupt(format!("chunk {} has unknown doc", c.chunk_id)))?;
            chunk_doc.push(d as u32);
            for slot in 0..=c.question_ids.len() {
                row_owner.push(RowOwner {
                    chunk: ci as u32,
                    slot: slot as u32,
                });
            }
        }
        drop(doc_of);
        for (ci, c) in meta.chunks.into_iter().enumerate() {
            if snap.chunk_pos.insert(c.chunk_id.clone(), ci).is_some() {
                return Err(LoadError::Corrupt(format!("duplicate chunk {}", c.chunk_id)));
            }
            snap.chunks.push(ChunkRecord {
                chunk_id: c.chunk_id,
                doc_id: c.doc_id,
                heading_path: c.heading_path,
                text: c.text,
                question_ids: c.question_ids,
            });
        }
        snap.chunk_doc = chunk_doc;
        snap.row_owner = row_owner;
        snap.summary = summary;
        snap.rows = rows;
        Ok(snap)
    }
}

impl VectorStore {
    /// Writes the current snapshot atomically (temp file + rename).
    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), LoadError> {
        let path = path.as_ref();
        let bytes = self.snapshot().to_bytes();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("store")
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LoadError> {
        let bytes = fs::read(path)?;
        Ok(Self::from_snapshot(StoreSnapshot::from_bytes(&bytes)?))
    }

    /// Loads and checks the dimension against configuration.
    pub fn load_with_dimension(path: impl AsRef<Path>, dimension: usize) -> Result<Self, LoadError> {
        let store = Self::load(path)?;
        let found = store.dimension();
        if found != dimension {
            return Err(LoadError::Dimension {
                expected: dimension,
                found,
            });
        }
        Ok(store)
    }
}
