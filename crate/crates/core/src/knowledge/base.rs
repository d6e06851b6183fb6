//! A single knowledge base on disk.
//!
//! Layout under the knowledge-base directory:
//!
//! ```text
//! manifest.json          dim, chunk params, generation, counts, documents
//! chunks-<gen>.jsonl     one chunk row per line (ids, ordinal, span, text)
//! vectors-<gen>.f32      little-endian f32, row-major, one row per chunk
//! ```
//!
//! An ingest writes the next generation's chunk and vector files and then
//! replaces the manifest; the manifest rename is the commit point.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{chunk_text, normalize_whitespace, ChunkParams, ChunkRecord, Citation, ScoredChunk};
use crate::error::{Error, Result};
use crate::ids::IdGenerator;
use crate::llm::{EmbeddingVector, LlmGateway};
use crate::model::{ChunkId, DocId, DocumentRef, KnowledgeBaseId, Media, ProjectId};
use crate::persistence::fsutil::{decode_vectors, encode_vectors, read_json, write_atomic, write_json_atomic};
use crate::persistence::FORMAT_VERSION;
use crate::vector::VectorIndex;

const MANIFEST: &str = "manifest.json";
const EMBED_BATCH: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    id: KnowledgeBaseId,
    project_id: ProjectId,
    params: ChunkParams,
    dim: Option<usize>,
    generation: u64,
    chunk_count: usize,
    documents: Vec<DocumentRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChunkRow {
    chunk_id: ChunkId,
    doc_id: DocId,
    ordinal: u32,
    start: usize,
    end: usize,
    text: String,
}

#[derive(Debug)]
struct Snapshot {
    manifest: Manifest,
    chunks: Vec<ChunkRecord>,
    index: VectorIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub document: DocumentRef,
    pub chunk_count: usize,
}

/// Many concurrent readers, one writer. Readers work on an immutable
/// snapshot; the writer swaps in a new one after the commit.
#[derive(Debug)]
pub struct KnowledgeBase {
    dir: PathBuf,
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
}

impl KnowledgeBase {
    pub fn create(dir: &Path, id: KnowledgeBaseId, project_id: ProjectId, params: ChunkParams) -> Result<Self> {
        params.validate()?;
        if dir.join(MANIFEST).exists() {
            return Err(Error::Conflict(format!("knowledge base {id} already exists")));
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            id,
            project_id,
            params,
            dim: None,
            generation: 0,
            chunk_count: 0,
            documents: Vec::new(),
        };
        let snapshot = Snapshot {
            manifest,
            chunks: Vec::new(),
            index: VectorIndex::new(),
        };
        write_generation(dir, &snapshot)?;
        write_json_atomic(&dir.join(MANIFEST), &snapshot.manifest)?;
        Ok(Self {
            dir: dir.to_owned(),
            current: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
        })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let manifest: Manifest = read_json(&manifest_path)?
            .ok_or_else(|| Error::not_found("knowledge base", dir.display().to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                path: manifest_path,
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let snapshot = load_generation(dir, manifest)?;
        remove_stale_generations(dir, snapshot.manifest.generation);
        Ok(Self {
            dir: dir.to_owned(),
            current: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
        })
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("knowledge base lock poisoned").clone()
    }

    pub fn id(&self) -> KnowledgeBaseId {
        self.snapshot().manifest.id.clone()
    }

    pub fn params(&self) -> ChunkParams {
        self.snapshot().manifest.params
    }

    pub fn dim(&self) -> Option<usize> {
        self.snapshot().manifest.dim
    }

    pub fn chunk_count(&self) -> usize {
        self.snapshot().chunks.len()
    }

    pub fn documents(&self) -> Vec<DocumentRef> {
        self.snapshot().manifest.documents.clone()
    }

    pub fn document(&self, doc_id: &DocId) -> Option<DocumentRef> {
        self.snapshot()
            .manifest
            .documents
            .iter()
            .find(|d| &d.doc_id == doc_id)
            .cloned()
    }

    /// All chunks in ingestion order (document, then ordinal).
    pub fn chunks(&self) -> Vec<ChunkRecord> {
        self.snapshot().chunks.clone()
    }

    /// Normalizes, chunks, embeds and indexes a document. Either the whole
    /// document becomes visible or nothing changes.
    pub fn ingest_document(
        &self,
        gateway: &dyn LlmGateway,
        ids: &IdGenerator,
        source_name: &str,
        raw_text: &str,
        media: Media,
    ) -> Result<Ingested> {
        let text = normalize_whitespace(raw_text);
        if text.is_empty() {
            return Err(Error::invalid("content", "document is empty after whitespace normalization"));
        }
        if source_name.trim().is_empty() {
            return Err(Error::invalid("source_name", "must not be empty"));
        }

        let _writer = self.writer.lock().expect("knowledge base writer poisoned");
        let base = self.snapshot();
        let params = base.manifest.params;
        let pieces = chunk_text(&text, params.chunk_size, params.overlap)?;

        let texts: Vec<String> = pieces.iter().map(|p| p.text.clone()).collect();
        let mut embeddings = Vec::with_capacity(texts.len());
        for batch in texts.chunks(EMBED_BATCH) {
            let vectors = gateway.embed(batch)?;
            if vectors.len() != batch.len() {
                return Err(Error::Configuration(format!(
                    "backend returned {} embeddings for {} texts",
                    vectors.len(),
                    batch.len()
                )));
            }
            embeddings.extend(vectors);
        }
        let dim = check_dims(base.manifest.dim, &embeddings)?;

        let doc_id = DocId(ids.next("doc"));
        let document = DocumentRef {
            doc_id: doc_id.clone(),
            knowledge_base_id: base.manifest.id.clone(),
            source_name: source_name.trim().to_owned(),
            media,
            char_count: text.chars().count(),
            ingested_at: ids.now(),
        };

        let mut chunks = base.chunks.clone();
        let mut index = base.index.clone();
        for (ordinal, (piece, embedding)) in pieces.into_iter().zip(embeddings).enumerate() {
            index.push(embedding.values().to_vec());
            chunks.push(ChunkRecord {
                chunk_id: ChunkId(ids.next("chk")),
                doc_id: doc_id.clone(),
                ordinal: ordinal as u32,
                text: piece.text,
                char_span: (piece.start, piece.end),
                embedding,
            });
        }
        let mut manifest = base.manifest.clone();
        manifest.dim = Some(dim);
        manifest.generation += 1;
        manifest.chunk_count = chunks.len();
        manifest.documents.push(document.clone());
        let chunk_count = chunks.len() - base.chunks.len();
        let next = Snapshot {
            manifest,
            chunks,
            index,
        };

        write_generation(&self.dir, &next)?;
        write_json_atomic(&self.dir.join(MANIFEST), &next.manifest)?;
        let previous = next.manifest.generation - 1;
        *self.current.write().expect("knowledge base lock poisoned") = Arc::new(next);
        remove_generation(&self.dir, previous);
        debug!(doc = %document.doc_id, chunk_count, "document ingested");

        Ok(Ingested { document, chunk_count })
    }

    /// Exact top-`k` chunks by cosine similarity to `query`.
    pub fn retrieve(&self, gateway: &dyn LlmGateway, query: &str, k: usize) -> Result<Vec<ScoredChunk>> {
        if query.trim().is_empty() {
            return Err(Error::invalid("query", "must not be empty"));
        }
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if self.snapshot().chunks.is_empty() {
            return Ok(Vec::new());
        }
        let vector = gateway
            .embed(&[query.to_owned()])?
            .pop()
            .ok_or_else(|| Error::Configuration("backend returned no query embedding".into()))?;
        self.retrieve_by_vector(vector.values(), k)
    }

    pub fn retrieve_by_vector(&self, query: &[f32], k: usize) -> Result<Vec<ScoredChunk>> {
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        let snap = self.snapshot();
        if let Some(dim) = snap.manifest.dim {
            if query.len() != dim {
                return Err(Error::Configuration(format!(
                    "query embedding has dimension {}, knowledge base uses {dim}",
                    query.len()
                )));
            }
        }
        let top = snap.index.top_k(query, k, |i| {
            let c = &snap.chunks[i];
            (c.doc_id.clone(), c.ordinal)
        });
        Ok(top
            .into_iter()
            .map(|(i, score)| ScoredChunk {
                chunk: snap.chunks[i].clone(),
                score,
            })
            .collect())
    }

    /// Attaches document metadata to retrieval results.
    pub fn cite(&self, results: Vec<ScoredChunk>) -> Vec<Citation> {
        let snap = self.snapshot();
        results
            .into_iter()
            .filter_map(|scored| {
                let document = snap
                    .manifest
                    .documents
                    .iter()
                    .find(|d| d.doc_id == scored.chunk.doc_id)?
                    .clone();
                Some(Citation { scored, document })
            })
            .collect()
    }
}

fn check_dims(existing: Option<usize>, embeddings: &[EmbeddingVector]) -> Result<usize> {
    let dim = existing.or_else(|| embeddings.first().map(EmbeddingVector::dim));
    let dim = dim.ok_or_else(|| Error::Configuration("no embeddings produced".into()))?;
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(Error::Configuration(format!(
            "embedding dimension {} does not match knowledge base dimension {dim}",
            bad.dim()
        )));
    }
    Ok(dim)
}

fn chunks_path(dir: &Path, generation: u64) -> PathBuf {
    dir.join(format!("chunks-{generation}.jsonl"))
}

fn vectors_path(dir: &Path, generation: u64) -> PathBuf {
    dir.join(format!("vectors-{generation}.f32"))
}

fn write_generation(dir: &Path, snapshot: &Snapshot) -> Result<()> {
    let generation = snapshot.manifest.generation;
    let mut table = Vec::new();
    for c in &snapshot.chunks {
        let row = ChunkRow {
            chunk_id: c.chunk_id.clone(),
            doc_id: c.doc_id.clone(),
            ordinal: c.ordinal,
            start: c.char_span.0,
            end: c.char_span.1,
            text: c.text.clone(),
        };
        serde_json::to_writer(&mut table, &row).expect("chunk rows always serialize");
        table.push(b'\n');
    }
    write_atomic(&chunks_path(dir, generation), &table)?;
    write_atomic(&vectors_path(dir, generation), &encode_vectors(snapshot.index.rows()))
}

fn load_generation(dir: &Path, manifest: Manifest) -> Result<Snapshot> {
    let generation = manifest.generation;
    let table_path = chunks_path(dir, generation);
    let table = fs::read_to_string(&table_path).map_err(|e| Error::io(&table_path, e))?;
    let rows: Vec<ChunkRow> = table
        .lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::integrity(&table_path, format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<_>>()?;
    if rows.len() != manifest.chunk_count {
        return Err(Error::integrity(
            &table_path,
            format!("{} chunk rows, manifest says {}", rows.len(), manifest.chunk_count),
        ));
    }

    let vectors_file = vectors_path(dir, generation);
    let bytes = fs::read(&vectors_file).map_err(|e| Error::io(&vectors_file, e))?;
    let dim = manifest.dim.unwrap_or(0);
    if bytes.len() != rows.len() * dim * 4 {
        return Err(Error::integrity(
            &vectors_file,
            format!("{} bytes for {} rows of dimension {dim}", bytes.len(), rows.len()),
        ));
    }
    let vectors = decode_vectors(&vectors_file, &bytes, dim, rows.len())?;

    let mut index = VectorIndex::new();
    let mut chunks = Vec::with_capacity(rows.len());
    for (row, values) in rows.into_iter().zip(vectors) {
        index.push(values.clone());
        let embedding = EmbeddingVector::new(values)
            .map_err(|e| Error::integrity(&vectors_file, format!("chunk {}: {e}", row.chunk_id)))?;
        chunks.push(ChunkRecord {
            chunk_id: row.chunk_id,
            doc_id: row.doc_id,
            ordinal: row.ordinal,
            text: row.text,
            char_span: (row.start, row.end),
            embedding,
        });
    }
    Ok(Snapshot {
        manifest,
        chunks,
        index,
    })
}

fn remove_generation(dir: &Path, generation: u64) {
    for path in [chunks_path(dir, generation), vectors_path(dir, generation)] {
        if let Err(e) = fs::remove_file(&path) {
            if e.kind() != std::io::ErrorKind::NotFound {
                warn!(path = %path.display(), %e, "could not remove old generation");
            }
        }
    }
}

/// Removes generation files left behind by an interrupted ingest.
fn remove_stale_generations(dir: &Path, live: u64) {
    let Ok(entries) = fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let generation = name
            .strip_prefix("chunks-")
            .and_then(|r| r.strip_suffix(".jsonl"))
            .or_else(|| name.strip_prefix("vectors-").and_then(|r| r.strip_suffix(".f32")))
            .and_then(|g| g.parse::<u64>().ok());
        if generation.is_some_and(|g| g != live) {
            let _ = fs::remove_file(entry.path());
        }
    }
}
