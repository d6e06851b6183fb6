//! Agent memory: the short-term transcript of the running meeting and
//! long-term notes that persist across meetings of a project.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::IdGenerator;
use crate::llm::{EmbeddingVector, LlmGateway};
use crate::model::{MeetingId, NoteId, Phase, ProjectId, ProjectRecord, COORDINATOR_NAME, CRITIC_NAME};
use crate::persistence::fsutil::{append_bytes, decode_vectors, encode_vectors, read_optional};
use crate::vector::VectorIndex;

pub const TRUNCATION_MARKER: &str = "[…] ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub speaker: String,
    pub phase: Phase,
    pub content: String,
}

impl SessionTurn {
    pub fn render(&self) -> String {
        format!("[{}/{}] {}\n", self.speaker, self.phase, self.content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMemory {
    pub meeting_id: MeetingId,
    pub turns: Vec<SessionTurn>,
}

impl SessionMemory {
    pub fn new(meeting_id: MeetingId) -> Self {
        Self {
            meeting_id,
            turns: Vec::new(),
        }
    }

    pub fn append_turn(&mut self, speaker: &str, phase: Phase, content: &str) -> Result<()> {
        if content.is_empty() {
            return Err(Error::invalid("content", "must not be empty"));
        }
        self.turns.push(SessionTurn {
            speaker: speaker.to_owned(),
            phase,
            content: content.to_owned(),
        });
        Ok(())
    }

    /// Renders the longest suffix of turns that fits in `budget` characters.
    /// If even the latest turn does not fit, its tail is kept behind a
    /// truncation marker.
    pub fn context(&self, budget: usize) -> String {
        render_recent(self.turns.iter().map(SessionTurn::render), budget)
    }
}

/// Keeps the most recent rendered items whose total length fits `budget`
/// characters; an oversized latest item is cut from the front.
pub fn render_recent<I>(rendered: I, budget: usize) -> String
where
    I: DoubleEndedIterator<Item = String>,
{
    let mut kept: Vec<String> = Vec::new();
    let mut used = 0;
    for item in rendered.rev() {
        let len = item.chars().count();
        if used + len <= budget {
            used += len;
            kept.push(item);
        } else {
            if kept.is_empty() {
                kept.push(truncate_front(&item, budget));
            }
            break;
        }
    }
    kept.reverse();
    kept.concat()
}

/// Keeps the last characters of `text` so that the result, marker included,
/// is at most `budget` characters.
pub fn truncate_front(text: &str, budget: usize) -> String {
    let len = text.chars().count();
    if len <= budget {
        return text.to_owned();
    }
    let marker_len = TRUNCATION_MARKER.chars().count();
    if budget <= marker_len {
        return text.chars().skip(len - budget).collect();
    }
    let keep = budget - marker_len;
    let mut out = String::from(TRUNCATION_MARKER);
    out.extend(text.chars().skip(len - keep));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteOrigin {
    Warmup,
    RoundSynthesis,
    Manual,
}

impl NoteOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            NoteOrigin::Warmup => "warmup",
            NoteOrigin::RoundSynthesis => "round_synthesis",
            NoteOrigin::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermNote {
    pub note_id: NoteId,
    pub agent_name: String,
    pub project_id: ProjectId,
    pub text: String,
    pub origin: NoteOrigin,
    pub embedding: EmbeddingVector,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredNote {
    pub note: LongTermNote,
    pub score: f64,
}

/// On-disk line for one note; the vector lives in the packed file at `row`.
#[derive(Debug, Serialize, Deserialize)]
struct NoteLine {
    note_id: NoteId,
    agent_name: String,
    project_id: ProjectId,
    text: String,
    origin: NoteOrigin,
    row: usize,
    dim: usize,
    created_at: DateTime<Utc>,
}

#[derive(Debug, Default)]
struct NoteTable {
    notes: Vec<LongTermNote>,
    index: VectorIndex,
}

/// Append-only long-term notes of one project.
///
/// `notes.jsonl` holds one record per line and `notes.f32` the packed
/// vectors. The vector row is written before its line, so a complete line
/// always has its vector; a torn trailing line is discarded on open.
#[derive(Debug)]
pub struct NoteStore {
    project_id: ProjectId,
    lines_path: PathBuf,
    vectors_path: PathBuf,
    table: RwLock<NoteTable>,
    writer: Mutex<()>,
}

impl NoteStore {
    pub fn open(dir: &Path, project_id: ProjectId) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lines_path = dir.join("notes.jsonl");
        let vectors_path = dir.join("notes.f32");
        let table = load_notes(&lines_path, &vectors_path)?;
        Ok(Self {
            project_id,
            lines_path,
            vectors_path,
            table: RwLock::new(table),
            writer: Mutex::new(()),
        })
    }

    pub fn len(&self) -> usize {
        self.table.read().expect("note table poisoned").notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn notes_for(&self, agent: &str) -> Vec<LongTermNote> {
        self.table
            .read()
            .expect("note table poisoned")
            .notes
            .iter()
            .filter(|n| n.agent_name == agent)
            .cloned()
            .collect()
    }

    fn check_owner(&self, project: &ProjectRecord, agent: &str) -> Result<()> {
        if project.id != self.project_id {
            return Err(Error::not_found("project", project.id.to_string()));
        }
        let known = project.expert(agent).is_some() || agent == COORDINATOR_NAME || agent == CRITIC_NAME;
        if !known {
            return Err(Error::not_found("agent", agent));
        }
        Ok(())
    }

    pub fn store_note(
        &self,
        gateway: &dyn LlmGateway,
        ids: &IdGenerator,
        project: &ProjectRecord,
        agent: &str,
        text: &str,
        origin: NoteOrigin,
    ) -> Result<LongTermNote> {
        if text.trim().is_empty() {
            return Err(Error::invalid("text", "must not be empty"));
        }
        self.check_owner(project, agent)?;
        let embedding = gateway
            .embed(&[text.to_owned()])?
            .pop()
            .ok_or_else(|| Error::Configuration("backend returned no embedding".into()))?;

        let _writer = self.writer.lock().expect("note writer poisoned");
        let row = {
            let table = self.table.read().expect("note table poisoned");
            if let Some(first) = table.notes.first() {
                if first.embedding.dim() != embedding.dim() {
                    return Err(Error::Configuration(format!(
                        "note embedding dimension {} does not match project dimension {}",
                        embedding.dim(),
                        first.embedding.dim()
                    )));
                }
            }
            table.notes.len()
        };
        let note = LongTermNote {
            note_id: NoteId(ids.next("note")),
            agent_name: agent.to_owned(),
            project_id: self.project_id.clone(),
            text: text.to_owned(),
            origin,
            embedding,
            created_at: ids.now(),
        };
        let line = NoteLine {
            note_id: note.note_id.clone(),
            agent_name: note.agent_name.clone(),
            project_id: note.project_id.clone(),
            text: note.text.clone(),
            origin,
            row,
            dim: note.embedding.dim(),
            created_at: note.created_at,
        };
        let mut line_bytes = serde_json::to_vec(&line).expect("note lines always serialize");
        line_bytes.push(b'\n');

        append_bytes(&self.vectors_path, &encode_vectors([note.embedding.values()]))?;
        append_bytes(&self.lines_path, &line_bytes)?;

        let mut table = self.table.write().expect("note table poisoned");
        table.index.push(note.embedding.values().to_vec());
        table.notes.push(note.clone());
        Ok(note)
    }

    /// Top-`k` notes of `agent` by cosine similarity to `query`; ties keep
    /// storage order.
    pub fn recall_notes(
        &self,
        gateway: &dyn LlmGateway,
        project: &ProjectRecord,
        agent: &str,
        query: &str,
        k: usize,
    ) -> Result<Vec<ScoredNote>> {
        if query.trim().is_empty() {
            return Err(Error::invalid("query", "must not be empty"));
        }
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        self.check_owner(project, agent)?;
        if !self.table.read().expect("note table poisoned").notes.iter().any(|n| n.agent_name == agent) {
            return Ok(Vec::new());
        }
        let query_vec = gateway
            .embed(&[query.to_owned()])?
            .pop()
            .ok_or_else(|| Error::Configuration("backend returned no embedding".into()))?;

        let table = self.table.read().expect("note table poisoned");
        let mut own = VectorIndex::new();
        let rows: Vec<usize> = table
            .notes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.agent_name == agent)
            .map(|(i, _)| i)
            .collect();
        for &i in &rows {
            own.push(table.index.row(i).to_vec());
        }
        if let Some(first) = rows.first() {
            let dim = table.notes[*first].embedding.dim();
            if query_vec.dim() != dim {
                return Err(Error::Configuration(format!(
                    "query embedding has dimension {}, notes use {dim}",
                    query_vec.dim()
                )));
            }
        }
        Ok(own
            .top_k(query_vec.values(), k, |i| rows[i])
            .into_iter()
            .map(|(i, score)| ScoredNote {
                note: table.notes[rows[i]].clone(),
                score,
            })
            .collect())
    }
}

fn load_notes(lines_path: &Path, vectors_path: &Path) -> Result<NoteTable> {
    let Some(mut bytes) = read_optional(lines_path)? else {
        return Ok(NoteTable::default());
    };
    let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
    if complete < bytes.len() {
        // Torn trailing record from an interrupted append.
        bytes.truncate(complete);
        truncate_file(lines_path, complete as u64)?;
    }

    let text = std::str::from_utf8(&bytes).map_err(|e| Error::integrity(lines_path, e.to_string()))?;
    let lines: Vec<NoteLine> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::integrity(lines_path, format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<_>>()?;
    let Some(dim) = lines.first().map(|l| l.dim) else {
        return Ok(NoteTable::default());
    };
    for (i, line) in lines.iter().enumerate() {
        if line.row != i || line.dim != dim {
            return Err(Error::integrity(
                lines_path,
                format!("line {} has row {} and dim {}", i + 1, line.row, line.dim),
            ));
        }
    }

    let vector_bytes = read_optional(vectors_path)?.unwrap_or_default();
    let needed = lines.len() * dim * 4;
    let vectors = decode_vectors(vectors_path, &vector_bytes, dim, lines.len())?;
    if vector_bytes.len() > needed {
        // Vector row of a note whose line never landed.
        truncate_file(vectors_path, needed as u64)?;
    }

    let mut table = NoteTable::default();
    for (line, values) in lines.into_iter().zip(vectors) {
        let embedding =
            EmbeddingVector::new(values.clone()).map_err(|e| Error::integrity(vectors_path, e.to_string()))?;
        table.index.push(values);
        table.notes.push(LongTermNote {
            note_id: line.note_id,
            agent_name: line.agent_name,
            project_id: line.project_id,
            text: line.text,
            origin: line.origin,
            embedding,
            created_at: line.created_at,
        });
    }
    Ok(table)
}

fn truncate_file(path: &Path, len: u64) -> Result<()> {
    let file = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
    file.set_len(len).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}
