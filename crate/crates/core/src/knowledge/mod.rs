//! Retrieval-augmented knowledge: text normalization, chunking, per-expert
//! knowledge bases with exact cosine retrieval, and relevance filtering.

mod base;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::EmbeddingVector;
use crate::model::{ChunkId, DocId, DocumentRef};

pub use base::{Ingested, KnowledgeBase};

pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_CHUNK_OVERLAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }
}

impl ChunkParams {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self> {
        let params = Self { chunk_size, overlap };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size <= self.overlap {
            return Err(Error::invalid(
                "chunk_size",
                format!(
                    "chunk_size ({}) must exceed overlap ({})",
                    self.chunk_size, self.overlap
                ),
            ));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }
}

/// A piece of a normalized document; `start..end` are character offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextChunk {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: ChunkId,
    pub doc_id: DocId,
    pub ordinal: u32,
    pub text: String,
    pub char_span: (usize, usize),
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: ChunkRecord,
    pub score: f64,
}

/// A retrieved chunk together with the document it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Citation {
    pub scored: ScoredChunk,
    pub document: DocumentRef,
}

/// Collapses whitespace runs to one space, drops other control characters and
/// trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else if c.is_control() {
            continue;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    out
}

/// Splits `text` into windows of `chunk_size` characters starting at every
/// multiple of `chunk_size - overlap` below the text length.
pub fn chunk_text(text: &str, chunk_size: usize, overlap: usize) -> Result<Vec<TextChunk>> {
    let params = ChunkParams::new(chunk_size, overlap)?;
    if text.is_empty() {
        return Err(Error::invalid("text", "must not be empty"));
    }
    let offsets: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    let len = offsets.len();
    let byte_at = |char_pos: usize| offsets.get(char_pos).copied().unwrap_or(text.len());

    Ok((0..len)
        .step_by(params.stride())
        .map(|start| {
            let end = (start + chunk_size).min(len);
            TextChunk {
                start,
                end,
                text: text[byte_at(start)..byte_at(end)].to_owned(),
            }
        })
        .collect())
}

/// Rebuilds the source text by dropping each chunk's overlap with the text
/// already covered.
pub fn reassemble(chunks: &[TextChunk]) -> String {
    let mut out = String::new();
    let mut covered: usize = 0;
    for chunk in chunks {
        let skip = covered.saturating_sub(chunk.start);
        out.extend(chunk.text.chars().skip(skip));
        covered = covered.max(chunk.end);
    }
    out
}

/// Threshold policy applied to retrieval results before they reach a prompt.
pub trait RelevanceFilter: Send + Sync {
    fn filter(&self, results: Vec<ScoredChunk>) -> Vec<ScoredChunk>;
}

/// Keeps results scoring at least the mean of the batch, falling back to the
/// single best result when nothing qualifies.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanThreshold;

impl RelevanceFilter for MeanThreshold {
    fn filter(&self, results: Vec<ScoredChunk>) -> Vec<ScoredChunk> {
        filter_by_mean(results, |r| r.score)
    }
}

pub fn adaptive_filter(results: Vec<ScoredChunk>) -> Vec<ScoredChunk> {
    MeanThreshold.filter(results)
}

pub(crate) fn filter_by_mean<T>(items: Vec<T>, score: impl Fn(&T) -> f64) -> Vec<T> {
    if items.is_empty() {
        return items;
    }
    let scores: Vec<f64> = items.iter().map(&score).collect();
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(*s), hi.max(*s)));
    // The true mean lies in [lo, hi]; clamping absorbs rounding so that a
    // batch of equal scores keeps every item.
    let mut mean = scores.iter().sum::<f64>() / scores.len() as f64;
    if lo <= hi {
        mean = mean.clamp(lo, hi);
    }

    let mut kept = Vec::new();
    let mut first = None;
    for (item, s) in items.into_iter().zip(scores) {
        if s >= mean {
            kept.push(item);
        } else if first.is_none() && kept.is_empty() {
            first = Some(item);
        }
    }
    if kept.is_empty() {
        kept.extend(first);
    }
    kept
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn scored(score: f64) -> ScoredChunk {
        ScoredChunk {
            chunk: ChunkRecord {
                chunk_id: ChunkId::from(format!("c{score}")),
                doc_id: DocId::from("d"),
                ordinal: 0,
                text: "t".into(),
                char_span: (0, 1),
                embedding: EmbeddingVector::new(vec![1.0]).unwrap(),
            },
            score,
        }
    }

    fn scores(out: &[ScoredChunk]) -> Vec<f64> {
        out.iter().map(|s| s.score).collect()
    }

    #[test]
    fn stride_rule_for_2500_chars() {
        let text = "x".repeat(2500);
        let chunks = chunk_text(&text, 1000, 200).unwrap();
        let starts: Vec<_> = chunks.iter().map(|c| c.start).collect();
        assert_eq!(starts, [0, 800, 1600, 2400]);
        assert_eq!(chunks.last().unwrap().text.len(), 100);
        assert_eq!(chunks[0].end, 1000);
    }

    #[test]
    fn short_text_is_one_chunk() {
        let text = "y".repeat(500);
        let chunks = chunk_text(&text, 1000, 200).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
    }

    #[test]
    fn overlap_must_be_below_size() {
        assert!(matches!(chunk_text("abc", 200, 200), Err(Error::Validation(_))));
        assert!(matches!(chunk_text("", 10, 2), Err(Error::Validation(_))));
    }

    #[test]
    fn chunking_counts_characters_not_bytes() {
        let text = "é".repeat(5);
        let chunks = chunk_text(&text, 3, 1).unwrap();
        assert_eq!(chunks[0].text, "ééé");
        assert_eq!(chunks.iter().map(|c| c.start).collect::<Vec<_>>(), [0, 2, 4]);
        assert_eq!(reassemble(&chunks), text);
    }

    #[test]
    fn normalization_collapses_whitespace_and_strips_controls() {
        assert_eq!(normalize_whitespace("  a \t\n b\u{0}c\u{7f}  "), "a bc");
        assert_eq!(normalize_whitespace(" \n\t "), "");
        assert_eq!(normalize_whitespace("a \u{1} b"), "a b");
    }

    #[test]
    fn filter_keeps_above_mean() {
        let out = adaptive_filter(vec![scored(0.9), scored(0.8), scored(0.2), scored(0.1)]);
        assert_eq!(scores(&out), [0.9, 0.8]);
    }

    #[test]
    fn filter_keeps_all_equal_scores() {
        let out = adaptive_filter(vec![scored(0.1); 7]);
        assert_eq!(out.len(), 7);
    }

    #[test]
    fn filter_with_negative_tail() {
        // mean = (0.99 - 0.5 - 0.6) / 3 = -0.0366...
        let out = adaptive_filter(vec![scored(0.99), scored(-0.5), scored(-0.6)]);
        assert_eq!(scores(&out), [0.99]);
    }

    #[test]
    fn filter_of_nothing_is_nothing() {
        assert!(adaptive_filter(Vec::new()).is_empty());
    }

    #[test]
    fn filter_falls_back_to_top_one_when_nothing_qualifies() {
        // Finite scores always reach their own mean; only NaN can miss it.
        let out = filter_by_mean(vec![(0, f64::NAN), (1, f64::NAN)], |x| x.1);
        assert_eq!(out.iter().map(|x| x.0).collect::<Vec<_>>(), [0]);
    }

    proptest! {
        #[test]
        fn reassembly_is_exact(text in "[a-zé \n]{1,300}", size in 1usize..60, overlap_frac in 0.0f64..1.0) {
            let normalized = normalize_whitespace(&text);
            prop_assume!(!normalized.is_empty());
            let overlap = ((size as f64) * overlap_frac) as usize;
            prop_assume!(overlap < size);
            let chunks = chunk_text(&normalized, size, overlap).unwrap();
            prop_assert_eq!(reassemble(&chunks), normalized.clone());
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.start, i * (size - overlap));
                prop_assert!(c.end <= normalized.chars().count());
            }
        }
    }
}
