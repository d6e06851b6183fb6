//! Exact cosine top-k search over dense rows.

use std::cmp::Ordering;

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt()
}

/// Cosine similarity given precomputed norms; 0 when either vector is zero.
/// Clamped to `[-1, 1]`.
pub fn cosine_with_norms(a: &[f32], a_norm: f64, b: &[f32], b_norm: f64) -> f64 {
    if a_norm == 0.0 || b_norm == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    (dot / (a_norm * b_norm)).clamp(-1.0, 1.0)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    cosine_with_norms(a, l2_norm(a), b, l2_norm(b))
}

/// A row matrix with cached norms.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    rows: Vec<Vec<f32>>,
    norms: Vec<f64>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: Vec<f32>) {
        self.norms.push(l2_norm(&row));
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// Indices and scores of the `k` best rows, sorted by score descending;
    /// equal scores are ordered by `tie_key` ascending.
    pub fn top_k<K: Ord>(&self, query: &[f32], k: usize, tie_key: impl Fn(usize) -> K) -> Vec<(usize, f64)> {
        let query_norm = l2_norm(query);
        let mut scored: Vec<(usize, f64)> = self
            .rows
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (row, norm))| (i, cosine_with_norms(query, query_norm, row, *norm)))
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1).then_with(|| tie_key(a.0).cmp(&tie_key(b.0)))
        };
        if k < scored.len() {
            if k == 0 {
                return Vec::new();
            }
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        scored
    }
}
