//! Query-time inner product estimation over compositional codes.
//!
//! A query first builds a [`SimilarityTable`] holding `⟨q, c[m][k]⟩` for
//! every dictionary element (`O(MKd)`). The estimate for a coded vector is
//! then the sum of `M` table entries, since
//! `⟨q, Σ_m c[m][y_m]⟩ = Σ_m ⟨q, c[m][y_m]⟩`, and a top-k scan over `N`
//! codes costs `O(NM)`.
//!
//! Rankings use one order everywhere: descending score, ties by ascending
//! database index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::codebook::{CodeMatrix, SourceDictionaries};
use crate::dataio::DenseMatrix;
use crate::error::{Error, Result};

/// Codes scanned per parallel shard.
const SHARD: usize = 1 << 14;

/// Inner products between one query and every dictionary element.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    m: usize,
    k: usize,
    entries: Vec<f32>,
}

impl SimilarityTable {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn entry(&self, m: usize, k: usize) -> f32 {
        self.entries[m * self.k + k]
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    /// Sum of the selected entries in ascending `m`. Indices are not checked.
    #[inline]
    pub fn estimate_unchecked(&self, row: &[u16]) -> f32 {
        let mut acc = 0.0f32;
        for (m, &y) in row.iter().enumerate() {
            acc += self.entries[m * self.k + usize::from(y)];
        }
        acc
    }
}

/// Builds the similarity table of `q`. Each entry is accumulated in `f64`
/// over ascending dimensions and stored as `f32`.
pub fn build_table(q: &[f32], dicts: &SourceDictionaries) -> Result<SimilarityTable> {
    if q.len() != dicts.dim() {
        return Err(Error::invalid(format!(
            "query has dimension {}, dictionaries {}",
            q.len(),
            dicts.dim()
        )));
    }
    let (m_total, k_total) = (dicts.m(), dicts.k());
    let mut entries = Vec::with_capacity(m_total * k_total);
    for p in 0..dicts.n_physical() {
        let sub = dicts.subspace(p);
        for k in 0..k_total {
            let e = dicts.element(p, k);
            let dot: f64 = sub
                .clone()
                .map(|j| f64::from(q[j]) * f64::from(e[j]))
                .sum();
            entries.push(dot as f32);
        }
    }
    if dicts.scheme().is_shared() {
        // one physical dictionary presented as M replicas
        let first = entries.clone();
        for _ in 1..m_total {
            entries.extend_from_slice(&first);
        }
    }
    Ok(SimilarityTable {
        m: m_total,
        k: k_total,
        entries,
    })
}

/// Estimated `⟨q, decode(row)⟩` from a similarity table.
pub fn estimate_ip(table: &SimilarityTable, row: &[u16]) -> Result<f32> {
    if row.len() != table.m {
        return Err(Error::invalid(format!(
            "code row has {} entries, table has M = {}",
            row.len(),
            table.m
        )));
    }
    if let Some(&bad) = row.iter().find(|&&y| usize::from(y) >= table.k) {
        return Err(Error::invalid(format!("index {bad} out of range for K = {}", table.k)));
    }
    Ok(table.estimate_unchecked(row))
}

/// `r · ‖q‖₂`, the largest possible `|⟨q, p⟩ − ⟨q, p̄⟩|` when `‖p − p̄‖₂ ≤ r`.
pub fn ip_error_bound(q: &[f32], r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("error radius must be non-negative, got {r}")));
    }
    let norm = q.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
    Ok(r * norm)
}

/// A scored candidate ordered so that the better candidate compares `Less`.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    index: usize,
    score: f64,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// Bounded selection of the `k` best candidates. The heap top is the worst
/// kept candidate, so equal scores are resolved by index and never by
/// insertion order.
#[derive(Debug)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.saturating_add(1).min(1 << 20)),
        }
    }

    #[inline]
    pub fn push(&mut self, index: usize, score: f64) {
        let c = Candidate { index, score };
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if c < *worst {
                *worst = c;
            }
        }
    }

    pub fn merge(mut self, other: TopK) -> TopK {
        for c in other.heap {
            self.push(c.index, c.score);
        }
        self
    }

    pub fn into_ranked(self) -> RankedList {
        RankedList {
            items: self
                .heap
                .into_sorted_vec()
                .into_iter()
                .map(|c| (c.index, c.score))
                .collect(),
        }
    }
}

/// Top-k `(database index, score)` pairs, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    items: Vec<(usize, f64)>,
}

impl RankedList {
    /// Ranks arbitrary scores by full sort; `scores[i]` belongs to index `i`.
    pub fn from_scores(scores: &[f64], k: usize) -> Self {
        let mut items: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        items.truncate(k);
        Self { items }
    }

    pub fn items(&self) -> &[(usize, f64)] {
        &self.items
    }

    pub fn indices(&self) -> Vec<usize> {
        self.items.iter().map(|&(i, _)| i).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.items.iter().map(|&(_, s)| s).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Top-k scan of `codes` against a prepared table. Shards are scanned in
/// parallel and merged; the result equals a sequential scan.
pub fn search_with_table(table: &SimilarityTable, codes: &CodeMatrix, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if codes.n_vectors() == 0 {
        return Err(Error::invalid("cannot search an empty database"));
    }
    if codes.m() != table.m || codes.k() != table.k {
        return Err(Error::invalid("codes do not match the similarity table"));
    }
    let m = codes.m();
    let top = codes
        .indices()
        .par_chunks(SHARD * m)
        .enumerate()
        .map(|(s, shard)| {
            let mut top = TopK::new(k);
            for (i, row) in shard.chunks_exact(m).enumerate() {
                top.push(s * SHARD + i, f64::from(table.estimate_unchecked(row)));
            }
            top
        })
        .reduce(|| TopK::new(k), TopK::merge);
    Ok(top.into_ranked())
}

/// Single-threaded scan, for timing the `O(NM)` part in isolation.
pub fn scan_sequential(table: &SimilarityTable, codes: &CodeMatrix, k: usize) -> Result<RankedList> {
    if k == 0 || codes.n_vectors() == 0 {
        return Err(Error::invalid("need k >= 1 and a non-empty database"));
    }
    let mut top = TopK::new(k);
    for (n, row) in codes.rows().enumerate() {
        top.push(n, f64::from(table.estimate_unchecked(row)));
    }
    Ok(top.into_ranked())
}

/// Approximate top-k by estimated inner product. Returns all `N` codes when
/// `k > N`.
pub fn search(q: &[f32], dicts: &SourceDictionaries, codes: &CodeMatrix, k: usize) -> Result<RankedList> {
    dicts.check_codes(codes)?;
    let table = build_table(q, dicts)?;
    search_with_table(&table, codes, k)
}

/// `⟨q, x⟩` accumulated in `f64` over ascending dimensions.
#[inline]
pub fn inner_product(q: &[f32], x: &[f32]) -> f64 {
    q.iter().zip(x).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

/// Exact top-k by inner product against the raw vectors.
pub fn exact_search(q: &[f32], x: &DenseMatrix, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if x.is_empty() {
        return Err(Error::invalid("cannot search an empty database"));
    }
    if q.len() != x.dim() {
        return Err(Error::invalid(format!(
            "query has dimension {}, database {}",
            q.len(),
            x.dim()
        )));
    }
    let n = x.n_vectors();
    let top = (0..n)
        .into_par_iter()
        .step_by(SHARD)
        .map(|start| {
            let mut top = TopK::new(k);
            for i in start..(start + SHARD).min(n) {
                top.push(i, inner_product(q, x.row(i)));
            }
            top
        })
        .reduce(|| TopK::new(k), TopK::merge);
    Ok(top.into_ranked())
}
