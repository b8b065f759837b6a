//! Ground truth and accuracy metrics.
//!
//! - recall@P for R nearest neighbors: the fraction of the `R` exact
//!   inner-product neighbors found among the first `P` retrieved items.
//! - VAE: mean squared vector approximation error `E[‖x − x̄‖²]`.
//! - IPAE: mean squared inner product error, either asymmetric (raw query
//!   against coded neighbors) or symmetric (both sides decoded, sampled
//!   pairs).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codebook::{self, check_shapes, decode_into, CodeMatrix, SourceDictionaries};
use crate::dataio::DenseMatrix;
use crate::error::{Error, Result};
use crate::searcher::{build_table, exact_search, inner_product};

/// Default number of sampled pairs for symmetric IPAE.
pub const DEFAULT_IPAE_PAIRS: usize = 1_000_000;

/// Exact `R` nearest neighbors of every query, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    r: usize,
    rows: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn new(r: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != r {
                return Err(Error::invalid(format!(
                    "ground truth row {i} has {} entries, expected {r}",
                    row.len()
                )));
            }
            let mut seen = row.clone();
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("ground truth row {i} repeats an index")));
            }
        }
        Ok(Self { r, rows })
    }

    /// Reads ivecs rows; negative entries are rejected.
    pub fn from_ivecs(rows: Vec<Vec<i32>>) -> Result<Self> {
        let r = rows.first().map_or(0, Vec::len);
        let rows = rows
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| usize::try_from(v).map_err(|_| Error::format(format!("negative index {v}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(r, rows).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Format(m),
            other => other,
        })
    }

    pub fn to_ivecs(&self) -> Result<Vec<Vec<i32>>> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| i32::try_from(v).map_err(|_| Error::invalid("index exceeds i32")))
                    .collect()
            })
            .collect()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n_queries(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.rows[q]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// The first `r` neighbors of every query.
    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r > self.r {
            return Err(Error::invalid(format!("R = {r} exceeds stored R = {}", self.r)));
        }
        Ok(Self {
            r,
            rows: self.rows.iter().map(|row| row[..r].to_vec()).collect(),
        })
    }
}

/// Exact top-`R` neighbors for each query, computed in parallel over queries.
pub fn compute_groundtruth(x: &DenseMatrix, queries: &DenseMatrix, r: usize) -> Result<GroundTruth> {
    if r == 0 || r > x.n_vectors() {
        return Err(Error::invalid(format!(
            "R must be in 1..={} (got {r})",
            x.n_vectors()
        )));
    }
    let rows = (0..queries.n_vectors())
        .into_par_iter()
        .map(|q| exact_search(queries.row(q), x, r).map(|list| list.indices()))
        .collect::<Result<Vec<_>>>()?;
    GroundTruth::new(r, rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recall {
    pub value: f64,
    /// `P` exceeded the retrieved list, so only the available prefix counted.
    pub truncated: bool,
}

/// `|first P retrieved ∩ truth| / R`.
pub fn recall_at(retrieved: &[usize], truth: &[usize], p: usize) -> Result<Recall> {
    if truth.is_empty() {
        return Err(Error::invalid("recall needs R >= 1"));
    }
    let truncated = p > retrieved.len();
    let prefix = &retrieved[..p.min(retrieved.len())];
    let hits = truth.iter().filter(|t| prefix.contains(t)).count();
    Ok(Recall {
        value: hits as f64 / truth.len() as f64,
        truncated,
    })
}

/// Mean recall@P over queries, using the first `r` neighbors of the truth.
pub fn mean_recall(results: &[Vec<usize>], truth: &GroundTruth, r: usize, p: usize) -> Result<Recall> {
    if results.len() != truth.n_queries() {
        return Err(Error::invalid(format!(
            "{} result rows for {} queries",
            results.len(),
            truth.n_queries()
        )));
    }
    if results.is_empty() {
        return Err(Error::invalid("no queries to evaluate"));
    }
    if r == 0 || r > truth.r() {
        return Err(Error::invalid(format!("R = {r} not available (stored R = {})", truth.r())));
    }
    let mut sum = 0.0;
    let mut truncated = false;
    for (res, gt) in results.iter().zip(truth.rows()) {
        let rec = recall_at(res, &gt[..r], p)?;
        sum += rec.value;
        truncated |= rec.truncated;
    }
    Ok(Recall {
        value: sum / results.len() as f64,
        truncated,
    })
}

/// Mean squared approximation error, `objective / N`.
pub fn vae(x: &DenseMatrix, dicts: &SourceDictionaries, codes: &CodeMatrix) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::invalid("VAE of an empty dataset"));
    }
    Ok(codebook::objective(x, dicts, codes)? / x.n_vectors() as f64)
}

/// `count` uniform index pairs from ChaCha8 seeded with `seed`.
pub fn sample_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
        .collect()
}

/// Symmetric IPAE, `mean (⟨x_i, x_j⟩ − ⟨x̄_i, x̄_j⟩)²` over the given pairs.
pub fn ipae_sym(
    pairs: &[(usize, usize)],
    x: &DenseMatrix,
    dicts: &SourceDictionaries,
    codes: &CodeMatrix,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("symmetric IPAE needs at least one pair"));
    }
    check_shapes(x, dicts, codes)?;
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i.max(j) >= x.n_vectors()) {
        return Err(Error::invalid(format!("pair ({i}, {j}) out of range")));
    }
    let dim = dicts.dim();
    let terms: Vec<f64> = pairs
        .par_iter()
        .map_init(
            || (vec![0.0; dim], vec![0.0; dim]),
            |(a, b), &(i, j)| {
                decode_into(codes.row(i), dicts, a);
                decode_into(codes.row(j), dicts, b);
                let approx: f64 = a.iter().zip(b.iter()).map(|(u, v)| u * v).sum();
                let exact = inner_product(x.row(i), x.row(j));
                (exact - approx).powi(2)
            },
        )
        .collect();
    Ok(terms.iter().sum::<f64>() / pairs.len() as f64)
}

/// Asymmetric IPAE, `mean (⟨q, x⟩ − estimate(q, code(x)))²` over every
/// query and each of its ground-truth neighbors.
pub fn ipae_asym(
    queries: &DenseMatrix,
    truth: &GroundTruth,
    x: &DenseMatrix,
    dicts: &SourceDictionaries,
    codes: &CodeMatrix,
) -> Result<f64> {
    check_shapes(x, dicts, codes)?;
    if truth.n_queries() != queries.n_vectors() || truth.n_queries() == 0 || truth.r() == 0 {
        return Err(Error::invalid("ground truth missing or not matching the queries"));
    }
    let per_query = (0..queries.n_vectors())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let table = build_table(q, dicts)?;
            let mut acc = 0.0;
            for &n in truth.row(qi) {
                if n >= x.n_vectors() {
                    return Err(Error::invalid(format!("ground truth index {n} out of range")));
                }
                let est = f64::from(table.estimate_unchecked(codes.row(n)));
                acc += (inner_product(q, x.row(n)) - est).powi(2);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    let pairs = (truth.n_queries() * truth.r()) as f64;
    Ok(per_query.iter().sum::<f64>() / pairs)
}

/// Metrics for one trained model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    /// `((R, P), recall)` in insertion order.
    pub recall: Vec<((usize, usize), f64)>,
    pub vae: f64,
    pub ipae_asym: f64,
    pub ipae_sym: f64,
}

impl MetricReport {
    pub fn recall_csv(&self) -> String {
        let mut out = String::from("R,P,recall\n");
        for ((r, p), v) in &self.recall {
            let _ = writeln!(out, "{r},{p},{}", sig6(*v));
        }
        out
    }
}

/// Formats `v` rounded to 6 significant digits, without trailing zeros.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("valid float");
    format!("{rounded}")
}
