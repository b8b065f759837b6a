//! Code assignment: greedy best-first selection and the exhaustive oracle.

use num_bigint::BigUint;
use rayon::prelude::*;

use super::{residual_sq_with, CodeMatrix, Scheme, SourceDictionaries};
use crate::dataio::DenseMatrix;
use crate::error::{Error, Result};

/// Default limit on the number of codes [`encode_exhaustive`] may enumerate.
pub const DEFAULT_EXHAUSTIVE_CAP: u64 = 1_000_000;

/// Greedy best-first encoder over fixed dictionaries.
///
/// Each of the `M` steps scores every element of every not-yet-used
/// dictionary against the current residual, commits the pair leaving the
/// smallest residual (ties to the lowest `(m, k)`), and subtracts it. Shared
/// dictionaries are searched once per step; `mcomb` excludes elements already
/// chosen. Shared-scheme codes are returned sorted ascending, the canonical
/// order among interchangeable slots. Cost is `O(M² K d)` per vector.
pub struct GreedyEncoder<'a> {
    dicts: &'a SourceDictionaries,
    norms: Vec<f64>,
}

impl<'a> GreedyEncoder<'a> {
    pub fn new(dicts: &'a SourceDictionaries) -> Self {
        let mut norms = Vec::with_capacity(dicts.n_physical() * dicts.k());
        for p in 0..dicts.n_physical() {
            for k in 0..dicts.k() {
                norms.push(
                    dicts
                        .element(p, k)
                        .iter()
                        .map(|&v| f64::from(v) * f64::from(v))
                        .sum(),
                );
            }
        }
        Self { dicts, norms }
    }

    pub fn dicts(&self) -> &SourceDictionaries {
        self.dicts
    }

    /// Encodes `x` into `out` using `residual` and `taken` as scratch.
    pub(crate) fn encode_into(
        &self,
        x: &[f32],
        residual: &mut Vec<f64>,
        taken: &mut Vec<bool>,
        out: &mut [u16],
    ) {
        let d = self.dicts;
        let (m_total, k_total) = (d.m(), d.k());
        residual.clear();
        residual.extend(x.iter().map(|&v| f64::from(v)));

        if d.scheme().is_shared() {
            let exclusive = d.scheme() == Scheme::Mcomb;
            taken.clear();
            taken.resize(k_total, false);
            for slot in out.iter_mut() {
                let mut best = (usize::MAX, f64::INFINITY);
                for k in 0..k_total {
                    if exclusive && taken[k] {
                        continue;
                    }
                    let score = self.score(residual, 0, k);
                    if score < best.1 {
                        best = (k, score);
                    }
                }
                let k = best.0;
                taken[k] = true;
                *slot = k as u16;
                subtract(residual, d.element(0, k), 0..d.dim());
            }
            out.sort_unstable();
        } else {
            taken.clear();
            taken.resize(m_total, false);
            for _ in 0..m_total {
                let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
                for m in 0..m_total {
                    if taken[m] {
                        continue;
                    }
                    for k in 0..k_total {
                        let score = self.score(residual, m, k);
                        if score < best.2 {
                            best = (m, k, score);
                        }
                    }
                }
                let (m, k, _) = best;
                taken[m] = true;
                out[m] = k as u16;
                subtract(residual, d.element(m, k), d.subspace(m));
            }
        }
    }

    /// `‖r − c‖² − ‖r‖² = ‖c‖² − 2⟨r, c⟩`.
    #[inline]
    fn score(&self, residual: &[f64], m: usize, k: usize) -> f64 {
        let sub = self.dicts.subspace(m);
        let e = &self.dicts.element(m, k)[sub.clone()];
        let dot: f64 = residual[sub]
            .iter()
            .zip(e)
            .map(|(r, &c)| r * f64::from(c))
            .sum();
        let p = if self.dicts.scheme().is_shared() { 0 } else { m };
        self.norms[p * self.dicts.k() + k] - 2.0 * dot
    }
}

#[inline]
fn subtract(residual: &mut [f64], element: &[f32], range: std::ops::Range<usize>) {
    for j in range {
        residual[j] -= f64::from(element[j]);
    }
}

fn check_vector(x: &[f32], dicts: &SourceDictionaries) -> Result<()> {
    if x.len() != dicts.dim() {
        return Err(Error::invalid(format!(
            "vector has dimension {}, dictionaries {}",
            x.len(),
            dicts.dim()
        )));
    }
    Ok(())
}

/// Greedy best-first code for a single vector.
pub fn encode_greedy(x: &[f32], dicts: &SourceDictionaries) -> Result<Vec<u16>> {
    check_vector(x, dicts)?;
    let enc = GreedyEncoder::new(dicts);
    let mut out = vec![0u16; dicts.m()];
    enc.encode_into(x, &mut Vec::new(), &mut Vec::new(), &mut out);
    Ok(out)
}

/// Greedy codes for every vector of `x`, computed in parallel. The result is
/// identical to encoding the vectors one by one.
pub fn encode_all(x: &DenseMatrix, dicts: &SourceDictionaries) -> Result<CodeMatrix> {
    encode_all_guarded(x, dicts, None)
}

/// Like [`encode_all`], but when `previous` is given a vector keeps its
/// previous code whenever the new one has a strictly larger residual.
pub fn encode_all_guarded(
    x: &DenseMatrix,
    dicts: &SourceDictionaries,
    previous: Option<&CodeMatrix>,
) -> Result<CodeMatrix> {
    if x.n_vectors() > 0 {
        check_vector(x.row(0), dicts)?;
    }
    if let Some(prev) = previous {
        dicts.check_codes(prev)?;
        if prev.n_vectors() != x.n_vectors() {
            return Err(Error::invalid("previous codes do not match the data"));
        }
    }
    let m = dicts.m();
    let enc = GreedyEncoder::new(dicts);
    let mut indices = vec![0u16; x.n_vectors() * m];
    indices
        .par_chunks_mut(m.max(1))
        .enumerate()
        .for_each_init(
            || (Vec::new(), Vec::new(), vec![0.0f64; dicts.dim()]),
            |(residual, taken, scratch), (n, out)| {
                let row = x.row(n);
                enc.encode_into(row, residual, taken, out);
                if let Some(prev) = previous {
                    let old = prev.row(n);
                    if old != out {
                        let new_err = residual_sq_with(row, out, dicts, scratch);
                        let old_err = residual_sq_with(row, old, dicts, scratch);
                        if new_err > old_err {
                            out.copy_from_slice(old);
                        }
                    }
                }
            },
        );
    CodeMatrix::new(dicts.scheme(), x.n_vectors(), m, dicts.k(), indices)
}

/// Visits admissible codes in lexicographic order: all tuples for `gms`/`pq`,
/// non-decreasing tuples for `msel`, strictly increasing tuples for `mcomb`
/// and single indices for `kmeans`.
fn for_each_code(scheme: Scheme, m: usize, k: usize, mut visit: impl FnMut(&[u16])) {
    fn rec(
        pos: usize,
        start: usize,
        scheme: Scheme,
        k: usize,
        code: &mut [u16],
        visit: &mut dyn FnMut(&[u16]),
    ) {
        if pos == code.len() {
            visit(code);
            return;
        }
        for v in start..k {
            code[pos] = v as u16;
            let next = match scheme {
                Scheme::Msel => v,
                Scheme::Mcomb => v + 1,
                _ => 0,
            };
            rec(pos + 1, next, scheme, k, code, visit);
        }
    }
    let mut code = vec![0u16; m];
    rec(0, 0, scheme, k, &mut code, &mut visit);
}

/// Exact minimizer of `‖x − decode(code)‖` over all admissible codes, ties
/// going to the lexicographically smallest code.
///
/// Fails when the number of candidate codes exceeds `cap`.
pub fn encode_exhaustive(x: &[f32], dicts: &SourceDictionaries, cap: u64) -> Result<Vec<u16>> {
    check_vector(x, dicts)?;
    let count = super::cardinality(dicts.scheme(), dicts.k(), dicts.m())?;
    if count > BigUint::from(cap) {
        return Err(Error::invalid(format!(
            "{} admissible codes exceed the exhaustive-search cap {cap}",
            count
        )));
    }
    let mut scratch = vec![0.0; dicts.dim()];
    let mut best: Option<(f64, Vec<u16>)> = None;
    for_each_code(dicts.scheme(), dicts.m(), dicts.k(), |code| {
        let err = residual_sq_with(x, code, dicts, &mut scratch);
        if best.as_ref().is_none_or(|(b, _)| err < *b) {
            best = Some((err, code.to_vec()));
        }
    });
    Ok(best.expect("at least one admissible code").1)
}
