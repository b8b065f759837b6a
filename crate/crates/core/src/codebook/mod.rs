//! Source dictionaries, compositional codes and their training.
//!
//! A vector `x` is approximated by `x̄ = Σ_m c[m][y_m]`, the sum of one
//! element from each of `M` dictionaries of `K` elements. The schemes differ
//! only in how the dictionaries and the selections are constrained:
//!
//! | scheme   | dictionaries                    | selection                  |
//! |----------|---------------------------------|----------------------------|
//! | `gms`    | `M` independent                 | one per dictionary         |
//! | `msel`   | one, shared by all `M` slots    | repetition allowed         |
//! | `mcomb`  | one, shared by all `M` slots    | pairwise distinct          |
//! | `kmeans` | one, `M = 1`                    | nearest element            |
//! | `pq`     | `M`, each zero outside a block  | one per dictionary         |
//!
//! Training alternates a closed-form least-squares dictionary update with a
//! greedy best-first re-encoding of every vector; see [`train`].

mod encode;
mod train;
mod update;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::DenseMatrix;
use crate::error::{Error, Result};

pub use encode::{
    encode_all, encode_all_guarded, encode_exhaustive, encode_greedy, GreedyEncoder,
    DEFAULT_EXHAUSTIVE_CAP,
};
pub use train::{train, ObjectiveRecord, Phase, TrainConfig, TrainReport};
pub use update::{dictionary_update, reinitialize_unused, solve_dictionaries};

/// Largest supported dictionary size; indices are stored as `u16`.
pub const MAX_K: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Kmeans,
    Mcomb,
    Msel,
    Gms,
    Pq,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Kmeans,
        Scheme::Mcomb,
        Scheme::Msel,
        Scheme::Gms,
        Scheme::Pq,
    ];

    /// Identifier used in model and codes files.
    pub fn id(self) -> u32 {
        match self {
            Scheme::Kmeans => 0,
            Scheme::Mcomb => 1,
            Scheme::Msel => 2,
            Scheme::Gms => 3,
            Scheme::Pq => 4,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Kmeans => "kmeans",
            Scheme::Mcomb => "mcomb",
            Scheme::Msel => "msel",
            Scheme::Gms => "gms",
            Scheme::Pq => "pq",
        }
    }

    /// True when all `M` slots draw from a single dictionary.
    pub fn is_shared(self) -> bool {
        matches!(self, Scheme::Kmeans | Scheme::Mcomb | Scheme::Msel)
    }

    pub(crate) fn validate_shape(self, m: usize, k: usize) -> Result<()> {
        if m == 0 || k == 0 {
            return Err(Error::invalid("M and K must be at least 1"));
        }
        if k > MAX_K {
            return Err(Error::invalid(format!("K = {k} exceeds the maximum {MAX_K}")));
        }
        match self {
            Scheme::Kmeans if m != 1 => Err(Error::invalid("kmeans requires M = 1")),
            Scheme::Mcomb if m > k => Err(Error::invalid(format!(
                "mcomb requires M <= K (got M = {m}, K = {k})"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?}")))
    }
}

/// Default product-quantization split: `M` contiguous blocks of `dim / M`
/// dimensions, the remainder going to the last block. Returns `M + 1` offsets.
pub fn pq_bounds(m: usize, dim: usize) -> Result<Vec<usize>> {
    if m == 0 || m > dim {
        return Err(Error::invalid(format!(
            "pq needs 1 <= M <= d (got M = {m}, d = {dim})"
        )));
    }
    let block = dim / m;
    let mut bounds: Vec<usize> = (0..m).map(|i| i * block).collect();
    bounds.push(dim);
    Ok(bounds)
}

/// `M` dictionaries of `K` elements in `R^dim`.
///
/// Shared-dictionary schemes store one physical dictionary and present it as
/// `M` logical replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDictionaries {
    scheme: Scheme,
    m: usize,
    k: usize,
    dim: usize,
    elements: Vec<f32>,
    bounds: Option<Vec<usize>>,
}

impl SourceDictionaries {
    /// Builds dictionaries from the physical element values, ordered
    /// (dictionary, element, dimension). Shared schemes pass `K * dim`
    /// values, the others `M * K * dim`.
    pub fn new(scheme: Scheme, m: usize, k: usize, dim: usize, elements: Vec<f32>) -> Result<Self> {
        scheme.validate_shape(m, k)?;
        if dim == 0 {
            return Err(Error::invalid("dictionary dimension must be at least 1"));
        }
        let bounds = match scheme {
            Scheme::Pq => Some(pq_bounds(m, dim)?),
            _ => None,
        };
        let physical = if scheme.is_shared() { 1 } else { m };
        if elements.len() != physical * k * dim {
            return Err(Error::invalid(format!(
                "{} values given, {} expected for {} dictionaries of {}x{}",
                elements.len(),
                physical * k * dim,
                physical,
                k,
                dim
            )));
        }
        if elements.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("dictionary contains non-finite values".into()));
        }
        let dicts = Self {
            scheme,
            m,
            k,
            dim,
            elements,
            bounds,
        };
        if scheme == Scheme::Pq {
            for m in 0..dicts.m {
                let sub = dicts.subspace(m);
                for k in 0..dicts.k {
                    let e = dicts.element(m, k);
                    if e[..sub.start].iter().chain(&e[sub.end..]).any(|&v| v != 0.0) {
                        return Err(Error::invalid(format!(
                            "pq element ({m}, {k}) is non-zero outside dimensions {sub:?}"
                        )));
                    }
                }
            }
        }
        Ok(dicts)
    }

    /// Builds dictionaries from `M * K * dim` values with every logical
    /// dictionary spelled out, as stored in model files. Shared schemes
    /// require all replicas to be identical.
    pub fn from_replicated(
        scheme: Scheme,
        m: usize,
        k: usize,
        dim: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if !scheme.is_shared() {
            return Self::new(scheme, m, k, dim, values);
        }
        let block = k * dim;
        if values.len() != m * block {
            return Err(Error::invalid("replicated dictionary size mismatch"));
        }
        let first = &values[..block];
        for (r, replica) in values.chunks_exact(block).enumerate() {
            if replica
                .iter()
                .zip(first)
                .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return Err(Error::invalid(format!(
                    "{scheme} replica {r} differs from replica 0"
                )));
            }
        }
        Self::new(scheme, m, k, dim, first.to_vec())
    }

    pub fn zeros(scheme: Scheme, m: usize, k: usize, dim: usize) -> Result<Self> {
        let physical = if scheme.is_shared() { 1 } else { m };
        Self::new(scheme, m, k, dim, vec![0.0; physical * k * dim])
    }

    /// Random dictionaries with coordinates uniform in `[-1, 1)`, drawn from
    /// ChaCha8 seeded with `seed`. For `pq` only in-block coordinates are set.
    pub fn random(scheme: Scheme, m: usize, k: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut dicts = Self::zeros(scheme, m, k, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in 0..dicts.n_physical() {
            let sub = dicts.subspace(p);
            for kk in 0..k {
                for v in &mut dicts.element_mut(p, kk)[sub.clone()] {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
        }
        Ok(dicts)
    }

    /// The same approximation space presented as group M-selection. A shared
    /// dictionary is copied into `M` independent ones; `pq` keeps its zero
    /// padding in the copied values.
    pub fn to_gms(&self) -> Self {
        let mut elements = Vec::with_capacity(self.m * self.k * self.dim);
        for m in 0..self.m {
            for k in 0..self.k {
                elements.extend_from_slice(self.element(m, k));
            }
        }
        Self {
            scheme: Scheme::Gms,
            m: self.m,
            k: self.k,
            dim: self.dim,
            elements,
            bounds: None,
        }
    }

    /// Re-labels a shared dictionary under another shared scheme with `m`
    /// slots (e.g. an `msel` dictionary viewed as `mcomb`).
    pub fn with_shared_scheme(&self, scheme: Scheme, m: usize) -> Result<Self> {
        if !self.scheme.is_shared() || !scheme.is_shared() {
            return Err(Error::invalid("both schemes must use a shared dictionary"));
        }
        Self::new(scheme, m, self.k, self.dim, self.elements.clone())
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of physically stored dictionaries.
    pub fn n_physical(&self) -> usize {
        if self.scheme.is_shared() {
            1
        } else {
            self.m
        }
    }

    #[inline]
    fn physical(&self, m: usize) -> usize {
        if self.scheme.is_shared() {
            0
        } else {
            m
        }
    }

    /// Element `k` of logical dictionary `m`.
    #[inline]
    pub fn element(&self, m: usize, k: usize) -> &[f32] {
        let start = (self.physical(m) * self.k + k) * self.dim;
        &self.elements[start..start + self.dim]
    }

    #[inline]
    pub(crate) fn element_mut(&mut self, m: usize, k: usize) -> &mut [f32] {
        let start = (self.physical(m) * self.k + k) * self.dim;
        &mut self.elements[start..start + self.dim]
    }

    /// Dimensions where dictionary `m` may be non-zero: its block for `pq`,
    /// everything otherwise.
    #[inline]
    pub fn subspace(&self, m: usize) -> Range<usize> {
        match &self.bounds {
            Some(b) => b[m]..b[m + 1],
            None => 0..self.dim,
        }
    }

    pub fn subspace_bounds(&self) -> Option<&[usize]> {
        self.bounds.as_deref()
    }

    /// Physical element values, ordered (dictionary, element, dimension).
    pub fn physical_elements(&self) -> &[f32] {
        &self.elements
    }

    pub(crate) fn check_row(&self, row: &[u16]) -> Result<()> {
        if row.len() != self.m {
            return Err(Error::invalid(format!(
                "code row has {} entries, dictionaries have M = {}",
                row.len(),
                self.m
            )));
        }
        if let Some(&bad) = row.iter().find(|&&y| usize::from(y) >= self.k) {
            return Err(Error::invalid(format!("index {bad} out of range for K = {}", self.k)));
        }
        Ok(())
    }

    pub(crate) fn check_codes(&self, codes: &CodeMatrix) -> Result<()> {
        if codes.m() != self.m || codes.k() != self.k {
            return Err(Error::invalid(format!(
                "codes are M = {}, K = {} but dictionaries are M = {}, K = {}",
                codes.m(),
                codes.k(),
                self.m,
                self.k
            )));
        }
        if codes.scheme() != self.scheme {
            return Err(Error::invalid(format!(
                "codes were produced by {} but dictionaries are {}",
                codes.scheme(),
                self.scheme
            )));
        }
        Ok(())
    }
}

/// `N` compositional codes of `M` indices each, vector-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    scheme: Scheme,
    n_vectors: usize,
    m: usize,
    k: usize,
    indices: Vec<u16>,
}

impl CodeMatrix {
    pub fn new(scheme: Scheme, n_vectors: usize, m: usize, k: usize, indices: Vec<u16>) -> Result<Self> {
        scheme.validate_shape(m, k)?;
        if n_vectors.checked_mul(m) != Some(indices.len()) {
            return Err(Error::invalid(format!(
                "{} indices cannot form {} codes of length {}",
                indices.len(),
                n_vectors,
                m
            )));
        }
        for (n, row) in indices.chunks_exact(m).enumerate() {
            if let Some(&bad) = row.iter().find(|&&y| usize::from(y) >= k) {
                return Err(Error::invalid(format!(
                    "code {n} holds index {bad}, K = {k}"
                )));
            }
            if scheme == Scheme::Mcomb {
                for i in 0..m {
                    if row[i + 1..].contains(&row[i]) {
                        return Err(Error::invalid(format!(
                            "mcomb code {n} repeats index {}",
                            row[i]
                        )));
                    }
                }
            }
        }
        Ok(Self {
            scheme,
            n_vectors,
            m,
            k,
            indices,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn n_vectors(&self) -> usize {
        self.n_vectors
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[u16] {
        &self.indices[n * self.m..(n + 1) * self.m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u16]> + '_ {
        self.indices.chunks_exact(self.m)
    }
}

/// Adds the selected elements into `out`, ascending `m` then ascending
/// dimension. Indices must already be validated.
#[inline]
pub(crate) fn decode_into(row: &[u16], dicts: &SourceDictionaries, out: &mut [f64]) {
    out.fill(0.0);
    for (m, &y) in row.iter().enumerate() {
        let sub = dicts.subspace(m);
        let e = dicts.element(m, usize::from(y));
        for j in sub {
            out[j] += f64::from(e[j]);
        }
    }
}

/// `‖x − decode(row)‖²`, accumulated in dimension order.
#[inline]
pub(crate) fn residual_sq_with(
    x: &[f32],
    row: &[u16],
    dicts: &SourceDictionaries,
    scratch: &mut [f64],
) -> f64 {
    decode_into(row, dicts, scratch);
    x.iter()
        .zip(scratch.iter())
        .map(|(&a, &b)| {
            let r = f64::from(a) - b;
            r * r
        })
        .sum()
}

/// Reconstructs `Σ_m c[m][row[m]]`.
pub fn decode(row: &[u16], dicts: &SourceDictionaries) -> Result<Vec<f64>> {
    dicts.check_row(row)?;
    let mut out = vec![0.0; dicts.dim()];
    decode_into(row, dicts, &mut out);
    Ok(out)
}

/// Squared reconstruction error `‖x − decode(row)‖²` of one vector.
pub fn residual_sq(x: &[f32], row: &[u16], dicts: &SourceDictionaries) -> Result<f64> {
    dicts.check_row(row)?;
    if x.len() != dicts.dim() {
        return Err(Error::invalid(format!(
            "vector has dimension {}, dictionaries {}",
            x.len(),
            dicts.dim()
        )));
    }
    let mut scratch = vec![0.0; dicts.dim()];
    Ok(residual_sq_with(x, row, dicts, &mut scratch))
}

/// Per-vector squared residuals, computed in parallel.
pub(crate) fn residuals(x: &DenseMatrix, dicts: &SourceDictionaries, codes: &CodeMatrix) -> Vec<f64> {
    (0..x.n_vectors())
        .into_par_iter()
        .map_init(
            || vec![0.0; dicts.dim()],
            |scratch, n| residual_sq_with(x.row(n), codes.row(n), dicts, scratch),
        )
        .collect()
}

pub(crate) fn check_shapes(x: &DenseMatrix, dicts: &SourceDictionaries, codes: &CodeMatrix) -> Result<()> {
    dicts.check_codes(codes)?;
    if x.n_vectors() != codes.n_vectors() {
        return Err(Error::invalid(format!(
            "{} vectors but {} codes",
            x.n_vectors(),
            codes.n_vectors()
        )));
    }
    if x.n_vectors() > 0 && x.dim() != dicts.dim() {
        return Err(Error::invalid(format!(
            "data dimension {} differs from dictionary dimension {}",
            x.dim(),
            dicts.dim()
        )));
    }
    Ok(())
}

/// Training objective `Σ_n ‖x_n − decode(codes[n])‖²`.
///
/// Residuals may be computed in parallel but are summed in ascending `n`, so
/// the result does not depend on the thread count.
pub fn objective(x: &DenseMatrix, dicts: &SourceDictionaries, codes: &CodeMatrix) -> Result<f64> {
    check_shapes(x, dicts, codes)?;
    Ok(residuals(x, dicts, codes).iter().sum())
}

fn binomial(n: u64, r: u64) -> BigUint {
    let r = r.min(n - r);
    let mut acc = BigUint::from(1u32);
    for i in 0..r {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Size of the compositional dictionary, i.e. the number of distinct
/// admissible codes up to slot permutation for shared schemes:
/// `K^M` for `gms`/`pq`, `C(K+M-1, M)` for `msel`, `C(K, M)` for `mcomb` and
/// `K` for `kmeans` (which ignores `M`).
pub fn cardinality(scheme: Scheme, k: usize, m: usize) -> Result<BigUint> {
    if k == 0 || m == 0 {
        return Err(Error::invalid("M and K must be at least 1"));
    }
    let (k64, m64) = (k as u64, m as u64);
    Ok(match scheme {
        Scheme::Gms | Scheme::Pq => BigUint::from(k64).pow(m as u32),
        Scheme::Msel => binomial(k64 + m64 - 1, m64),
        Scheme::Mcomb => {
            if m > k {
                return Err(Error::invalid(format!("mcomb requires M <= K (M = {m}, K = {k})")));
            }
            binomial(k64, m64)
        }
        Scheme::Kmeans => BigUint::from(k64),
    })
}
