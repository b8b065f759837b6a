//! Closed-form dictionary update with codes held fixed.
//!
//! Writing the codes as a sparse 0/1 matrix `B` (`MK x N`, one non-zero per
//! dictionary per column), the least-squares dictionaries satisfy
//! `D (BBᵀ + λI) = XBᵀ`. `BBᵀ` is accumulated as `Σ_n b_n b_nᵀ` at `O(M²)`
//! per vector and `XBᵀ` at `O(Md)` per vector, both in ascending `n`.
//!
//! - `gms`: one joint `MK x MK` system.
//! - shared schemes: `B` collapses to the `K x N` count matrix `S`, giving a
//!   `K x K` system.
//! - `pq`: one `K x K` system per block, solved on the block's dimensions
//!   only, so the zero padding is preserved.
//!
//! `λ = ridge * mean(diag(BBᵀ))` for each system.

use nalgebra::DMatrix;

use super::{check_shapes, decode_into, CodeMatrix, Scheme, SourceDictionaries, TrainConfig};
use crate::dataio::DenseMatrix;
use crate::error::{Error, Result};

fn solve_system(
    mut gram: DMatrix<f64>,
    rhs: DMatrix<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    let size = gram.nrows();
    let mean_diag = (0..size).map(|i| gram[(i, i)]).sum::<f64>() / size as f64;
    let lambda = ridge * mean_diag;
    for i in 0..size {
        gram[(i, i)] += lambda;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "{size}x{size} Gram system is singular (ridge {ridge}); some elements are never selected"
        ))
    })?;
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("dictionary solve produced non-finite values".into()));
    }
    Ok(sol)
}

/// Least-squares dictionaries for fixed codes, without re-initialization of
/// unused elements (those come out as zero vectors when `ridge > 0`).
pub fn solve_dictionaries(
    x: &DenseMatrix,
    codes: &CodeMatrix,
    ridge: f64,
) -> Result<SourceDictionaries> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge must be a finite non-negative real"));
    }
    if x.n_vectors() != codes.n_vectors() {
        return Err(Error::invalid(format!(
            "{} vectors but {} codes",
            x.n_vectors(),
            codes.n_vectors()
        )));
    }
    if x.n_vectors() == 0 {
        return Err(Error::invalid("dictionary update needs at least one vector"));
    }
    let (scheme, m, k, dim) = (codes.scheme(), codes.m(), codes.k(), x.dim());
    let mut dicts = SourceDictionaries::zeros(scheme, m, k, dim)?;

    match scheme {
        Scheme::Gms => {
            let size = m * k;
            let mut gram = DMatrix::<f64>::zeros(size, size);
            let mut rhs = DMatrix::<f64>::zeros(size, dim);
            for (n, row) in codes.rows().enumerate() {
                let xn = x.row(n);
                for (i, &yi) in row.iter().enumerate() {
                    let a = i * k + usize::from(yi);
                    for (j, &yj) in row.iter().enumerate() {
                        gram[(a, j * k + usize::from(yj))] += 1.0;
                    }
                    for (t, &v) in xn.iter().enumerate() {
                        rhs[(a, t)] += f64::from(v);
                    }
                }
            }
            let sol = solve_system(gram, rhs, ridge)?;
            for mm in 0..m {
                for kk in 0..k {
                    let e = dicts.element_mut(mm, kk);
                    for (t, v) in e.iter_mut().enumerate() {
                        *v = sol[(mm * k + kk, t)] as f32;
                    }
                }
            }
        }
        Scheme::Kmeans | Scheme::Mcomb | Scheme::Msel => {
            let mut gram = DMatrix::<f64>::zeros(k, k);
            let mut rhs = DMatrix::<f64>::zeros(k, dim);
            for (n, row) in codes.rows().enumerate() {
                let xn = x.row(n);
                for &yi in row {
                    let a = usize::from(yi);
                    for &yj in row {
                        gram[(a, usize::from(yj))] += 1.0;
                    }
                    for (t, &v) in xn.iter().enumerate() {
                        rhs[(a, t)] += f64::from(v);
                    }
                }
            }
            let sol = solve_system(gram, rhs, ridge)?;
            for kk in 0..k {
                let e = dicts.element_mut(0, kk);
                for (t, v) in e.iter_mut().enumerate() {
                    *v = sol[(kk, t)] as f32;
                }
            }
        }
        Scheme::Pq => {
            for mm in 0..m {
                let sub = dicts.subspace(mm);
                let mut gram = DMatrix::<f64>::zeros(k, k);
                let mut rhs = DMatrix::<f64>::zeros(k, sub.len());
                for (n, row) in codes.rows().enumerate() {
                    let a = usize::from(row[mm]);
                    gram[(a, a)] += 1.0;
                    for (t, &v) in x.row(n)[sub.clone()].iter().enumerate() {
                        rhs[(a, t)] += f64::from(v);
                    }
                }
                let sol = solve_system(gram, rhs, ridge)?;
                for kk in 0..k {
                    let e = &mut dicts.element_mut(mm, kk)[sub.clone()];
                    for (t, v) in e.iter_mut().enumerate() {
                        *v = sol[(kk, t)] as f32;
                    }
                }
            }
        }
    }
    if dicts.physical_elements().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("dictionary values overflow f32".into()));
    }
    Ok(dicts)
}

/// Re-seeds the first never-selected element, in `(m, k)` order, from the
/// vector with the largest residual.
///
/// With `n*` that vector and `y` the element it uses in dictionary `m`, the
/// unused element becomes `x_{n*} − decode(codes[n*]) + c[m][y]` (restricted
/// to the block for `pq`): switching `n*` to it in slot `m` would reconstruct
/// `n*` exactly. For `kmeans` this is `x_{n*}` itself. Ties pick the lowest
/// `n`. At most one element is changed; returns its `(m, k)`.
pub fn reinitialize_unused(
    dicts: &mut SourceDictionaries,
    x: &DenseMatrix,
    codes: &CodeMatrix,
) -> Result<Option<(usize, usize)>> {
    check_shapes(x, dicts, codes)?;
    if x.n_vectors() == 0 {
        return Ok(None);
    }
    let (k, shared) = (dicts.k(), dicts.scheme().is_shared());
    let mut used = vec![false; dicts.n_physical() * k];
    for row in codes.rows() {
        for (m, &y) in row.iter().enumerate() {
            let p = if shared { 0 } else { m };
            used[p * k + usize::from(y)] = true;
        }
    }
    let Some(slot) = used.iter().position(|u| !u) else {
        return Ok(None);
    };
    let (m, kk) = (slot / k, slot % k);

    let residuals = super::residuals(x, dicts, codes);
    let mut worst = 0;
    for (n, &r) in residuals.iter().enumerate() {
        if r > residuals[worst] {
            worst = n;
        }
    }
    let row = codes.row(worst);
    let mut decoded = vec![0.0; dicts.dim()];
    decode_into(row, dicts, &mut decoded);
    let anchor_slot = if shared { 0 } else { m };
    let anchor: Vec<f32> = dicts
        .element(anchor_slot, usize::from(row[anchor_slot]))
        .to_vec();
    let sub = dicts.subspace(m);
    let xw = x.row(worst);
    let target = dicts.element_mut(m, kk);
    for j in sub {
        target[j] = (f64::from(xw[j]) - decoded[j] + f64::from(anchor[j])) as f32;
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("re-initialized element is not finite".into()));
    }
    Ok(Some((m, kk)))
}

/// Dictionary half-step: least-squares solve followed by re-initialization
/// of one unused element. Returns the new dictionaries and the re-seeded
/// element, if any.
pub fn dictionary_update(
    x: &DenseMatrix,
    codes: &CodeMatrix,
    config: &TrainConfig,
) -> Result<(SourceDictionaries, Option<(usize, usize)>)> {
    if codes.scheme() != config.scheme || codes.m() != config.m || codes.k() != config.k {
        return Err(Error::invalid("codes do not match the training configuration"));
    }
    let mut dicts = solve_dictionaries(x, codes, config.ridge)?;
    let reseeded = reinitialize_unused(&mut dicts, x, codes)?;
    Ok((dicts, reseeded))
}
