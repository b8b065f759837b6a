//! Alternating optimization driver.

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use super::{
    encode_all, encode_all_guarded, objective, pq_bounds, reinitialize_unused,
    solve_dictionaries, CodeMatrix, Scheme, SourceDictionaries,
};
use crate::dataio::DenseMatrix;
use crate::error::{Error, Result};
use crate::kmeans;

/// Lloyd iterations used by the k-means initialization.
const INIT_KMEANS_ITERS: usize = 10;
/// The initialization subsample holds at most this many vectors per element.
const INIT_SAMPLE_PER_ELEMENT: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub m: usize,
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Reject any half-step that would raise the objective: a vector keeps
    /// its previous code if re-encoding worsens it, and the previous
    /// dictionaries are kept if the solve worsens the total.
    pub monotone_guard: bool,
    /// Ridge added to the Gram diagonal, relative to its mean diagonal.
    pub ridge: f64,
    pub tol_rel_objective: f64,
    /// Each initial k-means keeps the best of this many seeded runs.
    pub init_restarts: usize,
}

impl TrainConfig {
    pub fn new(scheme: Scheme, m: usize, k: usize) -> Self {
        Self {
            scheme,
            m,
            k,
            max_iters: 15,
            seed: 0,
            monotone_guard: true,
            ridge: 1e-6,
            tol_rel_objective: 1e-4,
            init_restarts: 10,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.scheme.validate_shape(self.m, self.k)?;
        if self.scheme == Scheme::Pq {
            pq_bounds(self.m, dim)?;
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid("ridge must be a finite non-negative real"));
        }
        if !(self.tol_rel_objective >= 0.0 && self.tol_rel_objective.is_finite()) {
            return Err(Error::invalid("tolerance must be a finite non-negative real"));
        }
        if self.init_restarts == 0 {
            return Err(Error::invalid("init_restarts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Dictionary,
    Codes,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Dictionary => "dict",
            Phase::Codes => "codes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveRecord {
    pub iter: usize,
    pub phase: Phase,
    pub objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Objective after initialization and after every half-step.
    pub records: Vec<ObjectiveRecord>,
    pub iterations: usize,
    pub reinit_count: usize,
    pub converged: bool,
}

impl TrainReport {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    /// Objective after each completed code half-step, starting with the
    /// initialization.
    pub fn per_iteration(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.phase != Phase::Dictionary)
            .map(|r| r.objective)
            .collect()
    }

    /// `iter,phase,objective` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,phase,objective\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.iter, r.phase.name(), r.objective);
        }
        out
    }
}

fn to_f64(x: &DenseMatrix) -> Vec<f64> {
    x.values().iter().map(|&v| f64::from(v)).collect()
}

fn centers_into(dicts: &mut SourceDictionaries, m: usize, centers: &[f64], scale: f64) {
    let sub = dicts.subspace(m);
    let width = sub.len();
    for k in 0..dicts.k() {
        let e = dicts.element_mut(m, k);
        for (t, j) in sub.clone().enumerate() {
            e[j] = (centers[k * width + t] * scale) as f32;
        }
    }
}

/// Initial dictionaries, from a seeded subsample of `min(N, 100 K)` vectors.
///
/// - `kmeans`: k-means centers.
/// - `gms`: dictionary 1 from k-means on the data, dictionary `m` from
///   k-means on the residuals left by greedy encoding with dictionaries
///   `1..m`.
/// - `pq`: k-means on each block.
/// - `msel`: k-means centers divided by `M`, so that repeating one element
///   `M` times reproduces a center.
/// - `mcomb`: repetition is not allowed, so the k-means centers `Z` are
///   spread over the dictionary through a random invertible `K x K` pattern
///   `S` whose rows are distinct `M`-subsets: `C = S⁻¹ Z`, and the code made
///   of row `k` of `S` decodes to center `k`. Every vector starts with the
///   code of its nearest center. Without a well-conditioned pattern (`M = K`)
///   this falls back to `Z / M` with greedy codes.
///
/// Every k-means call keeps the lowest-inertia run of `init_restarts`.
/// Returns initial codes when they are not the greedy ones.
fn initialize(
    x: &DenseMatrix,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(SourceDictionaries, Option<CodeMatrix>)> {
    let (n, dim) = (x.n_vectors(), x.dim());
    let cap = INIT_SAMPLE_PER_ELEMENT.saturating_mul(cfg.k).max(1);
    let sample = if n <= cap {
        x.clone()
    } else {
        let mut idx = index::sample(rng, n, cap).into_vec();
        idx.sort_unstable();
        x.select(&idx)
    };
    let mut dicts = SourceDictionaries::zeros(cfg.scheme, cfg.m, cfg.k, dim)?;

    match cfg.scheme {
        Scheme::Kmeans | Scheme::Msel | Scheme::Mcomb => {
            let centers = kmeans::kmeans_best_of(
                &to_f64(&sample),
                dim,
                cfg.k,
                INIT_KMEANS_ITERS,
                cfg.init_restarts,
                rng,
            );
            if cfg.scheme == Scheme::Mcomb && cfg.m > 1 {
                if let Some((spread, pattern)) = spread_centers(&centers, dim, cfg.m, cfg.k, rng) {
                    centers_into(&mut dicts, 0, &spread, 1.0);
                    let data = to_f64(x);
                    let assign = kmeans::assign(&data, dim, &centers);
                    let mut indices = Vec::with_capacity(n * cfg.m);
                    for a in assign {
                        indices.extend_from_slice(&pattern[a]);
                    }
                    let codes = CodeMatrix::new(cfg.scheme, n, cfg.m, cfg.k, indices)?;
                    return Ok((dicts, Some(codes)));
                }
            }
            centers_into(&mut dicts, 0, &centers, 1.0 / cfg.m as f64);
        }
        Scheme::Pq => {
            let data = to_f64(&sample);
            for m in 0..cfg.m {
                let sub = dicts.subspace(m);
                let block: Vec<f64> = data
                    .chunks_exact(dim)
                    .flat_map(|row| row[sub.clone()].iter().copied())
                    .collect();
                let centers = kmeans::kmeans_best_of(&block, sub.len(), cfg.k, INIT_KMEANS_ITERS, cfg.init_restarts, rng);
                centers_into(&mut dicts, m, &centers, 1.0);
            }
        }
        Scheme::Gms => {
            let mut residual = to_f64(&sample);
            for m in 0..cfg.m {
                let centers = kmeans::kmeans_best_of(&residual, dim, cfg.k, INIT_KMEANS_ITERS, cfg.init_restarts, rng);
                centers_into(&mut dicts, m, &centers, 1.0);
                if m + 1 == cfg.m {
                    break;
                }
                let prefix: Vec<f32> = dicts.physical_elements()[..(m + 1) * cfg.k * dim].to_vec();
                let partial = SourceDictionaries::new(Scheme::Gms, m + 1, cfg.k, dim, prefix)?;
                let codes = encode_all(&sample, &partial)?;
                let mut decoded = vec![0.0; dim];
                for (i, row) in codes.rows().enumerate() {
                    super::decode_into(row, &partial, &mut decoded);
                    for (t, r) in residual[i * dim..(i + 1) * dim].iter_mut().enumerate() {
                        *r = f64::from(sample.row(i)[t]) - decoded[t];
                    }
                }
            }
        }
    }
    Ok((dicts, None))
}

/// Largest accepted `|S⁻¹ Z|` relative to `|Z|`; larger means a pattern too
/// ill-conditioned to be useful.
const MAX_SPREAD_GAIN: f64 = 1e3;

/// Draws random patterns of `k` distinct sorted `m`-subsets until one is
/// invertible and well conditioned, and returns `S⁻¹ Z` with the pattern.
fn spread_centers(
    centers: &[f64],
    dim: usize,
    m: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<f64>, Vec<Vec<u16>>)> {
    // need k distinct m-subsets of k elements
    if m >= k {
        return None;
    }
    let z = DMatrix::from_row_slice(k, dim, centers);
    let z_max = centers.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for _ in 0..64 {
        let mut rows: Vec<Vec<u16>> = Vec::with_capacity(k);
        while rows.len() < k {
            let mut row: Vec<u16> = index::sample(rng, k, m).into_iter().map(|i| i as u16).collect();
            row.sort_unstable();
            if !rows.contains(&row) {
                rows.push(row);
            }
        }
        let mut s = DMatrix::<f64>::zeros(k, k);
        for (i, row) in rows.iter().enumerate() {
            for &j in row {
                s[(i, j as usize)] = 1.0;
            }
        }
        let Some(c) = s.lu().solve(&z) else { continue };
        let c_max = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if c.iter().all(|v| v.is_finite()) && c_max <= MAX_SPREAD_GAIN * z_max.max(f64::MIN_POSITIVE) {
            let mut values = Vec::with_capacity(k * dim);
            for r in 0..k {
                values.extend(c.row(r).iter().copied());
            }
            return Some((values, rows));
        }
    }
    None
}

/// Trains dictionaries and codes by alternating optimization.
///
/// After initialization every vector is greedily encoded. Each iteration
/// then runs a dictionary half-step (least-squares solve plus
/// re-initialization of one unused element) and a code half-step (greedy
/// re-encoding). Training stops after `max_iters` iterations or once an
/// iteration changes the objective by less than `tol_rel_objective`
/// relative to the previous one. The last half-step is always a code update,
/// so the returned codes are the greedy codes of the returned dictionaries
/// (subject to the guard).
pub fn train(
    x: &DenseMatrix,
    cfg: &TrainConfig,
) -> Result<(SourceDictionaries, CodeMatrix, TrainReport)> {
    if x.n_vectors() == 0 {
        return Err(Error::invalid("training needs at least one vector"));
    }
    cfg.validate(x.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut dicts, init_codes) = initialize(x, cfg, &mut rng)?;
    let mut codes = match init_codes {
        Some(codes) => codes,
        None => encode_all(x, &dicts)?,
    };
    let mut current = objective(x, &dicts, &codes)?;
    let mut report = TrainReport::default();
    report.records.push(ObjectiveRecord {
        iter: 0,
        phase: Phase::Init,
        objective: current,
    });

    for iter in 1..=cfg.max_iters {
        let previous = current;

        let mut candidate = solve_dictionaries(x, &codes, cfg.ridge)?;
        let mut cand_obj = objective(x, &candidate, &codes)?;
        if cfg.monotone_guard && cand_obj > current {
            candidate = dicts.clone();
            cand_obj = current;
        }
        if reinitialize_unused(&mut candidate, x, &codes)?.is_some() {
            report.reinit_count += 1;
        }
        dicts = candidate;
        current = cand_obj;
        report.records.push(ObjectiveRecord {
            iter,
            phase: Phase::Dictionary,
            objective: current,
        });

        let guard = cfg.monotone_guard.then_some(&codes);
        codes = encode_all_guarded(x, &dicts, guard)?;
        current = objective(x, &dicts, &codes)?;
        report.records.push(ObjectiveRecord {
            iter,
            phase: Phase::Codes,
            objective: current,
        });
        report.iterations = iter;

        if previous == 0.0 || ((previous - current) / previous).abs() < cfg.tol_rel_objective {
            report.converged = true;
            break;
        }
    }
    Ok((dicts, codes, report))
}
