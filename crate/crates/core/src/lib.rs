//! Compositional-code quantization for approximate maximum inner product search.
//!
//! A database vector is approximated by the sum of `M` elements, one picked
//! from each of `M` source dictionaries of `K` elements. The picked indices
//! form a compact code of `M * log2(K)` bits, and the inner product between a
//! raw query and a coded vector is estimated with `M` table lookups.
//!
//! Five selection schemes share the same machinery:
//!
//! - `kmeans`: one dictionary, one element (plain vector quantization).
//! - `mcomb`: `M` distinct elements of one shared dictionary.
//! - `msel`: `M` elements of one shared dictionary, repetition allowed.
//! - `gms`: one element from each of `M` independent dictionaries.
//! - `pq`: `gms` with each dictionary confined to its own block of dimensions.
//!
//! Modules:
//!
//! - [`dataio`]: fvecs/bvecs/ivecs readers, model and code files, synthetic data.
//! - [`codebook`]: training, encoding, decoding and the objective.
//! - [`searcher`]: similarity tables, top-k scan, exact search.
//! - [`eval`]: ground truth, recall@P, VAE and IPAE.
//! - [`cli`]: the `ccq` command-line driver.

pub mod cli;
pub mod codebook;
pub mod dataio;
mod error;
pub mod eval;
pub mod kmeans;
pub mod searcher;

pub use codebook::{
    CodeMatrix, Scheme, SourceDictionaries, TrainConfig, TrainReport,
};
pub use dataio::{DenseMatrix, SyntheticSpec};
pub use error::{Error, Result};
pub use eval::{GroundTruth, MetricReport};
pub use searcher::{RankedList, SimilarityTable};
