//! Dataset and artifact I/O.
//!
//! Readers and writers for the TEXMEX corpus formats (`.fvecs`, `.bvecs`,
//! `.ivecs`), the model file (`CCQ1`) and the codes file (`CCC1`), plus a
//! seeded generator of clustered synthetic data.
//!
//! ## Corpus formats
//!
//! Every record is a little-endian `i32` dimension `d` followed by `d`
//! payload values: `f32` for fvecs, `u8` for bvecs, `i32` for ivecs. All
//! records in a file share the same `d`. An empty file is an empty matrix.
//!
//! ## Model file
//!
//! ```text
//! "CCQ1" | version u32 | scheme u32 | M u32 | K u32 | d u32 | M*K*d f32
//! ```
//!
//! Values are ordered (dictionary, element, dimension), dictionary
//! outermost. Shared-dictionary schemes write their dictionary `M` times.
//!
//! ## Codes file
//!
//! ```text
//! "CCC1" | version u32 | scheme u32 | M u32 | K u32 | N u32 | N*M indices
//! ```
//!
//! Indices are `u8` when `K <= 256` and little-endian `u16` otherwise,
//! vector-major.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codebook::{CodeMatrix, Scheme, SourceDictionaries};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CCQ1";
pub const CODES_MAGIC: &[u8; 4] = b"CCC1";
pub const FORMAT_VERSION: u32 = 1;

/// A collection of `n_vectors` vectors of equal dimension, stored contiguously
/// one vector after another.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_vectors: usize,
    dim: usize,
    values: Vec<f32>,
}

impl DenseMatrix {
    /// Builds a matrix from vector-major values. Rejects non-finite entries.
    pub fn new(n_vectors: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if n_vectors.checked_mul(dim) != Some(values.len()) {
            return Err(Error::invalid(format!(
                "{} values cannot form a {}x{} matrix",
                values.len(),
                n_vectors,
                dim
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at vector {} dimension {}",
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        Ok(Self {
            n_vectors,
            dim,
            values,
        })
    }

    pub fn empty() -> Self {
        Self {
            n_vectors: 0,
            dim: 0,
            values: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Ok(Self::empty());
        };
        let dim = first.as_ref().len();
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "row {} has dimension {}, expected {}",
                    i,
                    row.len(),
                    dim
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, values)
    }

    pub fn n_vectors(&self) -> usize {
        self.n_vectors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n_vectors == 0
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.n_vectors).map(move |i| self.row(i))
    }

    /// Copies the listed vectors, in the given order, into a new matrix.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n_vectors: indices.len(),
            dim: self.dim,
            values,
        }
    }
}

// Corpus readers.

fn read_i32_le<R: Read>(reader: &mut R) -> Result<Option<i32>> {
    let mut buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    match filled {
        0 => Ok(None),
        4 => Ok(Some(i32::from_le_bytes(buf))),
        _ => Err(Error::format("trailing partial record header")),
    }
}

/// Walks the `d | payload` record framing shared by the corpus formats,
/// handing each payload to `sink`. Returns `(records, d)`.
fn read_records<R: Read>(
    mut reader: R,
    elem_size: usize,
    mut sink: impl FnMut(&[u8]) -> Result<()>,
) -> Result<(usize, usize)> {
    let mut dim: Option<usize> = None;
    let mut count = 0usize;
    let mut payload = Vec::new();
    while let Some(d) = read_i32_le(&mut reader)? {
        if d <= 0 {
            return Err(Error::format(format!(
                "record {count} has non-positive dimension {d}"
            )));
        }
        let d = d as usize;
        match dim {
            None => {
                dim = Some(d);
                payload.resize(d * elem_size, 0);
            }
            Some(expected) if expected != d => {
                return Err(Error::format(format!(
                    "record {count} has dimension {d}, expected {expected}"
                )));
            }
            Some(_) => {}
        }
        reader.read_exact(&mut payload).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::format(format!("record {count} is truncated"))
            } else {
                Error::Io(e)
            }
        })?;
        sink(&payload)?;
        count += 1;
    }
    Ok((count, dim.unwrap_or(0)))
}

pub fn parse_fvecs<R: Read>(reader: R) -> Result<DenseMatrix> {
    let mut values = Vec::new();
    let (n, dim) = read_records(reader, 4, |payload| {
        values.extend(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        Ok(())
    })?;
    DenseMatrix::new(n, dim, values)
}

pub fn parse_bvecs<R: Read>(reader: R) -> Result<DenseMatrix> {
    let mut values = Vec::new();
    let (n, dim) = read_records(reader, 1, |payload| {
        values.extend(payload.iter().map(|&b| f32::from(b)));
        Ok(())
    })?;
    DenseMatrix::new(n, dim, values)
}

pub fn parse_ivecs<R: Read>(reader: R) -> Result<Vec<Vec<i32>>> {
    let mut rows = Vec::new();
    read_records(reader, 4, |payload| {
        rows.push(
            payload
                .chunks_exact(4)
                .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
        Ok(())
    })?;
    Ok(rows)
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    parse_fvecs(BufReader::new(File::open(path)?))
}

/// Reads a bvecs file, widening each byte to a real in `0.0..=255.0`.
pub fn read_bvecs(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    parse_bvecs(BufReader::new(File::open(path)?))
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    parse_ivecs(BufReader::new(File::open(path)?))
}

// Corpus writers.

fn header(dim: usize) -> Result<[u8; 4]> {
    let d = i32::try_from(dim)
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::invalid(format!("unsupported record dimension {dim}")))?;
    Ok(d.to_le_bytes())
}

pub fn encode_fvecs<W: Write>(mut writer: W, matrix: &DenseMatrix) -> Result<()> {
    if matrix.is_empty() {
        return Ok(());
    }
    let head = header(matrix.dim())?;
    for row in matrix.rows() {
        writer.write_all(&head)?;
        for v in row {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes a bvecs file. Every value must be an integer in `0..=255`.
pub fn encode_bvecs<W: Write>(mut writer: W, matrix: &DenseMatrix) -> Result<()> {
    if matrix.is_empty() {
        return Ok(());
    }
    let head = header(matrix.dim())?;
    let mut bytes = Vec::with_capacity(matrix.dim());
    for row in matrix.rows() {
        bytes.clear();
        for &v in row {
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(Error::invalid(format!("{v} is not representable as a byte")));
            }
            bytes.push(v as u8);
        }
        writer.write_all(&head)?;
        writer.write_all(&bytes)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn encode_ivecs<W: Write, R: AsRef<[i32]>>(mut writer: W, rows: &[R]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let dim = first.as_ref().len();
    let head = header(dim)?;
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::invalid(format!(
                "ivecs row {} has length {}, expected {}",
                i,
                row.len(),
                dim
            )));
        }
        writer.write_all(&head)?;
        for v in row {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn write_fvecs(path: impl AsRef<Path>, matrix: &DenseMatrix) -> Result<()> {
    encode_fvecs(BufWriter::new(File::create(path)?), matrix)
}

pub fn write_bvecs(path: impl AsRef<Path>, matrix: &DenseMatrix) -> Result<()> {
    encode_bvecs(BufWriter::new(File::create(path)?), matrix)
}

pub fn write_ivecs<R: AsRef<[i32]>>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    encode_ivecs(BufWriter::new(File::create(path)?), rows)
}

// Model and codes files.

fn put_u32<W: Write>(w: &mut W, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_header<R: Read>(reader: &mut R, magic: &[u8; 4]) -> Result<[u32; 5]> {
    let mut head = [0u8; 24];
    reader.read_exact(&mut head).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::format("file shorter than its 24-byte header")
        } else {
            Error::Io(e)
        }
    })?;
    if &head[..4] != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&head[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut fields = [0u32; 5];
    for (i, f) in fields.iter_mut().enumerate() {
        let o = 4 + 4 * i;
        *f = u32::from_le_bytes([head[o], head[o + 1], head[o + 2], head[o + 3]]);
    }
    if fields[0] != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported version {}", fields[0])));
    }
    Ok(fields)
}

fn read_payload<R: Read>(reader: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    reader.take(len as u64 + 1).read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(Error::format(format!(
            "payload is {} bytes, header implies {}{}",
            payload.len().min(len),
            len,
            if payload.len() > len { " (trailing bytes)" } else { "" }
        )));
    }
    Ok(payload)
}

pub fn encode_model<W: Write>(mut writer: W, dicts: &SourceDictionaries) -> Result<()> {
    writer.write_all(MODEL_MAGIC)?;
    put_u32(&mut writer, FORMAT_VERSION as usize, "version")?;
    put_u32(&mut writer, dicts.scheme().id() as usize, "scheme")?;
    put_u32(&mut writer, dicts.m(), "M")?;
    put_u32(&mut writer, dicts.k(), "K")?;
    put_u32(&mut writer, dicts.dim(), "d")?;
    for m in 0..dicts.m() {
        for k in 0..dicts.k() {
            for v in dicts.element(m, k) {
                writer.write_all(&v.to_le_bytes())?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn parse_model<R: Read>(mut reader: R) -> Result<SourceDictionaries> {
    let [_, scheme, m, k, dim] = read_header(&mut reader, MODEL_MAGIC)?;
    let scheme = Scheme::from_id(scheme)
        .ok_or_else(|| Error::format(format!("unknown scheme id {scheme}")))?;
    let (m, k, dim) = (m as usize, k as usize, dim as usize);
    let len = m
        .checked_mul(k)
        .and_then(|v| v.checked_mul(dim))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format("model dimensions overflow"))?;
    let payload = read_payload(&mut reader, len)?;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    SourceDictionaries::from_replicated(scheme, m, k, dim, values).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Format(msg),
        other => other,
    })
}

pub fn write_model(path: impl AsRef<Path>, dicts: &SourceDictionaries) -> Result<()> {
    encode_model(BufWriter::new(File::create(path)?), dicts)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<SourceDictionaries> {
    parse_model(BufReader::new(File::open(path)?))
}

/// Bytes per stored index: 1 when `K <= 256`, else 2.
pub fn code_width(k: usize) -> usize {
    if k <= 256 {
        1
    } else {
        2
    }
}

pub fn encode_codes<W: Write>(mut writer: W, codes: &CodeMatrix) -> Result<()> {
    writer.write_all(CODES_MAGIC)?;
    put_u32(&mut writer, FORMAT_VERSION as usize, "version")?;
    put_u32(&mut writer, codes.scheme().id() as usize, "scheme")?;
    put_u32(&mut writer, codes.m(), "M")?;
    put_u32(&mut writer, codes.k(), "K")?;
    put_u32(&mut writer, codes.n_vectors(), "N")?;
    if code_width(codes.k()) == 1 {
        let bytes: Vec<u8> = codes.indices().iter().map(|&i| i as u8).collect();
        writer.write_all(&bytes)?;
    } else {
        for &i in codes.indices() {
            writer.write_all(&i.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn parse_codes<R: Read>(mut reader: R) -> Result<CodeMatrix> {
    let [_, scheme, m, k, n] = read_header(&mut reader, CODES_MAGIC)?;
    let scheme = Scheme::from_id(scheme)
        .ok_or_else(|| Error::format(format!("unknown scheme id {scheme}")))?;
    let (m, k, n) = (m as usize, k as usize, n as usize);
    let width = code_width(k);
    let len = n
        .checked_mul(m)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Error::format("codes dimensions overflow"))?;
    let payload = read_payload(&mut reader, len)?;
    let indices: Vec<u16> = if width == 1 {
        payload.iter().map(|&b| u16::from(b)).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect()
    };
    CodeMatrix::new(scheme, n, m, k, indices).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Format(msg),
        other => other,
    })
}

pub fn write_codes(path: impl AsRef<Path>, codes: &CodeMatrix) -> Result<()> {
    encode_codes(BufWriter::new(File::create(path)?), codes)
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<CodeMatrix> {
    parse_codes(BufReader::new(File::open(path)?))
}

// Synthetic data.

/// Parameters of a clustered synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_vectors: usize,
    pub dim: usize,
    pub n_clusters: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::invalid("n_clusters must be at least 1"));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::invalid("cluster_spread must be positive and finite"));
        }
        if self.n_vectors > 0 && self.dim == 0 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        Ok(())
    }
}

/// Generates clustered data from a [`SyntheticSpec`].
///
/// The stream is ChaCha8 seeded with `seed` through `SeedableRng::seed_from_u64`.
/// Draw order: `n_clusters * dim` uniform center coordinates in `[-1, 1)`,
/// then for each vector one uniform cluster index followed by `dim` Gaussian
/// noise values with standard deviation `cluster_spread`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    if spec.n_vectors == 0 {
        return Ok(DenseMatrix::empty());
    }
    let (_, _, values) = clustered(spec);
    DenseMatrix::new(spec.n_vectors, spec.dim, values)
}

/// Same stream as [`generate_synthetic`], also returning the centers and
/// the cluster index of every vector.
pub fn generate_synthetic_labeled(
    spec: &SyntheticSpec,
) -> Result<(DenseMatrix, Vec<Vec<f64>>, Vec<usize>)> {
    spec.validate()?;
    if spec.n_vectors == 0 {
        return Ok((DenseMatrix::empty(), Vec::new(), Vec::new()));
    }
    let (centers, labels, values) = clustered(spec);
    Ok((DenseMatrix::new(spec.n_vectors, spec.dim, values)?, centers, labels))
}

fn clustered(spec: &SyntheticSpec) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.n_clusters)
        .map(|_| (0..spec.dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, spec.cluster_spread).expect("spread validated");
    let mut labels = Vec::with_capacity(spec.n_vectors);
    let mut values = Vec::with_capacity(spec.n_vectors * spec.dim);
    for _ in 0..spec.n_vectors {
        let c = rng.random_range(0..spec.n_clusters);
        labels.push(c);
        values.extend(
            centers[c]
                .iter()
                .map(|&mu| (mu + noise.sample(&mut rng)) as f32),
        );
    }
    (centers, labels, values)
}

/// Generates `n_vectors` points of the form `a_i + b_j + noise`.
///
/// `n_a` vectors `a_i` and `n_b` vectors `b_j` are drawn uniformly from
/// `[-1, 1)^dim`; vector `n` uses the pair `(i, j) = ((n / n_b) % n_a, n % n_b)`
/// and Gaussian noise with standard deviation `noise`. Such data is exactly
/// representable (up to the noise) by two dictionaries of sizes `n_a` and
/// `n_b`.
pub fn generate_planted(
    n_a: usize,
    n_b: usize,
    n_vectors: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<DenseMatrix> {
    if n_a == 0 || n_b == 0 || dim == 0 {
        return Err(Error::invalid("planted factors and dim must be positive"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("noise must be a finite non-negative real"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };
    let a = draw(n_a);
    let b = draw(n_b);
    let mut values = Vec::with_capacity(n_vectors * dim);
    for n in 0..n_vectors {
        let (i, j) = ((n / n_b) % n_a, n % n_b);
        for t in 0..dim {
            let eps: f64 = if noise > 0.0 {
                noise * rng.sample::<f64, _>(rand_distr::StandardNormal)
            } else {
                0.0
            };
            values.push((a[i][t] + b[j][t] + eps) as f32);
        }
    }
    DenseMatrix::new(n_vectors, dim, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn fvecs_single_record() {
        let m = parse_fvecs(&[0x01, 0, 0, 0, 0x00, 0x00, 0x80, 0x3F][..]).unwrap();
        assert_eq!((m.n_vectors(), m.dim()), (1, 1));
        assert_eq!(m.values(), &[1.0]);
    }

    #[test]
    fn fvecs_empty_input() {
        let m = parse_fvecs(&[][..]).unwrap();
        assert_eq!((m.n_vectors(), m.dim()), (0, 0));
    }

    #[test]
    fn fvecs_truncated_record() {
        let err = parse_fvecs(&[0x02, 0, 0, 0, 0x00, 0x00, 0x80, 0x3F][..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn fvecs_partial_header_and_mixed_dims() {
        let err = parse_fvecs(&[0x01, 0, 0, 0, 0, 0, 0x80, 0x3F, 0x01, 0][..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));

        let mut bytes = vec![1, 0, 0, 0, 0, 0, 0x80, 0x3F];
        bytes.extend_from_slice(&[2, 0, 0, 0, 0, 0, 0x80, 0x3F, 0, 0, 0x80, 0x3F]);
        let err = parse_fvecs(&bytes[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn fvecs_rejects_non_finite() {
        let mut bytes = vec![1, 0, 0, 0];
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(parse_fvecs(&bytes[..]), Err(Error::Data(_))));
        let mut bytes = vec![1, 0, 0, 0];
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(parse_fvecs(&bytes[..]), Err(Error::Data(_))));
    }

    #[test]
    fn bvecs_records() {
        let m = parse_bvecs(&[1, 0, 0, 0, 0xFF][..]).unwrap();
        assert_eq!(m.values(), &[255.0]);
        let m = parse_bvecs(&[1, 0, 0, 0, 0x00][..]).unwrap();
        assert_eq!(m.values(), &[0.0]);
        assert!(matches!(
            parse_bvecs(&[2, 0, 0, 0, 1][..]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn ivecs_hand_encoded() {
        let mut out = Vec::new();
        encode_ivecs(&mut out, &[vec![3, 1, 2]]).unwrap();
        assert_eq!(
            out,
            [3, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0].to_vec()
        );
        let mut out = Vec::new();
        encode_ivecs::<_, Vec<i32>>(&mut out, &[]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn ivecs_round_trip_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<i32>> = (0..100)
            .map(|_| (0..7).map(|_| rng.random()).collect())
            .collect();
        let mut out = Vec::new();
        encode_ivecs(&mut out, &rows).unwrap();
        assert_eq!(parse_ivecs(&out[..]).unwrap(), rows);
    }

    #[test]
    fn ivecs_rejects_ragged_rows() {
        let mut out = Vec::new();
        assert!(encode_ivecs(&mut out, &[vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn model_hand_encoded() {
        let dicts =
            SourceDictionaries::new(Scheme::Kmeans, 1, 1, 1, vec![2.5]).unwrap();
        let mut out = Vec::new();
        encode_model(&mut out, &dicts).unwrap();
        assert_eq!(out.len(), 28);
        assert_eq!(&out[..4], b"CCQ1");
        assert_eq!(&out[4..24], &[1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&out[24..], &[0x00, 0x00, 0x20, 0x40]);
    }

    #[test]
    fn model_bad_magic_version_and_size() {
        let dicts = SourceDictionaries::new(Scheme::Gms, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let mut good = Vec::new();
        encode_model(&mut good, &dicts).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(parse_model(&bad[..]), Err(Error::Format(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(parse_model(&bad[..]), Err(Error::Format(_))));

        assert!(matches!(
            parse_model(&good[..good.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(parse_model(&long[..]), Err(Error::Format(_))));
    }

    #[test]
    fn model_rejects_diverging_shared_replicas() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CCQ1");
        for v in [1u32, Scheme::Msel.id(), 2, 1, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(parse_model(&bytes[..]), Err(Error::Format(_))));
    }

    #[test]
    fn codes_one_and_two_byte_payloads() {
        let codes = CodeMatrix::new(Scheme::Gms, 1, 2, 256, vec![0, 255]).unwrap();
        let mut out = Vec::new();
        encode_codes(&mut out, &codes).unwrap();
        assert_eq!(&out[24..], &[0x00, 0xFF]);

        let codes = CodeMatrix::new(Scheme::Gms, 1, 1, 512, vec![256]).unwrap();
        let mut out = Vec::new();
        encode_codes(&mut out, &codes).unwrap();
        assert_eq!(&out[24..], &[0x00, 0x01]);
        assert_eq!(parse_codes(&out[..]).unwrap(), codes);
    }

    #[test]
    fn codes_index_out_of_range_is_format_error() {
        let codes = CodeMatrix::new(Scheme::Gms, 1, 2, 10, vec![0, 9]).unwrap();
        let mut out = Vec::new();
        encode_codes(&mut out, &codes).unwrap();
        *out.last_mut().unwrap() = 10;
        assert!(matches!(parse_codes(&out[..]), Err(Error::Format(_))));
    }

    #[test]
    fn synthetic_empty_and_deterministic() {
        let spec = SyntheticSpec {
            n_vectors: 0,
            dim: 4,
            n_clusters: 2,
            cluster_spread: 0.1,
            seed: 1,
        };
        assert!(generate_synthetic(&spec).unwrap().is_empty());

        let spec = SyntheticSpec {
            n_vectors: 500,
            ..spec
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        let bits = |m: &DenseMatrix| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = generate_synthetic(&SyntheticSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn synthetic_rejects_bad_spec() {
        let spec = SyntheticSpec {
            n_vectors: 10,
            dim: 2,
            n_clusters: 0,
            cluster_spread: 0.1,
            seed: 1,
        };
        assert!(generate_synthetic(&spec).is_err());
        let spec = SyntheticSpec {
            n_clusters: 1,
            cluster_spread: 0.0,
            ..spec
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn synthetic_cluster_variance_matches_spread() {
        let spec = SyntheticSpec {
            n_vectors: 10_000,
            dim: 32,
            n_clusters: 16,
            cluster_spread: 0.05,
            seed: 7,
        };
        let (x, centers, labels) = generate_synthetic_labeled(&spec).unwrap();
        let target = spec.cluster_spread * spec.cluster_spread;
        // Per-cluster sample variance around the empirical cluster mean.
        for c in 0..spec.n_clusters {
            let members: Vec<usize> = (0..x.n_vectors()).filter(|&n| labels[n] == c).collect();
            assert!(members.len() > 100);
            let mut mean = vec![0.0f64; spec.dim];
            for &n in &members {
                for (m, &v) in mean.iter_mut().zip(x.row(n)) {
                    *m += f64::from(v);
                }
            }
            mean.iter_mut().for_each(|m| *m /= members.len() as f64);
            let mut ss = 0.0;
            for &n in &members {
                for (m, &v) in mean.iter().zip(x.row(n)) {
                    ss += (f64::from(v) - m).powi(2);
                }
            }
            let var = ss / ((members.len() - 1) * spec.dim) as f64;
            assert!((var - target).abs() <= 0.2 * target, "cluster {c}: {var}");
            for (m, mu) in mean.iter().zip(&centers[c]) {
                assert!((m - mu).abs() < 0.05);
            }
        }
    }

    #[test]
    fn planted_structure() {
        let x = generate_planted(4, 4, 32, 5, 0.0, 9).unwrap();
        // x_n = a_i + b_j, so x(0,0) - x(0,1) = b_0 - b_1 = x(1,0) - x(1,1).
        for t in 0..5 {
            let lhs = x.row(0)[t] - x.row(1)[t];
            let rhs = x.row(4)[t] - x.row(5)[t];
            assert!((lhs - rhs).abs() < 1e-5);
        }
        assert_eq!(x.row(0), x.row(16));
    }

    fn arb_matrix() -> impl Strategy<Value = DenseMatrix> {
        (1usize..6, 1usize..9).prop_flat_map(|(n, d)| {
            proptest::collection::vec(-1e6f32..1e6, n * d)
                .prop_map(move |v| DenseMatrix::new(n, d, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn fvecs_round_trip(m in arb_matrix()) {
            let mut out = Vec::new();
            encode_fvecs(&mut out, &m).unwrap();
            prop_assert_eq!(out.len(), m.n_vectors() * (4 + 4 * m.dim()));
            let back = parse_fvecs(&out[..]).unwrap();
            prop_assert_eq!(
                back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn bvecs_round_trip(n in 1usize..5, d in 1usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f32> = (0..n * d).map(|_| f32::from(rng.random::<u8>())).collect();
            let m = DenseMatrix::new(n, d, v).unwrap();
            let mut out = Vec::new();
            encode_bvecs(&mut out, &m).unwrap();
            prop_assert_eq!(parse_bvecs(&out[..]).unwrap(), m);
        }

        #[test]
        fn fvecs_length_must_match_headers(m in arb_matrix(), cut in 1usize..4) {
            let mut out = Vec::new();
            encode_fvecs(&mut out, &m).unwrap();
            out.truncate(out.len() - cut);
            prop_assert!(parse_fvecs(&out[..]).is_err());
        }

        #[test]
        fn model_round_trip(
            scheme in prop_oneof![
                Just(Scheme::Kmeans), Just(Scheme::Mcomb), Just(Scheme::Msel),
                Just(Scheme::Gms), Just(Scheme::Pq)
            ],
            m in 1usize..4, k in 1usize..5, seed in any::<u64>(),
        ) {
            let m = if scheme == Scheme::Kmeans { 1 } else { m };
            let k = if scheme == Scheme::Mcomb { k.max(m) } else { k };
            let dim = 5;
            let dicts = SourceDictionaries::random(scheme, m, k, dim, seed).unwrap();
            let mut out = Vec::new();
            encode_model(&mut out, &dicts).unwrap();
            prop_assert_eq!(out.len(), 24 + 4 * m * k * dim);
            prop_assert_eq!(parse_model(&out[..]).unwrap(), dicts);
        }

        #[test]
        fn codes_round_trip(n in 0usize..20, m in 1usize..5, k in 1usize..70_000, seed in any::<u64>()) {
            let k = k.min(65_536);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx: Vec<u16> = (0..n * m).map(|_| rng.random_range(0..k) as u16).collect();
            let codes = CodeMatrix::new(Scheme::Gms, n, m, k, idx).unwrap();
            let mut out = Vec::new();
            encode_codes(&mut out, &codes).unwrap();
            prop_assert_eq!(out.len(), 24 + n * m * code_width(k));
            prop_assert_eq!(parse_codes(&out[..]).unwrap(), codes);
        }
    }
}
