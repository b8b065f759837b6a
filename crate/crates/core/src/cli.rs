//! `ccq` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format/io error,
//! 3 numerical error.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codebook::{encode_all, train, Scheme, TrainConfig};
use crate::dataio::{self, DenseMatrix, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{self, GroundTruth, MetricReport};
use crate::searcher::{build_table, search_with_table};

#[derive(Debug, Parser)]
#[command(name = "ccq", version, about = "Compositional codes for inner product search")]
pub struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train dictionaries and write a model file.
    Train(TrainArgs),
    /// Encode vectors with a trained model.
    Encode(EncodeArgs),
    /// Exact inner-product neighbors by linear scan.
    Groundtruth(GroundtruthArgs),
    /// Approximate top-k search over encoded vectors.
    Search(SearchArgs),
    /// Recall@P of search results against ground truth.
    Eval(EvalArgs),
    /// VAE and IPAE of a model on a dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenKind {
    /// Gaussian clusters.
    Clusters,
    /// Sums a_i + b_j of two random factor sets plus noise.
    Planted,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "clusters")]
    kind: GenKind,
    #[arg(long = "n")]
    n: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    clusters: usize,
    #[arg(long, default_value_t = 0.05)]
    spread: f64,
    #[arg(long = "planted-a", default_value_t = 4)]
    planted_a: usize,
    #[arg(long = "planted-b", default_value_t = 4)]
    planted_b: usize,
    #[arg(long, default_value_t = 1e-3)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of extra vectors split off as queries.
    #[arg(long = "n-queries", default_value_t = 0, requires = "queries_out")]
    n_queries: usize,
    #[arg(long = "queries-out")]
    queries_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Scheme,
    #[arg(long = "M")]
    m: usize,
    #[arg(long = "K")]
    k: usize,
    #[arg(long, default_value_t = 15)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "no-monotone-guard")]
    no_monotone_guard: bool,
    /// k-means++ restarts per initial k-means.
    #[arg(long = "init-restarts", default_value_t = 10)]
    init_restarts: usize,
    /// Write the per-half-step objective trace as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also write the final training codes.
    #[arg(long)]
    codes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GroundtruthArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long = "R")]
    r: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long = "k")]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write `query_id,rank,index,score` rows.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print table-build and scan time to standard error.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long = "R", value_delimiter = ',', required = true)]
    r: Vec<usize>,
    #[arg(long = "P", value_delimiter = ',', required = true)]
    p: Vec<usize>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Queries and ground truth enable the asymmetric IPAE.
    #[arg(long, requires = "gt")]
    queries: Option<PathBuf>,
    #[arg(long, requires = "queries")]
    gt: Option<PathBuf>,
    /// Sampled pairs for the symmetric IPAE; 0 skips it.
    #[arg(long, default_value_t = eval::DEFAULT_IPAE_PAIRS)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse::<Scheme>().map_err(|e| e.to_string())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ccq: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::Io(_) | Error::Format(_) | Error::Data(_) => 2,
        Error::Numerical(_) => 3,
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Groundtruth(a) => cmd_groundtruth(a),
        Command::Search(a) => cmd_search(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats(a) => cmd_stats(a),
    })
}

fn need_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such file", path.display()),
        )));
    }
    Ok(())
}

fn need_output(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => return Ok(()),
    };
    if !parent.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: directory does not exist", parent.display()),
        )));
    }
    Ok(())
}

/// Reads fvecs, or bvecs when the extension says so.
fn read_vectors(path: &Path) -> Result<DenseMatrix> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bvecs") => dataio::read_bvecs(path),
        _ => dataio::read_fvecs(path),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    need_output(&a.out)?;
    if let Some(q) = &a.queries_out {
        need_output(q)?;
    }
    let total = a.n + a.n_queries;
    let all = match a.kind {
        GenKind::Clusters => {
            let spec = SyntheticSpec {
                n_vectors: total,
                dim: a.dim,
                n_clusters: a.clusters,
                cluster_spread: a.spread,
                seed: a.seed,
            };
            spec.validate()?;
            dataio::generate_synthetic(&spec)?
        }
        GenKind::Planted => {
            dataio::generate_planted(a.planted_a, a.planted_b, total, a.dim, a.noise, a.seed)?
        }
    };
    let base: Vec<usize> = (0..a.n).collect();
    dataio::write_fvecs(&a.out, &all.select(&base))?;
    if let Some(q) = &a.queries_out {
        let rest: Vec<usize> = (a.n..total).collect();
        dataio::write_fvecs(q, &all.select(&rest))?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    need_input(&a.data)?;
    need_output(&a.out)?;
    for p in a.log.iter().chain(a.codes.iter()) {
        need_output(p)?;
    }
    let mut cfg = TrainConfig::new(a.scheme, a.m, a.k);
    cfg.max_iters = a.iters;
    cfg.seed = a.seed;
    cfg.monotone_guard = !a.no_monotone_guard;
    cfg.init_restarts = a.init_restarts;
    a.scheme.validate_shape(a.m, a.k)?;

    let x = read_vectors(&a.data)?;
    let (dicts, codes, report) = train(&x, &cfg)?;
    dataio::write_model(&a.out, &dicts)?;
    if let Some(p) = &a.codes {
        dataio::write_codes(p, &codes)?;
    }
    if let Some(p) = &a.log {
        fs::write(p, report.to_csv())?;
    }
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    need_input(&a.model)?;
    need_input(&a.data)?;
    need_output(&a.out)?;
    let dicts = dataio::read_model(&a.model)?;
    let x = read_vectors(&a.data)?;
    let codes = encode_all(&x, &dicts)?;
    dataio::write_codes(&a.out, &codes)
}

fn cmd_groundtruth(a: GroundtruthArgs) -> Result<()> {
    need_input(&a.data)?;
    need_input(&a.queries)?;
    need_output(&a.out)?;
    let x = read_vectors(&a.data)?;
    let q = read_vectors(&a.queries)?;
    check_dims(&x, &q)?;
    let gt = eval::compute_groundtruth(&x, &q, a.r)?;
    dataio::write_ivecs(&a.out, &gt.to_ivecs()?)
}

fn check_dims(x: &DenseMatrix, q: &DenseMatrix) -> Result<()> {
    if !q.is_empty() && q.dim() != x.dim() {
        return Err(Error::invalid(format!(
            "query dimension {} does not match data dimension {}",
            q.dim(),
            x.dim()
        )));
    }
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    for p in [&a.model, &a.codes, &a.queries] {
        need_input(p)?;
    }
    need_output(&a.out)?;
    if let Some(p) = &a.csv {
        need_output(p)?;
    }
    if a.k == 0 {
        return Err(Error::invalid("--k must be at least 1"));
    }
    let dicts = dataio::read_model(&a.model)?;
    let codes = dataio::read_codes(&a.codes)?;
    let queries = read_vectors(&a.queries)?;

    let mut build_secs = 0.0;
    let mut scan_secs = 0.0;
    let mut lists = Vec::with_capacity(queries.n_vectors());
    for q in queries.rows() {
        let t0 = Instant::now();
        let table = build_table(q, &dicts)?;
        let t1 = Instant::now();
        let list = search_with_table(&table, &codes, a.k)?;
        build_secs += (t1 - t0).as_secs_f64();
        scan_secs += t1.elapsed().as_secs_f64();
        lists.push(list);
    }

    let rows = lists
        .iter()
        .map(|l| {
            l.indices()
                .into_iter()
                .map(|i| i32::try_from(i).map_err(|_| Error::invalid("index exceeds i32")))
                .collect::<Result<Vec<i32>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    dataio::write_ivecs(&a.out, &rows)?;
    if let Some(p) = &a.csv {
        let mut out = String::from("query_id,rank,index,score\n");
        for (qi, l) in lists.iter().enumerate() {
            for (rank, (idx, score)) in l.items().iter().enumerate() {
                out.push_str(&format!("{qi},{rank},{idx},{}\n", eval::sig6(*score)));
            }
        }
        fs::write(p, out)?;
    }
    if a.timing {
        eprintln!("phase,seconds");
        eprintln!("table_build,{build_secs:.6}");
        eprintln!("scan,{scan_secs:.6}");
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    need_input(&a.results)?;
    need_input(&a.gt)?;
    let results: Vec<Vec<usize>> = dataio::read_ivecs(&a.results)?
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| usize::try_from(v).map_err(|_| Error::format(format!("negative index {v}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let gt = GroundTruth::from_ivecs(dataio::read_ivecs(&a.gt)?)?;

    let mut report = MetricReport::default();
    let mut truncated = false;
    for &r in &a.r {
        for &p in &a.p {
            let rec = eval::mean_recall(&results, &gt, r, p)?;
            truncated |= rec.truncated;
            report.recall.push(((r, p), rec.value));
        }
    }
    if truncated {
        eprintln!("ccq: warning: some P exceeds the result length; recall uses the available prefix");
    }
    print_stdout(&report.recall_csv())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    for p in [&a.model, &a.codes, &a.data] {
        need_input(p)?;
    }
    for p in a.queries.iter().chain(a.gt.iter()) {
        need_input(p)?;
    }
    let dicts = dataio::read_model(&a.model)?;
    let codes = dataio::read_codes(&a.codes)?;
    let x = read_vectors(&a.data)?;

    let mut out = String::from("metric,value\n");
    out.push_str(&format!("vae,{}\n", eval::vae(&x, &dicts, &codes)?));
    if a.pairs > 0 {
        let pairs = eval::sample_pairs(x.n_vectors(), a.pairs, a.seed);
        out.push_str(&format!("ipae_sym,{}\n", eval::ipae_sym(&pairs, &x, &dicts, &codes)?));
    }
    if let (Some(qp), Some(gp)) = (&a.queries, &a.gt) {
        let q = read_vectors(qp)?;
        check_dims(&x, &q)?;
        let gt = GroundTruth::from_ivecs(dataio::read_ivecs(gp)?)?;
        out.push_str(&format!("ipae_asym,{}\n", eval::ipae_asym(&q, &gt, &x, &dicts, &codes)?));
    }
    print_stdout(&out)
}

fn print_stdout(s: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(s.as_bytes())?;
    stdout.flush()?;
    Ok(())
}
