//! `groce` — semantic-graph concept erasure over embedding vocabularies.
//!
//! Subcommands: `build-graph`, `cluster`, `erase`, `gen-synth`, `bench`.
//! Global flags `--config` (flat key=value defaults), `--threads`, and
//! `--verbose` (echo the effective configuration to standard error).
//!
//! Exit codes: 0 success; 2 usage, validation, or parse failures;
//! 3 graph/table integrity mismatch; 4 convergence or capacity limits.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use groce_core::cluster::{erase_plan, identify_cluster, resolve_anchor, ClusterParams, ConceptSpec};
use groce_core::diffusion::diffuse;
use groce_core::embed::{EmbeddingTable, PromptEmbedding, TableFormat};
use groce_core::erase::{erase, ErasureParams};
use groce_core::graph::{GraphParams, SemanticGraph};
use groce_core::synth::{bench_pipeline, generate_table, BenchConfig, ClusterSpec, PlantedSpec};
use groce_core::{Error, Result};

use config::{resolve, FileConfig};

#[derive(Parser)]
#[command(
    name = "groce",
    version,
    about = "Concept erasure over embedding vocabularies via graph diffusion"
)]
struct Cli {
    /// Flat key=value file supplying parameter defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads; 0 uses all available cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Echo the effective configuration to standard error.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the semantic graph for an embedding table.
    BuildGraph(BuildGraphArgs),
    /// Identify the concept cluster around an anchor.
    Cluster(ClusterArgs),
    /// Erase concepts from a prompt embedding.
    Erase(EraseArgs),
    /// Generate a synthetic embedding table with planted clusters.
    GenSynth(GenSynthArgs),
    /// Time graph building, clustering, and erasure on a synthetic workload.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct BuildGraphArgs {
    /// Embedding table (text or binary; format is sniffed).
    #[arg(long, value_name = "FILE")]
    table: Option<PathBuf>,
    /// Output graph file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Base similarity threshold, in (0, 1).
    #[arg(long)]
    tau0: Option<f64>,
    /// Weight temperature, > 0.
    #[arg(long)]
    sigma: Option<f64>,
    /// Adaptive-threshold strength, >= 0.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(clap::Args)]
struct ClusterArgs {
    /// Graph file produced by build-graph.
    #[arg(long, value_name = "FILE")]
    graph: Option<PathBuf>,
    /// The embedding table the graph was built from.
    #[arg(long, value_name = "FILE")]
    table: Option<PathBuf>,
    /// Concept to cluster around.
    #[arg(long)]
    concept: String,
    /// Embedding vector file for a concept missing from the vocabulary.
    #[arg(long, value_name = "FILE")]
    concept_vector: Option<PathBuf>,
    /// Hop radius of the candidate ball.
    #[arg(long)]
    radius: Option<usize>,
    /// Cluster size cap.
    #[arg(long)]
    top_k: Option<usize>,
    /// Diffusion time.
    #[arg(long)]
    t: Option<f64>,
    /// Diffusion series tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Write the cluster report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also export the full diffusion field as JSON, scores descending.
    #[arg(long, value_name = "FILE")]
    scores: Option<PathBuf>,
    /// Persist the graph after an out-of-vocabulary insertion.
    #[arg(long, value_name = "FILE")]
    save_graph: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EraseArgs {
    /// Graph file produced by build-graph.
    #[arg(long, value_name = "FILE")]
    graph: Option<PathBuf>,
    /// The embedding table the graph was built from.
    #[arg(long, value_name = "FILE")]
    table: Option<PathBuf>,
    /// Prompt embedding to edit.
    #[arg(long, value_name = "FILE")]
    prompt: PathBuf,
    /// Output file for the edited prompt.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Concept to erase; repeat for a multi-concept plan, applied in order.
    #[arg(long, required = true)]
    concept: Vec<String>,
    /// NAME=FILE embedding for a concept missing from the vocabulary.
    #[arg(long, value_name = "NAME=FILE")]
    concept_vector: Vec<String>,
    /// Hop radius of the candidate ball.
    #[arg(long)]
    radius: Option<usize>,
    /// Cluster size cap.
    #[arg(long)]
    top_k: Option<usize>,
    /// Diffusion time.
    #[arg(long)]
    t: Option<f64>,
    /// Diffusion series tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Softmax temperature over geodesic distances.
    #[arg(long)]
    sigma_p: Option<f64>,
    /// Minimum cosine for attaching a token to the graph; defaults to the
    /// graph's own tau0.
    #[arg(long)]
    attach_threshold: Option<f64>,
    /// Projection repetitions per concept.
    #[arg(long)]
    passes: Option<usize>,
    /// Write a per-token residual report here.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum OutFormat {
    Text,
    Binary,
}

#[derive(clap::Args)]
struct GenSynthArgs {
    /// Output table file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write the ground-truth cluster map as JSON.
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    /// Number of planted clusters.
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    /// Members per cluster.
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Angular spread of each cluster, radians in [0, pi/4).
    #[arg(long, default_value_t = 0.1)]
    spread: f64,
    /// Random background rows.
    #[arg(long, default_value_t = 32)]
    background: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Orthonormalize cluster centers and rotate members only orthogonally
    /// to every center.
    #[arg(long)]
    orthogonal: bool,
    /// Cluster label prefix; cluster i uses "{prefix}{i}_".
    #[arg(long, default_value = "c")]
    prefix: String,
    /// Table file format.
    #[arg(long, value_enum, default_value_t = OutFormat::Binary)]
    format: OutFormat,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Vocabulary size of the synthetic table.
    #[arg(long, default_value_t = 10_000)]
    table_size: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 256)]
    dim: usize,
    /// Concepts planted and erased.
    #[arg(long, default_value_t = 10)]
    concepts: usize,
    /// Members per planted cluster.
    #[arg(long, default_value_t = 8)]
    cluster_size: usize,
    /// Prompt length in tokens.
    #[arg(long, default_value_t = 77)]
    prompt_len: usize,
    /// Timing repetitions (medians are reported); at least 3.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::HashMismatch(_) => 3u8,
                Error::Convergence(_) | Error::Capacity(_) => 4u8,
                _ => 2u8,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let threads = resolve(cli.threads, &cfg, "threads", 0usize)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::BuildGraph(args) => cmd_build_graph(args, &cfg, cli.verbose),
        Command::Cluster(args) => cmd_cluster(args, &cfg, cli.verbose),
        Command::Erase(args) => cmd_erase(args, &cfg, cli.verbose),
        Command::GenSynth(args) => cmd_gen_synth(args, cli.verbose),
        Command::Bench(args) => cmd_bench(args, cli.verbose),
    }
}

/// Required path: flag first, then config file.
fn need_path(flag: Option<PathBuf>, cfg: &FileConfig, key: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.path(key)).ok_or_else(|| {
        Error::Validation(format!("--{key} is required (flag or config file)"))
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialization");
    s.push('\n');
    s
}

fn graph_params(
    tau0: Option<f64>,
    sigma: Option<f64>,
    lambda: Option<f64>,
    cfg: &FileConfig,
) -> Result<GraphParams> {
    let defaults = GraphParams::default();
    Ok(GraphParams {
        tau0: resolve(tau0, cfg, "tau0", defaults.tau0)?,
        sigma: resolve(sigma, cfg, "sigma", defaults.sigma)?,
        lambda: resolve(lambda, cfg, "lambda", defaults.lambda)?,
    })
}

fn cluster_params(
    radius: Option<usize>,
    top_k: Option<usize>,
    t: Option<f64>,
    tol: Option<f64>,
    cfg: &FileConfig,
) -> Result<ClusterParams> {
    let defaults = ClusterParams::default();
    Ok(ClusterParams {
        radius: resolve(radius, cfg, "radius", defaults.radius)?,
        top_k: resolve(top_k, cfg, "top_k", defaults.top_k)?,
        t: resolve(t, cfg, "t", defaults.t)?,
        tol: resolve(tol, cfg, "tol", defaults.tol)?,
    })
}

fn cmd_build_graph(args: BuildGraphArgs, cfg: &FileConfig, verbose: bool) -> Result<()> {
    let table_path = need_path(args.table, cfg, "table")?;
    let params = graph_params(args.tau0, args.sigma, args.lambda, cfg)?;
    if verbose {
        eprintln!(
            "config: {}",
            json!({
                "table": table_path.display().to_string(),
                "out": args.out.display().to_string(),
                "tau0": params.tau0,
                "sigma": params.sigma,
                "lambda": params.lambda,
            })
        );
    }
    let table = EmbeddingTable::load(&table_path, None)?;
    let graph = SemanticGraph::build(table, params)?;
    graph.save(&args.out)?;
    print!("{}", to_json(&graph.degree_stats()));
    Ok(())
}

/// Whitespace-separated floats; `#` starts a comment.
fn load_vector(path: &Path) -> Result<Vec<f32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: if e.kind() == std::io::ErrorKind::NotFound {
            "file not found".to_string()
        } else {
            e.to_string()
        },
    })?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(at) => &raw[..at],
            None => raw,
        };
        for tok in line.split_whitespace() {
            let x: f32 = tok.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("cannot parse {tok:?} as a number"),
            })?;
            out.push(x);
        }
    }
    if out.is_empty() {
        return Err(Error::Validation(format!(
            "{}: vector file holds no numbers",
            path.display()
        )));
    }
    Ok(out)
}

fn load_graph(
    graph_flag: Option<PathBuf>,
    table_flag: Option<PathBuf>,
    cfg: &FileConfig,
) -> Result<(SemanticGraph, PathBuf, PathBuf)> {
    let table_path = need_path(table_flag, cfg, "table")?;
    let graph_path = need_path(graph_flag, cfg, "graph")?;
    let table = EmbeddingTable::load(&table_path, None)?;
    let graph = SemanticGraph::load(&graph_path, table)?;
    Ok((graph, graph_path, table_path))
}

fn cmd_cluster(args: ClusterArgs, cfg: &FileConfig, verbose: bool) -> Result<()> {
    let params = cluster_params(args.radius, args.top_k, args.t, args.tol, cfg)?;
    let (mut graph, graph_path, table_path) = load_graph(args.graph, args.table, cfg)?;
    if verbose {
        eprintln!(
            "config: {}",
            json!({
                "graph": graph_path.display().to_string(),
                "table": table_path.display().to_string(),
                "concept": args.concept,
                "radius": params.radius,
                "top_k": params.top_k,
                "t": params.t,
                "tol": params.tol,
            })
        );
    }
    let spec = ConceptSpec {
        name: args.concept,
        vector: args.concept_vector.as_deref().map(load_vector).transpose()?,
    };
    let anchor = resolve_anchor(&mut graph, &spec)?;
    let cluster = identify_cluster(&graph, &spec.name, anchor, params)?;
    let report = to_json(&cluster.report(&graph));
    match &args.out {
        Some(path) => write_text(path, &report)?,
        None => print!("{report}"),
    }
    if let Some(path) = &args.scores {
        let field = diffuse(&graph, anchor, params.t, params.tol)?;
        let mut entries: Vec<(usize, f64)> = field.scores.iter().copied().enumerate().collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let rows: Vec<serde_json::Value> = entries
            .into_iter()
            .map(|(node_id, score)| json!({"node_id": node_id, "score": score}))
            .collect();
        write_text(path, &to_json(&rows))?;
    }
    if let Some(path) = &args.save_graph {
        graph.save(path)?;
    }
    Ok(())
}

fn cmd_erase(args: EraseArgs, cfg: &FileConfig, verbose: bool) -> Result<()> {
    let cparams = cluster_params(args.radius, args.top_k, args.t, args.tol, cfg)?;
    let (mut graph, graph_path, table_path) = load_graph(args.graph, args.table, cfg)?;
    let eparams = ErasureParams {
        sigma_p: resolve(args.sigma_p, cfg, "sigma_p", ErasureParams::default().sigma_p)?,
        attach_threshold: resolve(
            args.attach_threshold,
            cfg,
            "attach_threshold",
            graph.params().tau0,
        )?,
        passes: resolve(args.passes, cfg, "passes", ErasureParams::default().passes)?,
    };
    if verbose {
        eprintln!(
            "config: {}",
            json!({
                "graph": graph_path.display().to_string(),
                "table": table_path.display().to_string(),
                "prompt": args.prompt.display().to_string(),
                "out": args.out.display().to_string(),
                "concepts": args.concept,
                "radius": cparams.radius,
                "top_k": cparams.top_k,
                "t": cparams.t,
                "tol": cparams.tol,
                "sigma_p": eparams.sigma_p,
                "attach_threshold": eparams.attach_threshold,
                "passes": eparams.passes,
            })
        );
    }

    let mut vectors: std::collections::HashMap<String, PathBuf> = std::collections::HashMap::new();
    for pair in &args.concept_vector {
        let (name, file) = pair.split_once('=').ok_or_else(|| {
            Error::Validation(format!(
                "--concept-vector expects NAME=FILE, got {pair:?}"
            ))
        })?;
        if vectors.insert(name.to_string(), PathBuf::from(file)).is_some() {
            return Err(Error::Validation(format!(
                "--concept-vector given twice for {name:?}"
            )));
        }
    }
    let concepts: Vec<ConceptSpec> = args
        .concept
        .iter()
        .map(|name| {
            Ok(ConceptSpec {
                name: name.clone(),
                vector: vectors.remove(name).as_deref().map(load_vector).transpose()?,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(name) = vectors.keys().next() {
        return Err(Error::Validation(format!(
            "--concept-vector names {name:?}, which is not in the --concept list"
        )));
    }

    let prompt = PromptEmbedding::load(&args.prompt)?;
    let plan = erase_plan(&mut graph, &concepts, cparams)?;
    let result = erase(&prompt, &plan, &graph, &eparams)?;
    result.edited.save(&args.out)?;
    if let Some(path) = &args.report {
        write_text(path, &to_json(&result.residuals))?;
    }
    let skipped = result.residuals.iter().filter(|r| r.skipped).count();
    let max_residual = result
        .residuals
        .iter()
        .map(|r| r.max_residual)
        .fold(0.0f64, f64::max);
    print!(
        "{}",
        to_json(&json!({
            "tokens": prompt.len(),
            "skipped": skipped,
            "max_residual": max_residual,
            "out": args.out.display().to_string(),
        }))
    );
    Ok(())
}

fn cmd_gen_synth(args: GenSynthArgs, verbose: bool) -> Result<()> {
    let spec = PlantedSpec {
        clusters: (0..args.clusters)
            .map(|i| ClusterSpec::new(format!("{}{i}_", args.prefix), args.size, args.spread))
            .collect(),
        background: args.background,
        dim: args.dim,
        seed: args.seed,
        orthogonal_centers: args.orthogonal,
    };
    if verbose {
        eprintln!(
            "config: {}",
            json!({
                "out": args.out.display().to_string(),
                "clusters": args.clusters,
                "size": args.size,
                "spread": args.spread,
                "background": args.background,
                "dim": args.dim,
                "seed": args.seed,
                "orthogonal": args.orthogonal,
            })
        );
    }
    let planted = generate_table(&spec)?;
    let format = match args.format {
        OutFormat::Text => TableFormat::Text,
        OutFormat::Binary => TableFormat::Binary,
    };
    planted.table.save(&args.out, format)?;
    if let Some(path) = &args.truth {
        write_text(path, &to_json(&planted.truth))?;
    }
    print!(
        "{}",
        to_json(&json!({
            "rows": planted.table.len(),
            "dim": planted.table.dim(),
            "clusters": args.clusters,
            "background": args.background,
            "out": args.out.display().to_string(),
        }))
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs, verbose: bool) -> Result<()> {
    let cfg = BenchConfig {
        table_size: args.table_size,
        dim: args.dim,
        concepts: args.concepts,
        cluster_size: args.cluster_size,
        prompt_len: args.prompt_len,
        repeats: args.repeats,
        seed: args.seed,
    };
    if verbose {
        eprintln!(
            "config: {}",
            json!({
                "table_size": cfg.table_size,
                "dim": cfg.dim,
                "concepts": cfg.concepts,
                "cluster_size": cfg.cluster_size,
                "prompt_len": cfg.prompt_len,
                "repeats": cfg.repeats,
                "seed": cfg.seed,
            })
        );
    }
    let report = bench_pipeline(&cfg)?;
    let text = to_json(&report);
    if let Some(path) = &args.out {
        write_text(path, &text)?;
    }
    print!("{text}");
    Ok(())
}
