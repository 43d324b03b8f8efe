use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ct_core::metrics::ConceptLevel;
use ct_core::pipeline::{
    analyze_inputs, generate_synthetic, load_inputs, AnalysisConfig, AnalysisParams, LayerSelection,
    PlantedPair, SyntheticSpec,
};
use ct_core::progress::{Progress, ProgressEvent, Silent};
use ct_core::result::{load_result, save_result};
use ct_core::significance::MaxTScope;
use ct_core::view::{query_view, ViewQuery};

mod report;

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_COMPUTE: u8 = 4;
const EXIT_PORT: u8 = 5;

#[derive(Parser)]
#[command(name = "concepttracer", version, about = "Neuron-concept saliency and selectivity analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every neuron-concept pair and write a result file.
    Compute(ComputeArgs),
    /// Print a ranked table of pairs from a result file.
    Report(ReportArgs),
    /// Serve a result file over the HTTP API (and a dashboard build).
    Serve(ServeArgs),
    /// Query a running server.
    Query(QueryArgs),
    /// Write synthetic inputs with planted neuron-concept pairs.
    Synth(SynthArgs),
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must be in (0, 1), got {a}"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("expected a positive integer, got {s}")),
    }
}

fn parse_bins(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 2 => Ok(n),
        _ => Err(format!("bin count must be an integer >= 2, got {s}")),
    }
}

fn parse_layers(s: &str) -> Result<LayerSelection, String> {
    s.parse().map_err(|e: ct_core::Error| e.to_string())
}

fn parse_scope(s: &str) -> Result<MaxTScope, String> {
    s.parse().map_err(|e: ct_core::Error| e.to_string())
}

#[derive(Args)]
struct ComputeArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    activations: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    concepts: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_positive)]
    permutations: Option<usize>,
    #[arg(long, value_parser = parse_alpha)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_bins)]
    bins: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    #[arg(long)]
    min_prevalence: Option<u64>,
    /// `all` or a comma-separated list of layer ids.
    #[arg(long, value_parser = parse_layers)]
    layers: Option<LayerSelection>,
    /// `global` or `per-layer`.
    #[arg(long, value_parser = parse_scope)]
    maxt_scope: Option<MaxTScope>,
    #[arg(long, value_parser = parse_positive)]
    threads: Option<usize>,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Clone)]
struct ViewArgs {
    #[arg(long, default_value = "network")]
    scope: String,
    /// Comma-separated layer ids.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    neuron: Option<usize>,
    /// Concept name substring (case-insensitive).
    #[arg(long)]
    concept: Option<String>,
    #[arg(long)]
    level: Option<String>,
    #[arg(long, default_value = "saliency")]
    metric: String,
    /// Include non-significant pairs.
    #[arg(long)]
    all: bool,
    /// Re-threshold at this significance level.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

impl ViewArgs {
    fn to_query(&self) -> Result<ViewQuery, ct_core::Error> {
        let mut params: Vec<(&str, String)> = vec![("scope", self.scope.clone()), ("metric", self.metric.clone())];
        if let Some(l) = &self.layers {
            params.push(("layers", l.clone()));
        }
        if let Some(n) = self.neuron {
            params.push(("neuron", n.to_string()));
        }
        if let Some(c) = &self.concept {
            params.push(("concept", c.clone()));
        }
        if let Some(l) = &self.level {
            params.push(("level", l.clone()));
        }
        if self.all {
            params.push(("significant_only", "false".into()));
        }
        if let Some(a) = self.alpha {
            params.push(("alpha_override", a.to_string()));
        }
        params.push(("top_k", self.top_k.to_string()));
        ViewQuery::from_params(params.iter().map(|(k, v)| (*k, v.as_str())))
    }
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
    #[command(flatten)]
    view: ViewArgs,
    /// Also write the rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long, env = "CONCEPTTRACER_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Directory with the built dashboard assets.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    /// Server base URL; defaults to localhost on CONCEPTTRACER_PORT or 8080.
    #[arg(long)]
    url: Option<String>,
    #[command(subcommand)]
    endpoint: Endpoint,
}

#[derive(Subcommand)]
enum Endpoint {
    Meta,
    Pairs(ViewArgs),
    Pareto(ViewArgs),
    Distribution(ViewArgs),
    Concepts {
        #[arg(default_value = "")]
        q: String,
        #[arg(long)]
        level: Option<String>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 64)]
    neurons: usize,
    #[arg(long, default_value_t = 8)]
    concepts: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Planted pair as LAYER:NEURON:CONCEPT; repeatable.
    #[arg(long = "plant", value_parser = parse_plant)]
    planted: Vec<PlantedPair>,
    #[arg(long, default_value_t = 0.25)]
    sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    prevalence: f64,
    #[arg(long)]
    seed: u64,
}

fn parse_plant(s: &str) -> Result<PlantedPair, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || format!("expected LAYER:NEURON:CONCEPT, got {s}");
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(PlantedPair {
        layer: parts[0].parse().map_err(|_| bad())?,
        neuron: parts[1].parse().map_err(|_| bad())?,
        concept: parts[2].parse().map_err(|_| bad())?,
    })
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

struct StderrProgress;

impl Progress for StderrProgress {
    fn report(&self, event: ProgressEvent) {
        eprintln!("{event}");
    }
}

fn compute(args: ComputeArgs) -> CmdResult {
    let mut config = match &args.config {
        Some(path) => AnalysisConfig::from_json_file(path).map_err(|e| Failure::new(EXIT_INPUT, e))?,
        None => AnalysisConfig {
            activations: PathBuf::new(),
            concepts: PathBuf::new(),
            out: None,
            params: AnalysisParams::new(0),
        },
    };
    if let Some(v) = args.activations {
        config.activations = v;
    }
    if let Some(v) = args.concepts {
        config.concepts = v;
    }
    if let Some(v) = args.out {
        config.out = Some(v);
    }
    let p = &mut config.params;
    if let Some(v) = args.seed {
        p.seed = v;
    }
    if let Some(v) = args.permutations {
        p.permutations = v;
    }
    if let Some(v) = args.alpha {
        p.alpha = v;
    }
    if let Some(v) = args.bins {
        p.bin_count = v;
    }
    if let Some(v) = args.min_prevalence {
        p.min_prevalence = v;
    }
    if let Some(v) = args.layers {
        p.layers = v;
    }
    if let Some(v) = args.maxt_scope {
        p.maxt_scope = v;
    }
    if let Some(v) = args.threads {
        p.threads = Some(v);
    }
    let out = config
        .out
        .clone()
        .ok_or_else(|| Failure::new(EXIT_USAGE, anyhow::anyhow!("no output path (--out or config \"out\")")))?;
    config.params.validate().map_err(|e| Failure::new(EXIT_USAGE, e))?;

    let silent = Silent;
    let progress: &dyn Progress = if args.quiet { &silent } else { &StderrProgress };

    let inputs = load_inputs(&config).map_err(|e| Failure::new(EXIT_INPUT, e))?;
    let result = analyze_inputs(&inputs, &config.params, progress).map_err(|e| {
        let code = match e {
            ct_core::Error::InvalidInput(_)
            | ct_core::Error::EmptyConceptSet { .. }
            | ct_core::Error::NotFound(_)
            | ct_core::Error::RowCountMismatch { .. }
            | ct_core::Error::ShapeMismatch { .. } => EXIT_INPUT,
            _ => EXIT_COMPUTE,
        };
        Failure::new(code, e)
    })?;
    save_result(&result, &out).map_err(|e| Failure::new(EXIT_COMPUTE, e))?;
    if !args.quiet {
        eprintln!("event=written path={}", out.display());
    }
    Ok(())
}

fn report_cmd(args: ReportArgs) -> CmdResult {
    let result = load_result(&args.results)
        .with_context(|| format!("cannot read results {}", args.results.display()))
        .map_err(|e| Failure::new(EXIT_INPUT, e))?;
    for w in result.verify_digests() {
        eprintln!("warning: input {} ({}): {}", w.role, w.path, w.message);
    }
    let query = args.view.to_query().map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let view = query_view(&result, &query).map_err(|e| Failure::new(EXIT_INPUT, e))?;
    let rows = report::rows(&view, query.metric);
    print!("{}", report::render_table(&view, &rows));
    if let Some(path) = &args.csv {
        report::write_csv(path, &rows).map_err(|e| Failure::new(EXIT_COMPUTE, e))?;
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new(EXIT_COMPUTE, e))
}

fn serve_cmd(args: ServeArgs) -> CmdResult {
    let result = load_result(&args.results)
        .with_context(|| format!("cannot read results {}", args.results.display()))
        .map_err(|e| Failure::new(EXIT_INPUT, e))?;
    for w in result.verify_digests() {
        eprintln!("warning: input {} ({}): {}", w.role, w.path, w.message);
    }
    let addr = SocketAddr::new(args.host, args.port);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot bind {addr}"))
            .map_err(|e| Failure::new(EXIT_PORT, e))?;
        eprintln!("event=listening addr={}", listener.local_addr().unwrap_or(addr));
        let app = ct_server::router(Arc::new(result), args.static_dir);
        ct_server::serve(listener, app)
            .await
            .map_err(|e| Failure::new(EXIT_COMPUTE, e))
    })
}

fn query_cmd(args: QueryArgs) -> CmdResult {
    let url = args.url.unwrap_or_else(|| {
        let port = std::env::var("CONCEPTTRACER_PORT").unwrap_or_else(|_| "8080".into());
        format!("http://127.0.0.1:{port}")
    });
    let client = ct_client::Client::new(&url).map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let to_query = |v: &ViewArgs| v.to_query().map_err(|e| Failure::new(EXIT_USAGE, e));
    runtime()?.block_on(async move {
        let fail = |e: ct_client::ClientError| {
            let code = match e {
                ct_client::ClientError::Api { status, .. } if (400..500).contains(&status) => EXIT_INPUT,
                _ => EXIT_COMPUTE,
            };
            Failure::new(code, e)
        };
        let body = match &args.endpoint {
            Endpoint::Meta => serde_json::to_string_pretty(&client.meta().await.map_err(fail)?),
            Endpoint::Pairs(v) => serde_json::to_string_pretty(&client.pairs(&to_query(v)?).await.map_err(fail)?),
            Endpoint::Pareto(v) => serde_json::to_string_pretty(&client.pareto(&to_query(v)?).await.map_err(fail)?),
            Endpoint::Distribution(v) => {
                serde_json::to_string_pretty(&client.distribution(&to_query(v)?).await.map_err(fail)?)
            }
            Endpoint::Concepts { q, level } => {
                let level = level
                    .as_deref()
                    .map(str::parse::<ConceptLevel>)
                    .transpose()
                    .map_err(|e| Failure::new(EXIT_USAGE, e))?;
                let found = client.concepts(q, level).await.map_err(fail)?;
                serde_json::to_string_pretty(&found.matches)
            }
        }
        .map_err(|e| Failure::new(EXIT_COMPUTE, e))?;
        println!("{body}");
        Ok(())
    })
}

fn synth(args: SynthArgs) -> CmdResult {
    let spec = SyntheticSpec {
        samples: args.samples,
        neurons: args.neurons,
        concepts: args.concepts,
        layers: args.layers,
        planted: args.planted,
        noise_sigma: args.sigma,
        prevalence: args.prevalence,
        seed: args.seed,
    };
    let data = generate_synthetic(&spec).map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let io = |e: ct_core::Error| Failure::new(EXIT_COMPUTE, e);
    let manifest = ct_core::data::write_activations(&args.out_dir, "activations.manifest.json", &data.activations)
        .map_err(io)?;
    let concepts = args.out_dir.join("concepts.csv");
    ct_core::data::write_concepts(&concepts, &data.concepts).map_err(io)?;
    let planted = args.out_dir.join("planted.json");
    let json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    std::fs::write(&planted, json).map_err(|e| Failure::new(EXIT_COMPUTE, e))?;
    println!("{}", manifest.display());
    println!("{}", concepts.display());
    println!("{}", planted.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();

    let outcome = match cli.command {
        Command::Compute(a) => compute(a),
        Command::Report(a) => report_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Query(a) => query_cmd(a),
        Command::Synth(a) => synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
