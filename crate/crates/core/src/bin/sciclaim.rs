//! `sciclaim` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sciclaim::annotation::{AnnotationStore, Export, StoreConfig, TaskSpec};
use sciclaim::claimgen::{CitanceRecord, Claim, ClaimGenConfig, ClaimGenerator, Method};
use sciclaim::dataset::{build_dataset, dataset_stats, scifact_export, DatasetConfig, DocumentRecord};
use sciclaim::eval::{
    default_alpha_metric, exact_agreement_pct, krippendorff_alpha, max_avg_score, negation_table, rouge,
    yield_table, AlphaMetric, EvalMetadata, RatingMatrix, ReferenceClaimSet, RougeVariant,
};
use sciclaim::gateway::{
    CharTrigramModel, EchoGenerator, Gateway, GatewayConfig, GeneratorBackend, HttpBackend, NliBackend,
    PerplexityBackend, ReplayGenerator, TableChunker, TableNli, TablePerplexity,
};
use sciclaim::hashing::seed_from_parts;
use sciclaim::kb::{self, KnowledgeBase, VectorTable};
use sciclaim::kbin::{get_negation, random_entity_baseline, KbinConfig, NegationRecord, METHOD_KBIN, METHOD_RANDOM_ENTITY};
use sciclaim::linker::find_mentions;
use sciclaim::manifest::RunManifest;
use sciclaim::server::{annotation_router, scorer_router, ScorerStubs};
use sciclaim::{jsonl, link, TypeMatch};

#[derive(Debug, Parser)]
#[command(name = "sciclaim", version, about = "Scientific claim generation, negation and evaluation toolkit")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Seed for every random choice; a random seed is drawn and recorded when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism, at most 8).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Knowledge-base maintenance.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Print the dictionary mentions of a text as JSON lines.
    Link {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Build negations for a claims file.
    Negate(NegateArgs),
    /// Generate claims from citances.
    Generate(GenerateArgs),
    /// Pair claims and negations with abstracts.
    BuildDataset(BuildDatasetArgs),
    /// Evaluation metrics and annotation tables.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the annotation service (and optionally the scorer stubs).
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum KbCommand {
    /// Validate a concepts file (and vectors) and write normalized copies.
    Build {
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a concepts file (and vectors) and report problems.
    Validate {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// Base URL of a perplexity scorer.
    #[arg(long, env = "SCICLAIM_PERPLEXITY_URL")]
    perplexity_url: Option<String>,
    /// Base URL of an NLI scorer.
    #[arg(long, env = "SCICLAIM_NLI_URL")]
    nli_url: Option<String>,
    /// Base URL of a generator.
    #[arg(long, env = "SCICLAIM_GENERATOR_URL")]
    generator_url: Option<String>,
    /// Train the in-process trigram perplexity model on this file (one sentence per line).
    #[arg(long, conflicts_with = "perplexity_url")]
    ppl_corpus: Option<PathBuf>,
    /// Perplexity lookup table (JSON lines of {"text", "perplexity"}).
    #[arg(long, conflicts_with_all = ["perplexity_url", "ppl_corpus"])]
    ppl_table: Option<PathBuf>,
    /// NLI lookup table (JSON lines of {"premise", "hypothesis", "entailment", "neutral", "contradiction"});
    /// unknown pairs get the uniform distribution.
    #[arg(long, conflicts_with = "nli_url")]
    nli_table: Option<PathBuf>,
    /// Replay recorded generations instead of echoing inputs.
    #[arg(long, conflicts_with = "generator_url")]
    generator_replay: Option<PathBuf>,
    /// Noun chunk counts (JSON object text -> count).
    #[arg(long)]
    chunk_table: Option<PathBuf>,
    #[arg(long, default_value_t = 30_000, env = "SCICLAIM_TIMEOUT_MS")]
    timeout_ms: u64,
    #[arg(long, default_value_t = 4, env = "SCICLAIM_MAX_IN_FLIGHT")]
    max_in_flight: usize,
    #[arg(long, default_value_t = 32, env = "SCICLAIM_BATCH_SIZE")]
    batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    RandomEntity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TypeMatchArg {
    Intersect,
    Exact,
}

#[derive(Debug, Args)]
struct NegateArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
    /// JSON lines with a "text" (or "claim") field.
    #[arg(long)]
    claims: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    top_n: u64,
    #[arg(long)]
    max_aliases: Option<usize>,
    #[arg(long, value_enum, default_value = "intersect")]
    type_match: TypeMatchArg,
    #[command(flatten)]
    backends: BackendArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Entity,
    Direct,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    citances: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Knowledge base used for mention detection.
    #[arg(long)]
    kb: PathBuf,
    /// Number of direct claims per citance (default: noun chunk count).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    #[command(flatten)]
    backends: BackendArgs,
}

#[derive(Debug, Args)]
struct BuildDatasetArgs {
    #[arg(long)]
    claims: PathBuf,
    /// Output of `negate`; matched to claims by claim text.
    #[arg(long)]
    negations: Option<PathBuf>,
    #[arg(long)]
    citances: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_cited: Option<usize>,
    #[arg(long, default_value_t = 1)]
    nei_claim_weight: usize,
    #[arg(long, default_value_t = 1)]
    nei_negation_weight: usize,
    #[arg(long)]
    max_per_label: Option<usize>,
    /// Also write SciFact-format claims here.
    #[arg(long)]
    scifact_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    R1,
    R2,
    Rl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Nominal,
    Ordinal,
    Interval,
}

#[derive(Debug, Args)]
struct RatingsInput {
    /// JSON rater x item matrix (null for missing cells).
    #[arg(long, conflicts_with = "export")]
    matrix: Option<PathBuf>,
    /// Export document from the annotation service.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Quality criterion to read from an export
    /// (fluency, decontextualized, atomicity, faithfulness); negation exports use entailment.
    #[arg(long)]
    criterion: Option<String>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// ROUGE-1/2/L F1 of one candidate against one reference.
    Rouge {
        #[arg(long)]
        candidate: String,
        #[arg(long)]
        reference: String,
    },
    /// Mean over generated claims of the best ROUGE against the citance's references.
    MaxAvg {
        /// Claims (JSON lines with "citance_id" and "text").
        #[arg(long)]
        claims: PathBuf,
        /// References (JSON lines of {"citance_id", "references"}).
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, value_enum, default_value = "r1")]
        variant: VariantArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Krippendorff's alpha.
    Alpha {
        #[command(flatten)]
        input: RatingsInput,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Share of items on which all raters agree.
    Agreement {
        #[command(flatten)]
        input: RatingsInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-method generation counts and acceptance precision.
    Yield {
        /// Generated claims (JSON lines of Claim).
        #[arg(long)]
        claims: PathBuf,
        /// Quality-protocol export.
        #[arg(long)]
        export: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-method negation entailment counts.
    NegationTable {
        /// Negation-protocol export.
        #[arg(long)]
        export: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long)]
    data_dir: PathBuf,
    /// Task file (JSON lines of quality / negation task specs).
    #[arg(long)]
    tasks: PathBuf,
    /// Registered annotator ids; any id is accepted when omitted.
    #[arg(long, value_delimiter = ',')]
    annotators: Vec<String>,
    /// Directory holding the annotation UI bundle.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Also serve /v1/perplexity, /v1/nli and /v1/generate from in-process stubs.
    #[arg(long)]
    scorers: bool,
    #[command(flatten)]
    backends: BackendArgs,
}

/// Invalid flag combination detected after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// Error chain joined by ": ", skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

struct Ctx {
    seed: u64,
    seed_given: bool,
    jobs: usize,
}

impl Ctx {
    fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new(command, Some(self.seed), self.jobs);
        m.set("seed_given", self.seed_given);
        m
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build()?)
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or_else(|| {
        let s: u64 = rand::random();
        eprintln!("seed: {s}");
        s
    });
    let jobs = match cli.jobs {
        Some(0) => return Err(UsageError("--jobs must be at least 1".into()).into()),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()).min(8),
    };
    let ctx = Ctx {
        seed,
        seed_given: cli.seed.is_some(),
        jobs,
    };
    match cli.command {
        Command::Kb(KbCommand::Build { concepts, vectors, out }) => kb_build(&ctx, &concepts, vectors.as_deref(), &out),
        Command::Kb(KbCommand::Validate { kb, vectors }) => kb_validate(&kb, vectors.as_deref()),
        Command::Link { kb, text } => link_cmd(&kb, &text),
        Command::Negate(args) => negate(&ctx, args),
        Command::Generate(args) => generate(&ctx, args),
        Command::BuildDataset(args) => build(&ctx, args),
        Command::Eval(cmd) => eval(&ctx, cmd),
        Command::Serve(args) => serve(&ctx, args),
    }
}

fn output_dir(out: &Path) -> Result<PathBuf> {
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_kb_at(path: &Path) -> Result<KnowledgeBase> {
    kb::load_kb(path).with_context(|| format!("loading {}", path.display()))
}

fn load_vectors_at(path: &Path) -> Result<VectorTable> {
    kb::load_vectors(path).with_context(|| format!("loading {}", path.display()))
}

fn kb_build(ctx: &Ctx, concepts: &Path, vectors: Option<&Path>, out: &Path) -> Result<()> {
    let kb = load_kb_at(concepts)?;
    fs::create_dir_all(out)?;
    let mut m = ctx.manifest("kb build");
    m.input(concepts)?;
    let kb_out = out.join("concepts.jsonl");
    kb.write_jsonl(io::BufWriter::new(fs::File::create(&kb_out)?))?;
    m.output(&kb_out)?;
    if let Some(v) = vectors {
        let vt = load_vectors_at(v)?;
        m.input(v)?;
        let vt_out = out.join("vectors.csv");
        vt.write_csv(fs::File::create(&vt_out)?)?;
        m.output(&vt_out)?;
    }
    m.write(out)?;
    eprintln!("{} concepts written to {}", kb.len(), kb_out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct KbReport {
    concepts: usize,
    dangling_parents: Vec<(String, String)>,
    vectors: Option<usize>,
    concepts_without_vectors: Vec<String>,
}

fn kb_validate(path: &Path, vectors: Option<&Path>) -> Result<()> {
    let kb = load_kb_at(path)?;
    let mut report = KbReport {
        concepts: kb.len(),
        dangling_parents: kb.dangling_parents(),
        vectors: None,
        concepts_without_vectors: Vec::new(),
    };
    if let Some(v) = vectors {
        let vt = load_vectors_at(v)?;
        report.vectors = Some(vt.len());
        report.concepts_without_vectors = kb
            .concepts()
            .filter(|c| vt.get(&c.cui).is_none())
            .map(|c| c.cui.clone())
            .collect();
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn link_cmd(kb: &Path, text: &str) -> Result<()> {
    let kb = load_kb_at(kb)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    for mut m in find_mentions(&kb, text) {
        m.cui = link(&kb, &m, text);
        writeln!(w, "{}", serde_json::to_string(&m)?)?;
    }
    Ok(())
}

fn make_gateway(b: &BackendArgs, fallback_corpus: &[&str]) -> Result<Gateway> {
    let timeout = Duration::from_millis(b.timeout_ms);
    let perplexity: Arc<dyn PerplexityBackend> = if let Some(url) = &b.perplexity_url {
        Arc::new(HttpBackend::new(url, timeout))
    } else if let Some(p) = &b.ppl_table {
        Arc::new(TablePerplexity::from_jsonl(p)?)
    } else if let Some(p) = &b.ppl_corpus {
        Arc::new(CharTrigramModel::from_corpus_file(p).with_context(|| format!("reading {}", p.display()))?)
    } else {
        Arc::new(CharTrigramModel::train(fallback_corpus.iter().copied()))
    };
    let nli: Arc<dyn NliBackend> = if let Some(url) = &b.nli_url {
        Arc::new(HttpBackend::new(url, timeout))
    } else if let Some(p) = &b.nli_table {
        Arc::new(TableNli::from_jsonl(p)?)
    } else {
        Arc::new(TableNli::default())
    };
    let generator: Arc<dyn GeneratorBackend> = if let Some(url) = &b.generator_url {
        Arc::new(HttpBackend::new(url, timeout))
    } else if let Some(p) = &b.generator_replay {
        Arc::new(ReplayGenerator::from_jsonl(p)?)
    } else {
        Arc::new(EchoGenerator::default())
    };
    if b.batch_size == 0 || b.max_in_flight == 0 {
        return Err(UsageError("--batch-size and --max-in-flight must be at least 1".into()).into());
    }
    let mut gw = Gateway::new(
        perplexity,
        nli,
        generator,
        GatewayConfig {
            batch_size: b.batch_size,
            max_in_flight: b.max_in_flight,
            timeout_ms: b.timeout_ms,
        },
    );
    if let Some(p) = &b.chunk_table {
        let table: BTreeMap<String, usize> = read_json(p)?;
        gw = gw.with_chunker(Arc::new(TableChunker(table)));
    }
    Ok(gw)
}

fn record_backends(m: &mut RunManifest, b: &BackendArgs) -> Result<()> {
    m.set("perplexity_url", &b.perplexity_url);
    m.set("nli_url", &b.nli_url);
    m.set("generator_url", &b.generator_url);
    m.set("gateway", GatewayConfig {
        batch_size: b.batch_size,
        max_in_flight: b.max_in_flight,
        timeout_ms: b.timeout_ms,
    });
    for p in [&b.ppl_corpus, &b.ppl_table, &b.nli_table, &b.generator_replay, &b.chunk_table]
        .into_iter()
        .flatten()
    {
        m.input(p)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ClaimLine {
    #[serde(alias = "claim")]
    text: String,
}

fn negate(ctx: &Ctx, args: NegateArgs) -> Result<()> {
    let kb = load_kb_at(&args.kb)?;
    let vt = load_vectors_at(&args.vectors)?;
    let claims: Vec<ClaimLine> = jsonl::read(&args.claims)?;
    let texts: Vec<&str> = claims.iter().map(|c| c.text.as_str()).collect();
    let gateway = make_gateway(&args.backends, &texts)?;
    let type_match = match args.type_match {
        TypeMatchArg::Intersect => TypeMatch::Intersect,
        TypeMatchArg::Exact => TypeMatch::Exact,
    };
    let cfg = KbinConfig {
        top_n_concepts: args.top_n as usize,
        max_aliases_per_concept: args.max_aliases,
        type_match,
        seed: ctx.seed,
    };
    let method = match args.baseline {
        Some(Baseline::RandomEntity) => METHOD_RANDOM_ENTITY,
        None => METHOD_KBIN,
    };

    let results: Vec<Result<NegationRecord, String>> = ctx.pool()?.install(|| {
        texts
            .par_iter()
            .map(|claim| {
                let cand = match args.baseline {
                    Some(Baseline::RandomEntity) => {
                        let seed = seed_from_parts(&[&ctx.seed.to_string(), claim]);
                        random_entity_baseline(&kb, claim, seed, type_match)
                    }
                    None => get_negation(&kb, &vt, &gateway, claim, &cfg),
                };
                cand.map(|c| NegationRecord::from_candidate(claim, method, &c))
                    .map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut records = Vec::new();
    for (line, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => log::warn!("{}:{}: no negation: {e}", args.claims.display(), line + 1),
        }
    }
    let dir = output_dir(&args.out)?;
    jsonl::write(&args.out, &records)?;

    let mut m = ctx.manifest("negate");
    m.set("method", method);
    m.set("kbin", &cfg);
    record_backends(&mut m, &args.backends)?;
    m.input(&args.kb)?;
    m.input(&args.vectors)?;
    m.input(&args.claims)?;
    m.output(&args.out)?;
    m.write(&dir)?;
    eprintln!("{} of {} claims negated", records.len(), claims.len());
    Ok(())
}

fn generate(ctx: &Ctx, args: GenerateArgs) -> Result<()> {
    let kb = load_kb_at(&args.kb)?;
    let citances: Vec<CitanceRecord> = jsonl::read(&args.citances)?;
    let gateway = make_gateway(&args.backends, &[])?;
    let generator = ClaimGenerator::new(&kb, &gateway, ClaimGenConfig { seed: ctx.seed });
    let method = match args.method {
        MethodArg::Entity => Method::Entity,
        MethodArg::Direct => Method::Direct,
    };
    let k = args.k.map(|k| k as usize);
    let results: Vec<_> = ctx
        .pool()?
        .install(|| citances.par_iter().map(|rec| generator.run(method, rec, k)).collect());
    let mut claims: Vec<Claim> = Vec::new();
    for (line, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => claims.extend(c),
            Err(e) => log::warn!("{}:{}: skipped: {e}", args.citances.display(), line + 1),
        }
    }
    let dir = output_dir(&args.out)?;
    jsonl::write(&args.out, &claims)?;

    let mut m = ctx.manifest("generate");
    m.set("method", method.as_str());
    m.set("k", k);
    record_backends(&mut m, &args.backends)?;
    m.input(&args.kb)?;
    m.input(&args.citances)?;
    m.output(&args.out)?;
    m.write(&dir)?;
    eprintln!("{} claims from {} citances", claims.len(), citances.len());
    Ok(())
}

fn build(ctx: &Ctx, args: BuildDatasetArgs) -> Result<()> {
    let claims: Vec<Claim> = jsonl::read(&args.claims)?;
    let citances: Vec<CitanceRecord> = jsonl::read(&args.citances)?;
    let corpus: Vec<DocumentRecord> = jsonl::read(&args.corpus)?;
    let by_text: HashMap<String, NegationRecord> = match &args.negations {
        Some(p) => jsonl::read::<NegationRecord>(p)?
            .into_iter()
            .map(|n| (n.claim.clone(), n))
            .collect(),
        None => HashMap::new(),
    };
    let negations: HashMap<String, NegationRecord> = claims
        .iter()
        .filter_map(|c| by_text.get(&c.text).map(|n| (c.id.clone(), n.clone())))
        .collect();
    let mut citance_map = HashMap::new();
    for c in citances {
        let id = c.id.clone();
        if citance_map.insert(id.clone(), c).is_some() {
            bail!("{}: duplicate citance id {id:?}", args.citances.display());
        }
    }
    let mut corpus_map = HashMap::new();
    for d in corpus {
        let id = d.doc_id.clone();
        if corpus_map.insert(id.clone(), d).is_some() {
            bail!("{}: duplicate doc_id {id:?}", args.corpus.display());
        }
    }
    let cfg = DatasetConfig {
        max_cited: args.max_cited,
        nei_claim_weight: args.nei_claim_weight,
        nei_negation_weight: args.nei_negation_weight,
        max_per_label: args.max_per_label,
    };
    let dataset = build_dataset(&claims, &negations, &citance_map, &corpus_map, &cfg)?;
    for s in &dataset.report.skipped {
        log::warn!("skipped {} pair for claim {}: doc {} not in corpus", s.label.as_str(), s.claim_id, s.doc_id);
    }

    let dir = output_dir(&args.out)?;
    jsonl::write(&args.out, &dataset.instances)?;
    let mut m = ctx.manifest("build-dataset");
    m.set("dataset", &cfg);
    m.set("report", &dataset.report);
    m.set("stats", dataset_stats(&dataset.instances).labels);
    m.input(&args.claims)?;
    if let Some(p) = &args.negations {
        m.input(p)?;
    }
    m.input(&args.citances)?;
    m.input(&args.corpus)?;
    m.output(&args.out)?;
    if let Some(p) = &args.scifact_out {
        output_dir(p)?;
        jsonl::write(p, &scifact_export(&dataset.instances))?;
        m.output(p)?;
    }
    m.write(&dir)?;
    eprintln!("{} instances", dataset.instances.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalOutput<T: Serialize> {
    result: T,
    metadata: EvalMetadata,
}

fn emit<T: Serialize>(ctx: &Ctx, command: &str, out: Option<&Path>, inputs: &[&Path], result: T, metadata: EvalMetadata) -> Result<()> {
    let doc = EvalOutput { result, metadata };
    match out {
        Some(p) => {
            let dir = output_dir(p)?;
            write_json(p, &doc)?;
            let mut m = ctx.manifest(command);
            for i in inputs {
                m.input(i)?;
            }
            m.output(p)?;
            m.write(&dir)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct GeneratedLine {
    citance_id: String,
    #[serde(alias = "claim")]
    text: String,
}

fn load_ratings(input: &RatingsInput) -> Result<(RatingMatrix, &'static str, Vec<&Path>)> {
    match (&input.matrix, &input.export) {
        (Some(p), None) => Ok((read_json(p)?, "matrix", vec![p.as_path()])),
        (None, Some(p)) => {
            let export: Export = read_json(p)?;
            let m = match input.criterion.as_deref() {
                None | Some("entailment") if export.protocol == sciclaim::annotation::Protocol::Negation => {
                    export.entailment_matrix().1
                }
                Some(c) => export
                    .quality_matrix(c)
                    .ok_or_else(|| UsageError(format!("unknown criterion {c:?}")))?,
                None => return Err(UsageError("--criterion is required for quality exports".into()).into()),
            };
            Ok((m, "export", vec![p.as_path()]))
        }
        _ => Err(UsageError("give exactly one of --matrix or --export".into()).into()),
    }
}

fn eval(ctx: &Ctx, cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Rouge { candidate, reference } => {
            let scores = rouge(&candidate, &reference)?;
            emit(ctx, "eval rouge", None, &[], scores, EvalMetadata::new(None))
        }
        EvalCommand::MaxAvg { claims, refs, variant, out } => {
            let generated: Vec<(String, String)> = jsonl::read::<GeneratedLine>(&claims)?
                .into_iter()
                .map(|g| (g.citance_id, g.text))
                .collect();
            let refs_map: HashMap<String, ReferenceClaimSet> = jsonl::read::<ReferenceClaimSet>(&refs)?
                .into_iter()
                .map(|r| (r.citance_id.clone(), r))
                .collect();
            let v = match variant {
                VariantArg::R1 => RougeVariant::R1,
                VariantArg::R2 => RougeVariant::R2,
                VariantArg::Rl => RougeVariant::Rl,
            };
            let score = max_avg_score(&generated, &refs_map, v)?;
            let result = serde_json::json!({"variant": v, "claims": generated.len(), "score": score});
            emit(ctx, "eval max-avg", out.as_deref(), &[&claims, &refs], result, EvalMetadata::new(None))
        }
        EvalCommand::Alpha { input, metric, out } => {
            let (matrix, _, inputs) = load_ratings(&input)?;
            let metric = match metric {
                Some(MetricArg::Nominal) => AlphaMetric::Nominal,
                Some(MetricArg::Ordinal) => AlphaMetric::Ordinal,
                Some(MetricArg::Interval) => AlphaMetric::Interval,
                None => default_alpha_metric(input.criterion.as_deref().unwrap_or("")),
            };
            let alpha = krippendorff_alpha(&matrix, metric)?;
            emit(ctx, "eval alpha", out.as_deref(), &inputs, alpha, EvalMetadata::new(Some(metric)))
        }
        EvalCommand::Agreement { input, out } => {
            let (matrix, _, inputs) = load_ratings(&input)?;
            let pct = exact_agreement_pct(&matrix)?;
            let result = serde_json::json!({"exact_agreement": pct});
            emit(ctx, "eval agreement", out.as_deref(), &inputs, result, EvalMetadata::new(None))
        }
        EvalCommand::Yield { claims, export, out } => {
            let mut generated: BTreeMap<String, usize> = BTreeMap::new();
            for c in jsonl::read::<Claim>(&claims)? {
                *generated.entry(c.method.as_str().to_string()).or_default() += 1;
            }
            let ex: Export = read_json(&export)?;
            let rows = yield_table(&generated, &ex.majority_judgments());
            emit(ctx, "eval yield", out.as_deref(), &[&claims, &export], rows, EvalMetadata::new(None))
        }
        EvalCommand::NegationTable { export, out } => {
            let ex: Export = read_json(&export)?;
            let rows = negation_table(&ex.entailment_ratings());
            emit(ctx, "eval negation-table", out.as_deref(), &[&export], rows, EvalMetadata::new(None))
        }
    }
}

fn serve(ctx: &Ctx, args: ServeArgs) -> Result<()> {
    let tasks: Vec<TaskSpec> = jsonl::read(&args.tasks)?;
    let config = StoreConfig {
        seed: ctx.seed,
        annotators: args.annotators.iter().cloned().collect::<BTreeSet<_>>(),
    };
    let store = Arc::new(AnnotationStore::open(&args.data_dir, tasks, config)?);
    let mut router = annotation_router(store, args.static_dir.clone());
    if args.scorers {
        let gw_corpus: Vec<&str> = Vec::new();
        let b = &args.backends;
        let perplexity: Arc<dyn PerplexityBackend> = match (&b.ppl_table, &b.ppl_corpus) {
            (Some(p), _) => Arc::new(TablePerplexity::from_jsonl(p)?),
            (None, Some(p)) => Arc::new(CharTrigramModel::from_corpus_file(p)?),
            (None, None) => Arc::new(CharTrigramModel::train(gw_corpus)),
        };
        let nli: Arc<dyn NliBackend> = match &b.nli_table {
            Some(p) => Arc::new(TableNli::from_jsonl(p)?),
            None => Arc::new(TableNli::default()),
        };
        let generator: Arc<dyn GeneratorBackend> = match &b.generator_replay {
            Some(p) => Arc::new(ReplayGenerator::from_jsonl(p)?),
            None => Arc::new(EchoGenerator::default()),
        };
        router = router.merge(scorer_router(ScorerStubs {
            perplexity,
            nli,
            generator,
        }));
    }

    let mut m = ctx.manifest("serve");
    m.set("annotators", &args.annotators);
    m.set("scorers", args.scorers);
    m.input(&args.tasks)?;
    m.write(&args.data_dir)?;

    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| UsageError(format!("bad --host/--port: {e}")))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(ctx.jobs)
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
