use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lineage_cli::commands::{self, ExportFormat};
use lineage_cli::settings::IndexKind;
use lineage_cli::{server, CliError, Settings};
use lineage_core::analytics::{ReportFormat, SimilarityStatistic};
use lineage_core::embed::ProviderKind;
use serde::Serialize;

/// Sentence-level quotation and influence tracing over a historical corpus.
#[derive(Debug, Parser)]
#[command(name = "lineage", version)]
struct Cli {
    /// Config file (TOML). Defaults to ./lineage.toml when present.
    #[arg(long, global = true, env = "LINEAGE_CONFIG")]
    config: Option<PathBuf>,
    /// Corpus store directory.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Search index file.
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    /// Stored embeddings file.
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add the documents of a JSON-lines file to the corpus store.
    Ingest { input: PathBuf },
    /// Embed every filtered corpus sentence.
    Embed(ProviderArgs),
    /// Build or inspect the search index.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Match every sentence of a focus book against the corpus.
    Query {
        focus: String,
        #[arg(long)]
        floor: Option<f32>,
        #[arg(long, value_enum, default_value_t)]
        format: ExportFormat,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Write the influence report of a focus book.
    Report {
        focus: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "bundle")]
        format: ReportKind,
        #[arg(long, value_enum)]
        statistic: Option<Statistic>,
        #[arg(long)]
        floor: Option<f32>,
        #[arg(long)]
        min_matching_sentences: Option<usize>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Add graph-structure scores to the matches of influenced books.
    Ensemble {
        focus: String,
        /// JSON-lines file of `{sentence_id, graph}` records.
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        floor: Option<f32>,
        /// Weight of the cosine score; the structural weight is 1 minus this.
        #[arg(long)]
        semantic_weight: Option<f64>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Serve the JSON API (and optional static UI).
    Serve {
        #[arg(long, env = "LINEAGE_PORT")]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Write a synthetic demonstration corpus with planted quotations.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
enum IndexAction {
    Build {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        n_lists: Option<usize>,
        #[arg(long)]
        n_probe: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    Info {
        /// Print JSON instead of key/value lines.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args, Default)]
struct ProviderArgs {
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    #[arg(long, env = "LINEAGE_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Provider {
    Hash,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Flat,
    Ivf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportKind {
    Json,
    Svg,
    Bundle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Statistic {
    Mean,
    Max,
    NormalizedCount,
}

impl ProviderArgs {
    fn apply(&self, s: &mut Settings) {
        if let Some(p) = self.provider {
            s.embedding.provider_kind = match p {
                Provider::Hash => ProviderKind::HashTest,
                Provider::Remote => ProviderKind::RemoteService,
            };
        }
        if let Some(e) = &self.endpoint {
            s.embedding.endpoint = Some(e.clone());
        }
        if let Some(d) = self.dimension {
            s.embedding.dimension = d;
        }
        if let Some(b) = self.batch_size {
            s.embedding.batch_size = b;
        }
    }
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = Settings::load(cli.config.as_deref())?;
    s.apply_env(|k| std::env::var(k).ok())?;
    if let Some(p) = &cli.corpus {
        s.corpus_dir = p.clone();
    }
    if let Some(p) = &cli.index {
        s.index_path = p.clone();
    }
    if let Some(p) = &cli.embeddings {
        s.embeddings_path = p.clone();
    }
    Ok(s)
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("summary serializes"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut s = settings(&cli)?;
    match cli.command {
        Command::Ingest { input } => print_json(&commands::ingest(&s, &input)?),
        Command::Embed(provider) => {
            provider.apply(&mut s);
            print_json(&commands::embed(&s)?);
        }
        Command::Index { action: IndexAction::Build { mode, n_lists, n_probe, seed, provider } } => {
            provider.apply(&mut s);
            if let Some(m) = mode {
                s.index.mode = match m {
                    Mode::Flat => IndexKind::Flat,
                    Mode::Ivf => IndexKind::Ivf,
                };
            }
            s.index.n_lists = n_lists.unwrap_or(s.index.n_lists);
            s.index.n_probe = n_probe.unwrap_or(s.index.n_probe);
            s.index.seed = seed.unwrap_or(s.index.seed);
            print_json(&commands::build_index(&s)?);
        }
        Command::Index { action: IndexAction::Info { json } } => {
            let info = commands::index_info(&s)?;
            if json {
                print_json(&info);
            } else {
                println!("dimension: {}", info.dimension);
                println!("count: {}", info.count);
                println!("mode: {}", serde_json::to_value(info.mode).unwrap().as_str().unwrap_or_default());
                if let Some(p) = info.ivf {
                    println!("ivf: n_lists={} n_probe={} seed={}", p.n_lists, p.n_probe, p.seed);
                }
                println!("format_version: {}", info.format_version);
                println!("model: {}", info.manifest.model);
                println!("corpus_hash: {}", info.manifest.corpus_hash);
                println!("built_at_unix: {}", info.manifest.built_at_unix);
            }
        }
        Command::Query { focus, floor, format, out, provider } => {
            provider.apply(&mut s);
            s.matching.floor = floor.unwrap_or(s.matching.floor);
            let set = commands::query(&s, &focus)?;
            commands::write_matches(&set, format, out.as_deref())?;
        }
        Command::Report { focus, out, format, statistic, floor, min_matching_sentences, provider } => {
            provider.apply(&mut s);
            s.matching.floor = floor.unwrap_or(s.matching.floor);
            if let Some(st) = statistic {
                s.report.statistic = match st {
                    Statistic::Mean => SimilarityStatistic::Mean,
                    Statistic::Max => SimilarityStatistic::Max,
                    Statistic::NormalizedCount => SimilarityStatistic::NormalizedCount,
                };
            }
            s.report.min_matching_sentences = min_matching_sentences.unwrap_or(s.report.min_matching_sentences);
            let format = match format {
                ReportKind::Json => ReportFormat::Json,
                ReportKind::Svg => ReportFormat::Svg,
                ReportKind::Bundle => ReportFormat::Bundle,
            };
            let report = commands::report(&s, &focus, format)?;
            report.bundle.write_to(&out)?;
            print_json(&serde_json::json!({
                "focus_doc_id": focus,
                "out": out,
                "files": report.bundle.files.keys().collect::<Vec<_>>(),
                "matches": report.match_set.records.len(),
            }));
        }
        Command::Ensemble { focus, graphs, format, out, floor, semantic_weight, restarts, seed, provider } => {
            provider.apply(&mut s);
            s.matching.floor = floor.unwrap_or(s.matching.floor);
            if let Some(w) = semantic_weight {
                s.ensemble.semantic_weight = w;
                s.ensemble.structural_weight = 1.0 - w;
            }
            s.ensemble.restarts = restarts.unwrap_or(s.ensemble.restarts);
            s.ensemble.seed = seed.unwrap_or(s.ensemble.seed);
            let (set, run) = commands::ensemble(&s, &focus, &graphs)?;
            commands::write_ensemble(&set, &run, format, out.as_deref())?;
            eprintln!(
                "{} records, {} influenced books, {} pairs scored, {} missing a graph",
                run.rows.len(),
                run.influenced.len(),
                run.pairs_scored,
                run.pairs_missing_graph
            );
        }
        Command::Serve { port, bind, static_dir, provider } => {
            provider.apply(&mut s);
            s.serve.port = port.unwrap_or(s.serve.port);
            s.serve.bind = bind.unwrap_or(s.serve.bind);
            if static_dir.is_some() {
                s.serve.static_dir = static_dir;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("<runtime>", e))?;
            rt.block_on(server::serve(s))?;
        }
        Command::Synth { out, seed } => print_json(&commands::synth(seed, &out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::Usage(e.kind().to_string());
            eprintln!("{}", serde_json::to_string(&err.line()).expect("error line serializes"));
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.line()).expect("error line serializes"));
            ExitCode::from(e.exit_code())
        }
    }
}
