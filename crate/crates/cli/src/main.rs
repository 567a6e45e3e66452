use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use refract_core::dataset::{load_jsonl, load_task_spec, Demonstration, TaskSpec};
use refract_core::harness::{
    emit_report, load_result, run_experiment, ExperimentConfig, ModelSpec, DELTAS_MD, RESULTS_FILE,
};
use refract_core::model::{CachedModel, HttpModelClient, MockModel, ModelClient, ResponseCache};
use refract_core::prompt::{render_prompt, PromptTemplate};
use refract_core::refract::{
    assemble_refract_context, read_records, records_by_id, write_records, zero_shot_annotate, AnnotateSettings,
    IclContext, RefractOptions,
};
use refract_core::retrieval::{
    build_tfidf_index, embed_query, load_sidecar, retrieve_dense, retrieve_random, retrieve_tfidf, write_sidecar,
    DenseIndex, HttpEmbedder, RetrievalRequest, RetrieverKind,
};
use refract_core::tokenize::TokenizerConfig;

#[derive(Parser)]
#[command(
    name = "refract",
    version,
    about = "Select, order and annotate in-context demonstrations"
)]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PoolArgs {
    /// Demonstration pool (JSONL).
    #[arg(long)]
    pool: PathBuf,
    /// Task spec (JSON).
    #[arg(long)]
    task: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build a TF-IDF index over a pool and print its summary.
    Index {
        #[command(flatten)]
        data: PoolArgs,
        /// Also write the index as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep case when tokenizing.
        #[arg(long)]
        cased: bool,
    },
    /// Validate an embedding sidecar and check it covers a pool.
    EmbedImport {
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long, requires = "task")]
        pool: Option<PathBuf>,
        #[arg(long)]
        task: Option<PathBuf>,
        /// Write the normalized vectors to a new sidecar.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Annotate a pool with zero-shot predictions.
    Zeroshot {
        #[command(flatten)]
        data: PoolArgs,
        /// Output records (JSONL).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        mt_bleu_threshold: f64,
        #[arg(long, default_value_t = 1.0)]
        seq_f1_threshold: f64,
        #[arg(long, default_value_t = 4)]
        max_inflight: usize,
        /// Record failed calls as challenging instead of aborting.
        #[arg(long)]
        partial_ok: bool,
    },
    /// Print the context selected for one query.
    Select {
        #[command(flatten)]
        data: PoolArgs,
        #[arg(long)]
        query: String,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Retriever::Tfidf)]
        retriever: Retriever,
        #[arg(long)]
        balance: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Annotate with zero-shot guesses and repeat challenging demos.
        #[arg(long, requires = "records")]
        refract: bool,
        /// Zero-shot records from `zeroshot`.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        no_repeat: bool,
        #[arg(long)]
        max_repeats: Option<usize>,
        /// Embedding sidecar for dense and multitask retrieval.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Endpoint that embeds the query for dense and multitask retrieval.
        #[arg(long)]
        embed_endpoint: Option<String>,
        /// Print the rendered prompt instead of one JSON line per entry.
        #[arg(long)]
        render: bool,
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-render delta tables from a results.json.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Defaults to the directory holding the results file.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Model backend as JSON, inline or a file path, e.g.
    /// '{"backend": "mock", "mode": "echo_gold"}'.
    #[arg(long, default_value = r#"{"backend": "mock", "mode": "echo_gold"}"#)]
    model: String,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Retriever {
    Random,
    Tfidf,
    Dense,
    Multitask,
}

impl From<Retriever> for RetrieverKind {
    fn from(r: Retriever) -> Self {
        match r {
            Retriever::Random => RetrieverKind::Random,
            Retriever::Tfidf => RetrieverKind::Tfidf,
            Retriever::Dense => RetrieverKind::Dense,
            Retriever::Multitask => RetrieverKind::Multitask,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Index { data, out, cased } => index(&data, out.as_deref(), cased),
        Command::EmbedImport {
            sidecar,
            pool,
            task,
            out,
        } => embed_import(&sidecar, pool.as_deref().zip(task.as_deref()), out.as_deref()),
        Command::Zeroshot {
            data,
            out,
            model,
            template,
            mt_bleu_threshold,
            seq_f1_threshold,
            max_inflight,
            partial_ok,
        } => {
            let options = RefractOptions {
                mt_bleu_threshold,
                seq_f1_threshold,
                ..RefractOptions::default()
            };
            let settings = AnnotateSettings {
                max_inflight,
                partial_ok,
                ..AnnotateSettings::default()
            };
            zeroshot(&data, &out, &model, template.as_deref(), &options, &settings)
        }
        Command::Select {
            data,
            query,
            k,
            retriever,
            balance,
            seed,
            refract,
            records,
            no_repeat,
            max_repeats,
            embeddings,
            embed_endpoint,
            render,
            template,
        } => {
            let (task, pool) = load_pool(&data)?;
            let request = RetrievalRequest::new(query.clone(), k).seed(seed).balanced(balance);
            let kind = RetrieverKind::from(retriever);
            let retrieved = match kind {
                RetrieverKind::Random => retrieve_random(&pool, &request, &task)?,
                RetrieverKind::Tfidf => {
                    retrieve_tfidf(&build_tfidf_index(&pool, TokenizerConfig::default())?, &request, &task)?
                }
                RetrieverKind::Dense | RetrieverKind::Multitask => {
                    let sidecar = embeddings.context("--embeddings is required for dense retrieval")?;
                    let endpoint = embed_endpoint.context("--embed-endpoint is required to embed the query")?;
                    let store = load_sidecar(&sidecar)?;
                    let index = DenseIndex::new(&store, &pool, kind)?;
                    let embedder = HttpEmbedder::new(endpoint, std::env::var("MODEL_API_KEY").ok());
                    let prefix = (kind == RetrieverKind::Multitask).then_some(&task);
                    let q = embed_query(&embedder, &query, prefix)?;
                    retrieve_dense(&index, &q, &request, &task)?
                }
            };
            if retrieved.clipped {
                eprintln!("warning: k = {k} exceeds pool size {}; clipped", pool.len());
            }
            let context = match (refract, records) {
                (true, Some(path)) => {
                    let options = RefractOptions {
                        repeat_challenging: !no_repeat,
                        max_repeats,
                        ..RefractOptions::default()
                    };
                    let records = records_by_id(read_records(&path)?);
                    assemble_refract_context(&retrieved.demos, &records, &options)?
                }
                _ => IclContext::plain(&retrieved.demos),
            };
            if render {
                let template = load_template(template.as_deref())?;
                println!("{}", render_prompt(&context, query.as_str(), &template)?);
            } else {
                for e in &context.entries {
                    let line = serde_json::json!({
                        "id": e.demo.id,
                        "score": e.score,
                        "is_repeat": e.is_repeat,
                        "challenging": e.challenging,
                        "zero_shot": e.zero_shot,
                        "input": e.demo.input,
                        "output": e.demo.output_text(),
                    });
                    println!("{line}");
                }
            }
            Ok(())
        }
        Command::Run { config } => run(&config),
        Command::Report { results, out_dir } => {
            let result = load_result(&results)?;
            let dir = out_dir.unwrap_or_else(|| results.parent().map(Path::to_path_buf).unwrap_or_default());
            for p in emit_report(&result, &dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn load_pool(data: &PoolArgs) -> Result<(TaskSpec, Vec<Demonstration>)> {
    let task = load_task_spec(&data.task)?;
    let pool = load_jsonl(&data.pool, &task)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(d) = pool.iter().find(|d| !seen.insert(d.id.as_str())) {
        bail!("duplicate demonstration id {:?} in {}", d.id, data.pool.display());
    }
    Ok((task, pool))
}

fn load_template(path: Option<&Path>) -> Result<PromptTemplate> {
    Ok(match path {
        Some(p) => PromptTemplate::load(p)?,
        None => PromptTemplate::default(),
    })
}

fn index(data: &PoolArgs, out: Option<&Path>, cased: bool) -> Result<()> {
    let (_, pool) = load_pool(data)?;
    let tokenizer = if cased {
        TokenizerConfig::cased()
    } else {
        TokenizerConfig::default()
    };
    let index = build_tfidf_index(&pool, tokenizer)?;
    println!("documents: {}", index.doc_count());
    println!("vocabulary: {}", index.vocabulary_len());
    if let Some(out) = out {
        let json = serde_json::to_string(&index)?;
        std::fs::write(out, json + "\n").with_context(|| format!("writing {}", out.display()))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn embed_import(sidecar: &Path, pool: Option<(&Path, &Path)>, out: Option<&Path>) -> Result<()> {
    let store = load_sidecar(sidecar)?;
    println!("vectors: {}", store.len());
    println!("dim: {}", store.dim());
    if let Some((pool, task)) = pool {
        let (_, pool) = load_pool(&PoolArgs {
            pool: pool.to_path_buf(),
            task: task.to_path_buf(),
        })?;
        let missing: Vec<&str> = pool
            .iter()
            .filter(|d| store.get(&d.id).is_none())
            .map(|d| d.id.as_str())
            .collect();
        if !missing.is_empty() {
            bail!(
                "{} pool demonstrations lack vectors, first {:?}",
                missing.len(),
                missing[0]
            );
        }
        println!("covers all {} pool demonstrations", pool.len());
    }
    if let Some(out) = out {
        write_sidecar(&store, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn parse_model(spec: &str) -> Result<ModelSpec> {
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        std::fs::read_to_string(spec).with_context(|| format!("reading model spec {spec}"))?
    };
    serde_json::from_str(&text).context("parsing model spec")
}

fn zeroshot(
    data: &PoolArgs,
    out: &Path,
    model: &ModelArgs,
    template: Option<&Path>,
    options: &RefractOptions,
    settings: &AnnotateSettings,
) -> Result<()> {
    let (task, pool) = load_pool(data)?;
    let template = load_template(template)?;
    let client: Box<dyn ModelClient> = match parse_model(&model.model)? {
        ModelSpec::Mock { model_id, config } => Box::new(MockModel::new(model_id, config)),
        ModelSpec::Http(spec) => Box::new(HttpModelClient::new(spec.resolve(settings.max_inflight)?)),
    };
    let cache = model.cache_dir.as_ref().map(ResponseCache::new);
    let cached = CachedModel::new(client.as_ref(), cache.as_ref());
    let records = zero_shot_annotate(&pool, &task, &cached, &template, options, settings)?;
    write_records(out, &records)?;
    let hard = records.iter().filter(|r| r.challenging).count();
    println!(
        "{} records, {hard} challenging, {} model calls",
        records.len(),
        cached.backend_calls()
    );
    Ok(())
}

fn run(config_path: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let (result, stats) = run_experiment(&config)?;
    let out_dir = config.resolve(&config.out_dir);
    emit_report(&result, &out_dir)?;
    log::info!("{} prompts, {} backend calls", stats.prompts, stats.backend_calls);
    eprintln!("backend calls: {}", stats.backend_calls);
    let md = std::fs::read_to_string(out_dir.join(DELTAS_MD))?;
    print!("{md}");
    println!("results: {}", out_dir.join(RESULTS_FILE).display());
    Ok(())
}
