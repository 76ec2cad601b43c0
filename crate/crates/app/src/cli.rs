use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::api::answer;
use crate::server::{serve, ServeState};
use crate::store::{load_docs, DocStore};
use formquery_core::data::{
    convert_funsd, gen_corpus, load_document, serialize_document, FormStyle, QueryMode, SynthSpec,
};
use formquery_core::learn::{
    pairs_to_map, parse_overrides, Checkpoint, Init, Phase, TrainConfig, Trainer,
};
use formquery_core::retrieve::{run_eval, EvalOptions, MatchOptions, RetrieveOptions};

#[derive(Parser, Debug)]
#[command(
    name = "formquery",
    version,
    about = "Query-driven value retrieval from forms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic annotated corpus as fqdoc/1 files.
    Gen(GenArgs),
    /// Masked-LM pre-training on document layouts.
    Pretrain(TrainArgs),
    /// Train the value retriever.
    Finetune(TrainArgs),
    /// Exact-match F1 over an annotated directory.
    Eval(EvalArgs),
    /// Answer one query on one document.
    Retrieve(RetrieveArgs),
    /// Convert a FUNSD annotation file to fqdoc/1.
    ConvertFunsd(ConvertArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "fax")]
    pub style: FormStyle,
    /// Annotated fields per form.
    #[arg(long, default_value_t = 8)]
    pub fields: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of fqdoc/1 training documents.
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the final checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Initial weights (pre-trained checkpoint).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Continue the run that wrote this checkpoint.
    #[arg(long, conflicts_with = "ckpt")]
    pub resume: Option<PathBuf>,
    /// Run config: JSON object or key=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra key=value overrides, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub query_mode: Option<QueryMode>,
    /// Held-out documents evaluated every `eval_every` steps.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "exact-key")]
    pub query_mode: QueryMode,
    /// Abstain when the best candidate scores below this.
    #[arg(long)]
    pub min_score: Option<f64>,
    #[arg(long)]
    pub case_fold: bool,
    #[arg(long)]
    pub collapse_whitespace: bool,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// One fqdoc/1 document.
    #[arg(long)]
    pub doc: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the input file stem.
    #[arg(long)]
    pub doc_id: Option<String>,
    /// Page size as WIDTHxHEIGHT pixels; inferred from word extents if absent.
    #[arg(long, value_parser = parse_size)]
    pub page_size: Option<(u32, u32)>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of fqdoc/1 documents (and optional same-named PNGs).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Static files (the built UI) served under `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w = w.parse().map_err(|e| format!("width: {e}"))?;
    let h = h.parse().map_err(|e| format!("height: {e}"))?;
    Ok((w, h))
}

fn train_config(args: &TrainArgs, phase: Phase) -> Result<TrainConfig> {
    let mut map = match &args.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_overrides(&text)?
        }
        None => Default::default(),
    };
    map.extend(pairs_to_map(&args.overrides)?);
    map.insert("phase".into(), serde_json::to_value(phase)?);
    let mut cfg = TrainConfig::from_map(map)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.query_mode {
        cfg.query_mode = mode;
    }
    Ok(cfg)
}

fn run_training(args: &TrainArgs, phase: Phase) -> Result<()> {
    let cfg = train_config(args, phase)?;
    let docs = load_docs(&args.data)?;
    let init = match (&args.ckpt, &args.resume) {
        (Some(p), _) => Init::Pretrained(Checkpoint::load(p)?),
        (_, Some(p)) => Init::Resume(Checkpoint::load(p)?),
        _ => Init::Fresh,
    };
    let mut trainer = match phase {
        Phase::Pretrain => Trainer::pretrain(&docs, init, cfg)?,
        Phase::Finetune => Trainer::finetune(&docs, init, cfg)?,
    };
    if let Some(dir) = &args.eval_data {
        trainer.set_eval_set(load_docs(dir)?);
    }
    log::info!(
        "{phase}: {} examples, {} steps",
        trainer.num_examples(),
        trainer.total_steps()
    );
    let ckpt = trainer.run()?;
    ckpt.save(&args.out)?;
    if let Some(last) = trainer.log().last() {
        eprintln!(
            "{phase} done: step {} loss {:.6} -> {}",
            last.step,
            last.loss,
            args.out.display()
        );
    }
    Ok(())
}

fn write_json(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let spec = SynthSpec {
                fields: a.fields,
                style: a.style,
                ..Default::default()
            };
            std::fs::create_dir_all(&a.out)?;
            for doc in gen_corpus(&spec, a.count, a.seed)? {
                write_json(
                    &a.out.join(format!("{}.json", doc.doc_id)),
                    &serialize_document(&doc)?,
                )?;
            }
            eprintln!("wrote {} documents to {}", a.count, a.out.display());
        }
        Command::Pretrain(a) => run_training(&a, Phase::Pretrain)?,
        Command::Finetune(a) => run_training(&a, Phase::Finetune)?,
        Command::Eval(a) => {
            let ckpt = Checkpoint::load(&a.ckpt)?;
            let docs = load_docs(&a.data)?;
            let opts = EvalOptions {
                retrieve: RetrieveOptions {
                    max_len: ckpt.params.config.max_len,
                    ..Default::default()
                },
                matching: MatchOptions {
                    case_fold: a.case_fold,
                    collapse_whitespace: a.collapse_whitespace,
                },
                min_score: a.min_score,
            };
            let report = run_eval(&ckpt.params, &ckpt.vocab, &docs, a.query_mode, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Retrieve(a) => {
            let ckpt = Checkpoint::load(&a.ckpt)?;
            let bytes =
                std::fs::read(&a.doc).with_context(|| format!("reading {}", a.doc.display()))?;
            let doc = load_document(&bytes)?;
            let resp = answer(&ckpt, &doc, &a.query, a.top_k)?;
            println!("{}", serde_json::to_string(&resp)?);
        }
        Command::ConvertFunsd(a) => {
            let bytes = std::fs::read(&a.input)
                .with_context(|| format!("reading {}", a.input.display()))?;
            let id = match a.doc_id {
                Some(id) => id,
                None => a
                    .input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "funsd".into()),
            };
            let doc = convert_funsd(&bytes, &id, a.page_size)?;
            write_json(&a.out, &serialize_document(&doc)?)?;
        }
        Command::Serve(a) => {
            let ckpt = Checkpoint::load(&a.ckpt)?;
            let store = DocStore::open(&a.data)?;
            if store.docs.is_empty() {
                bail!("no documents in {}", a.data.display());
            }
            let addr: SocketAddr = format!("{}:{}", a.host, a.port)
                .parse()
                .context("invalid host/port")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(addr, ServeState::new(ckpt, store), a.static_dir))?;
        }
    }
    Ok(())
}
