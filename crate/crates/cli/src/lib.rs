//! The `groundchat` command line and HTTP service.

pub mod server;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use groundchat::config::Profile;
use groundchat::corpus::{load_conversations, save_conversations, Conversation, Prepared};
use groundchat::curation::{pick, read_splits, select_grounded_devtest, write_splits};
use groundchat::decoding::{align_references, best, mert_tune, read_nbest, read_references, write_nbest, RerankWeights};
use groundchat::experiment::{decode_nbest, write_references, DataDir, PreparedData};
use groundchat::facts::{load_facts, FactsCollection};
use groundchat::metrics::{corpus_bleu, distinct_n, perplexity};
use groundchat::model::{CheckpointMeta, GroundedModel};
use groundchat::pipeline::{ChatModels, ChatTurnResult};
use groundchat::synth::{generate, SynthConfig};
use groundchat::text::{hex_digest, Vocabulary};
use groundchat::training::{eval_examples, train_reverse, train_variant, LogRecord, TrainOutcome, Variant};

#[derive(Parser, Debug)]
#[command(name = "groundchat", version, about = "Knowledge-grounded neural conversation")]
pub struct Cli {
    /// Hyperparameter profile.
    #[arg(long, global = true, default_value = "desk")]
    pub profile: String,
    /// Profile file; defaults to $GROUNDCHAT_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Build the vocabulary of a data directory.
    BuildVocab {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Index a facts file and print one summary line per entity.
    IndexFacts {
        #[arg(long)]
        facts: PathBuf,
    },
    /// Select grounded dev and test conversations.
    MakeSplits {
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        conversations: PathBuf,
        /// Split manifest to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write grounded.{train,dev,test}.jsonl into this directory.
        #[arg(long)]
        write_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one system variant, or the reverse model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_variant, required_unless_present = "reverse")]
        variant: Option<Variant>,
        /// Train the response-to-source model instead.
        #[arg(long, conflicts_with = "variant")]
        reverse: bool,
        #[arg(long)]
        out: PathBuf,
        /// Training log, one JSON record per line.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Write N-best lists for one part of the data.
    Decode {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        part: PartArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reverse_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the references of the decoded conversations.
        #[arg(long)]
        refs_out: Option<PathBuf>,
    },
    /// Tune the reranking weights on N-best lists.
    Mert {
        #[arg(long)]
        nbest: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// BLEU and distinct-n of reranked N-best lists, and optionally perplexity.
    Eval {
        #[arg(long)]
        nbest: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        /// Reranking weights; defaults to λ = γ = 0.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Model and data for perplexity.
        #[arg(long, requires = "vocab", requires = "dir")]
        model: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        dir: Option<PathBuf>,
        #[command(flatten)]
        part: PartArgs,
    },
    /// Interactive chat on stdin.
    Chat {
        #[command(flatten)]
        artifacts: ArtifactArgs,
    },
    /// Serve the chat API.
    Serve {
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Data directory.
    #[arg(long = "dir")]
    pub dir: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PartArgs {
    #[arg(long, value_enum, default_value_t = DatasetArg::Grounded)]
    pub dataset: DatasetArg,
    #[arg(long, value_enum, default_value_t = PartArg::Test)]
    pub part: PartArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetArg {
    General,
    Grounded,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartArg {
    Train,
    Dev,
    Test,
}

#[derive(Args, Debug, Clone)]
pub struct ArtifactArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub reverse_model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub facts: PathBuf,
    /// Reranking weights; defaults to λ = γ = 0.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: groundchat::Error| e.to_string())
}

impl PartArgs {
    fn select<'a>(&self, data: &'a PreparedData, convs: &'a DataDir) -> (&'a [Prepared], &'a [Conversation]) {
        let (p, c) = match self.dataset {
            DatasetArg::General => (&data.general, &convs.general),
            DatasetArg::Grounded => (&data.grounded, &convs.grounded),
        };
        match self.part {
            PartArg::Train => (&p.train, &c.train),
            PartArg::Dev => (&p.dev, &c.dev),
            PartArg::Test => (&p.test, &c.test),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let profile = Profile::load(&cli.profile, cli.config.as_deref())?;
    match cli.command {
        Command::Synth { out, seed } => {
            let corpus = generate(&SynthConfig {
                seed,
                ..SynthConfig::default()
            });
            corpus.write_dir(&out)?;
            info!("wrote synthetic corpus to {}", out.display());
        }
        Command::BuildVocab { dir, out } => {
            let (dir, _) = load_data(&dir)?;
            let vocab = dir.vocabulary(profile.vocab_capacity)?;
            vocab.save(&out)?;
            info!("{} tokens written to {}", vocab.len(), out.display());
        }
        Command::IndexFacts { facts } => {
            let collection = load_facts(&facts)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for key in collection.entity_keys() {
                let index = collection.entity_index(key).expect("listed entity");
                let line = serde_json::json!({"entity": key, "facts": index.n_docs()});
                writeln!(w, "{line}")?;
            }
        }
        Command::MakeSplits {
            facts,
            conversations,
            out,
            write_dir,
            seed,
        } => {
            let collection = load_facts(&facts)?;
            let convs = read_convs(&conversations)?;
            let splits = select_grounded_devtest(&convs, &collection, &profile.curation, profile.delta, seed)?;
            write_splits(BufWriter::new(File::create(&out)?), &splits)?;
            info!(
                "train {} / dev {} / test {}",
                splits.train.len(),
                splits.dev.len(),
                splits.test.len()
            );
            if let Some(dir) = write_dir {
                std::fs::create_dir_all(&dir)?;
                let reread = read_splits(BufReader::new(File::open(&out)?))?;
                for (part, ids) in [("train", &reread.train), ("dev", &reread.dev), ("test", &reread.test)] {
                    let chosen: Vec<Conversation> = pick(&convs, ids)?.into_iter().cloned().collect();
                    save_conversations(dir.join(format!("grounded.{part}.jsonl")), &chosen)?;
                }
            }
        }
        Command::Train {
            data,
            variant,
            reverse,
            out,
            log,
            seed,
            max_steps,
        } => {
            let mut cfg = profile.train.clone();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = max_steps {
                cfg.max_steps = m;
            }
            let (_, vocab, prepared) = load_prepared(&data, profile.top_k)?;
            let model_cfg = profile.model.model_config(vocab.len(), true);
            let mut log_w = log.map(|p| File::create(p).map(BufWriter::new)).transpose()?;
            let mut observe = |rec: &LogRecord, _: &GroundedModel| -> groundchat::Result<()> {
                if let Some(w) = log_w.as_mut() {
                    serde_json::to_writer(&mut *w, rec)?;
                    w.write_all(b"\n")?;
                }
                if let Some(ppl) = rec.dev_perplexity {
                    info!("step {} {} loss {:.4} dev perplexity {:.4}", rec.step, rec.task, rec.loss, ppl);
                }
                Ok(())
            };
            let (outcome, meta): (TrainOutcome, CheckpointMeta) = if reverse {
                let o = train_reverse(&model_cfg, prepared.train(), prepared.dev(), &cfg, &mut observe)?;
                let meta = CheckpointMeta {
                    variant: None,
                    steps: o.steps,
                    seed: cfg.seed,
                    dev_perplexity: o.best_dev_perplexity,
                    reverse: true,
                };
                (o, meta)
            } else {
                let v = variant.expect("clap requires a variant");
                let o = train_variant(v, &model_cfg, prepared.train(), prepared.dev(), &cfg, &mut observe)?;
                let meta = CheckpointMeta {
                    variant: Some(v.name().to_string()),
                    steps: o.steps,
                    seed: cfg.seed,
                    dev_perplexity: o.best_dev_perplexity,
                    reverse: false,
                };
                (o, meta)
            };
            if let Some(w) = log_w.as_mut() {
                w.flush()?;
            }
            outcome.model.save(&out, &vocab, &meta)?;
            info!("{} steps, checkpoint written to {}", outcome.steps, out.display());
        }
        Command::Decode {
            data,
            part,
            model,
            reverse_model,
            out,
            refs_out,
        } => {
            let (dir, vocab, prepared) = load_prepared(&data, profile.top_k)?;
            let (model, _) = GroundedModel::load(&model, &vocab)?;
            let reverse = reverse_model
                .map(|p| GroundedModel::load(p, &vocab).map(|(m, _)| m))
                .transpose()?;
            let (convs, raw) = part.select(&prepared, &dir);
            let lists = decode_nbest(&model, reverse.as_ref(), &vocab, convs, &profile.beam)?;
            write_nbest(BufWriter::new(File::create(&out)?), &lists)?;
            if let Some(r) = refs_out {
                write_references(BufWriter::new(File::create(r)?), raw)?;
            }
            info!("{} N-best lists written to {}", lists.len(), out.display());
        }
        Command::Mert { nbest, refs, out } => {
            let lists = read_nbest(BufReader::new(File::open(&nbest)?))?;
            let refs = read_references(BufReader::new(File::open(&refs)?))?;
            let aligned = align_references(&lists, &refs)?;
            let report = mert_tune(&lists, &aligned, &profile.mert)?;
            report.weights.save(&out)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Eval {
            nbest,
            refs,
            weights,
            model,
            vocab,
            dir,
            part,
        } => {
            let lists = read_nbest(BufReader::new(File::open(&nbest)?))?;
            let refs = read_references(BufReader::new(File::open(&refs)?))?;
            let aligned = align_references(&lists, &refs)?;
            let w = load_weights(weights.as_deref())?;
            let hyps: Vec<Vec<String>> = lists
                .iter()
                .map(|l| best(l, &w).map(|c| c.tokens.clone()))
                .collect::<groundchat::Result<_>>()?;
            let mut report = serde_json::json!({
                "bleu": corpus_bleu(&hyps, &aligned)?,
                "distinct_1": distinct_n(&hyps, 1).ok(),
                "distinct_2": distinct_n(&hyps, 2).ok(),
                "lists": lists.len(),
            });
            if let (Some(model), Some(vocab), Some(dir)) = (model, vocab, dir) {
                let (data, vocab, prepared) = load_prepared(&DataArgs { dir, vocab }, profile.top_k)?;
                let (m, _) = GroundedModel::load(&model, &vocab)?;
                let (convs, _) = part.select(&prepared, &data);
                report["perplexity"] = serde_json::json!(perplexity(&m, &eval_examples(convs))?);
            }
            println!("{report}");
        }
        Command::Chat { artifacts } => {
            let (models, _) = load_artifacts(&artifacts, &profile)?;
            let stdin = std::io::stdin();
            repl(&models, stdin.lock(), std::io::stdout().lock())?;
        }
        Command::Serve { artifacts, addr } => serve(artifacts, profile, &addr)?,
    }
    Ok(())
}

fn read_convs(path: &Path) -> Result<Vec<Conversation>> {
    let (convs, skipped) = load_conversations(path).with_context(|| format!("reading {}", path.display()))?;
    for s in &skipped {
        warn!("{}: skipped line {}: {}", path.display(), s.line, s.reason);
    }
    Ok(convs)
}

fn load_data(dir: &Path) -> Result<(DataDir, Vec<groundchat::experiment::SkippedInFile>)> {
    let (data, skipped) = DataDir::load(dir).with_context(|| format!("reading data directory {}", dir.display()))?;
    for s in &skipped {
        warn!("{}: skipped line {}: {}", s.file, s.skipped.line, s.skipped.reason);
    }
    Ok((data, skipped))
}

fn load_prepared(args: &DataArgs, top_k: usize) -> Result<(DataDir, Vocabulary, PreparedData)> {
    let (dir, _) = load_data(&args.dir)?;
    let vocab = Vocabulary::load(&args.vocab).with_context(|| format!("reading {}", args.vocab.display()))?;
    let prepared = dir.prepare(&dir.collection(), &vocab, top_k)?;
    Ok((dir, vocab, prepared))
}

fn load_weights(path: Option<&Path>) -> Result<RerankWeights> {
    Ok(match path {
        Some(p) => RerankWeights::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RerankWeights::default(),
    })
}

/// Load the chat artifacts; also returns the checkpoint's SHA-256.
pub fn load_artifacts(a: &ArtifactArgs, profile: &Profile) -> Result<(ChatModels, String)> {
    let vocab = Vocabulary::load(&a.vocab).with_context(|| format!("reading {}", a.vocab.display()))?;
    let bytes = std::fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let (model, _) = GroundedModel::read_checkpoint(&bytes[..], &vocab)?;
    let (reverse, meta) = GroundedModel::load(&a.reverse_model, &vocab)?;
    if !meta.reverse {
        warn!("{} is not marked as a reverse model", a.reverse_model.display());
    }
    let facts: FactsCollection = load_facts(&a.facts)?;
    let weights = load_weights(a.weights.as_deref())?;
    let mut models = ChatModels::new(model, reverse, vocab, facts, weights, profile.beam)?;
    models.top_k = profile.top_k;
    Ok((models, hex_digest(&bytes)))
}

/// Read utterances line by line and print each reply with its facts.
/// `:reset` clears the history and `:quit` ends the session.
pub fn repl(models: &ChatModels, input: impl BufRead, mut out: impl Write) -> Result<()> {
    let mut history: Vec<String> = Vec::new();
    write!(out, "> ")?;
    out.flush()?;
    for line in input.lines() {
        let line = line?;
        match line.trim() {
            ":quit" => break,
            ":reset" => history.clear(),
            "" => {}
            text => {
                history.push(text.to_string());
                let turn = models.chat_turn(&history)?;
                print_turn(&mut out, &turn)?;
                history.push(turn.response.clone());
            }
        }
        write!(out, "> ")?;
        out.flush()?;
    }
    writeln!(out)?;
    Ok(())
}

fn print_turn(out: &mut impl Write, turn: &ChatTurnResult) -> Result<()> {
    writeln!(out, "{}", turn.response)?;
    let weights = turn.weights.clone().unwrap_or_default();
    let mut shown: Vec<(usize, f64)> = (0..turn.facts.len()).map(|i| (i, weights.get(i).copied().unwrap_or(0.0))).collect();
    shown.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, w) in shown {
        let f = &turn.facts[i];
        if turn.weights.is_some() {
            writeln!(out, "  [{w:.3}] @{}: {}", f.entity, f.text)?;
        } else {
            writeln!(out, "  @{}: {}", f.entity, f.text)?;
        }
    }
    Ok(())
}

fn serve(artifacts: ArtifactArgs, profile: Profile, addr: &str) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let state = server::AppState::default();
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        info!("listening on {}", listener.local_addr()?);
        let loader = state.clone();
        tokio::task::spawn_blocking(move || match load_artifacts(&artifacts, &profile) {
            Ok((models, model_hash)) => {
                loader.install(server::Service { models, model_hash });
                info!("model loaded");
            }
            Err(e) => log::error!("loading failed: {e:#}"),
        });
        axum::serve(listener, server::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
