//! Command-line driver: vocabulary building, projection and MLM pretraining,
//! probing and evaluation.
//!
//! Exit status is 0 on success, 1 when a run fails, 2 for usage errors and
//! 3 for an invalid configuration.

pub mod config;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand_distr::{Distribution, Normal};
use serde_json::json;

use config::{env_overrides, parse_set, read_config_file, ConfigError, RunConfig};
use wordlm::evaluation::{
    cloze_option_logits, choose_option, build_probe_set, probe_topk, read_jsonl, span_em_f1, tag_f1_corpus,
    write_jsonl, Bucket, ClozeItem, FrequencyBuckets, ProbeExample, SpanItem, SpanScore, TaggedSequence,
};
use wordlm::model::{EmbeddingVariant, WordBertModel};
use wordlm::rng;
use wordlm::training::finetune::{finetune_span, finetune_tagger};
use wordlm::training::{
    load_checkpoint, overlap_pairs, pretrain_projection, Checkpoint, Trainer, WordVectors,
};
use wordlm::vocabulary::{count_corpus_file, read_corpus, segment_words, WordVocab};

pub const EFFECTIVE_CONFIG: &str = "effective_config.cfg";

#[derive(Debug, Parser)]
#[command(name = "wordlm", version, about = "Word-level masked language model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable. Wins over the file and environment.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_set)]
    pub set: Vec<(String, String)>,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count words in a corpus and write the top-K vocabulary.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        /// Shorthand for `--set vocab.k=N`.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit the projection from pretrained vectors to trained embeddings.
    PretrainProjection {
        /// Pretrained vectors (`word v1 … vE` per line).
        #[arg(long)]
        pretrained: PathBuf,
        /// Target vectors in the same layout.
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        target: Option<PathBuf>,
        /// Take targets from a direct-variant checkpoint's word table.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Vocabulary of `--checkpoint` (defaults to `vocab.tsv` beside it).
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// MLM pretraining.
    Pretrain {
        /// One document per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Existing vocabulary; otherwise built from the corpus.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Frozen pretrained vectors for the projected variant.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Initial projection written by `pretrain-projection`.
        #[arg(long, requires = "embeddings")]
        projection: Option<PathBuf>,
        /// Continue from a checkpoint (its model and training config win).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Steps to run (default: up to `train.total_steps`).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Zero-shot masked-word prediction by frequency bucket.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Probe examples (JSON lines).
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        probes: Option<PathBuf>,
        /// Build probes from these sentences instead.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Corpus whose counts define the buckets (default: vocabulary counts).
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Four-option cloze accuracy via MLM scoring.
    EvalCloze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Tagging F1, from prediction files or by fine-tuning a head.
    EvalTag {
        #[command(flatten)]
        source: EvalSource,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Span EM/F1, from prediction files or by fine-tuning a head.
    EvalSpan {
        #[command(flatten)]
        source: EvalSource,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print a checkpoint's step, configuration and tensors.
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct EvalSource {
    /// Gold records (JSON lines).
    #[arg(long)]
    pub gold: PathBuf,
    /// Predictions aligned with `--gold`; skips fine-tuning.
    #[arg(long, conflicts_with_all = ["checkpoint", "train"], required_unless_present = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// Fine-tune a head on `--train` starting from this checkpoint.
    #[arg(long, requires = "train")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<wordlm::Error> for CliError {
    fn from(e: wordlm::Error) -> Self {
        Self::Run(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Run(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 3,
            Self::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(e) => e.fmt(f),
            Self::Run(e) => f.write_str(e),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses arguments and runs the command; returns the process exit status.
pub fn run<I, T, E>(args: I, env: E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    E: IntoIterator<Item = (String, String)>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command, env.into_iter().collect()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(cfg: &ConfigArgs, env: &[(String, String)], extra: &[(String, String)]) -> CliResult<RunConfig> {
    let mut entries = match &cfg.config {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    entries.extend(env_overrides(env.iter().cloned()));
    entries.extend(cfg.set.iter().cloned());
    if let Some(seed) = cfg.seed {
        entries.push(("train.seed".into(), seed.to_string()));
    }
    entries.extend(extra.iter().cloned());
    let mut run = RunConfig::default();
    run.apply(&entries)?;
    log::debug!("effective configuration:\n{}", run.render());
    Ok(run)
}

fn write_effective(dir: &Path, run: &RunConfig) -> CliResult {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(EFFECTIVE_CONFIG), run.render())?;
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn vocab_path(explicit: &Option<PathBuf>, checkpoint: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| parent_dir(checkpoint).join("vocab.tsv"))
}

fn load_model(checkpoint: &Path, vocab: &Option<PathBuf>) -> CliResult<(Checkpoint, WordVocab)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let vocab = WordVocab::load(&vocab_path(vocab, checkpoint))?;
    if vocab.len() != ckpt.model.config().vocab_size {
        return Err(CliError::Run(format!(
            "vocabulary has {} words but the checkpoint expects {}",
            vocab.len(),
            ckpt.model.config().vocab_size
        )));
    }
    Ok((ckpt, vocab))
}

pub fn dispatch(command: Command, env: Vec<(String, String)>) -> CliResult {
    match command {
        Command::BuildVocab { corpus, k, out, cfg } => {
            let extra: Vec<(String, String)> = k.map(|k| ("vocab.k".into(), k.to_string())).into_iter().collect();
            let run = resolve(&cfg, &env, &extra)?;
            run.validate(false)?;
            build_vocab(&corpus, &out, &run)
        }
        Command::PretrainProjection {
            pretrained,
            target,
            checkpoint,
            vocab,
            out,
            cfg,
        } => {
            let run = resolve(&cfg, &env, &[])?;
            run.validate(false)?;
            pretrain_projection_cmd(&pretrained, target, checkpoint, vocab, &out, &run)
        }
        Command::Pretrain {
            corpus,
            vocab,
            embeddings,
            projection,
            resume,
            steps,
            out_dir,
            cfg,
        } => {
            let run = resolve(&cfg, &env, &[])?;
            run.validate(false)?;
            pretrain(PretrainInputs {
                corpus,
                vocab,
                embeddings,
                projection,
                resume,
                steps,
                out_dir,
                run,
            })
        }
        Command::Probe {
            checkpoint,
            vocab,
            probes,
            corpus,
            reference,
            out_dir,
            cfg,
        } => {
            let run = resolve(&cfg, &env, &[])?;
            run.validate(false)?;
            probe(&checkpoint, &vocab, probes, corpus, reference, out_dir, &run)
        }
        Command::EvalCloze {
            checkpoint,
            vocab,
            items,
            out_dir,
            cfg,
        } => {
            let run = resolve(&cfg, &env, &[])?;
            run.validate(false)?;
            eval_cloze(&checkpoint, &vocab, &items, out_dir, &run)
        }
        Command::EvalTag { source, cfg } => {
            let run = resolve(&cfg, &env, &[])?;
            run.validate(false)?;
            eval_tag(&source, &run)
        }
        Command::EvalSpan { source, cfg } => {
            let run = resolve(&cfg, &env, &[])?;
            run.validate(false)?;
            eval_span(&source, &run)
        }
        Command::InspectCheckpoint { checkpoint } => inspect(&checkpoint),
    }
}

fn build_vocab(corpus: &Path, out: &Path, run: &RunConfig) -> CliResult {
    let counts = count_corpus_file(corpus, run.vocab.lowercase)?;
    let vocab = WordVocab::build(&counts, run.vocab.k, run.vocab.lowercase)?;
    fs::create_dir_all(parent_dir(out))?;
    vocab.save(out)?;
    write_effective(&parent_dir(out), run)?;
    println!("wrote {} words ({} distinct in corpus) to {}", vocab.len(), counts.len(), out.display());
    Ok(())
}

/// `E H` header then `E` rows of `H` values.
pub fn write_matrix(path: &Path, rows: usize, cols: usize, data: &[f32]) -> CliResult {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{rows} {cols}")?;
    for row in data.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> CliResult<(usize, usize, Vec<f32>)> {
    let text = fs::read_to_string(path)?;
    let bad = |what: &str| CliError::Run(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("empty matrix file"))?
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| bad("bad header")))
        .collect::<CliResult<_>>()?;
    let [rows, cols] = header[..] else {
        return Err(bad("header must be `rows cols`"));
    };
    let data: Vec<f32> = lines
        .flat_map(str::split_whitespace)
        .map(|v| v.parse().map_err(|_| bad("bad value")))
        .collect::<CliResult<_>>()?;
    if data.len() != rows * cols {
        return Err(bad("value count does not match header"));
    }
    Ok((rows, cols, data))
}

fn pretrain_projection_cmd(
    pretrained: &Path,
    target: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    vocab: Option<PathBuf>,
    out: &Path,
    run: &RunConfig,
) -> CliResult {
    let source = WordVectors::read(pretrained)?;
    let targets = match (target, checkpoint) {
        (Some(t), _) => WordVectors::read(&t)?,
        (None, Some(c)) => {
            let (ckpt, vocab) = load_model(&c, &vocab)?;
            if ckpt.model.config().variant != EmbeddingVariant::Direct {
                return Err(CliError::Run("target checkpoint must use the direct variant".into()));
            }
            let table = ckpt.model.word_embedding();
            WordVectors {
                words: vocab.words().to_vec(),
                data: table.to_vec(),
                dim: table.shape()[1],
            }
        }
        (None, None) => unreachable!("clap requires one target source"),
    };
    let pairs = overlap_pairs(&source, &targets);
    if pairs.is_empty() {
        return Err(CliError::Run("no word appears in both vector sets".into()));
    }
    fs::create_dir_all(parent_dir(out))?;
    let fit = pretrain_projection(&pairs, &run.projection.0, &mut rng::stream(run.train.seed, "projection", 0))?;
    write_matrix(out, fit.in_dim, fit.out_dim, &fit.weight)?;
    write_effective(&parent_dir(out), run)?;
    println!(
        "fit {}x{} projection on {} overlapping words: loss {:.6e} after {} iterations",
        fit.in_dim,
        fit.out_dim,
        pairs.len(),
        fit.final_loss(),
        fit.losses.len() - 1
    );
    Ok(())
}

struct PretrainInputs {
    corpus: PathBuf,
    vocab: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    projection: Option<PathBuf>,
    resume: Option<PathBuf>,
    steps: Option<u64>,
    out_dir: PathBuf,
    run: RunConfig,
}

fn pretrain(inputs: PretrainInputs) -> CliResult {
    let PretrainInputs {
        corpus,
        vocab,
        embeddings,
        projection,
        resume,
        steps,
        out_dir,
        mut run,
    } = inputs;
    let vocab = match &vocab {
        Some(p) => WordVocab::load(p)?,
        None => WordVocab::build(&count_corpus_file(&corpus, run.vocab.lowercase)?, run.vocab.k, run.vocab.lowercase)?,
    };
    let docs = read_corpus(&corpus)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(&path)?;
            if ckpt.model.config().vocab_size != vocab.len() {
                return Err(CliError::Run("vocabulary does not match the resumed checkpoint".into()));
            }
            run.model = ckpt.model.config().clone();
            run.train = ckpt.train_config.clone();
            let encoded = encode_corpus(&docs, &vocab, run.train.max_length)?;
            Trainer::resume(ckpt, encoded)?
        }
        None => {
            run.model.vocab_size = vocab.len();
            if let Some(path) = &embeddings {
                let vectors = WordVectors::read(path)?;
                run.model.variant = EmbeddingVariant::Projected;
                run.model.freeze_embeddings = true;
                run.model.embed_dim = vectors.dim;
            }
            run.validate(true)?;
            let mut init = rng::stream(run.train.seed, "init", 0);
            let model = match &embeddings {
                None => WordBertModel::new(run.model.clone(), &mut init)?,
                Some(path) => {
                    let vectors = WordVectors::read(path)?;
                    let table = pretrained_table(&vocab, &vectors, run.train.seed);
                    let w = match &projection {
                        Some(p) => {
                            let (r, c, data) = read_matrix(p)?;
                            if (r, c) != (run.model.embed_dim, run.model.hidden) {
                                return Err(CliError::Run(format!(
                                    "projection is {r}x{c}, model needs {}x{}",
                                    run.model.embed_dim, run.model.hidden
                                )));
                            }
                            Some(data)
                        }
                        None => None,
                    };
                    WordBertModel::with_pretrained(run.model.clone(), table, w, &mut init)?
                }
            };
            let encoded = encode_corpus(&docs, &vocab, run.train.max_length)?;
            Trainer::new(model, encoded, run.train.clone())?
        }
    };
    fs::create_dir_all(&out_dir)?;
    write_effective(&out_dir, &run)?;
    log::info!("training on {} sequences, vocabulary {}", trainer.corpus().len(), vocab.len());
    vocab.save(&out_dir.join("vocab.tsv"))?;
    let remaining = run.train.total_steps.saturating_sub(trainer.step_count());
    let steps = steps.unwrap_or(remaining);
    let mut metrics = BufWriter::new(File::create(out_dir.join("metrics.tsv"))?);
    let records = trainer.run(steps, Some(&mut metrics))?;
    metrics.flush()?;
    trainer.save_checkpoint(&out_dir.join("checkpoint.bin"))?;
    match records.last() {
        Some(r) => println!("step {} loss {:.6} lr {}", r.step, r.loss, r.lr),
        None => println!("no steps run (at step {})", trainer.step_count()),
    }
    Ok(())
}

/// Rows for every vocabulary word: its pretrained vector, or a small random
/// vector when the word has none.
fn pretrained_table(vocab: &WordVocab, vectors: &WordVectors, seed: u64) -> Vec<f32> {
    let index = vectors.index();
    let mut fallback = rng::stream(seed, "init", 1);
    let normal = Normal::new(0.0f32, 0.02).expect("positive std");
    let mut table = Vec::with_capacity(vocab.len() * vectors.dim);
    for w in vocab.words() {
        match index.get(w.as_str()) {
            Some(&i) => table.extend_from_slice(vectors.row(i)),
            None => table.extend((0..vectors.dim).map(|_| normal.sample(&mut fallback))),
        }
    }
    table
}

fn encode_corpus(docs: &[String], vocab: &WordVocab, max_length: usize) -> CliResult<Vec<wordlm::vocabulary::EncodedSequence>> {
    docs.iter()
        .map(|d| segment_words(d, vocab.lowercase()))
        .filter(|w| !w.is_empty())
        .map(|w| vocab.encode(&w, max_length).map_err(CliError::from))
        .collect()
}

fn probe(
    checkpoint: &Path,
    vocab: &Option<PathBuf>,
    probes: Option<PathBuf>,
    corpus: Option<PathBuf>,
    reference: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    run: &RunConfig,
) -> CliResult {
    let (ckpt, vocab) = load_model(checkpoint, vocab)?;
    let counts: HashMap<String, u64> = match &reference {
        Some(p) => count_corpus_file(p, vocab.lowercase())?,
        None => (0..vocab.len() as u32)
            .filter_map(|id| Some((vocab.word(id)?.to_owned(), vocab.frequency(id)?)))
            .collect(),
    };
    let e = &run.eval;
    let mut buckets = FrequencyBuckets::with_thresholds(counts, e.high, e.medium, e.low)?;
    buckets.strict = e.strict_buckets;
    let (examples, built) = match (probes, corpus) {
        (Some(p), _) => (read_jsonl::<ProbeExample>(&p)?, false),
        (None, Some(c)) => {
            let sentences: Vec<Vec<String>> = read_corpus(&c)?
                .iter()
                .map(|d| segment_words(d, vocab.lowercase()))
                .filter(|w| !w.is_empty())
                .collect();
            let set = build_probe_set(&sentences, &buckets, None, e.mask_prob, &mut rng::stream(run.train.seed, "probe", 0))?;
            (set, true)
        }
        (None, None) => unreachable!("clap requires a probe source"),
    };
    let report = probe_topk(&ckpt.model, &vocab, &buckets, &examples, &e.ks, e.max_length)?;
    let mut table = String::new();
    table.push_str("bucket\tmasked\toov");
    for k in &report.ks {
        table.push_str(&format!("\ttop{k}"));
    }
    table.push('\n');
    for b in Bucket::ALL {
        let t = &report.buckets[&b];
        table.push_str(&format!("{b}\t{}\t{}", t.masked, t.oov));
        for i in 0..report.ks.len() {
            match report.accuracy(b, i) {
                Some(a) => table.push_str(&format!("\t{a:.4}")),
                None => table.push_str("\t-"),
            }
        }
        table.push('\n');
    }
    print!("{table}");
    if report.truncated > 0 {
        println!("skipped {} masked positions beyond eval.max_length", report.truncated);
    }
    if let Some(dir) = out_dir {
        write_effective(&dir, run)?;
        fs::write(dir.join("probe_report.tsv"), &table)?;
        if built {
            write_jsonl(&dir.join("probes.jsonl"), &examples)?;
        }
    }
    Ok(())
}

fn eval_cloze(checkpoint: &Path, vocab: &Option<PathBuf>, items: &Path, out_dir: Option<PathBuf>, run: &RunConfig) -> CliResult {
    let (ckpt, vocab) = load_model(checkpoint, vocab)?;
    let items: Vec<ClozeItem> = read_jsonl(items)?;
    if items.is_empty() {
        return Err(CliError::Run("no cloze items".into()));
    }
    let mut records = Vec::with_capacity(items.len());
    let mut correct = 0;
    for (i, item) in items.iter().enumerate() {
        let choice = choose_option(&cloze_option_logits(&ckpt.model, &vocab, item, run.eval.max_length)?)?;
        correct += usize::from(choice == item.answer_index);
        records.push(json!({"index": i, "choice": choice, "answer": item.answer_index}));
    }
    let acc = correct as f64 / items.len() as f64;
    println!("cloze accuracy {acc:.4} ({correct}/{})", items.len());
    if let Some(dir) = out_dir {
        write_effective(&dir, run)?;
        write_jsonl(&dir.join("predictions.jsonl"), &records)?;
    }
    Ok(())
}

#[derive(serde::Deserialize, serde::Serialize)]
struct LabelPrediction {
    labels: Vec<String>,
}

#[derive(serde::Deserialize, serde::Serialize)]
struct SpanPrediction {
    span: Option<(usize, usize)>,
}

fn finetune_inputs(source: &EvalSource) -> CliResult<(Checkpoint, WordVocab, PathBuf)> {
    let ckpt_path = source.checkpoint.as_ref().expect("checked by clap");
    let train = source
        .train
        .clone()
        .ok_or_else(|| CliError::Run("--checkpoint needs --train".into()))?;
    let (ckpt, vocab) = load_model(ckpt_path, &source.vocab)?;
    Ok((ckpt, vocab, train))
}

fn eval_tag(source: &EvalSource, run: &RunConfig) -> CliResult {
    let gold: Vec<TaggedSequence> = read_jsonl(&source.gold)?;
    for g in &gold {
        g.validate(run.eval.tag_mode)?;
    }
    let preds: Vec<Vec<String>> = match &source.predictions {
        Some(p) => read_jsonl::<LabelPrediction>(p)?.into_iter().map(|p| p.labels).collect(),
        None => {
            let (ckpt, vocab, train) = finetune_inputs(source)?;
            let data: Vec<TaggedSequence> = read_jsonl(&train)?;
            let tagger = finetune_tagger(&ckpt.model, &vocab, &data, &run.finetune_config())?;
            gold.iter()
                .map(|g| tagger.predict(&ckpt.model, &vocab, &g.words, run.eval.max_length))
                .collect::<wordlm::Result<_>>()?
        }
    };
    if preds.len() != gold.len() {
        return Err(CliError::Run(format!("{} predictions for {} gold sequences", preds.len(), gold.len())));
    }
    let golds: Vec<Vec<String>> = gold.into_iter().map(|g| g.gold_labels).collect();
    let m = tag_f1_corpus(&preds, &golds, run.eval.tag_mode)?;
    println!("precision {:.4} recall {:.4} f1 {:.4}", m.precision, m.recall, m.f1);
    if let Some(dir) = &source.out_dir {
        write_effective(dir, run)?;
        let records: Vec<LabelPrediction> = preds.into_iter().map(|labels| LabelPrediction { labels }).collect();
        write_jsonl(&dir.join("predictions.jsonl"), &records)?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&m).expect("plain struct"))?;
    }
    Ok(())
}

fn eval_span(source: &EvalSource, run: &RunConfig) -> CliResult {
    let gold: Vec<SpanItem> = read_jsonl(&source.gold)?;
    for g in &gold {
        g.validate()?;
    }
    let preds: Vec<Option<(usize, usize)>> = match &source.predictions {
        Some(p) => read_jsonl::<SpanPrediction>(p)?.into_iter().map(|p| p.span).collect(),
        None => {
            let (ckpt, vocab, train) = finetune_inputs(source)?;
            let data: Vec<SpanItem> = read_jsonl(&train)?;
            let reader = finetune_span(&ckpt.model, &vocab, &data, &run.finetune_config())?;
            gold.iter()
                .map(|g| reader.predict(&ckpt.model, &vocab, g, run.eval.max_length))
                .collect::<wordlm::Result<_>>()?
        }
    };
    if preds.len() != gold.len() {
        return Err(CliError::Run(format!("{} predictions for {} gold items", preds.len(), gold.len())));
    }
    let mut total = SpanScore::default();
    for (p, g) in preds.iter().zip(&gold) {
        let s = span_em_f1(*p, &g.gold_spans);
        total.em += s.em;
        total.f1 += s.f1;
    }
    let n = gold.len().max(1) as f64;
    let mean = SpanScore {
        em: total.em / n,
        f1: total.f1 / n,
    };
    println!("exact match {:.4} f1 {:.4} ({} items)", mean.em, mean.f1, gold.len());
    if let Some(dir) = &source.out_dir {
        write_effective(dir, run)?;
        let records: Vec<SpanPrediction> = preds.into_iter().map(|span| SpanPrediction { span }).collect();
        write_jsonl(&dir.join("predictions.jsonl"), &records)?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&mean).expect("plain struct"))?;
    }
    Ok(())
}

fn inspect(checkpoint: &Path) -> CliResult {
    use wordlm::config::KeyValueConfig;
    let ckpt = load_checkpoint(checkpoint)?;
    let model = &ckpt.model;
    let counts = model.config().parameter_counts();
    println!("step {}", ckpt.step);
    println!("optimizer states {}", ckpt.adam_states.len());
    println!(
        "parameters {} (transformer {}, embedding {}, output bias {})",
        counts.total(),
        counts.transformer,
        counts.embedding,
        counts.output_bias
    );
    println!("checksum {}", model.checksum());
    for (k, v) in model.config().to_kv().into_iter().chain(ckpt.train_config.to_kv()) {
        println!("{k} = {v}");
    }
    for (name, t) in model.named_parameters() {
        let frozen = if t.requires_grad() { "" } else { " (frozen)" };
        println!("{name}\t{:?}{frozen}", t.shape());
    }
    Ok(())
}
