//! `spmis` command line: gen-corpus, enroll, train-topic, detect, eval.
//!
//! Exit status 0 on success, 1 on domain errors (bad input files,
//! validation failures, missing keys), 2 on usage errors. Diagnostics go to
//! stderr; data goes to the named output files or stdout.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::corpusgen::{generate, CorpusConfig};
use crate::eval::{eval_detection, render_report, CountingMode, Report};
use crate::model::{
    parse_manifest, read_verdicts, write_verdicts, ManifestOptions, PolicySet, SpeakerId,
    Utterance,
};
use crate::pipeline::{Detector, Pipeline};
use crate::providers::{
    DeepfakeProvider, EmbeddingStore, OracleDeepfake, ScoreStore, TranscriptStore,
    DEFAULT_SCORE_THRESHOLD,
};
use crate::speakerdb::{SpeakerDb, DEFAULT_THRESHOLD};
use crate::topicclf::{TopicModel, TrainConfig, DEFAULT_MAX_FEATURES};
use crate::workflow::{enroll_watchlist, train_topic_classifier, DEFAULT_TRAIN_FRACTION};

#[derive(Debug, Parser)]
#[command(name = "spmis", version, about = "Synthetic spoken misinformation detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus into a directory.
    GenCorpus(GenCorpusArgs),
    /// Build a speaker database from bona fide reference clips.
    Enroll(EnrollArgs),
    /// Train the TF-IDF + logistic regression topic model.
    TrainTopic(TrainTopicArgs),
    /// Run the detection cascade over a manifest.
    Detect(DetectArgs),
    /// Score verdicts against manifest ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// TOML file with a [corpus] table; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides corpus.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides one corpus key, e.g. `--set sigma=0.25` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EnrollArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Manifest of reference clips; only bona fide entries are used.
    #[arg(long)]
    manifest: PathBuf,
    /// Watchlist: a policy JSON array or one speaker id per line.
    #[arg(long)]
    speakers: PathBuf,
    #[arg(long, default_value_t = 6)]
    clips_per_speaker: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f32,
    #[arg(long)]
    out: PathBuf,
    /// Drop unknown manifest keys with a warning instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct TrainTopicArgs {
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_FEATURES)]
    max_features: usize,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    transcripts: PathBuf,
    /// `oracle` (ground-truth synthetic flag) or `scores:PATH`.
    #[arg(long, default_value = "oracle")]
    deepfake: String,
    /// Scores at or above this are synthetic.
    #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
    score_threshold: f64,
    #[arg(long)]
    out: PathBuf,
    /// Abort on the first stage error instead of writing an error line.
    #[arg(long)]
    fail_fast: bool,
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// pair_only or pair_and_speaker.
    #[arg(long, default_value = "pair_and_speaker")]
    mode: CountingMode,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the text table here (it is always printed to stdout).
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    corpus: CorpusConfig,
}

type Failure = String;

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Enroll(a) => enroll(a),
        Command::TrainTopic(a) => train_topic(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => 0,
        Err(message) => {
            eprintln!("error: {message}");
            1
        }
    }
}

fn at(path: &Path) -> impl Fn(&dyn std::fmt::Display) -> Failure + '_ {
    move |e| format!("{}: {e}", path.display())
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| at(path)(&e))
}

fn create(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<(), Failure>) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| at(path)(&e))?);
    body(&mut w)?;
    w.flush().map_err(|e| at(path)(&e))
}

fn load_manifest(path: &Path, lenient: bool) -> Result<Vec<Utterance>, Failure> {
    let m = parse_manifest(open(path)?, ManifestOptions { strict: !lenient }).map_err(|e| at(path)(&e))?;
    for w in &m.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(m.utterances)
}

fn load_embeddings(path: &Path) -> Result<EmbeddingStore, Failure> {
    EmbeddingStore::read(open(path)?).map_err(|e| at(path)(&e))
}

fn load_transcripts(path: &Path) -> Result<TranscriptStore, Failure> {
    TranscriptStore::read(open(path)?).map_err(|e| at(path)(&e))
}

fn load_policy(path: &Path) -> Result<PolicySet, Failure> {
    PolicySet::read_json(open(path)?).map_err(|e| at(path)(&e))
}

fn corpus_config(a: &GenCorpusArgs) -> Result<CorpusConfig, Failure> {
    let text = match &a.config {
        Some(p) => fs::read_to_string(p).map_err(|e| at(p)(&e))?,
        None => String::new(),
    };
    let origin = a.config.as_deref().unwrap_or(Path::new("<defaults>"));
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| at(origin)(&e))?;
    if !a.overrides.is_empty() || a.seed.is_some() {
        let corpus = table
            .entry("corpus")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| at(origin)(&"[corpus] must be a table"))?;
        for o in &a.overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got '{o}'"))?;
            let parsed: toml::Table = toml::from_str(&format!("v = {value}"))
                .map_err(|e| format!("--set {key}: {e}"))?;
            corpus.insert(key.trim().to_owned(), parsed["v"].clone());
        }
        if let Some(seed) = a.seed {
            let seed = i64::try_from(seed).map_err(|_| format!("--seed {seed} exceeds the TOML integer range"))?;
            corpus.insert("seed".into(), toml::Value::Integer(seed));
        }
    }
    let file: ConfigFile = table.try_into().map_err(|e| at(origin)(&e))?;
    Ok(file.corpus)
}

fn gen_corpus(a: GenCorpusArgs) -> Result<(), Failure> {
    let cfg = corpus_config(&a)?;
    let corpus = generate(&cfg).map_err(|e| e.to_string())?;
    fs::create_dir_all(&a.out).map_err(|e| at(&a.out)(&e))?;
    corpus.emit(&a.out).map_err(|e| e.to_string())?;
    let counts = corpus.category_counts();
    eprintln!(
        "generated {} utterances ({} / {} / {} / {} per category), {} watchlisted speakers",
        corpus.manifest.len(),
        counts[0],
        counts[1],
        counts[2],
        counts[3],
        corpus.watched.len()
    );
    Ok(())
}

fn read_watchlist(path: &Path) -> Result<BTreeSet<SpeakerId>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| at(path)(&e))?;
    if text.trim_start().starts_with('[') {
        return Ok(PolicySet::read_json(text.as_bytes())
            .map_err(|e| at(path)(&e))?
            .speakers());
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| SpeakerId::new(l).map_err(|e| at(path)(&e)))
        .collect()
}

fn enroll(a: EnrollArgs) -> Result<(), Failure> {
    let manifest = load_manifest(&a.manifest, a.lenient)?;
    let embeddings = load_embeddings(&a.embeddings)?;
    let speakers = read_watchlist(&a.speakers)?;
    let db = enroll_watchlist(&manifest, &embeddings, &speakers, a.clips_per_speaker, a.threshold)
        .map_err(|e| e.to_string())?;
    create(&a.out, |w| db.save(w).map_err(|e| at(&a.out)(&e)))?;
    eprintln!("enrolled {} speakers from {} clips each", db.len(), a.clips_per_speaker);
    Ok(())
}

fn train_topic(a: TrainTopicArgs) -> Result<(), Failure> {
    let manifest = load_manifest(&a.manifest, a.lenient)?;
    let transcripts = load_transcripts(&a.transcripts)?;
    let cfg = TrainConfig {
        max_iter: a.max_iter,
        ..TrainConfig::default()
    };
    let t = train_topic_classifier(
        &manifest,
        &transcripts,
        a.max_features,
        &cfg,
        a.split_seed,
        a.train_fraction,
    )
    .map_err(|e| e.to_string())?;
    create(&a.out, |w| t.model.save(w).map_err(|e| at(&a.out)(&e)))?;
    let r = &t.report;
    let stop = serde_json::to_value(r.stop_reason).expect("enum serializes");
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "iterations = {}", r.iterations);
    let _ = writeln!(out, "final_loss = {:e}", r.final_loss);
    let _ = writeln!(out, "final_grad_norm = {:e}", r.final_grad_norm);
    let _ = writeln!(out, "stop_reason = {stop}");
    let _ = writeln!(out, "vocabulary = {}", t.model.vocabulary().len());
    let _ = writeln!(out, "train_samples = {}", t.n_train);
    let _ = writeln!(out, "held_out_samples = {}", t.held_out.micro.total);
    let _ = writeln!(out, "held_out_errors = {}", t.held_out.micro.errors);
    let _ = writeln!(out, "held_out_error_pct = \"{}\"", t.held_out.micro.render_rate());
    Ok(())
}

fn deepfake_provider(spec: &str, threshold: f64) -> Result<Box<dyn DeepfakeProvider>, Failure> {
    if spec == "oracle" {
        return Ok(Box::new(OracleDeepfake));
    }
    let Some(path) = spec.strip_prefix("scores:") else {
        return Err(format!("--deepfake must be 'oracle' or 'scores:PATH', got '{spec}'"));
    };
    let path = Path::new(path);
    Ok(Box::new(
        ScoreStore::read(open(path)?, threshold).map_err(|e| at(path)(&e))?,
    ))
}

fn detect(a: DetectArgs) -> Result<(), Failure> {
    let deepfake = deepfake_provider(&a.deepfake, a.score_threshold)?;
    let db = SpeakerDb::load(open(&a.db)?).map_err(|e| at(&a.db)(&e))?;
    let model = TopicModel::load(open(&a.model)?).map_err(|e| at(&a.model)(&e))?;
    let policy = load_policy(&a.policy)?;
    let manifest = load_manifest(&a.manifest, a.lenient)?;
    let embeddings = load_embeddings(&a.embeddings)?;
    let transcripts = load_transcripts(&a.transcripts)?;
    for s in policy.validate(&manifest).missing_speakers {
        eprintln!("warning: policy speaker '{s}' does not occur in the manifest");
    }
    let detector = Detector::new(db, model, policy).map_err(|e| e.to_string())?;
    let pipeline = Pipeline::new(detector, deepfake, Box::new(embeddings), Box::new(transcripts))
        .map_err(|e| e.to_string())?;
    let records = pipeline
        .detect_batch(&manifest, a.fail_fast)
        .map_err(|e| e.to_string())?;
    create(&a.out, |w| write_verdicts(w, &records).map_err(|e| at(&a.out)(&e)))?;
    let failed = records.iter().filter(|r| r.verdict().is_none()).count();
    let flagged = records
        .iter()
        .filter(|r| r.verdict().is_some_and(|v| v.is_misinformation()))
        .count();
    eprintln!("{} verdicts, {flagged} misinformation, {failed} errors", records.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let manifest = load_manifest(&a.manifest, a.lenient)?;
    let verdicts = read_verdicts(open(&a.verdicts)?).map_err(|e| at(&a.verdicts)(&e))?;
    let report = eval_detection(&verdicts, &manifest, a.mode).map_err(|e| e.to_string())?;
    let (table, json) = render_report(&Report::Detection(report));
    create(&a.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &json).map_err(|e| at(&a.out)(&e))?;
        writeln!(w).map_err(|e| at(&a.out)(&e))
    })?;
    if let Some(p) = &a.table {
        create(p, |w| w.write_all(table.as_bytes()).map_err(|e| at(p)(&e)))?;
    }
    print!("{table}");
    Ok(())
}
