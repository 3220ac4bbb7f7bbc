//! The `kws` command line.
//!
//! stdout carries only CSV or JSON lines. Diagnostics go to stderr, and a
//! failure is a single `error[<kind>]: <reason>` line. Exit codes: 0 ok,
//! 1 verification rejected, 2 usage/config/input error, 3 budget violation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use kws_core::cascade::{Cascade, CascadeEvent};
use kws_core::decoder::streaming_decode;
use kws_core::frontend::{AudioChunk, Frontend};
use kws_core::inference::{encoder_forward, load_model, serialize_model, AccumMode, EmbeddingModel, EncoderModel, Model};
use kws_core::speaker::{enroll, verify, SpeakerProfile};
use serde_json::json;

use crate::config::{keys_help, parse_arithmetic, Config, ConfigError};
use crate::corpus::{generate, CorpusParams};
use crate::evaluate::{evaluate, load_corpus, utterance_signature, AudioModels};
use crate::formats;
use crate::modeltext::FloatModel;
use crate::wav;

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kws", version, about = "Two-stage keyword spotting cascade tools")]
struct Cli {
    /// Config file of `key = value` lines
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute log-mel features of a recording
    Features(FeaturesArgs),
    /// Run an encoder model over a features file
    Infer(InferArgs),
    /// Quantize a text float model into the binary model format
    QuantizeModel(QuantizeArgs),
    /// Decode a posterior stream into per-frame keyword scores
    Score(ScoreArgs),
    /// Stream a recording through the cascade, one JSON event per line
    RunCascade(RunCascadeArgs),
    /// Build a speaker profile from enrollment recordings
    Enroll(EnrollArgs),
    /// Verify a recording against a speaker profile
    Verify(VerifyArgs),
    /// Score a labelled corpus and print the operating point table
    Evaluate(EvaluateArgs),
    /// Write a seeded synthetic posterior corpus
    GenCorpus(GenCorpusArgs),
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// 16 kHz mono WAV, or `-` for stdin (WAV or raw s16le)
    #[arg(long)]
    input: PathBuf,
    /// Overrides `frontend.arithmetic`
    #[arg(long, value_parser = parse_arithmetic)]
    arithmetic: Option<kws_core::frontend::ArithmeticMode>,
    /// Write the binary features file here instead of CSV on stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// Binary features file from `kws features --output`
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_parser = parse_accum_flag, default_value = "fixed")]
    accumulate: AccumMode,
    /// Write the binary posteriors file here instead of CSV on stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// Text float model
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Posteriors file, binary or CSV (`.csv`)
    #[arg(long)]
    input: PathBuf,
    /// Decoder settings of this stage are used
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Overrides `stage1.model`
    #[arg(long)]
    stage1: Option<PathBuf>,
    /// Overrides `stage2.model`
    #[arg(long)]
    stage2: Option<PathBuf>,
    /// Overrides `speaker.embedding`
    #[arg(long)]
    embedding: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunCascadeArgs {
    #[command(flatten)]
    models: ModelArgs,
    /// Overrides `speaker.profile`
    #[arg(long)]
    speaker_profile: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    /// Audio is fed to the cascade in chunks of this length
    #[arg(long, default_value_t = 100)]
    chunk_ms: u32,
}

#[derive(Debug, Args)]
struct EnrollArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long)]
    output: PathBuf,
    /// Overrides `speaker.threshold`
    #[arg(long)]
    threshold: Option<f64>,
    /// Enrollment recordings
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    models: ModelArgs,
    /// Overrides `speaker.profile`
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    models: ModelArgs,
    /// Corpus manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Stage-1 thresholds, one table row each after the stage-2-only row
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.4,0.5,0.6,0.7")]
    thresholds: Vec<f64>,
    /// Enables speaker verification in the cascade rows
    #[arg(long)]
    speaker_profile: Option<PathBuf>,
    /// Points per stage in the DET sweep
    #[arg(long, default_value_t = 50)]
    sweep: usize,
    /// Write the DET sweep as CSV here
    #[arg(long)]
    det_output: Option<PathBuf>,
    /// Worker threads, 0 for one per core
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2.0)]
    negative_hours: f64,
    #[arg(long, default_value_t = 200)]
    positives: usize,
    #[arg(long, default_value_t = 30.0)]
    confusables_per_hour: f64,
    #[arg(long, default_value_t = 8.0)]
    impostors_per_hour: f64,
}

fn parse_accum_flag(v: &str) -> Result<AccumMode, String> {
    match v {
        "fixed" => Ok(AccumMode::FixedAccum),
        "float" => Ok(AccumMode::FloatAccum),
        _ => Err("expected fixed or float".into()),
    }
}

/// Failure with an exit code and a short kind for the stderr line.
#[derive(Debug)]
struct Failure {
    code: i32,
    kind: &'static str,
    message: String,
}

fn classify(err: &anyhow::Error) -> (i32, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<kws_core::Error>() {
            return match e {
                kws_core::Error::Budget(_) => (EXIT_BUDGET, "budget"),
                kws_core::Error::Config(_) => (EXIT_USAGE, "config"),
                _ => (EXIT_USAGE, "input"),
            };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return (EXIT_USAGE, "config");
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (EXIT_USAGE, "io");
        }
    }
    (EXIT_USAGE, "input")
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn command() -> clap::Command {
    let keys = keys_help();
    Cli::command().mut_subcommands(move |s| s.after_long_help(keys.clone()))
}

/// Runs the CLI on the process arguments and returns the exit code.
pub fn main() -> i32 {
    dispatch(std::env::args_os())
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match command().try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return EXIT_USAGE;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = run(cli, &mut out).and_then(|code| {
        out.flush()?;
        Ok(code)
    });
    match result {
        Ok(code) => code,
        Err(err) => {
            let f = match err.downcast::<Failure>() {
                Ok(f) => f,
                Err(err) => {
                    let (code, kind) = classify(&err);
                    Failure { code, kind, message: format!("{err:#}") }
                }
            };
            eprintln!("error[{}]: {}", f.kind, one_line(&f.message));
            f.code
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Features(a) => features(cfg, a, out),
        Command::Infer(a) => infer(a, out),
        Command::QuantizeModel(a) => quantize_model(a, out),
        Command::Score(a) => score(cfg, a, out),
        Command::RunCascade(a) => run_cascade(cfg, a, out),
        Command::Enroll(a) => enroll_cmd(cfg, a, out),
        Command::Verify(a) => verify_cmd(cfg, a, out),
        Command::Evaluate(a) => evaluate_cmd(cfg, a, out),
        Command::GenCorpus(a) => gen_corpus(a, out),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_encoder(path: &Path) -> Result<Arc<EncoderModel>> {
    match load_model(&read(path)?).with_context(|| format!("loading {}", path.display()))? {
        Model::Encoder(m) => Ok(Arc::new(m)),
        Model::Embedding(_) => bail!("{} is an embedding model, expected an encoder", path.display()),
    }
}

fn load_embedding(path: &Path) -> Result<Arc<EmbeddingModel>> {
    match load_model(&read(path)?).with_context(|| format!("loading {}", path.display()))? {
        Model::Embedding(m) => Ok(Arc::new(m)),
        Model::Encoder(_) => bail!("{} is an encoder model, expected an embedding", path.display()),
    }
}

fn load_profile(path: &Path) -> Result<SpeakerProfile> {
    SpeakerProfile::from_bytes(&read(path)?).with_context(|| format!("loading {}", path.display()))
}

fn pick<'a>(flag: &'a Option<PathBuf>, key: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    flag.as_deref()
        .or(key.as_deref())
        .with_context(|| format!("no {what} given (flag or config key)"))
}

fn features(mut cfg: Config, a: FeaturesArgs, out: &mut dyn Write) -> Result<i32> {
    if let Some(mode) = a.arithmetic {
        cfg.frontend.arithmetic_mode = mode;
    }
    let chunk = wav::read_audio(&a.input)?;
    let frames = Frontend::process_chunk(&cfg.frontend, &chunk)?;
    match a.output {
        Some(path) => {
            let bytes = formats::write_features(&frames, cfg.frontend.num_channels, cfg.frontend.hop_ms)?;
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            writeln!(out, "{}", json!({"frames": frames.len(), "channels": cfg.frontend.num_channels, "output": path}))?;
        }
        None => out.write_all(formats::features_csv(&frames).as_bytes())?,
    }
    Ok(EXIT_OK)
}

fn infer(a: InferArgs, out: &mut dyn Write) -> Result<i32> {
    let model = load_encoder(&a.model)?;
    let (hop, frames) = formats::read_features(&read(&a.features)?)?;
    let posteriors = encoder_forward(&frames, &model, a.accumulate)?;
    match a.output {
        Some(path) => {
            let bytes = formats::write_posteriors(&posteriors, model.num_units(), hop)?;
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            writeln!(out, "{}", json!({"frames": posteriors.len(), "units": model.num_units(), "output": path}))?;
        }
        None => out.write_all(formats::posteriors_csv(&posteriors).as_bytes())?,
    }
    Ok(EXIT_OK)
}

fn quantize_model(a: QuantizeArgs, out: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let model = FloatModel::parse(&text)?.quantize()?;
    let bytes = serialize_model(&model);
    std::fs::write(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))?;
    let qp = |p: kws_core::inference::QuantParams| {
        json!({"min": p.min_val, "max": p.max_val, "scale": p.scale, "zero_point": p.zero_point})
    };
    let layers: Vec<_> = model
        .network()
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| json!({"layer": i, "weights": qp(l.weights.params), "input": qp(l.input_params)}))
        .collect();
    let kind = match model {
        Model::Encoder(_) => "encoder",
        Model::Embedding(_) => "embedding",
    };
    writeln!(
        out,
        "{}",
        json!({"name": model.network().name, "kind": kind, "byte_size": model.byte_size(), "layers": layers})
    )?;
    Ok(EXIT_OK)
}

fn score(cfg: Config, a: ScoreArgs, out: &mut dyn Write) -> Result<i32> {
    let is_csv = a.input.extension().is_some_and(|e| e == "csv");
    let posteriors = if is_csv {
        let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        formats::parse_posteriors_csv(&text)?
    } else {
        formats::read_posteriors(&read(&a.input)?)?.1
    };
    let units = posteriors.first().context("posterior stream is empty")?.num_units();
    let settings = if a.stage == 1 { &cfg.stage1 } else { &cfg.stage2 };
    let decoder = settings.decoder(units);
    writeln!(out, "frame,score,detected,alignment")?;
    for (frame, h) in streaming_decode(&posteriors, decoder)? {
        let alignment: Vec<String> = h.alignment.iter().map(u64::to_string).collect();
        writeln!(out, "{frame},{},{},{}", h.score, u8::from(h.score >= decoder.threshold), alignment.join(" "))?;
    }
    Ok(EXIT_OK)
}

fn event_json(e: &CascadeEvent) -> serde_json::Value {
    json!({
        "event": e.kind.as_str(),
        "timestamp_ms": e.timestamp_ms,
        "emitted_ms": e.emitted_ms,
        "trigger_ms": e.trigger_ms,
        "stage1_score": e.stage1_score,
        "stage2_score": e.stage2_score,
        "speaker_score": e.speaker_score,
        "alignment_ms": e.alignment_ms,
    })
}

fn run_cascade(cfg: Config, a: RunCascadeArgs, out: &mut dyn Write) -> Result<i32> {
    let s1 = load_encoder(pick(&a.models.stage1, &cfg.stage1.model, "stage-1 model")?)?;
    let s2 = load_encoder(pick(&a.models.stage2, &cfg.stage2.model, "stage-2 model")?)?;
    let mut cascade = Cascade::new(cfg.cascade(s1.num_units(), s2.num_units()))?;
    let report = cascade.load_stage1(s1)?;
    eprintln!("{report}");
    let report = cascade.load_stage2(s2)?;
    eprintln!("{report}");
    if let Some(profile) = a.speaker_profile.as_ref().or(cfg.speaker_profile.as_ref()) {
        let emb = load_embedding(pick(&a.models.embedding, &cfg.speaker_embedding, "embedding model")?)?;
        cascade.set_speaker(emb, load_profile(profile)?)?;
    }
    let audio = wav::read_audio(&a.input)?;
    ensure!(a.chunk_ms > 0, "--chunk-ms must be positive");
    let step = a.chunk_ms as usize * kws_core::frontend::SAMPLES_PER_MS as usize;
    for piece in audio.samples.chunks(step) {
        for e in cascade.push_audio(&AudioChunk::new(piece.to_vec()))? {
            writeln!(out, "{}", event_json(&e))?;
        }
    }
    for e in cascade.finish()? {
        writeln!(out, "{}", event_json(&e))?;
    }
    eprintln!("stage 2 woke {} times over {} ms", cascade.wake_count(), audio.duration_ms());
    Ok(EXIT_OK)
}

fn speaker_models(cfg: &Config, m: &ModelArgs) -> Result<(Arc<EncoderModel>, Arc<EmbeddingModel>)> {
    let s2 = load_encoder(pick(&m.stage2, &cfg.stage2.model, "stage-2 model")?)?;
    let emb = load_embedding(pick(&m.embedding, &cfg.speaker_embedding, "embedding model")?)?;
    Ok((s2, emb))
}

fn enroll_cmd(cfg: Config, a: EnrollArgs, out: &mut dyn Write) -> Result<i32> {
    let (s2, emb) = speaker_models(&cfg, &a.models)?;
    let mut sigs = Vec::new();
    for path in &a.inputs {
        let (sig, score) = utterance_signature(&wav::read_audio(path)?, &cfg, &s2, &emb)
            .with_context(|| format!("enrolling {}", path.display()))?;
        if score < cfg.stage2.threshold {
            eprintln!("warning: {}: keyword score {score:.3} is below the stage-2 threshold", path.display());
        }
        sigs.push(sig);
    }
    let profile = enroll(&sigs, a.threshold.unwrap_or(cfg.speaker_threshold))?;
    std::fs::write(&a.output, profile.to_bytes()).with_context(|| format!("writing {}", a.output.display()))?;
    writeln!(
        out,
        "{}",
        json!({"dim": profile.signature.dim(), "utterances": profile.num_enrollment_utterances, "threshold": profile.threshold, "output": a.output})
    )?;
    Ok(EXIT_OK)
}

fn verify_cmd(cfg: Config, a: VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let profile = load_profile(pick(&a.profile, &cfg.speaker_profile, "speaker profile")?)?;
    let (s2, emb) = speaker_models(&cfg, &a.models)?;
    let (sig, keyword_score) = utterance_signature(&wav::read_audio(&a.input)?, &cfg, &s2, &emb)?;
    let v = verify(&sig, &profile)?;
    writeln!(out, "{}", json!({"score": v.score, "accepted": v.accepted, "keyword_score": keyword_score}))?;
    Ok(if v.accepted { EXIT_OK } else { EXIT_REJECTED })
}

fn evaluate_cmd(cfg: Config, a: EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let m = &a.models;
    let models = match (m.stage1.as_ref().or(cfg.stage1.model.as_ref()), m.stage2.as_ref().or(cfg.stage2.model.as_ref())) {
        (Some(p1), Some(p2)) => Some(AudioModels {
            stage1: load_encoder(p1)?,
            stage2: load_encoder(p2)?,
            embedding: m.embedding.as_ref().or(cfg.speaker_embedding.as_ref()).map(|p| load_embedding(p)).transpose()?,
        }),
        _ => None,
    };
    let profile = a.speaker_profile.as_ref().or(cfg.speaker_profile.as_ref()).map(|p| load_profile(p)).transpose()?;
    let corpus = load_corpus(&a.manifest, &cfg, models.as_ref(), a.jobs)?;
    eprintln!(
        "corpus: {:.2} h negative audio in {} streams, {} positives",
        corpus.negative_hours(),
        corpus.negatives.len(),
        corpus.positives.len()
    );
    let report = evaluate(&corpus, &cfg, &a.thresholds, profile.as_ref(), a.sweep)?;
    eprint!("{}", report.text());
    if let Some(path) = &a.det_output {
        std::fs::write(path, report.det_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    out.write_all(report.csv().as_bytes())?;
    Ok(EXIT_OK)
}

fn gen_corpus(a: GenCorpusArgs, out: &mut dyn Write) -> Result<i32> {
    let params = CorpusParams {
        seed: a.seed,
        negative_hours: a.negative_hours,
        positives: a.positives,
        confusables_per_hour: a.confusables_per_hour,
        impostors_per_hour: a.impostors_per_hour,
        ..CorpusParams::default()
    };
    ensure!(params.negative_hours > 0.0, "--negative-hours must be positive");
    let corpus = generate(&params)?;
    let manifest = corpus.write(&a.output)?;
    writeln!(
        out,
        "{}",
        json!({
            "manifest": manifest,
            "config": a.output.join("corpus.conf"),
            "profile": a.output.join("target.kwsv"),
            "negative_streams": corpus.negatives.len(),
            "positives": corpus.positives.len(),
            "seed": a.seed,
        })
    )?;
    Ok(EXIT_OK)
}
