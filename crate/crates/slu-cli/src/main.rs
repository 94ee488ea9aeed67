//! Experiment driver for the `slu` library.
//!
//! Every experiment is described by one TOML run config; see README for the
//! format. Exit codes: 0 success, 1 configuration/validation error, 2
//! runtime failure (io, numeric, incompatible checkpoints).

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use slu::config::{EncoderKind, ModelConfig, SlotHeadKind, TrainConfig};
use slu::corpus::{parse_dataset, Dataset, EmbeddingMatrix, Utterance, Vocabs};
use slu::eval::{aggregate, evaluate, EvalReport};
use slu::gazetteer::{parse_gazetteer, GazetteerMatcher};
use slu::model::{prepare, Model};
use slu::numerics::{grad_check, Mode, ParamStore};
use slu::trainer::{train_model, TrainOutcome};
use slu::transfer::{
    load_checkpoint, save_checkpoint, transfer_init, Checkpoint, TransferSetting,
};
use slu::SluError;

#[derive(Parser)]
#[command(name = "slu", about = "Joint intent and slot-filling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per configured seed and write checkpoints,
    /// per-epoch logs and evaluation reports to the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Initialize from a source checkpoint under a transfer setting, then
    /// fine-tune on the configured dataset.
    Transfer {
        #[arg(long)]
        config: PathBuf,
        /// Source checkpoint produced by `slu train`.
        #[arg(long)]
        source: PathBuf,
        /// One of: all, full-slot, full-multidim, full-bilstm.
        #[arg(long)]
        setting: String,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus file to score; defaults to the config's test (or dev) set.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference gradient check over all four encoder kinds on a
    /// small model. Exits nonzero if any error exceeds the tolerance.
    Gradcheck {
        /// Slot head to check: softmax, softmax+smoothing or crf.
        #[arg(long, default_value = "softmax+smoothing")]
        slot_head: String,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Aggregate per-seed evaluation reports in a run directory into one
    /// mean row.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Tag utterances read from stdin (whitespace-tokenized, one per
    /// line); prints `intent<TAB>tag ...` per line.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataConfig {
    train: PathBuf,
    dev: PathBuf,
    test: Option<PathBuf>,
    gazetteer: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    #[serde(default = "default_true")]
    embedding_trainable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    /// Benchmark variant name like "Highway:W+CNN"; overrides the encoder
    /// kind and embedder components of the [model] section.
    variant: Option<String>,
    output_dir: PathBuf,
    data: DataConfig,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
}

impl RunConfig {
    fn load(path: &Path) -> Result<Self, SluError> {
        let text = fs::read_to_string(path).map_err(|e| {
            SluError::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| SluError::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        if let Some(name) = &cfg.variant {
            let v = ModelConfig::from_variant(name)?;
            cfg.model.encoder.kind = v.encoder.kind;
            cfg.model.embedder.use_word = v.embedder.use_word;
            cfg.model.embedder.use_char = v.embedder.use_char;
            cfg.model.embedder.use_gazetteer = v.embedder.use_gazetteer;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        if cfg.model.embedder.use_gazetteer && cfg.data.gazetteer.is_none() {
            return Err(SluError::InvalidArgument(
                "model uses gazetteer features but [data] has no gazetteer path".into(),
            ));
        }
        Ok(cfg)
    }
}

struct LoadedData {
    train: Dataset,
    dev: Dataset,
    test: Option<Dataset>,
    matcher: Option<GazetteerMatcher>,
    embeddings: Option<EmbeddingMatrix>,
}

fn load_data(cfg: &RunConfig) -> Result<LoadedData, SluError> {
    let train = parse_dataset(&cfg.data.train, None)?;
    let dev = parse_dataset(&cfg.data.dev, Some(train.vocabs.clone()))?;
    let test = match &cfg.data.test {
        Some(p) => Some(parse_dataset(p, Some(train.vocabs.clone()))?),
        None => None,
    };
    let matcher = match &cfg.data.gazetteer {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let set = parse_gazetteer(&text, &p.display().to_string())?;
            Some(GazetteerMatcher::compile(&set)?)
        }
        None => None,
    };
    let embeddings = match &cfg.data.embeddings {
        Some(p) => Some(slu::corpus::load_embeddings(
            p,
            &train.vocabs.word,
            cfg.model.embedder.word_dim,
            cfg.data.embedding_trainable,
            cfg.train.seeds[0],
        )?),
        None => None,
    };
    Ok(LoadedData { train, dev, test, matcher, embeddings })
}

/// Train, checkpoint and report for one seed; `init` supplies the
/// (possibly transfer-initialized) starting model.
fn run_seed(
    cfg: &RunConfig,
    data: &LoadedData,
    seed: u64,
    init: Model,
) -> Result<TrainOutcome, SluError> {
    let log_path = cfg.output_dir.join(format!("seed{seed}.log"));
    let mut log = fs::File::create(&log_path)?;
    let out = train_model(
        init,
        &cfg.train,
        &data.train,
        &data.dev,
        data.matcher.as_ref(),
        seed,
        |rec| {
            let line = rec.log_line();
            println!("seed {seed}: {line}");
            let _ = writeln!(log, "{line}");
        },
    )?;
    let ckpt = Checkpoint::from_model(&out.model, &cfg.data.train.display().to_string());
    save_checkpoint(&ckpt, &cfg.output_dir.join(format!("seed{seed}.ckpt")))?;
    let dev_report = evaluate(&out.model, &data.dev, data.matcher.as_ref())?;
    write_json(&cfg.output_dir.join(format!("seed{seed}.report.json")), &dev_report)?;
    if let Some(test) = &data.test {
        let test_report = evaluate(&out.model, test, data.matcher.as_ref())?;
        write_json(&cfg.output_dir.join(format!("seed{seed}.test-report.json")), &test_report)?;
        println!("seed {seed} test: {}", test_report.table_row());
    }
    println!("seed {seed} dev (best epoch {}): {}", out.best_epoch, dev_report.table_row());
    Ok(out)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), SluError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| SluError::InvalidArgument(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, json)?;
    Ok(())
}

fn fresh_model(cfg: &RunConfig, data: &LoadedData, seed: u64) -> Result<Model, SluError> {
    let num_gaz = data.matcher.as_ref().map_or(0, GazetteerMatcher::num_types);
    Model::new(
        cfg.model.clone(),
        data.train.vocabs.clone(),
        num_gaz,
        data.embeddings.as_ref(),
        seed,
    )
}

fn cmd_train(config: &Path) -> Result<(), SluError> {
    let cfg = RunConfig::load(config)?;
    let data = load_data(&cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    for &seed in &cfg.train.seeds {
        let model = fresh_model(&cfg, &data, seed)?;
        run_seed(&cfg, &data, seed, model)?;
    }
    Ok(())
}

fn cmd_transfer(config: &Path, source: &Path, setting: &str) -> Result<(), SluError> {
    let setting: TransferSetting = setting.parse()?;
    let cfg = RunConfig::load(config)?;
    let data = load_data(&cfg)?;
    let source_ckpt = load_checkpoint(source)?;
    fs::create_dir_all(&cfg.output_dir)?;
    for &seed in &cfg.train.seeds {
        let mut model = fresh_model(&cfg, &data, seed)?;
        let report = transfer_init(&source_ckpt, &mut model, setting)?;
        write_json(&cfg.output_dir.join(format!("seed{seed}.transfer.json")), &report)?;
        run_seed(&cfg, &data, seed, model)?;
    }
    Ok(())
}

fn cmd_eval(config: &Path, checkpoint: &Path, data_path: Option<&Path>) -> Result<(), SluError> {
    let cfg = RunConfig::load(config)?;
    let data = load_data(&cfg)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.into_model(data.train.vocabs.clone())?;
    let target = match data_path {
        Some(p) => parse_dataset(p, Some(data.train.vocabs.clone()))?,
        None => match data.test {
            Some(t) => t,
            None => data.dev,
        },
    };
    let report = evaluate(&model, &target, data.matcher.as_ref())?;
    println!("{}", report.table_row());
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn gradcheck_corpus() -> Dataset {
    let utt = |toks: &[&str], tags: &[&str], intent: &str| {
        Utterance::new(
            toks.iter().map(|s| s.to_string()).collect(),
            tags.iter().map(|s| s.to_string()).collect(),
            intent.to_string(),
        )
        .expect("valid utterance")
    };
    Dataset::build(vec![
        utt(&["flights", "to", "boston"], &["O", "O", "B-city"], "flight"),
        utt(&["delta", "fares"], &["B-airline", "O"], "airfare"),
    ])
}

fn cmd_gradcheck(slot_head: &str, tolerance: f64) -> Result<(), SluError> {
    let slot_head = match slot_head {
        "softmax" => SlotHeadKind::Softmax,
        "softmax+smoothing" => SlotHeadKind::SoftmaxSmoothing,
        "crf" => SlotHeadKind::Crf,
        other => {
            return Err(SluError::InvalidArgument(format!(
                "unknown slot head {other:?}; expected softmax, softmax+smoothing or crf"
            )))
        }
    };
    let ds = gradcheck_corpus();
    let mut worst: f64 = 0.0;
    for kind in [
        EncoderKind::BiRnnGru,
        EncoderKind::BiRnnHighwayLstm,
        EncoderKind::MultiHeadAttention,
        EncoderKind::BiBlockAttention,
    ] {
        let err = gradcheck_one(&ds, kind, slot_head)?;
        println!("{kind:?}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    if worst > tolerance {
        return Err(SluError::InvalidArgument(format!(
            "gradient check failed: worst error {worst:.3e} > tolerance {tolerance:.0e}"
        )));
    }
    println!("all encoders within {tolerance:.0e}");
    Ok(())
}

fn gradcheck_one(
    ds: &Dataset,
    kind: EncoderKind,
    slot_head: SlotHeadKind,
) -> Result<f64, SluError> {
    let mut cfg = ModelConfig::default();
    cfg.embedder.word_dim = 10;
    cfg.embedder.char_dim = 4;
    cfg.embedder.char_windows = vec![2, 3];
    cfg.embedder.char_filters = 3;
    cfg.encoder.kind = kind;
    cfg.encoder.depth = 1;
    cfg.encoder.hidden = 8;
    cfg.encoder.d_model = 8;
    cfg.encoder.heads = 2;
    cfg.encoder.blocks = 3;
    cfg.heads.ffn_hidden = 9;
    cfg.heads.slot_head = slot_head;
    let model = Model::new(cfg.clone(), ds.vocabs.clone(), 0, None, 11)?;
    let p = prepare(&ds.utterances[0], &model.vocabs, None);
    let mut store = model.store.clone();
    let vocabs = model.vocabs.clone();
    let report = grad_check(
        &mut store,
        &|g, store: &ParamStore| {
            let m = Model::from_store(cfg.clone(), vocabs.clone(), 0, store.clone())?;
            let (il, sl) = m.forward(g, &p, &Mode::eval())?;
            let intent = slu::heads::intent_loss(il, p.intent_id, 0.1)?;
            let slot = match slot_head {
                SlotHeadKind::Crf => {
                    slu::heads::crf_nll(sl, &p.tag_ids, g.param(store, "slot.crf.trans"))?
                }
                _ => slu::heads::slot_softmax_loss(sl, &p.tag_ids, cfg.heads.slot_smoothing())?,
            };
            Ok(intent.scale(0.2).add(slot.scale(0.8)))
        },
        1e-5,
    )?;
    Ok(report.max_rel_err)
}

fn cmd_report(run_dir: &Path) -> Result<(), SluError> {
    let mut reports = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(run_dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("seed") && name.ends_with(".report.json") {
            let text = fs::read_to_string(entry.path())?;
            let report: EvalReport = serde_json::from_str(&text).map_err(|e| SluError::Parse {
                path: entry.path().display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
            println!("{name}: {}", report.table_row());
            reports.push(report);
        }
    }
    let mean = aggregate(&reports)?;
    println!("mean over {} seeds: {}", reports.len(), mean.table_row());
    Ok(())
}

fn cmd_predict(config: &Path, checkpoint: &Path) -> Result<(), SluError> {
    let cfg = RunConfig::load(config)?;
    let data = load_data(&cfg)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.into_model(data.train.vocabs.clone())?;
    let vocabs: &Vocabs = &model.vocabs;
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = line?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            continue;
        }
        let tags = vec!["O".to_string(); tokens.len()];
        let utt = Utterance::new(tokens, tags, "?".to_string())?;
        let p = prepare(&utt, vocabs, data.matcher.as_ref());
        let (intent_id, tag_ids) = model.predict(&p, &[])?;
        let tags: Vec<&str> = tag_ids.iter().map(|&t| vocabs.tag.word(t)).collect();
        println!("{}\t{}", vocabs.intent.word(intent_id), tags.join(" "));
    }
    Ok(())
}

fn exit_code(e: &SluError) -> u8 {
    match e {
        SluError::InvalidArgument(_) | SluError::Parse { .. } => 1,
        SluError::Checkpoint(_) | SluError::Numeric(_) | SluError::Io(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config } => cmd_train(config),
        Command::Transfer { config, source, setting } => cmd_transfer(config, source, setting),
        Command::Eval { config, checkpoint, data } => {
            cmd_eval(config, checkpoint, data.as_deref())
        }
        Command::Gradcheck { slot_head, tolerance } => cmd_gradcheck(slot_head, *tolerance),
        Command::Report { run_dir } => cmd_report(run_dir),
        Command::Predict { config, checkpoint } => cmd_predict(config, checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
