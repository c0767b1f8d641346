//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numeric failure. Failures print one JSON object on stderr.

mod config;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

pub use config::{Mode, RunConfig};

use crate::checkpoint::Checkpoint;
use crate::data::{
    load_oos_dataset, parse_oos_dataset, validate_counts, write_domain_map, write_oos_dataset, CountExpectations, Dataset,
    DomainMap, LabelSpace, Split, SynthConfig, Variant,
};
use crate::encoder::{tokenize, EmbeddingStore, Features};
use crate::evaluation::{self, best_row, parse_grid, sweep_tsv, EvalReport, SweepRow, ThresholdConfig};
use crate::training::{train, Inputs, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "oosjoint", version, about = "Joint domain/intent classifier with out-of-scope rejection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a JSON run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Evaluate a grid of thresholds and report the best one.
    Sweep(SweepArgs),
    /// Classify utterances from stdin, one per line.
    Classify(ClassifyArgs),
    /// Write domain and intent representations as TSV.
    Export(ExportArgs),
    /// Check dataset counts against expectations.
    Validate(ValidateArgs),
    /// Write a synthetic dataset and its domain map.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    domain_map: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    #[arg(long)]
    reports_out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    structure: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    learning_rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    warmup_proportion: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Checkpoint plus the dataset it is applied to.
#[derive(Debug, Args)]
struct Source {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Must describe the same label space as the checkpoint.
    #[arg(long)]
    domain_map: Option<PathBuf>,
    /// Embedding store, required for models trained on external vectors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tau: f64,
    /// Also reject on the domain head.
    #[arg(long)]
    domain_threshold: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "valid")]
    split: Split,
    /// `start:stop:step` or a comma-separated list, ascending.
    #[arg(long, default_value = "0.1:0.9:0.1", allow_hyphen_values = true)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long)]
    domain_threshold: bool,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Number of intents listed per line.
    #[arg(long, default_value_t = 3)]
    top: usize,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    domain_map: PathBuf,
    /// Expected counts as JSON; defaults to the published counts for the
    /// variant named by the data file.
    #[arg(long)]
    expect: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_data: PathBuf,
    #[arg(long)]
    out_domain_map: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    domains: usize,
    #[arg(long, default_value_t = 3)]
    intents_per_domain: usize,
    #[arg(long, default_value_t = 20)]
    examples_per_intent: usize,
    #[arg(long, default_value_t = 30)]
    oos_examples: usize,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::NumericInstability(_) => 4,
        _ => 3,
    }
}

fn kind(e: &Error) -> &'static str {
    match exit_code(e) {
        2 => "config",
        4 => "numeric",
        _ => "data",
    }
}

fn diagnostic(err: &mut dyn Write, code: i32, kind: &str, message: &str) {
    let line = json!({ "error": kind, "code": code, "message": message });
    let _ = writeln!(err, "{line}");
}

pub fn main() -> i32 {
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run(std::env::args_os(), &mut input, &mut out, &mut err)
}

/// Entry point with explicit streams.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            diagnostic(err, 2, "usage", first);
            return 2;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Classify(a) => cmd_classify(a, input, out),
        Command::Export(a) => cmd_export(a, out),
        Command::Validate(a) => cmd_validate(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            diagnostic(err, code, kind(&e), &e.to_string());
            code
        }
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value)?;
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn apply_overrides(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v.into(); } )* };
    }
    set!(data, domain_map, checkpoint_out, reports_out, mode);
    set!(learning_rate, warmup_proportion, max_epochs, patience, batch_size, weight_decay, seed);
    if let Some(e) = a.embeddings {
        cfg.embeddings = Some(e);
    }
    if let Some(s) = a.structure {
        cfg.structure = Some(s.parse()?);
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a RunConfig,
    train_config: &'a TrainConfig,
    variant: Variant,
    stop_reason: &'a str,
    epochs_run: usize,
    best_epoch: usize,
    best_valid_intent_accuracy: f64,
    lambda: f64,
    checkpoint: &'a Path,
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = RunConfig::load(&a.config)?;
    apply_overrides(&mut cfg, a)?;
    cfg.validate()?;

    let (dataset, labels) = load_oos_dataset(&cfg.data, &cfg.domain_map)?;
    let train_cfg = cfg.train_config(dataset.variant);
    let store;
    let encoder_cfg = cfg.encoder_config();
    let inputs = match cfg.mode {
        Mode::Builtin => Inputs::Builtin(&encoder_cfg),
        Mode::External => {
            store = EmbeddingStore::load(cfg.embeddings.as_ref().expect("validated"))?;
            store.check_coverage(dataset.all_texts())?;
            Inputs::External(&store)
        }
    };
    let (model, history) = train(&dataset, &labels, &train_cfg, inputs)?;
    let lambda = model.lambda();
    let ck = Checkpoint::new(model, labels)?;
    write_file(&cfg.checkpoint_out, &ck.to_bytes())?;

    let mut lines = String::new();
    for rec in &history.epochs {
        lines.push_str(&serde_json::to_string(rec)?);
        lines.push('\n');
    }
    write_file(&cfg.reports_out.join("history.jsonl"), lines.as_bytes())?;
    let summary = TrainSummary {
        config: &cfg,
        train_config: &train_cfg,
        variant: dataset.variant,
        stop_reason: history.stop_reason.as_str(),
        epochs_run: history.epochs.len(),
        best_epoch: history.best_epoch,
        best_valid_intent_accuracy: history.best_valid_intent_accuracy,
        lambda,
        checkpoint: &cfg.checkpoint_out,
    };
    let text = serde_json::to_string_pretty(&summary)?;
    write_file(&cfg.reports_out.join("summary.json"), text.as_bytes())?;
    emit(out, &summary)?;
    Ok(0)
}

struct Loaded {
    ck: Checkpoint,
    dataset: Dataset,
    store: Option<EmbeddingStore>,
}

impl Loaded {
    fn open(src: &Source) -> Result<Self> {
        let ck = Checkpoint::load(&src.checkpoint)?;
        if let Some(map) = &src.domain_map {
            let labels = LabelSpace::from_domain_map(&DomainMap::load(map)?)?;
            if labels != ck.labels {
                return Err(Error::Data(format!(
                    "label space of {} does not match the checkpoint ({} domains / {} intents vs {} / {})",
                    map.display(),
                    labels.num_domains(),
                    labels.num_intents(),
                    ck.labels.num_domains(),
                    ck.labels.num_intents()
                )));
            }
        }
        let json = std::fs::read_to_string(&src.data).map_err(|e| Error::io(&src.data, e))?;
        let dataset = parse_oos_dataset(&json, &ck.labels, Variant::from_path(&src.data))?;
        let store = src.embeddings.as_ref().map(EmbeddingStore::load).transpose()?;
        Ok(Self { ck, dataset, store })
    }

    fn features(&self, split: Split) -> Result<Features<'_>> {
        let f = evaluation::features(&self.ck.model, self.store.as_ref())?;
        if let Features::External(store) = f {
            store.check_coverage(self.dataset.split(split).iter().map(|e| e.text.as_str()))?;
        }
        Ok(f)
    }
}

#[derive(Serialize)]
struct EvalOutput {
    split: Split,
    tau: f64,
    domain_threshold: bool,
    #[serde(flatten)]
    report: EvalReport,
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let threshold = ThresholdConfig {
        tau: a.tau,
        domain: a.domain_threshold,
    };
    threshold.validate()?;
    let l = Loaded::open(&a.source)?;
    let feats = l.features(a.split)?;
    let report = evaluation::evaluate(&l.ck.model, &l.ck.labels, feats, l.dataset.split(a.split), &threshold)?;
    emit(
        out,
        &EvalOutput {
            split: a.split,
            tau: a.tau,
            domain_threshold: a.domain_threshold,
            report,
        },
    )?;
    Ok(0)
}

#[derive(Serialize)]
struct SweepOutput {
    split: Split,
    best: SweepRow,
    /// Test metrics at the threshold selected on validation.
    #[serde(skip_serializing_if = "Option::is_none")]
    test_at_best: Option<EvalReport>,
}

fn cmd_sweep(a: SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let grid = parse_grid(&a.grid)?;
    let l = Loaded::open(&a.source)?;
    let feats = l.features(a.split)?;
    let rows = evaluation::threshold_sweep(&l.ck.model, &l.ck.labels, feats, l.dataset.split(a.split), &grid)?;
    write_file(&a.out, sweep_tsv(&rows).as_bytes())?;
    let best = *best_row(&rows).expect("grid is non-empty");
    let test_at_best = if a.split == Split::Valid && !l.dataset.test.is_empty() {
        let feats = l.features(Split::Test)?;
        let th = ThresholdConfig {
            tau: best.tau,
            domain: false,
        };
        Some(evaluation::evaluate(&l.ck.model, &l.ck.labels, feats, &l.dataset.test, &th)?)
    } else {
        None
    };
    emit(
        out,
        &SweepOutput {
            split: a.split,
            best,
            test_at_best,
        },
    )?;
    Ok(0)
}

fn cmd_classify(a: ClassifyArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32> {
    let threshold = ThresholdConfig {
        tau: a.tau,
        domain: a.domain_threshold,
    };
    threshold.validate()?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let store = a.embeddings.as_ref().map(EmbeddingStore::load).transpose()?;
    let feats = evaluation::features(&ck.model, store.as_ref())?;
    let io = |e| Error::io("<stdio>", e);

    let mut line = String::new();
    let mut index = 0usize;
    loop {
        line.clear();
        if input.read_line(&mut line).map_err(io)? == 0 {
            break;
        }
        let text = line.trim_end_matches(['\n', '\r']);
        let record = match classify_line(&ck, feats, text, &threshold, a.top) {
            Ok(v) => v,
            Err(e @ Error::NumericInstability(_)) => return Err(e),
            Err(e) => json!({ "line": index, "status": 1, "error": e.to_string() }),
        };
        writeln!(out, "{record}").map_err(io)?;
        out.flush().map_err(io)?;
        index += 1;
    }
    Ok(0)
}

fn classify_line(ck: &Checkpoint, feats: Features<'_>, text: &str, th: &ThresholdConfig, top: usize) -> Result<serde_json::Value> {
    if let Features::Hashed(_) = feats {
        tokenize(text)?;
    }
    let h = feats.pooled(text)?;
    let p = evaluation::predict(&ck.model, &ck.labels, &h, th)?;
    let labels = &ck.labels;
    let mut order: Vec<usize> = (0..p.p_intent.len()).collect();
    order.sort_by(|&x, &y| p.p_intent[y].total_cmp(&p.p_intent[x]).then(x.cmp(&y)));
    let top: Vec<_> = order
        .iter()
        .take(top)
        .map(|&i| json!({ "intent": labels.intents()[i], "p": p.p_intent[i] }))
        .collect();
    let mut v = json!({
        "status": 0,
        "text": text,
        "domain": labels.domains()[p.domain],
        "intent": labels.intents()[p.intent],
        "oos": p.intent == labels.oos_intent(),
        "rejected": p.rejected,
        "top": top,
    });
    if let Some(pd) = &p.p_domain {
        v["domain_p"] = json!(pd[p.domain]);
    }
    Ok(v)
}

fn cmd_export(a: ExportArgs, out: &mut dyn Write) -> Result<i32> {
    let l = Loaded::open(&a.source)?;
    let feats = l.features(a.split)?;
    let examples = l.dataset.split(a.split);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    evaluation::export_representations(&l.ck.model, &l.ck.labels, feats, examples, &a.out)?;
    emit(out, &json!({ "split": a.split, "rows": examples.len(), "dim": l.ck.model.dim(), "out": a.out }))?;
    Ok(0)
}

fn cmd_validate(a: ValidateArgs, out: &mut dyn Write) -> Result<i32> {
    let (dataset, labels) = load_oos_dataset(&a.data, &a.domain_map)?;
    let expected = match &a.expect {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<CountExpectations>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => CountExpectations::published(dataset.variant).ok_or_else(|| {
            Error::Config(format!(
                "no published counts for {}; pass --expect",
                a.data.display()
            ))
        })?,
    };
    let report = validate_counts(&dataset, &labels, &expected);
    let passed = report.passed();
    emit(
        out,
        &json!({
            "variant": dataset.variant,
            "passed": passed,
            "mismatches": report.mismatches.iter().map(ToString::to_string).collect::<Vec<_>>(),
        }),
    )?;
    if passed {
        Ok(0)
    } else {
        Err(Error::Data(format!("{} count mismatch(es)", report.mismatches.len())))
    }
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = SynthConfig::new(a.seed, a.domains, a.intents_per_domain, a.examples_per_intent, a.oos_examples);
    let (dataset, labels) = cfg.generate()?;
    for p in [&a.out_data, &a.out_domain_map] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    write_oos_dataset(&dataset, &labels, &a.out_data)?;
    write_domain_map(&labels, &a.out_domain_map)?;
    emit(
        out,
        &json!({
            "train": dataset.train.len(),
            "valid": dataset.valid.len(),
            "test": dataset.test.len(),
            "domains": labels.num_domains(),
            "intents": labels.num_intents(),
        }),
    )?;
    Ok(0)
}
