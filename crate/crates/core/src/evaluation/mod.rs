//! Threshold post-processing, metrics, threshold sweeps and representation
//! export.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabelSpace, LabeledExample};
use crate::encoder::{EmbeddingStore, Features, PooledVector};
use crate::model::{Encoder, JointModel};
use crate::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub tau: f64,
    /// Also reject on the domain head.
    #[serde(default)]
    pub domain: bool,
}

impl ThresholdConfig {
    pub fn new(tau: f64) -> Result<Self> {
        let t = Self { tau, domain: false };
        t.validate()?;
        Ok(t)
    }

    pub fn none() -> Self {
        Self { tau: 0.0, domain: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub domain: usize,
    pub intent: usize,
    /// `None` for the intent-only model.
    pub p_domain: Option<Vec<f64>>,
    pub p_intent: Vec<f64>,
    /// The intent was overridden to oos by the threshold.
    pub rejected: bool,
}

/// Labels from head probabilities. The intent is replaced by oos when its
/// top probability is below `tau`; the domain likewise only with the domain
/// flag. Without a domain head the domain is the predicted intent's domain.
pub fn decide(p_domain: Option<&[f64]>, p_intent: &[f64], labels: &LabelSpace, threshold: &ThresholdConfig) -> (usize, usize, bool) {
    let mut intent = argmax(p_intent);
    let rejected = p_intent[intent] < threshold.tau;
    if rejected {
        intent = labels.oos_intent();
    }
    let domain = match p_domain {
        Some(p) => {
            let d = argmax(p);
            if threshold.domain && p[d] < threshold.tau {
                labels.oos_domain()
            } else {
                d
            }
        }
        None => labels.domain_of(intent),
    };
    (domain, intent, rejected)
}

pub fn predict(model: &JointModel, labels: &LabelSpace, hbar: &PooledVector, threshold: &ThresholdConfig) -> Result<Prediction> {
    let out = model.forward(hbar)?;
    let (domain, intent, rejected) = decide(out.p_domain.as_deref(), &out.p_intent, labels, threshold);
    Ok(Prediction {
        domain,
        intent,
        p_domain: out.p_domain,
        p_intent: out.p_intent,
        rejected,
    })
}

/// Feature source for a model: its own hashed table, or a store of
/// matching dimension for models trained on external vectors.
pub fn features<'a>(model: &'a JointModel, store: Option<&'a EmbeddingStore>) -> Result<Features<'a>> {
    match (model.encoder(), store) {
        (Encoder::Hashed(enc), _) => Ok(Features::Hashed(enc)),
        (Encoder::External { dim }, Some(s)) if s.dim() == *dim => Ok(Features::External(s)),
        (Encoder::External { dim }, Some(s)) => Err(Error::Data(format!(
            "embedding store has dimension {}, model expects {dim}",
            s.dim()
        ))),
        (Encoder::External { .. }, None) => {
            Err(Error::Config("model was trained on external embeddings; an embedding store is required".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub correct: usize,
    pub in_total: usize,
    pub in_correct: usize,
    /// oos as the positive class
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_all: f64,
    pub accuracy_in: f64,
    pub oos_precision: f64,
    pub oos_recall: f64,
    pub oos_f1: f64,
    pub counts: Counts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(counts: Counts) -> Self {
        let p = ratio(counts.tp, counts.tp + counts.fp);
        let r = ratio(counts.tp, counts.tp + counts.fn_);
        // harmonic mean of p and r, as one integer ratio
        let f1 = ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn_);
        Self {
            accuracy_all: ratio(counts.correct, counts.total),
            accuracy_in: ratio(counts.in_correct, counts.in_total),
            oos_precision: p,
            oos_recall: r,
            oos_f1: f1,
            counts,
        }
    }
}

/// Accuracy over all and in-scope examples plus oos precision, recall and
/// F1. Empty denominators give 0.
pub fn compute_metrics(preds: &[usize], golds: &[usize], oos: usize) -> Result<EvalReport> {
    if preds.len() != golds.len() {
        return Err(Error::Data(format!("{} predictions for {} gold labels", preds.len(), golds.len())));
    }
    let mut c = Counts {
        total: golds.len(),
        ..Counts::default()
    };
    for (&p, &g) in preds.iter().zip(golds) {
        c.correct += usize::from(p == g);
        if g != oos {
            c.in_total += 1;
            c.in_correct += usize::from(p == g);
        }
        match (p == oos, g == oos) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(EvalReport::from_counts(c))
}

/// Domain (absent for the intent-only model) and intent distributions.
pub type HeadProbs = (Option<Vec<f64>>, Vec<f64>);

/// Head probabilities for every example, computed once.
pub fn forward_all(model: &JointModel, features: Features<'_>, examples: &[LabeledExample]) -> Result<Vec<HeadProbs>> {
    examples
        .iter()
        .map(|ex| {
            let out = model.forward(&features.pooled(&ex.text)?)?;
            Ok((out.p_domain, out.p_intent))
        })
        .collect()
}

fn report_at(probs: &[HeadProbs], golds: &[usize], labels: &LabelSpace, threshold: &ThresholdConfig) -> Result<EvalReport> {
    let preds: Vec<usize> = probs
        .iter()
        .map(|(pd, pt)| decide(pd.as_deref(), pt, labels, threshold).1)
        .collect();
    compute_metrics(&preds, golds, labels.oos_intent())
}

pub fn evaluate(
    model: &JointModel,
    labels: &LabelSpace,
    features: Features<'_>,
    examples: &[LabeledExample],
    threshold: &ThresholdConfig,
) -> Result<EvalReport> {
    threshold.validate()?;
    let probs = forward_all(model, features, examples)?;
    let golds: Vec<usize> = examples.iter().map(|e| e.intent).collect();
    report_at(&probs, &golds, labels, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    #[serde(flatten)]
    pub report: EvalReport,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("threshold grid must be strictly ascending, got {} then {}", w[0], w[1])));
    }
    Ok(())
}

/// Intent-threshold sweep; the model runs once per example.
pub fn threshold_sweep(
    model: &JointModel,
    labels: &LabelSpace,
    features: Features<'_>,
    examples: &[LabeledExample],
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    check_grid(grid)?;
    let probs = forward_all(model, features, examples)?;
    let golds: Vec<usize> = examples.iter().map(|e| e.intent).collect();
    grid.iter()
        .map(|&tau| {
            let report = report_at(&probs, &golds, labels, &ThresholdConfig { tau, domain: false })?;
            Ok(SweepRow { tau, report })
        })
        .collect()
}

/// Row with the highest oos F1; ties go to the smallest threshold.
pub fn best_row(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter().fold(None, |best: Option<&SweepRow>, r| match best {
        Some(b) if r.report.oos_f1 > b.report.oos_f1 || (r.report.oos_f1 == b.report.oos_f1 && r.tau < b.tau) => Some(r),
        Some(b) => Some(b),
        None => Some(r),
    })
}

pub const SWEEP_HEADER: &str = "tau\tacc_all\tacc_in\tP\tR\tF1";

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let e = &r.report;
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.tau, e.accuracy_all, e.accuracy_in, e.oos_precision, e.oos_recall, e.oos_f1
        )
        .expect("writing to a String");
    }
    s
}

/// Parse `start:stop:step` (inclusive of `stop`) or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Config(format!("bad number {s:?} in threshold grid")))
    };
    let grid = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [a, b, step] = parts.as_slice() else {
            return Err(Error::Config(format!("threshold grid {text:?} must be start:stop:step")));
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step <= 0.0 {
            return Err(Error::Config(format!("grid step must be positive, got {step}")));
        }
        if b < a {
            return Err(Error::Config(format!("grid {text:?} is descending")));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        // rounding keeps 0.1:0.9:0.1 at the printed decimals
        (0..count).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    check_grid(&grid)?;
    Ok(grid)
}

fn clean_text(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// One TSV row per example: utterance, gold domain, gold intent, then the
/// domain and intent representations at f32 precision.
pub fn write_representations(
    model: &JointModel,
    labels: &LabelSpace,
    features: Features<'_>,
    examples: &[LabeledExample],
    mut out: impl Write,
) -> Result<()> {
    let io = |e| Error::io("<representations>", e);
    for ex in examples {
        let fwd = model.forward(&features.pooled(&ex.text)?)?;
        let mut line = format!(
            "{}\t{}\t{}",
            clean_text(&ex.text),
            labels.domains()[ex.domain],
            labels.intents()[ex.intent]
        );
        for v in fwd.d.iter().chain(&fwd.t) {
            write!(line, "\t{}", *v as f32).expect("writing to a String");
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn export_representations(
    model: &JointModel,
    labels: &LabelSpace,
    features: Features<'_>,
    examples: &[LabeledExample],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_representations(model, labels, features, examples, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

#[cfg(test)]
mod tests;
