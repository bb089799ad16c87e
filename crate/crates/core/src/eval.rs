//! Accuracy evaluation per prompt strategy and per template, plus the CSV
//! and markdown report formats.
//!
//! The per-template CSV is also the input of frequent-pair mining: columns
//! `template_id,strategy,tokens,accuracy,n_samples` with tokens joined by
//! `;`. Config snapshot and strategy-level rows travel as `#` comment lines
//! so plain CSV readers still see only the per-template table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{load_frames, ManifestEntry};
use crate::embedding::{temporal_pool, Pooling};
use crate::encoder::{Encoder, Normalization};
use crate::error::{Error, Result};
use crate::projection::{EpochMetrics, ProjectionLayer};
use crate::prompt::{PromptSet, Strategy};
use crate::tokenizer::Vocabulary;
use crate::types::{ClassLabel, Split};
use crate::zero_shot::{classify, encode_templates, ensemble, ClassEmbeddings, TemplateEmbeddings};

pub const CSV_HEADER: &str = "template_id,strategy,tokens,accuracy,n_samples";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub template_id: String,
    pub strategy: Strategy,
    pub provenance: Vec<String>,
    pub accuracy: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ZeroShot,
    Supervised,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero_shot",
            Mode::Supervised => "supervised",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Mode::ZeroShot => "Zero-shot",
            Mode::Supervised => "Supervised",
        }
    }
}

/// Accuracy of the ensemble of every template of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub accuracy: f64,
    pub n_templates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub rows: Vec<StrategyRow>,
    /// Accuracy of the ensemble over the whole prompt set.
    pub ensemble_accuracy: f64,
    pub per_template: Vec<EvalRecord>,
    pub config: Vec<(String, String)>,
    pub training: Vec<EpochMetrics>,
}

impl ExperimentReport {
    pub fn with_config(mut self, config: Vec<(String, String)>) -> Self {
        self.config = config;
        self
    }

    pub fn row(&self, strategy: Strategy) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

pub fn accuracy(predictions: &[ClassLabel], labels: &[ClassLabel]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            what: "predictions vs labels",
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels for accuracy"));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Pooled frozen embeddings of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipEmbedding {
    pub id: String,
    pub label: ClassLabel,
    pub split: Split,
    /// Pooled 768-d pre-projection feature.
    pub feature: Vec<f32>,
    /// Pooled 512-d joint image embedding.
    pub joint: Vec<f32>,
}

/// Load, encode and pool every clip. Clips run in parallel; output order
/// follows `entries`.
pub fn embed_clips(
    entries: &[ManifestEntry],
    encoder: &dyn Encoder,
    frames_per_clip: usize,
    pooling: Pooling,
) -> Result<Vec<ClipEmbedding>> {
    let norm: Normalization = encoder.normalization();
    entries
        .par_iter()
        .map(|e| {
            let frames = load_frames(e, frames_per_clip, &norm)?;
            let (features, joints) = encoder.encode_frames(&frames)?;
            Ok(ClipEmbedding {
                id: e.id.clone(),
                label: e.label,
                split: e.split,
                feature: temporal_pool(&features, pooling)?.into_inner(),
                joint: temporal_pool(&joints, pooling)?.into_inner(),
            })
        })
        .collect()
}

/// Which clip vector is compared against the class text embeddings.
#[derive(Debug, Clone, Copy)]
pub enum VideoPath<'a> {
    Joint,
    Projected(&'a ProjectionLayer<f32>),
}

pub fn video_vectors(clips: &[ClipEmbedding], path: VideoPath<'_>) -> Vec<Vec<f32>> {
    clips
        .par_iter()
        .map(|c| match path {
            VideoPath::Joint => c.joint.clone(),
            VideoPath::Projected(layer) => layer.project(&c.feature),
        })
        .collect()
}

pub fn predict_all(
    videos: &[Vec<f32>],
    class_embs: &ClassEmbeddings,
    logit_scale: f64,
) -> Result<Vec<ClassLabel>> {
    videos
        .par_iter()
        .map(|v| classify(v, class_embs, logit_scale).map(|s| s.predicted))
        .collect()
}

fn evaluate(
    mode: Mode,
    videos: &[Vec<f32>],
    labels: &[ClassLabel],
    set: &PromptSet,
    encoded: &[TemplateEmbeddings],
    logit_scale: f64,
) -> Result<ExperimentReport> {
    if videos.is_empty() {
        return Err(Error::Empty("evaluation clips"));
    }
    let score = |embs: &[TemplateEmbeddings]| -> Result<f64> {
        let ce = ensemble(embs)?;
        accuracy(&predict_all(videos, &ce, logit_scale)?, labels)
    };

    let mut per_template = Vec::new();
    for (t, e) in set.templates().iter().zip(encoded) {
        if t.class.is_some() {
            continue;
        }
        per_template.push(EvalRecord {
            template_id: t.id.clone(),
            strategy: t.strategy,
            provenance: t.provenance.clone(),
            accuracy: score(std::slice::from_ref(e))?,
            n_samples: videos.len(),
        });
    }

    let mut rows = Vec::new();
    for strategy in set.strategies() {
        let subset: Vec<TemplateEmbeddings> = set
            .templates()
            .iter()
            .zip(encoded)
            .filter(|(t, _)| t.strategy == strategy)
            .map(|(_, e)| e.clone())
            .collect();
        rows.push(StrategyRow {
            strategy,
            accuracy: score(&subset)?,
            n_templates: subset.len(),
        });
    }

    Ok(ExperimentReport {
        mode,
        rows,
        ensemble_accuracy: score(encoded)?,
        per_template,
        config: Vec::new(),
        training: Vec::new(),
    })
}

/// Zero-shot: pooled joint embeddings against prompt-ensembled class text.
pub fn run_zero_shot(
    clips: &[ClipEmbedding],
    set: &PromptSet,
    encoder: &dyn Encoder,
    vocab: &Vocabulary,
    logit_scale: f64,
) -> Result<ExperimentReport> {
    if set.is_empty() {
        return Err(Error::Empty("prompt set"));
    }
    let encoded = encode_templates(set, encoder, vocab)?;
    let labels: Vec<ClassLabel> = clips.iter().map(|c| c.label).collect();
    let videos = video_vectors(clips, VideoPath::Joint);
    evaluate(Mode::ZeroShot, &videos, &labels, set, &encoded, logit_scale)
}

/// Supervised: pooled features through the projection layer.
pub fn run_supervised(
    clips: &[ClipEmbedding],
    set: &PromptSet,
    layer: &ProjectionLayer<f32>,
    encoder: &dyn Encoder,
    vocab: &Vocabulary,
    logit_scale: f64,
) -> Result<ExperimentReport> {
    if set.is_empty() {
        return Err(Error::Empty("prompt set"));
    }
    let encoded = encode_templates(set, encoder, vocab)?;
    let labels: Vec<ClassLabel> = clips.iter().map(|c| c.label).collect();
    let videos = video_vectors(clips, VideoPath::Projected(layer));
    evaluate(Mode::Supervised, &videos, &labels, set, &encoded, logit_scale)
}

fn check_field(value: &str, what: &str) -> Result<()> {
    if value.contains([',', ';', '\n', '"']) {
        return Err(Error::InvalidArgument(format!(
            "{what} {value:?} cannot contain ',', ';', quotes or newlines"
        )));
    }
    Ok(())
}

pub fn format_report_csv(report: &ExperimentReport) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# mode={}", report.mode.name()).unwrap();
    for (k, v) in &report.config {
        writeln!(out, "# config {k}={v}").unwrap();
    }
    for r in &report.rows {
        writeln!(
            out,
            "# strategy {}={:.6} templates={}",
            r.strategy, r.accuracy, r.n_templates
        )
        .unwrap();
    }
    writeln!(out, "# ensemble={:.6}", report.ensemble_accuracy).unwrap();
    for m in &report.training {
        writeln!(
            out,
            "# epoch {} steps={} loss={:.6} train_accuracy={:.6}",
            m.epoch, m.steps, m.mean_loss, m.train_accuracy
        )
        .unwrap();
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &report.per_template {
        check_field(&r.template_id, "template id")?;
        for tok in &r.provenance {
            check_field(tok, "provenance token")?;
        }
        writeln!(
            out,
            "{},{},{},{:.6},{}",
            r.template_id,
            r.strategy,
            r.provenance.join(";"),
            r.accuracy,
            r.n_samples
        )
        .unwrap();
    }
    Ok(out)
}

pub fn write_report_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    fs::write(path, format_report_csv(report)?).map_err(|e| Error::io(path, e))
}

fn parse_comment(line: &str, report: &mut ExperimentReport, origin: &Path, n: usize) -> Result<()> {
    let bad = |what: &str| Error::parse(origin, n, format!("malformed {what} line"));
    let body = line.trim_start_matches('#').trim();
    if let Some(mode) = body.strip_prefix("mode=") {
        report.mode = match mode {
            "zero_shot" => Mode::ZeroShot,
            "supervised" => Mode::Supervised,
            _ => return Err(bad("mode")),
        };
    } else if let Some(kv) = body.strip_prefix("config ") {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("config"))?;
        report.config.push((k.to_string(), v.to_string()));
    } else if let Some(rest) = body.strip_prefix("strategy ") {
        let (name, rest) = rest.split_once('=').ok_or_else(|| bad("strategy"))?;
        let (acc, n_t) = rest.split_once(" templates=").ok_or_else(|| bad("strategy"))?;
        report.rows.push(StrategyRow {
            strategy: name.parse().map_err(|e: String| Error::parse(origin, n, e))?,
            accuracy: acc.parse().map_err(|_| bad("strategy"))?,
            n_templates: n_t.parse().map_err(|_| bad("strategy"))?,
        });
    } else if let Some(acc) = body.strip_prefix("ensemble=") {
        report.ensemble_accuracy = acc.parse().map_err(|_| bad("ensemble"))?;
    } else if let Some(rest) = body.strip_prefix("epoch ") {
        let parts: Vec<&str> = rest.split(' ').collect();
        let field = |i: usize, key: &str| -> Result<&str> {
            parts
                .get(i)
                .and_then(|p| p.strip_prefix(key))
                .ok_or_else(|| bad("epoch"))
        };
        report.training.push(EpochMetrics {
            epoch: parts[0].parse().map_err(|_| bad("epoch"))?,
            steps: field(1, "steps=")?.parse().map_err(|_| bad("epoch"))?,
            mean_loss: field(2, "loss=")?.parse().map_err(|_| bad("epoch"))?,
            train_accuracy: field(3, "train_accuracy=")?.parse().map_err(|_| bad("epoch"))?,
        });
    }
    Ok(())
}

/// Parse a report written by [`format_report_csv`]. Files holding only the
/// per-template table parse too, with default mode and no strategy rows.
pub fn parse_report_csv(text: &str, origin: &Path) -> Result<ExperimentReport> {
    let mut report = ExperimentReport {
        mode: Mode::ZeroShot,
        rows: Vec::new(),
        ensemble_accuracy: 0.0,
        per_template: Vec::new(),
        config: Vec::new(),
        training: Vec::new(),
    };
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            parse_comment(line, &mut report, origin, n)?;
            continue;
        }
        if !header_seen {
            if line.trim() != CSV_HEADER {
                return Err(Error::parse(origin, n, format!("expected header {CSV_HEADER:?}")));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(origin, n, format!("expected 5 fields, found {}", f.len())));
        }
        let accuracy: f64 = f[3]
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, n, format!("bad accuracy {:?}", f[3])))?;
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::parse(origin, n, format!("accuracy {accuracy} outside [0, 1]")));
        }
        let n_samples: usize = f[4]
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, n, format!("bad sample count {:?}", f[4])))?;
        if n_samples == 0 {
            return Err(Error::parse(origin, n, "sample count must be at least 1"));
        }
        report.per_template.push(EvalRecord {
            template_id: f[0].trim().to_string(),
            strategy: f[1].trim().parse().map_err(|e: String| Error::parse(origin, n, e))?,
            provenance: f[2]
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            accuracy,
            n_samples,
        });
    }
    if !header_seen {
        return Err(Error::parse(origin, 1, format!("missing header {CSV_HEADER:?}")));
    }
    Ok(report)
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_report_csv(&text, path)?.per_template)
}

/// Strategies as columns, accuracies in percent with one decimal.
pub fn format_report_markdown(report: &ExperimentReport) -> String {
    let mut out = format!("## {} setting\n\n", report.mode.title());
    out.push_str("| Model |");
    for r in &report.rows {
        write!(out, " {} |", r.strategy).unwrap();
    }
    if report.rows.len() > 1 {
        out.push_str(" ensemble |");
    }
    out.push_str("\n|---|");
    for _ in 0..report.rows.len() + usize::from(report.rows.len() > 1) {
        out.push_str("---|");
    }
    let label = match report.mode {
        Mode::ZeroShot => "Vanilla",
        Mode::Supervised => "Vanilla (PL)",
    };
    write!(out, "\n| {label} |").unwrap();
    for r in &report.rows {
        write!(out, " {:.1} |", 100.0 * r.accuracy).unwrap();
    }
    if report.rows.len() > 1 {
        write!(out, " {:.1} |", 100.0 * report.ensemble_accuracy).unwrap();
    }
    out.push('\n');
    if !report.config.is_empty() {
        out.push_str("\nConfiguration:\n\n");
        for (k, v) in &report.config {
            writeln!(out, "- {k}: {v}").unwrap();
        }
    }
    out
}

pub fn write_report_markdown(report: &ExperimentReport, path: &Path) -> Result<()> {
    fs::write(path, format_report_markdown(report)).map_err(|e| Error::io(path, e))
}
