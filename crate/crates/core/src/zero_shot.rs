//! Zero-shot classification: scaled cosine similarity between a pooled clip
//! embedding and prompt-ensembled class text embeddings, then softmax.

use rayon::prelude::*;

use crate::embedding::{cosine_similarity, ensemble_class_embedding, ClassTextEmbedding};
use crate::encoder::{Encoder, TextEmbedding};
use crate::error::{Error, Result};
use crate::prompt::{PromptSet, PromptTemplate};
use crate::tokenizer::Vocabulary;
use crate::types::ClassLabel;

pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

/// One text embedding per class, indexed in [`ClassLabel::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddings {
    by_class: [ClassTextEmbedding; 2],
}

impl ClassEmbeddings {
    pub fn new(malicious: ClassTextEmbedding, benign: ClassTextEmbedding) -> Result<Self> {
        if malicious.label != ClassLabel::Malicious || benign.label != ClassLabel::Benign {
            return Err(Error::InvalidArgument("class embeddings passed in the wrong order".into()));
        }
        if malicious.values().len() != benign.values().len() {
            return Err(Error::Dimension {
                what: "benign class embedding",
                expected: malicious.values().len(),
                actual: benign.values().len(),
            });
        }
        Ok(ClassEmbeddings {
            by_class: [malicious, benign],
        })
    }

    pub fn get(&self, label: ClassLabel) -> &ClassTextEmbedding {
        &self.by_class[label.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassTextEmbedding> {
        self.by_class.iter()
    }

    pub fn dim(&self) -> usize {
        self.by_class[0].values().len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub similarities: [f64; 2],
    pub probabilities: [f64; 2],
    pub predicted: ClassLabel,
}

impl ClassScores {
    pub fn probability(&self, label: ClassLabel) -> f64 {
        self.probabilities[label.index()]
    }
}

/// Text embeddings of one template rendered for each class it describes.
#[derive(Debug, Clone)]
pub struct TemplateEmbeddings {
    pub template_id: String,
    pub by_class: [Option<TextEmbedding>; 2],
}

pub fn encode_template(
    template: &PromptTemplate,
    encoder: &dyn Encoder,
    vocab: &Vocabulary,
) -> Result<TemplateEmbeddings> {
    let mut by_class = [None, None];
    for class in ClassLabel::ALL {
        if template.class.is_some_and(|c| c != class) {
            continue;
        }
        let tokens = vocab.encode(&template.render(class.name()))?;
        by_class[class.index()] = Some(encoder.encode_text(&tokens)?);
    }
    Ok(TemplateEmbeddings {
        template_id: template.id.clone(),
        by_class,
    })
}

/// Encode every template for every class it applies to, in set order.
pub fn encode_templates(
    set: &PromptSet,
    encoder: &dyn Encoder,
    vocab: &Vocabulary,
) -> Result<Vec<TemplateEmbeddings>> {
    set.templates()
        .par_iter()
        .map(|t| encode_template(t, encoder, vocab))
        .collect()
}

/// Ensemble already-encoded templates into per-class embeddings.
pub fn ensemble(encoded: &[TemplateEmbeddings]) -> Result<ClassEmbeddings> {
    let per_class = |class: ClassLabel| -> Result<ClassTextEmbedding> {
        let embs: Vec<TextEmbedding> = encoded
            .iter()
            .filter_map(|t| t.by_class[class.index()].clone())
            .collect();
        if embs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "prompt set has no template describing class {class}"
            )));
        }
        ensemble_class_embedding(&embs, class)
    };
    ClassEmbeddings::new(
        per_class(ClassLabel::Malicious)?,
        per_class(ClassLabel::Benign)?,
    )
}

/// Render, encode and ensemble the prompt set once per class.
pub fn class_embeddings(
    set: &PromptSet,
    encoder: &dyn Encoder,
    vocab: &Vocabulary,
) -> Result<ClassEmbeddings> {
    if set.is_empty() {
        return Err(Error::Empty("prompt set"));
    }
    ensemble(&encode_templates(set, encoder, vocab)?)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the earliest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify(
    video: &[f32],
    class_embs: &ClassEmbeddings,
    logit_scale: f64,
) -> Result<ClassScores> {
    if !(logit_scale >= 0.0 && logit_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "logit scale must be finite and non-negative, got {logit_scale}"
        )));
    }
    if video.len() != class_embs.dim() {
        return Err(Error::Dimension {
            what: "video embedding for classification",
            expected: class_embs.dim(),
            actual: video.len(),
        });
    }
    let mut similarities = [0f64; 2];
    for emb in class_embs.iter() {
        similarities[emb.label.index()] = cosine_similarity(video, emb.values())?;
    }
    let logits: Vec<f64> = similarities.iter().map(|s| s * logit_scale).collect();
    let p = softmax(&logits);
    let probabilities = [p[0], p[1]];
    let predicted = ClassLabel::from_index(argmax(&probabilities)).unwrap();
    Ok(ClassScores {
        similarities,
        probabilities,
        predicted,
    })
}
