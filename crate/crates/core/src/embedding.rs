//! Temporal pooling, normalization, cosine similarity and prompt ensembling.
//!
//! Sums run left to right in f64 so results do not depend on thread count.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::TextEmbedding;
use crate::error::{Error, Result};
use crate::types::ClassLabel;

pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            other => Err(format!("unknown pooling {other:?} (allowed: mean, max)")),
        }
    }
}

/// A clip-level embedding: 768-d before projection, 512-d after projection
/// or in the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbedding {
    values: Vec<f32>,
}

impl VideoEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("video embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("video embedding has non-finite values".into()));
        }
        Ok(VideoEmbedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.values
    }
}

impl AsRef<[f32]> for VideoEmbedding {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

/// Unit-norm per-class text embedding built from one or more templates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTextEmbedding {
    pub label: ClassLabel,
    values: Vec<f32>,
    n_templates: usize,
}

impl ClassTextEmbedding {
    /// Normalizes `values`; the result is unit norm unless `values` is ~0.
    pub fn from_vector(label: ClassLabel, values: &[f32], n_templates: usize) -> Self {
        ClassTextEmbedding {
            label,
            values: l2_normalize(values).values,
            n_templates: n_templates.max(1),
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn n_templates(&self) -> usize {
        self.n_templates
    }
}

/// Output of [`l2_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f32>,
    /// The input norm was below the guard and the output is not unit norm.
    pub degenerate: bool,
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn temporal_pool<V: AsRef<[f32]>>(frames: &[V], mode: Pooling) -> Result<VideoEmbedding> {
    let first = frames.first().ok_or(Error::Empty("frame vectors to pool"))?.as_ref();
    let dim = first.len();
    if let Some(bad) = frames.iter().find(|f| f.as_ref().len() != dim) {
        return Err(Error::Dimension {
            what: "frame vector in pooling",
            expected: dim,
            actual: bad.as_ref().len(),
        });
    }
    let values = match mode {
        Pooling::Mean => {
            let mut acc = vec![0f64; dim];
            for f in frames {
                for (a, &x) in acc.iter_mut().zip(f.as_ref()) {
                    *a += x as f64;
                }
            }
            let n = frames.len() as f64;
            acc.into_iter().map(|a| (a / n) as f32).collect()
        }
        Pooling::Max => {
            let mut acc = first.to_vec();
            for f in &frames[1..] {
                for (a, &x) in acc.iter_mut().zip(f.as_ref()) {
                    *a = a.max(x);
                }
            }
            acc
        }
    };
    VideoEmbedding::new(values)
}

/// `v / max(||v||, 1e-8)`, flagging inputs whose norm falls under the guard.
pub fn l2_normalize(v: &[f32]) -> Normalized {
    let n = norm(v);
    let degenerate = n < NORM_EPS;
    let denom = n.max(NORM_EPS);
    Normalized {
        values: v.iter().map(|&x| (x as f64 / denom) as f32).collect(),
        degenerate,
    }
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "cosine similarity operand",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot(a, b) / (norm(a).max(NORM_EPS) * norm(b).max(NORM_EPS)))
}

/// Normalize each template embedding, average, renormalize.
pub fn ensemble_class_embedding(
    templates: &[TextEmbedding],
    label: ClassLabel,
) -> Result<ClassTextEmbedding> {
    let dim = templates
        .first()
        .ok_or(Error::Empty("template embeddings to ensemble"))?
        .values()
        .len();
    let mut acc = vec![0f64; dim];
    for t in templates {
        let v = t.values();
        let n = norm(v).max(NORM_EPS);
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64 / n;
        }
    }
    let k = templates.len() as f64;
    let mean: Vec<f64> = acc.into_iter().map(|a| a / k).collect();
    let n = mean.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
    Ok(ClassTextEmbedding {
        label,
        values: mean.iter().map(|x| (x / n) as f32).collect(),
        n_templates: templates.len(),
    })
}
