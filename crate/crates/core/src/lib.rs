//! Malicious-or-benign classification of short cartoon clips with frozen
//! vision/text encoders.
//!
//! The pipeline: sample frames from a clip, encode each frame, pool over
//! time, then compare the clip embedding against prompt-ensembled class text
//! embeddings by cosine similarity. In the supervised setting a single
//! trainable 768→512 linear projection sits between the pooled image
//! features and the similarity head; everything else stays frozen.
//!
//! Modules map onto pipeline stages:
//!
//! * [`tokenizer`]: byte-pair encoding to fixed-length token sequences
//! * [`encoder`]: frame preprocessing and the pluggable frozen encoders
//! * [`embedding`]: pooling, normalization, cosine similarity, ensembling
//! * [`prompt`]: prompt template generation for every strategy
//! * [`apriori`]: frequent token-pair mining over well-performing templates
//! * [`zero_shot`]: classification without the projection layer
//! * [`projection`]: the projection layer, its gradients, Adam and training
//! * [`dataset`]: manifests, frame sampling and loading
//! * [`eval`]: accuracy, experiment reports and their CSV/markdown forms

pub mod apriori;
pub mod cache;
pub mod dataset;
pub mod embedding;
pub mod encoder;
mod error;
pub mod eval;
pub mod parity;
pub mod projection;
pub mod prompt;
pub mod synth;
pub mod tokenizer;
mod types;
pub mod zero_shot;

pub use error::{Error, Result};
pub use types::{ClassLabel, Split, EMBED_DIM, FEATURE_DIM};

pub use apriori::{FrequentPair, Transaction};
pub use dataset::ManifestEntry;
pub use embedding::{ClassTextEmbedding, Pooling, VideoEmbedding};
pub use encoder::{
    BackendConfig, BackendKind, Encoder, FrameFeature, FrameTensor, JointImageEmbedding,
    TextEmbedding,
};
pub use eval::{EvalRecord, ExperimentReport};
pub use projection::{AdamState, ProjectionLayer, TrainConfig};
pub use prompt::{PromptSet, PromptTemplate, Strategy, TokenLists};
pub use tokenizer::{TokenSequence, Vocabulary};
pub use zero_shot::{ClassEmbeddings, ClassScores};
