//! Optional TOML overlay for flags. Values given on the command line win,
//! then values from the file, then built-in defaults.
//!
//! ```toml
//! seed = 7
//! threads = 4
//!
//! [backend]
//! kind = "model"
//! image_model = "bundle/image_encoder.onnx"
//! text_model = "bundle/text_encoder.onnx"
//! vocab = "bundle/vocab.txt"
//! merges = "bundle/merges.txt"
//!
//! [train]
//! epochs = 20
//! batch = 16
//! lr = 1e-4
//!
//! [eval]
//! frames = 16
//! pooling = "mean"
//! logit_scale = 100.0
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub image_model: Option<PathBuf>,
    pub text_model: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub merges: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub frames: Option<usize>,
    pub pooling: Option<String>,
    pub logit_scale: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
