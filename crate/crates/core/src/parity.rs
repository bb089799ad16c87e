//! Cross-checks the model-file backend against reference vectors shipped
//! with an exported encoder bundle.
//!
//! `parity.bin` layout, little-endian: magic `MOBX`, u32 version (1), u32
//! image case count, u32 text case count, u32 context length. Each image
//! case is a preprocessed 3×224×224 f32 input, the expected 768-d feature
//! and the expected 512-d embedding. Each text case is a u32 byte length,
//! the UTF-8 prompt, the expected token ids as i64 and the expected 512-d
//! embedding.

use std::fs;
use std::path::{Path, PathBuf};

use crate::encoder::{BackendConfig, Encoder, FrameTensor, FRAME_LEN};
use crate::error::{Error, Result};
use crate::tokenizer::{load_vocabulary, Vocabulary};
use crate::types::{EMBED_DIM, FEATURE_DIM};

pub const PARITY_MAGIC: &[u8; 4] = b"MOBX";
pub const PARITY_TOLERANCE: f64 = 1e-3;
const VERSION: u32 = 1;

pub const IMAGE_MODEL_FILE: &str = "image_encoder.onnx";
pub const TEXT_MODEL_FILE: &str = "text_encoder.onnx";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MERGES_FILE: &str = "merges.txt";
pub const VISUAL_PROJECTION_FILE: &str = "visual_proj.bin";
pub const PARITY_FILE: &str = "parity.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageCase {
    pub input: Vec<f32>,
    pub features: Vec<f32>,
    pub embed: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextCase {
    pub text: String,
    pub ids: Vec<i64>,
    pub embed: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityCases {
    pub context_length: usize,
    pub images: Vec<ImageCase>,
    pub texts: Vec<TextCase>,
}

fn push_f32s(buf: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn write_parity(path: &Path, cases: &ParityCases) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PARITY_MAGIC);
    for n in [VERSION, cases.images.len() as u32, cases.texts.len() as u32, cases.context_length as u32] {
        buf.extend_from_slice(&n.to_le_bytes());
    }
    for c in &cases.images {
        push_f32s(&mut buf, &c.input);
        push_f32s(&mut buf, &c.features);
        push_f32s(&mut buf, &c.embed);
    }
    for c in &cases.texts {
        buf.extend_from_slice(&(c.text.len() as u32).to_le_bytes());
        buf.extend_from_slice(c.text.as_bytes());
        for id in &c.ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        push_f32s(&mut buf, &c.embed);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_parity(path: &Path) -> Result<ParityCases> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(Error::format(path, "parity file is truncated"));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    if take(4)? != PARITY_MAGIC {
        return Err(Error::format(path, "bad magic, expected \"MOBX\""));
    }
    let mut u32s = [0u32; 4];
    for v in &mut u32s {
        *v = u32::from_le_bytes(take(4)?.try_into().unwrap());
    }
    let [version, n_img, n_txt, ctx] = u32s;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported parity version {version}")));
    }
    let f32s = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let mut images = Vec::new();
    for _ in 0..n_img {
        images.push(ImageCase {
            input: f32s(take(4 * FRAME_LEN)?),
            features: f32s(take(4 * FEATURE_DIM)?),
            embed: f32s(take(4 * EMBED_DIM)?),
        });
    }
    let mut texts = Vec::new();
    for _ in 0..n_txt {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let text = String::from_utf8(take(len)?.to_vec())
            .map_err(|_| Error::format(path, "prompt text is not UTF-8"))?;
        let ids = take(8 * ctx as usize)?
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        texts.push(TextCase {
            text,
            ids,
            embed: f32s(take(4 * EMBED_DIM)?),
        });
    }
    if pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last parity case"));
    }
    Ok(ParityCases {
        context_length: ctx as usize,
        images,
        texts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityReport {
    pub image_cases: usize,
    pub text_cases: usize,
    pub max_feature_diff: f64,
    pub max_image_embed_diff: f64,
    pub max_text_embed_diff: f64,
    /// Text cases whose token ids differ from the stored ids.
    pub token_mismatches: usize,
}

impl ParityReport {
    pub fn max_diff(&self) -> f64 {
        self.max_feature_diff
            .max(self.max_image_embed_diff)
            .max(self.max_text_embed_diff)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.token_mismatches == 0 && self.max_diff() < tolerance
    }
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}

pub fn check_parity(cases: &ParityCases, encoder: &dyn Encoder, vocab: &Vocabulary) -> Result<ParityReport> {
    let mut report = ParityReport {
        image_cases: cases.images.len(),
        text_cases: cases.texts.len(),
        max_feature_diff: 0.0,
        max_image_embed_diff: 0.0,
        max_text_embed_diff: 0.0,
        token_mismatches: 0,
    };
    for c in &cases.images {
        let (f, e) = encoder.encode_frames(&[FrameTensor::new(c.input.clone())?])?;
        report.max_feature_diff = report.max_feature_diff.max(max_abs_diff(f[0].values(), &c.features));
        report.max_image_embed_diff = report.max_image_embed_diff.max(max_abs_diff(e[0].values(), &c.embed));
    }
    for c in &cases.texts {
        let tokens = vocab.encode(&c.text)?;
        let same = tokens.ids().len() == c.ids.len()
            && tokens.ids().iter().zip(&c.ids).all(|(&a, &b)| a as i64 == b);
        if !same {
            log::warn!("token ids differ for parity prompt {:?}", c.text);
            report.token_mismatches += 1;
        }
        let emb = encoder.encode_text(&tokens)?;
        report.max_text_embed_diff = report.max_text_embed_diff.max(max_abs_diff(emb.values(), &c.embed));
    }
    Ok(report)
}

/// Load the encoders, vocabulary and parity cases from an export bundle
/// directory and compare.
pub fn check_bundle(dir: &Path) -> Result<ParityReport> {
    let file = |name: &str| -> PathBuf { dir.join(name) };
    let cases = read_parity(&file(PARITY_FILE))?;
    let vocab = load_vocabulary(&file(VOCAB_FILE), &file(MERGES_FILE))?
        .with_context_length(cases.context_length)?;
    let encoder = BackendConfig::model_files(file(IMAGE_MODEL_FILE), file(TEXT_MODEL_FILE)).build()?;
    check_parity(&cases, encoder.as_ref(), &vocab)
}
