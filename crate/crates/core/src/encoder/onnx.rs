//! Encoder backed by exported ONNX graphs, executed with tract.
//!
//! Image graph: input float32 `1×3×224×224`, outputs `features_768` (1×768)
//! and `embed_512` (1×512). Text graph: input int64 `1×77`, output
//! `embed_512` (1×512).

use std::path::Path;
use std::sync::Arc;

use tract_onnx::prelude::*;

use super::{
    BackendKind, Encoder, FrameFeature, FrameTensor, JointImageEmbedding, Normalization,
    TextEmbedding, CHANNELS, IMAGE_SIZE,
};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenSequence, DEFAULT_CONTEXT_LENGTH};
use crate::types::{EMBED_DIM, FEATURE_DIM};

pub const FEATURES_OUTPUT: &str = "features_768";
pub const EMBED_OUTPUT: &str = "embed_512";

type Plan = Arc<TypedRunnableModel>;

pub struct OnnxEncoder {
    image: Plan,
    text: Plan,
    norm: Normalization,
}

fn backend_err(path: &Path) -> impl Fn(TractError) -> Error + '_ {
    move |e| Error::Backend(format!("{}: {e:#}", path.display()))
}

fn load_plan(path: &Path, input: InferenceFact, outputs: &[&str]) -> Result<Plan> {
    if !path.is_file() {
        return Err(Error::Backend(format!(
            "model file {} does not exist",
            path.display()
        )));
    }
    let err = backend_err(path);
    tract_onnx::onnx()
        .model_for_path(path)
        .map_err(&err)?
        .with_input_fact(0, input)
        .map_err(&err)?
        .with_outputs_by_name(outputs)
        .map_err(&err)?
        .into_optimized()
        .map_err(&err)?
        .into_runnable()
        .map_err(&err)
}

fn output_vec(value: &TValue, what: &'static str, expected: usize) -> Result<Vec<f32>> {
    let view = value
        .to_plain_array_view::<f32>()
        .map_err(|e| Error::Backend(format!("{what}: {e}")))?;
    if view.len() != expected {
        return Err(Error::Dimension {
            what,
            expected,
            actual: view.len(),
        });
    }
    Ok(view.iter().copied().collect())
}

impl OnnxEncoder {
    pub fn load(image_model: &Path, text_model: &Path, norm: Normalization) -> Result<Self> {
        let image = load_plan(
            image_model,
            f32::fact([1, CHANNELS, IMAGE_SIZE, IMAGE_SIZE]).into(),
            &[FEATURES_OUTPUT, EMBED_OUTPUT],
        )?;
        let text = load_plan(
            text_model,
            i64::fact([1, DEFAULT_CONTEXT_LENGTH]).into(),
            &[EMBED_OUTPUT],
        )?;
        Ok(OnnxEncoder { image, text, norm })
    }

    fn run_frame(&self, frame: &FrameTensor) -> Result<(FrameFeature, JointImageEmbedding)> {
        let input = Tensor::from_shape(&[1, CHANNELS, IMAGE_SIZE, IMAGE_SIZE], frame.data())
            .map_err(|e| Error::Backend(e.to_string()))?;
        let out = self
            .image
            .run(tvec!(input.into()))
            .map_err(|e| Error::Backend(format!("image encoder: {e:#}")))?;
        let feat = output_vec(&out[0], "image features_768 output", FEATURE_DIM)?;
        let joint = output_vec(&out[1], "image embed_512 output", EMBED_DIM)?;
        Ok((FrameFeature::new(feat)?, JointImageEmbedding::new(joint)?))
    }
}

impl Encoder for OnnxEncoder {
    fn encode_frames(
        &self,
        frames: &[FrameTensor],
    ) -> Result<(Vec<FrameFeature>, Vec<JointImageEmbedding>)> {
        if frames.is_empty() {
            return Err(Error::Empty("frame list"));
        }
        let mut feats = Vec::with_capacity(frames.len());
        let mut joints = Vec::with_capacity(frames.len());
        for frame in frames {
            let (f, j) = self.run_frame(frame)?;
            feats.push(f);
            joints.push(j);
        }
        Ok((feats, joints))
    }

    fn encode_text(&self, tokens: &TokenSequence) -> Result<TextEmbedding> {
        if tokens.len() != DEFAULT_CONTEXT_LENGTH {
            return Err(Error::Dimension {
                what: "text model input",
                expected: DEFAULT_CONTEXT_LENGTH,
                actual: tokens.len(),
            });
        }
        let ids: Vec<i64> = tokens.ids().iter().map(|&i| i as i64).collect();
        let input = Tensor::from_shape(&[1, DEFAULT_CONTEXT_LENGTH], &ids)
            .map_err(|e| Error::Backend(e.to_string()))?;
        let out = self
            .text
            .run(tvec!(input.into()))
            .map_err(|e| Error::Backend(format!("text encoder: {e:#}")))?;
        TextEmbedding::new(output_vec(&out[0], "text embed_512 output", EMBED_DIM)?)
    }

    fn kind(&self) -> BackendKind {
        BackendKind::ModelFile
    }

    fn normalization(&self) -> Normalization {
        self.norm
    }
}
