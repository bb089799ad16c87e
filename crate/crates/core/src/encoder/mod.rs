//! Frame preprocessing and the frozen image/text encoders.
//!
//! Encoders are interchangeable behind the [`Encoder`] trait. The
//! [`reference`] backend is a seeded, model-free stand-in that keeps the
//! whole pipeline runnable and testable; the `onnx` feature adds a backend
//! that runs exported encoder graphs.

use std::path::PathBuf;

use image::imageops::FilterType;
use image::DynamicImage;

use crate::error::{Error, Result};
use crate::tokenizer::TokenSequence;
use crate::types::{EMBED_DIM, FEATURE_DIM};

#[cfg(feature = "onnx")]
pub mod onnx;
pub mod reference;

pub use reference::ReferenceEncoder;

pub const IMAGE_SIZE: usize = 224;
pub const CHANNELS: usize = 3;
pub const FRAME_LEN: usize = CHANNELS * IMAGE_SIZE * IMAGE_SIZE;

/// Per-channel standardization constants applied after scaling to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

#[allow(clippy::excessive_precision)]
impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
            std: [0.268_629_54, 0.261_302_58, 0.275_777_11],
        }
    }
}

/// A preprocessed frame: 3×224×224, channel-major, standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    data: Vec<f32>,
}

impl FrameTensor {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.len() != FRAME_LEN {
            return Err(Error::Dimension {
                what: "frame tensor",
                expected: FRAME_LEN,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("frame tensor has non-finite values".into()));
        }
        Ok(FrameTensor { data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * IMAGE_SIZE + y) * IMAGE_SIZE + x]
    }
}

macro_rules! fixed_vector {
    ($(#[$meta:meta])* $name:ident, $dim:expr, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Vec<f32>);

        impl $name {
            pub const DIM: usize = $dim;

            pub fn new(values: Vec<f32>) -> Result<Self> {
                if values.len() != $dim {
                    return Err(Error::Dimension {
                        what: $what,
                        expected: $dim,
                        actual: values.len(),
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(concat!($what, " has non-finite values").into()));
                }
                Ok($name(values))
            }

            pub fn values(&self) -> &[f32] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f32> {
                self.0
            }
        }

        impl AsRef<[f32]> for $name {
            fn as_ref(&self) -> &[f32] {
                &self.0
            }
        }
    };
}

fixed_vector!(
    /// Pre-projection image feature of one frame.
    FrameFeature,
    FEATURE_DIM,
    "frame feature"
);
fixed_vector!(
    /// Frame embedding in the joint image/text space.
    JointImageEmbedding,
    EMBED_DIM,
    "joint image embedding"
);
fixed_vector!(TextEmbedding, EMBED_DIM, "text embedding");

/// A frozen image + text encoder pair.
pub trait Encoder: Send + Sync {
    /// One feature and one joint embedding per frame, in input order.
    fn encode_frames(
        &self,
        frames: &[FrameTensor],
    ) -> Result<(Vec<FrameFeature>, Vec<JointImageEmbedding>)>;

    fn encode_text(&self, tokens: &TokenSequence) -> Result<TextEmbedding>;

    fn kind(&self) -> BackendKind;

    fn normalization(&self) -> Normalization {
        Normalization::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Reference,
    ModelFile,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Reference => "reference",
            BackendKind::ModelFile => "model",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BackendKind::Reference => 0,
            BackendKind::ModelFile => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub image_model_path: Option<PathBuf>,
    pub text_model_path: Option<PathBuf>,
    pub seed: u64,
    pub normalization: Normalization,
}

impl BackendConfig {
    pub fn reference(seed: u64) -> Self {
        BackendConfig {
            kind: BackendKind::Reference,
            image_model_path: None,
            text_model_path: None,
            seed,
            normalization: Normalization::default(),
        }
    }

    pub fn model_files(image: impl Into<PathBuf>, text: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::ModelFile,
            image_model_path: Some(image.into()),
            text_model_path: Some(text.into()),
            seed: 0,
            normalization: Normalization::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::ModelFile
            && (self.image_model_path.is_none() || self.text_model_path.is_none())
        {
            return Err(Error::InvalidArgument(
                "model-file backend requires both image and text model paths".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Encoder>> {
        self.validate()?;
        match self.kind {
            BackendKind::Reference => Ok(Box::new(ReferenceEncoder::new(
                self.seed,
                self.normalization,
            ))),
            BackendKind::ModelFile => self.build_model_file(),
        }
    }

    #[cfg(feature = "onnx")]
    fn build_model_file(&self) -> Result<Box<dyn Encoder>> {
        let enc = onnx::OnnxEncoder::load(
            self.image_model_path.as_ref().unwrap(),
            self.text_model_path.as_ref().unwrap(),
            self.normalization,
        )?;
        Ok(Box::new(enc))
    }

    #[cfg(not(feature = "onnx"))]
    fn build_model_file(&self) -> Result<Box<dyn Encoder>> {
        Err(Error::Backend(
            "this build has no model-file support (enable the `onnx` feature)".into(),
        ))
    }
}

/// Resize the shorter side to 224 (bilinear), center-crop 224×224, scale to
/// [0, 1] and standardize per channel.
pub fn preprocess_frame(image: &DynamicImage, norm: &Normalization) -> Result<FrameTensor> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot preprocess a {w}x{h} image"
        )));
    }
    let (nw, nh) = if w <= h {
        (IMAGE_SIZE, ((h * IMAGE_SIZE) as f64 / w as f64).round() as usize)
    } else {
        (((w * IMAGE_SIZE) as f64 / h as f64).round() as usize, IMAGE_SIZE)
    };
    let rgb = image.to_rgb32f();
    let resized = if (nw, nh) == (w, h) {
        rgb
    } else {
        image::imageops::resize(&rgb, nw as u32, nh as u32, FilterType::Triangle)
    };
    let left = (nw - IMAGE_SIZE) / 2;
    let top = (nh - IMAGE_SIZE) / 2;

    let mut data = vec![0f32; FRAME_LEN];
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let px = resized.get_pixel((left + x) as u32, (top + y) as u32);
            for c in 0..CHANNELS {
                data[(c * IMAGE_SIZE + y) * IMAGE_SIZE + x] = (px[c] - norm.mean[c]) / norm.std[c];
            }
        }
    }
    FrameTensor::new(data)
}
