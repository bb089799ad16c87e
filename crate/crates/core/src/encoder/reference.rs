//! Seeded, model-free encoder.
//!
//! Image side: a 64-bin histogram per channel of the de-standardized pixel
//! values (192 bins in total) is mapped to a 768-d feature by a fixed random
//! matrix, and the joint embedding is a second fixed random 512×768 matrix
//! applied to that feature. Text side: each (token id, position) pair up to
//! and including the end marker contributes a seeded random 512-d vector.
//!
//! Everything is a pure function of the seed, so outputs are reproducible
//! and any change to the seed changes them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{
    BackendKind, Encoder, FrameFeature, FrameTensor, JointImageEmbedding, Normalization,
    TextEmbedding, CHANNELS, IMAGE_SIZE,
};
use crate::error::Result;
use crate::tokenizer::TokenSequence;
use crate::types::{EMBED_DIM, FEATURE_DIM};

pub const HIST_BINS: usize = 64;
const HIST_LEN: usize = HIST_BINS * CHANNELS;

const HIST_STREAM: u64 = 0x6869_7374;
const JOINT_STREAM: u64 = 0x6a6f_696e;
const TEXT_STREAM: u64 = 0x7465_7874;

pub struct ReferenceEncoder {
    seed: u64,
    norm: Normalization,
    /// FEATURE_DIM × HIST_LEN, row-major.
    hist_proj: Vec<f32>,
    /// EMBED_DIM × FEATURE_DIM, row-major.
    joint_proj: Vec<f32>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn gaussian_matrix(seed: u64, len: usize, scale: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let v: f32 = StandardNormal.sample(&mut rng);
            v * scale
        })
        .collect()
}

fn matvec(m: &[f32], rows: usize, cols: usize, v: &[f32]) -> Vec<f32> {
    debug_assert_eq!(m.len(), rows * cols);
    m.chunks_exact(cols)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

impl ReferenceEncoder {
    pub fn new(seed: u64, norm: Normalization) -> Self {
        // Histogram entries sum to 1 per channel; scale so features have
        // roughly unit-order entries.
        let hist_proj = gaussian_matrix(splitmix(seed ^ HIST_STREAM), FEATURE_DIM * HIST_LEN, 8.0);
        let joint_proj = gaussian_matrix(
            splitmix(seed ^ JOINT_STREAM),
            EMBED_DIM * FEATURE_DIM,
            1.0 / (FEATURE_DIM as f32).sqrt(),
        );
        ReferenceEncoder {
            seed,
            norm,
            hist_proj,
            joint_proj,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The fixed EMBED_DIM × FEATURE_DIM matrix mapping features to joint embeddings.
    pub fn joint_matrix(&self) -> &[f32] {
        &self.joint_proj
    }

    pub fn histogram(&self, frame: &FrameTensor) -> Vec<f32> {
        let mut hist = vec![0f32; HIST_LEN];
        let plane = (IMAGE_SIZE * IMAGE_SIZE) as f32;
        for c in 0..CHANNELS {
            let (mean, std) = (self.norm.mean[c], self.norm.std[c]);
            let bins = &mut hist[c * HIST_BINS..(c + 1) * HIST_BINS];
            for &v in frame.channel(c) {
                let raw = v * std + mean;
                let bin = ((raw * HIST_BINS as f32).floor().max(0.0) as usize).min(HIST_BINS - 1);
                bins[bin] += 1.0;
            }
            bins.iter_mut().for_each(|b| *b /= plane);
        }
        hist
    }

    pub fn feature(&self, frame: &FrameTensor) -> FrameFeature {
        let hist = self.histogram(frame);
        FrameFeature(matvec(&self.hist_proj, FEATURE_DIM, HIST_LEN, &hist))
    }

    pub fn joint(&self, feature: &FrameFeature) -> JointImageEmbedding {
        JointImageEmbedding(matvec(
            &self.joint_proj,
            EMBED_DIM,
            FEATURE_DIM,
            feature.values(),
        ))
    }

    fn token_vector(&self, id: u32, pos: usize, acc: &mut [f32]) {
        let key = splitmix(splitmix(self.seed ^ TEXT_STREAM) ^ ((id as u64) << 8) ^ pos as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let scale = 1.0 / (EMBED_DIM as f32).sqrt();
        for a in acc.iter_mut() {
            let v: f32 = StandardNormal.sample(&mut rng);
            *a += v * scale;
        }
    }
}

impl Encoder for ReferenceEncoder {
    fn encode_frames(
        &self,
        frames: &[FrameTensor],
    ) -> Result<(Vec<FrameFeature>, Vec<JointImageEmbedding>)> {
        if frames.is_empty() {
            return Err(crate::Error::Empty("frame list"));
        }
        let features: Vec<FrameFeature> = frames.par_iter().map(|f| self.feature(f)).collect();
        let joints = features.iter().map(|f| self.joint(f)).collect();
        Ok((features, joints))
    }

    fn encode_text(&self, tokens: &TokenSequence) -> Result<TextEmbedding> {
        let mut acc = vec![0f32; EMBED_DIM];
        let ids = &tokens.ids()[..=tokens.eot_index()];
        for (pos, &id) in ids.iter().enumerate() {
            self.token_vector(id, pos, &mut acc);
        }
        Ok(TextEmbedding(acc))
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Reference
    }

    fn normalization(&self) -> Normalization {
        self.norm
    }
}
