//! The trainable 768→512 projection layer on top of frozen pooled image
//! features.
//!
//! For a pooled feature `x` the layer computes `z = W x + b`, normalizes it
//! to `ẑ = z / max(‖z‖, ε)`, scores each class as `s · ẑ·t_c` against the
//! frozen unit-norm class text embeddings `t_c`, and applies softmax.
//! Training minimizes mean cross-entropy with Adam. Gradients are closed
//! form:
//!
//! ```text
//! ∂L/∂logit_c = p_c − y_c
//! g           = s Σ_c (p_c − y_c) t_c                 (∂L/∂ẑ)
//! ∂L/∂z       = g/‖z‖ − z (z·g)/‖z‖³                   (‖z‖ > ε; g/ε otherwise)
//! ∂L/∂W       = (∂L/∂z) xᵀ,   ∂L/∂b = ∂L/∂z
//! ```
//!
//! Everything is generic over the float type: production training runs in
//! `f32`, gradient checking in `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Pooling;
use crate::error::{Error, Result};
use crate::types::{ClassLabel, EMBED_DIM, FEATURE_DIM};
use crate::zero_shot::{ClassEmbeddings, DEFAULT_LOGIT_SCALE};

pub const NORM_GUARD: f64 = 1e-8;
pub const PROJECTION_MAGIC: &[u8; 4] = b"MOBP";
pub const VISUAL_PROJECTION_MAGIC: &[u8; 4] = b"MOBV";

fn c<T: Float>(x: f64) -> T {
    T::from(x).unwrap()
}

/// Dense `out × in` weight (row-major) plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionLayer<T = f32> {
    out_dim: usize,
    in_dim: usize,
    weight: Vec<T>,
    bias: Vec<T>,
}

impl<T: Float> ProjectionLayer<T> {
    pub fn from_parts(out_dim: usize, in_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != out_dim * in_dim {
            return Err(Error::Dimension {
                what: "projection weight",
                expected: out_dim * in_dim,
                actual: weight.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::Dimension {
                what: "projection bias",
                expected: out_dim,
                actual: bias.len(),
            });
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("projection has non-finite parameters".into()));
        }
        Ok(ProjectionLayer {
            out_dim,
            in_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        ProjectionLayer {
            out_dim,
            in_dim,
            weight: vec![T::zero(); out_dim * in_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Uniform in ±√(6/(in+out)), zero bias.
    pub fn glorot<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..out_dim * in_dim)
            .map(|_| c(rng.random_range(-limit..limit)))
            .collect();
        ProjectionLayer {
            out_dim,
            in_dim,
            weight,
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [T] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn project(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    pub fn cast<U: Float>(&self) -> ProjectionLayer<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from(*x).unwrap()).collect();
        ProjectionLayer {
            out_dim: self.out_dim,
            in_dim: self.in_dim,
            weight: conv(&self.weight),
            bias: conv(&self.bias),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

impl ProjectionLayer<f32> {
    /// Default 512×768 layer with Glorot-uniform weights.
    pub fn init(seed: u64) -> Self {
        Self::glorot(EMBED_DIM, FEATURE_DIM, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Frozen class text embeddings as rows in the working float type.
pub fn class_texts<T: Float>(ce: &ClassEmbeddings) -> Vec<Vec<T>> {
    ce.iter()
        .map(|e| e.values().iter().map(|&v| c(v as f64)).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub z: Vec<T>,
    pub z_norm: T,
    pub z_hat: Vec<T>,
    pub logits: Vec<T>,
}

pub fn forward<T: Float>(
    pooled: &[T],
    layer: &ProjectionLayer<T>,
    texts: &[Vec<T>],
    logit_scale: T,
) -> (Vec<T>, ForwardCache<T>) {
    let z = layer.project(pooled);
    let z_norm = z.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
    let denom = z_norm.max(c(NORM_GUARD));
    let z_hat: Vec<T> = z.iter().map(|&v| v / denom).collect();
    let logits: Vec<T> = texts
        .iter()
        .map(|t| logit_scale * t.iter().zip(&z_hat).fold(T::zero(), |a, (&x, &y)| a + x * y))
        .collect();
    let probs = softmax(&logits);
    (
        probs,
        ForwardCache {
            z,
            z_norm,
            z_hat,
            logits,
        },
    )
}

fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp<T: Float>(logits: &[T]) -> T {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    max + logits
        .iter()
        .fold(T::zero(), |a, &l| a + (l - max).exp())
        .ln()
}

pub fn predict<T: Float>(
    pooled: &[T],
    layer: &ProjectionLayer<T>,
    texts: &[Vec<T>],
    logit_scale: T,
) -> ClassLabel {
    let (probs, _) = forward(pooled, layer, texts, logit_scale);
    let mut best = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    ClassLabel::from_index(best).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Gradients<T> {
    pub fn zeros_like(layer: &ProjectionLayer<T>) -> Self {
        Gradients {
            weight: vec![T::zero(); layer.weight.len()],
            bias: vec![T::zero(); layer.bias.len()],
        }
    }

    pub fn norm(&self) -> T {
        self.weight
            .iter()
            .chain(&self.bias)
            .fold(T::zero(), |a, &g| a + g * g)
            .sqrt()
    }
}

/// Mean cross-entropy over the batch and its gradients with respect to the
/// layer parameters.
pub fn loss_and_grads<T: Float, X: AsRef<[T]>>(
    batch: &[(X, ClassLabel)],
    layer: &ProjectionLayer<T>,
    texts: &[Vec<T>],
    logit_scale: T,
) -> Result<(T, Gradients<T>)> {
    loss_and_grads_impl(batch, layer, texts, logit_scale, true)
}

fn loss_and_grads_impl<T: Float, X: AsRef<[T]>>(
    batch: &[(X, ClassLabel)],
    layer: &ProjectionLayer<T>,
    texts: &[Vec<T>],
    logit_scale: T,
    radial_term: bool,
) -> Result<(T, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let mut grads = Gradients::zeros_like(layer);
    let mut total = T::zero();
    let guard: T = c(NORM_GUARD);

    for (i, (x, label)) in batch.iter().enumerate() {
        let x = x.as_ref();
        if x.len() != layer.in_dim {
            return Err(Error::Dimension {
                what: "pooled feature",
                expected: layer.in_dim,
                actual: x.len(),
            });
        }
        let (probs, cache) = forward(x, layer, texts, logit_scale);
        let y = label.index();
        let loss = log_sum_exp(&cache.logits) - cache.logits[y];
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(i));
        }
        total = total + loss;

        // g = s Σ_c (p_c − y_c) t_c
        let mut g = vec![T::zero(); layer.out_dim];
        for (cls, (t, &p)) in texts.iter().zip(&probs).enumerate() {
            let coeff = logit_scale * (if cls == y { p - T::one() } else { p });
            for (gk, &tk) in g.iter_mut().zip(t) {
                *gk = *gk + coeff * tk;
            }
        }
        let dz: Vec<T> = if cache.z_norm > guard {
            let r = cache.z_norm;
            let zg = cache.z.iter().zip(&g).fold(T::zero(), |a, (&z, &gk)| a + z * gk);
            let r3 = r * r * r;
            cache
                .z
                .iter()
                .zip(&g)
                .map(|(&z, &gk)| if radial_term { gk / r - z * zg / r3 } else { gk / r })
                .collect()
        } else {
            g.iter().map(|&gk| gk / guard).collect()
        };

        for (row, &d) in dz.iter().enumerate() {
            grads.bias[row] = grads.bias[row] + d;
            let gw = &mut grads.weight[row * layer.in_dim..(row + 1) * layer.in_dim];
            for (w, &xi) in gw.iter_mut().zip(x) {
                *w = *w + d * xi;
            }
        }
    }

    let n: T = c(batch.len() as f64);
    grads.weight.iter_mut().for_each(|g| *g = *g / n);
    grads.bias.iter_mut().for_each(|g| *g = *g / n);
    Ok((total / n, grads))
}

/// Adam moments and step counter, shaped like the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m_weight: Vec<T>,
    pub v_weight: Vec<T>,
    pub m_bias: Vec<T>,
    pub v_bias: Vec<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Float> AdamState<T> {
    pub fn new(layer: &ProjectionLayer<T>) -> Self {
        AdamState {
            m_weight: vec![T::zero(); layer.weight.len()],
            v_weight: vec![T::zero(); layer.weight.len()],
            m_bias: vec![T::zero(); layer.bias.len()],
            v_bias: vec![T::zero(); layer.bias.len()],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Float>(
    layer: &mut ProjectionLayer<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if grads.weight.len() != layer.weight.len() || grads.bias.len() != layer.bias.len() {
        return Err(Error::Dimension {
            what: "gradient",
            expected: layer.param_count(),
            actual: grads.weight.len() + grads.bias.len(),
        });
    }
    state.step += 1;
    let (b1, b2): (T, T) = (c(state.beta1), c(state.beta2));
    let one = T::one();
    let bc1: T = c(1.0 - state.beta1.powi(state.step as i32));
    let bc2: T = c(1.0 - state.beta2.powi(state.step as i32));
    let (lr, eps): (T, T) = (c(lr), c(state.eps));

    let update = |params: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
        for i in 0..params.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    update(&mut layer.weight, &grads.weight, &mut state.m_weight, &mut state.v_weight);
    update(&mut layer.bias, &grads.bias, &mut state.m_bias, &mut state.v_bias);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub frames_per_clip: usize,
    pub learning_rate: f64,
    pub logit_scale: f64,
    pub seed: u64,
    pub pooling: Pooling,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            frames_per_clip: 16,
            learning_rate: 1e-4,
            logit_scale: DEFAULT_LOGIT_SCALE,
            seed: 42,
            pooling: Pooling::Mean,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.frames_per_clip == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch size and frames per clip must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "logit scale must be positive, got {}",
                self.logit_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    /// Mean cross-entropy over the training set with the parameters at the
    /// end of the epoch.
    pub mean_loss: f64,
    /// Training-set accuracy with the parameters at the end of the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub layer: ProjectionLayer<f32>,
    pub adam: AdamState<f32>,
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
}

/// Mean cross-entropy, accumulated in f64 in sample order.
pub fn mean_loss_of(
    samples: &[(Vec<f32>, ClassLabel)],
    layer: &ProjectionLayer<f32>,
    texts: &[Vec<f32>],
    logit_scale: f32,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples for loss"));
    }
    let mut total = 0f64;
    for (i, (x, y)) in samples.iter().enumerate() {
        let (_, cache) = forward(x, layer, texts, logit_scale);
        let logits: Vec<f64> = cache.logits.iter().map(|&l| l as f64).collect();
        let loss = log_sum_exp(&logits) - logits[y.index()];
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(i));
        }
        total += loss;
    }
    Ok(total / samples.len() as f64)
}

pub fn accuracy_of(
    samples: &[(Vec<f32>, ClassLabel)],
    layer: &ProjectionLayer<f32>,
    texts: &[Vec<f32>],
    logit_scale: f32,
) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|(x, y)| predict(x, layer, texts, logit_scale) == *y)
        .count();
    correct as f64 / samples.len() as f64
}

/// Mini-batch Adam over pooled features with frozen class embeddings.
/// Batches are reshuffled each epoch from a generator seeded with `config.seed`.
pub fn train(
    samples: &[(Vec<f32>, ClassLabel)],
    class_embs: &ClassEmbeddings,
    init: ProjectionLayer<f32>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    let texts = class_texts::<f32>(class_embs);
    if init.out_dim() != class_embs.dim() {
        return Err(Error::Dimension {
            what: "projection output vs class embedding",
            expected: class_embs.dim(),
            actual: init.out_dim(),
        });
    }
    let scale = config.logit_scale as f32;
    let mut layer = init;
    let mut adam = AdamState::new(&layer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut steps = 0usize;
    let mut metrics = Vec::with_capacity(config.epochs);

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<(&[f32], ClassLabel)> =
                chunk.iter().map(|&i| (samples[i].0.as_slice(), samples[i].1)).collect();
            let (_, grads) = loss_and_grads(&batch, &layer, &texts, scale)?;
            adam_step(&mut layer, &grads, &mut adam, config.learning_rate)?;
            steps += 1;
            epoch_steps += 1;
        }
        if epoch_steps > 0 {
            let m = EpochMetrics {
                epoch: epoch + 1,
                steps,
                mean_loss: mean_loss_of(samples, &layer, &texts, scale)?,
                train_accuracy: accuracy_of(samples, &layer, &texts, scale),
            };
            log::info!(
                "epoch {}: loss {:.6} train acc {:.4} ({} steps)",
                m.epoch,
                m.mean_loss,
                m.train_accuracy,
                m.steps
            );
            metrics.push(m);
        }
        if config.max_steps.is_some_and(|m| steps >= m) {
            break 'epochs;
        }
    }

    Ok(TrainOutcome {
        layer,
        adam,
        epochs: metrics,
        steps,
    })
}

/// One finite-difference gradient check instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub seed: u64,
    pub params: usize,
    /// max_i |a_i − n_i| / max(|a_i|, |n_i|, floor)
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub out_dim: usize,
    pub in_dim: usize,
    pub batch: usize,
    pub logit_scale: f64,
    pub step: f64,
    /// Denominator floor so coordinates with near-zero gradient are judged
    /// on absolute error.
    pub floor: f64,
    /// Drop the radial term of the normalization Jacobian from the analytic
    /// gradient. Only used to confirm the checker catches a wrong gradient.
    pub inject_bug: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            out_dim: 8,
            in_dim: 12,
            batch: 4,
            logit_scale: DEFAULT_LOGIT_SCALE,
            step: 1e-4,
            floor: 1e-6,
            inject_bug: false,
        }
    }
}

type Instance = (ProjectionLayer<f64>, Vec<Vec<f64>>, Vec<(Vec<f64>, ClassLabel)>);

/// Seeded random layer, unit-norm class texts and labelled batch.
pub fn random_instance(seed: u64, cfg: &GradCheckConfig) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = ProjectionLayer::<f64>::glorot(cfg.out_dim, cfg.in_dim, &mut rng);
    for b in layer.bias_mut() {
        *b = rng.random_range(-0.1..0.1);
    }
    let texts = (0..2)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let batch = (0..cfg.batch)
        .map(|_| {
            let x = (0..cfg.in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (x, ClassLabel::from_index(rng.random_range(0..2)).unwrap())
        })
        .collect();
    (layer, texts, batch)
}

fn param_mut<T>(layer: &mut ProjectionLayer<T>, i: usize) -> &mut T {
    let n = layer.weight.len();
    if i < n {
        &mut layer.weight[i]
    } else {
        &mut layer.bias[i - n]
    }
}

/// Compare analytic gradients against central differences on every
/// parameter of a random float64 instance.
pub fn gradient_check(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheck> {
    let (mut layer, texts, batch) = random_instance(seed, cfg);
    let s = cfg.logit_scale;
    let (_, analytic) = loss_and_grads_impl(&batch, &layer, &texts, s, !cfg.inject_bug)?;
    let loss = |l: &ProjectionLayer<f64>| loss_and_grads(&batch, l, &texts, s).map(|(v, _)| v);

    let mut numeric = Vec::with_capacity(layer.param_count());
    for i in 0..layer.param_count() {
        let orig = *param_mut(&mut layer, i);
        *param_mut(&mut layer, i) = orig + cfg.step;
        let plus = loss(&layer)?;
        *param_mut(&mut layer, i) = orig - cfg.step;
        let minus = loss(&layer)?;
        *param_mut(&mut layer, i) = orig;
        numeric.push((plus - minus) / (2.0 * cfg.step));
    }

    let mut max_rel = 0f64;
    let mut max_abs = 0f64;
    for (a, n) in analytic.weight.iter().chain(&analytic.bias).zip(&numeric) {
        let abs = (a - n).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / a.abs().max(n.abs()).max(cfg.floor));
    }
    Ok(GradCheck {
        seed,
        params: numeric.len(),
        max_rel_error: max_rel,
        max_abs_error: max_abs,
    })
}

fn read_header(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<(usize, usize)> {
    if bytes.len() < 12 {
        return Err(Error::format(path, "file too short for header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                std::str::from_utf8(magic).unwrap()
            ),
        ));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(path, format!("invalid dimensions {rows}x{cols}")));
    }
    Ok((rows, cols))
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

/// Little-endian: `MOBP`, u32 out, u32 in, weight row-major f32, bias f32.
pub fn save_projection(layer: &ProjectionLayer<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * layer.param_count());
    buf.extend_from_slice(PROJECTION_MAGIC);
    buf.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
    for v in layer.weight.iter().chain(&layer.bias) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_projection(path: &Path) -> Result<ProjectionLayer<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (out_dim, in_dim) = read_header(&bytes, PROJECTION_MAGIC, path)?;
    let expected = 12 + 4 * (out_dim * in_dim + out_dim);
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes for a {out_dim}x{in_dim} projection, found {}",
                bytes.len()
            ),
        ));
    }
    let values = read_f32s(&bytes[12..]);
    let (w, b) = values.split_at(out_dim * in_dim);
    ProjectionLayer::from_parts(out_dim, in_dim, w.to_vec(), b.to_vec())
}

/// Read a pretrained `MOBV` visual projection (u32 rows, u32 cols,
/// row-major f32) as a bias-free warm-start layer.
pub fn load_visual_projection(path: &Path) -> Result<ProjectionLayer<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (rows, cols) = read_header(&bytes, VISUAL_PROJECTION_MAGIC, path)?;
    if bytes.len() != 12 + 4 * rows * cols {
        return Err(Error::format(
            path,
            format!("expected {} bytes for a {rows}x{cols} matrix", 12 + 4 * rows * cols),
        ));
    }
    ProjectionLayer::from_parts(rows, cols, read_f32s(&bytes[12..]), vec![0.0; rows])
}

pub fn save_visual_projection(layer: &ProjectionLayer<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * layer.weight.len());
    buf.extend_from_slice(VISUAL_PROJECTION_MAGIC);
    buf.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
    for v in &layer.weight {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ClassTextEmbedding;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn aligned_projection_is_confident() {
        // W maps x onto e_0, which is the malicious text direction.
        let (out, inp) = (4, 6);
        let x = vec![0.5, -1.0, 2.0, 0.0, 1.0, 0.25];
        let mut w = vec![0.0; out * inp];
        w[..inp].copy_from_slice(&x);
        let layer = ProjectionLayer::from_parts(out, inp, w, vec![0.0; out]).unwrap();
        let texts = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let (p, _) = forward(&x, &layer, &texts, 100.0);
        assert!(p[0] > 0.999);
    }

    #[test]
    fn zero_layer_is_uniform() {
        let layer = ProjectionLayer::<f64>::zeros(3, 5);
        let texts = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let (p, cache) = forward(&[1.0, 2.0, 3.0, 4.0, 5.0], &layer, &texts, 100.0);
        assert_eq!(cache.z_norm, 0.0);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn equal_class_embeddings_give_ln2_and_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = ProjectionLayer::<f64>::glorot(8, 12, &mut rng);
        let t = unit(rand_vec(&mut rng, 8));
        let texts = vec![t.clone(), t];
        let batch: Vec<(Vec<f64>, ClassLabel)> = (0..5)
            .map(|i| (rand_vec(&mut rng, 12), ClassLabel::from_index(i % 2).unwrap()))
            .collect();
        let (p, _) = forward(&batch[0].0, &layer, &texts, 100.0);
        assert_eq!(p, vec![0.5, 0.5]);
        let (loss, grads) = loss_and_grads(&batch, &layer, &texts, 100.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
        assert!(grads.norm() < 1e-12);
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = ProjectionLayer::<f64>::glorot(8, 12, &mut rng);
        let texts = vec![unit(rand_vec(&mut rng, 8)), unit(rand_vec(&mut rng, 8))];
        let batch: Vec<(Vec<f64>, ClassLabel)> = (0..4)
            .map(|i| (rand_vec(&mut rng, 12), ClassLabel::from_index(i % 2).unwrap()))
            .collect();
        let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        let (l1, g1) = loss_and_grads(&batch, &layer, &texts, 100.0).unwrap();
        let (l2, g2) = loss_and_grads(&doubled, &layer, &texts, 100.0).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.weight.iter().zip(&g2.weight).chain(g1.bias.iter().zip(&g2.bias)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_and_dimension_errors() {
        let layer = ProjectionLayer::<f64>::zeros(2, 3);
        let texts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let empty: Vec<(Vec<f64>, ClassLabel)> = vec![];
        assert!(loss_and_grads(&empty, &layer, &texts, 1.0).is_err());
        let bad = vec![(vec![1.0, 2.0], ClassLabel::Benign)];
        assert!(loss_and_grads(&bad, &layer, &texts, 1.0).is_err());
    }

    #[test]
    fn non_finite_loss_names_the_sample() {
        let layer = ProjectionLayer::<f64>::from_parts(2, 1, vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let texts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let batch = vec![(vec![1.0], ClassLabel::Benign), (vec![f64::NAN], ClassLabel::Benign)];
        assert!(matches!(
            loss_and_grads(&batch, &layer, &texts, 1.0),
            Err(Error::NonFiniteLoss(1))
        ));
    }

    #[test]
    fn gradient_check_passes_and_catches_bug() {
        for seed in 0..20 {
            let ok = gradient_check(seed, &GradCheckConfig::default()).unwrap();
            assert!(ok.max_rel_error < 1e-4, "seed {seed}: {ok:?}");
        }
        let bad = GradCheckConfig {
            inject_bug: true,
            ..GradCheckConfig::default()
        };
        assert!(gradient_check(0, &bad).unwrap().max_rel_error > 1e-2);
    }

    #[test]
    fn adam_step_decreases_loss() {
        let cfg = GradCheckConfig::default();
        let mut checked = 0;
        for seed in 0..20 {
            let (mut layer, texts, batch) = random_instance(seed, &cfg);
            let (before, grads) = loss_and_grads(&batch, &layer, &texts, 100.0).unwrap();
            if grads.norm() < 1e-10 {
                continue;
            }
            let mut st = AdamState::new(&layer);
            adam_step(&mut layer, &grads, &mut st, 1e-4).unwrap();
            let (after, _) = loss_and_grads(&batch, &layer, &texts, 100.0).unwrap();
            assert!(after < before, "seed {seed}: {before} -> {after}");
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn adam_zero_grads_leave_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = ProjectionLayer::<f64>::glorot(3, 4, &mut rng);
        let before = layer.clone();
        let mut st = AdamState::new(&layer);
        adam_step(&mut layer, &Gradients::zeros_like(&before), &mut st, 1e-3).unwrap();
        assert_eq!(layer, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut layer = ProjectionLayer::<f64>::zeros(2, 2);
        let mut st = AdamState::new(&layer);
        let grads = Gradients {
            weight: vec![0.3, -0.3, 0.3, -0.3],
            bias: vec![2.0, -2.0],
        };
        adam_step(&mut layer, &grads, &mut st, 1e-4).unwrap();
        // m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
        for (p, g) in layer.weight().iter().chain(layer.bias()).zip(grads.weight.iter().chain(&grads.bias)) {
            let expect = -1e-4 * g / (g.abs() + 1e-8);
            assert!((p - expect).abs() < 1e-15);
            assert!((p + 1e-4 * g.signum()).abs() < 1e-11);
        }
    }

    #[test]
    fn adam_second_moment_grows() {
        let mut layer = ProjectionLayer::<f64>::zeros(1, 1);
        let mut st = AdamState::new(&layer);
        let grads = Gradients {
            weight: vec![0.5],
            bias: vec![0.5],
        };
        adam_step(&mut layer, &grads, &mut st, 1e-3).unwrap();
        let v1 = st.v_weight[0];
        adam_step(&mut layer, &grads, &mut st, 1e-3).unwrap();
        assert!(st.v_weight[0] > v1);
    }

    fn toy_class_embs() -> ClassEmbeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..EMBED_DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect()
        };
        ClassEmbeddings::new(
            ClassTextEmbedding::from_vector(ClassLabel::Malicious, &mk(&mut rng), 1),
            ClassTextEmbedding::from_vector(ClassLabel::Benign, &mk(&mut rng), 1),
        )
        .unwrap()
    }

    fn toy_samples(n: usize) -> Vec<(Vec<f32>, ClassLabel)> {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        (0..n)
            .map(|i| {
                let label = ClassLabel::from_index(i % 2).unwrap();
                let shift = if label == ClassLabel::Malicious { 1.0 } else { -1.0 };
                let x = (0..FEATURE_DIM)
                    .map(|k| rng.random_range(-1.0f32..1.0) + if k < 8 { shift } else { 0.0 })
                    .collect();
                (x, label)
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let samples = toy_samples(20);
        let init = ProjectionLayer::init(1);
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&samples, &toy_class_embs(), init.clone(), &cfg).unwrap();
        assert_eq!(out.layer, init);
        assert_eq!(out.epochs[0].train_accuracy, out.epochs[1].train_accuracy);
        assert_eq!(out.epochs[0].mean_loss, out.epochs[1].mean_loss);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let samples = toy_samples(24);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 5,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let ce = toy_class_embs();
        let a = train(&samples, &ce, ProjectionLayer::init(2), &cfg).unwrap();
        let b = train(&samples, &ce, ProjectionLayer::init(2), &cfg).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.layer, b.layer);
        assert_eq!(a.steps, 10);
    }

    #[test]
    fn max_steps_stops_early() {
        let samples = toy_samples(24);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 4,
            max_steps: Some(9),
            ..TrainConfig::default()
        };
        let out = train(&samples, &toy_class_embs(), ProjectionLayer::init(2), &cfg).unwrap();
        assert_eq!(out.steps, 9);
        assert_eq!(out.epochs.len(), 2);
    }

    #[test]
    fn projection_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("proj.bin");
        let layer = ProjectionLayer::init(9);
        save_projection(&layer, &p).unwrap();
        assert_eq!(load_projection(&p).unwrap(), layer);
        assert_eq!(fs::metadata(&p).unwrap().len(), 12 + 4 * (512 * 768 + 512));
    }

    #[test]
    fn projection_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("proj.bin");
        let small = ProjectionLayer::<f32>::zeros(2, 3);
        save_projection(&small, &p).unwrap();
        let bytes = fs::read(&p).unwrap();

        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_projection(&p).is_err());

        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"XXXX");
        fs::write(&p, &wrong).unwrap();
        let err = load_projection(&p).unwrap_err().to_string();
        assert!(err.contains("MOBP"), "{err}");
    }

    #[test]
    fn visual_projection_warm_start() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("visual_proj.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = ProjectionLayer::<f32>::glorot(4, 6, &mut rng);
        save_visual_projection(&layer, &p).unwrap();
        let back = load_visual_projection(&p).unwrap();
        assert_eq!(back.weight(), layer.weight());
        assert!(back.bias().iter().all(|&b| b == 0.0));
        assert!(load_projection(&p).is_err());
    }
}
