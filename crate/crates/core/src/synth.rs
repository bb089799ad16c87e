//! Synthetic clip datasets: class-tinted PPM frames plus a manifest.
//!
//! Malicious clips lean red, benign clips lean blue, with per-clip jitter and
//! per-pixel noise. Pixel histograms, and therefore reference-encoder
//! features, separate the classes.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{format_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::types::{ClassLabel, Split};

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub clips: usize,
    pub frames: usize,
    /// Frame width and height in pixels.
    pub size: u32,
    pub seed: u64,
    /// Fraction of clips assigned to the train split; the rest are test.
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clips: 200,
            frames: 16,
            size: 32,
            seed: 42,
            train_fraction: 0.8,
        }
    }
}

fn base_color(label: ClassLabel) -> [f64; 3] {
    match label {
        ClassLabel::Malicious => [0.75, 0.30, 0.25],
        ClassLabel::Benign => [0.25, 0.35, 0.75],
    }
}

/// Write frames under `out/frames/<id>/` and the manifest to
/// `out/manifest.csv`. Labels alternate; the first `train_fraction` of
/// clips are train.
pub fn generate(out: &Path, cfg: &SynthConfig) -> Result<Vec<ManifestEntry>> {
    if cfg.clips == 0 || cfg.frames == 0 || cfg.size == 0 {
        return Err(Error::InvalidArgument(
            "clips, frames and size must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.train_fraction) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in [0, 1], got {}",
            cfg.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_train = (cfg.clips as f64 * cfg.train_fraction).round() as usize;
    let mut entries = Vec::with_capacity(cfg.clips);

    for i in 0..cfg.clips {
        let label = ClassLabel::from_index(i % 2).unwrap();
        let id = format!("clip{i:04}");
        let dir = out.join("frames").join(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let base = base_color(label);
        let tint: Vec<f64> = base
            .iter()
            .map(|b| b + rng.random_range(-0.12..0.12))
            .collect();
        for f in 0..cfg.frames {
            let mut img = RgbImage::new(cfg.size, cfg.size);
            for px in img.pixels_mut() {
                let mut rgb = [0u8; 3];
                for (c, v) in rgb.iter_mut().enumerate() {
                    let x = (tint[c] + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0);
                    *v = (x * 255.0).round() as u8;
                }
                *px = Rgb(rgb);
            }
            let path = dir.join(format!("frame_{f:04}.ppm"));
            img.save_with_format(&path, image::ImageFormat::Pnm)
                .map_err(|cause| Error::Image { path, cause })?;
        }
        entries.push(ManifestEntry {
            id,
            frames_dir: dir,
            label,
            split: if i < n_train { Split::Train } else { Split::Test },
        });
    }

    let manifest = out.join(MANIFEST_NAME);
    fs::write(&manifest, format_manifest(&entries)).map_err(|e| Error::io(&manifest, e))?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{list_frames, load_manifest};

    #[test]
    fn writes_frames_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            clips: 5,
            frames: 3,
            size: 4,
            ..SynthConfig::default()
        };
        let entries = generate(dir.path(), &cfg).unwrap();
        assert_eq!(entries.len(), 5);
        assert_eq!(load_manifest(&dir.path().join(MANIFEST_NAME)).unwrap(), entries);
        assert_eq!(list_frames(&entries[0].frames_dir).unwrap().len(), 3);
        assert_eq!(entries.iter().filter(|e| e.split == Split::Train).count(), 4);
        assert_eq!(entries[1].label, ClassLabel::Benign);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = SynthConfig {
            clips: 2,
            frames: 2,
            size: 4,
            ..SynthConfig::default()
        };
        generate(a.path(), &cfg).unwrap();
        generate(b.path(), &cfg).unwrap();
        let read = |d: &Path| fs::read(d.join("frames/clip0001/frame_0001.ppm")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn rejects_bad_config() {
        let dir = tempfile::tempdir().unwrap();
        let zero = SynthConfig {
            clips: 0,
            ..SynthConfig::default()
        };
        assert!(generate(dir.path(), &zero).is_err());
    }
}
