//! Clip manifests, frame sampling and frame loading.
//!
//! A manifest is a CSV file with header `id,frames_dir,label,split`. Each
//! `frames_dir` holds pre-extracted frame images (PPM, PNG or JPEG) whose
//! lexicographic file-name order is the frame order. Relative paths resolve
//! against the current working directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::encoder::{preprocess_frame, FrameTensor, Normalization};
use crate::error::{Error, Result};
use crate::types::{ClassLabel, Split};

pub const MANIFEST_HEADER: [&str; 4] = ["id", "frames_dir", "label", "split"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub frames_dir: PathBuf,
    pub label: ClassLabel,
    pub split: Split,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::parse(
            origin,
            1,
            format!("expected header {:?}", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(Error::parse(
                origin,
                line,
                format!("expected 4 fields, found {}", rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::parse(origin, line, "empty clip id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::parse(origin, line, format!("duplicate clip id {id:?}")));
        }
        let label: ClassLabel = rec[2].parse().map_err(|e: String| Error::parse(origin, line, e))?;
        let split: Split = rec[3].parse().map_err(|e: String| Error::parse(origin, line, e))?;
        entries.push(ManifestEntry {
            id,
            frames_dir: PathBuf::from(&rec[1]),
            label,
            split,
        });
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = MANIFEST_HEADER.join(",");
    out.push('\n');
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.id,
            e.frames_dir.display(),
            e.label,
            e.split
        ));
    }
    out
}

pub fn entries_in_split(entries: &[ManifestEntry], split: Split) -> Vec<&ManifestEntry> {
    entries.iter().filter(|e| e.split == split).collect()
}

/// Center-of-stride sampling: `idx_k = floor((k + 0.5) · N / T)`. When
/// `available < wanted` indices repeat.
pub fn sample_frame_indices(available: usize, wanted: usize) -> Vec<usize> {
    if available == 0 || wanted == 0 {
        return Vec::new();
    }
    (0..wanted)
        .map(|k| ((2 * k + 1) * available) / (2 * wanted))
        .collect()
}

const FRAME_EXTENSIONS: [&str; 5] = ["ppm", "png", "jpg", "jpeg", "pnm"];

/// Frame files in `dir`, sorted by file name. Hidden files and
/// subdirectories are ignored; every other file counts as a frame.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for item in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let item = item.map_err(|e| Error::io(dir, e))?;
        let path = item.path();
        let hidden = item.file_name().to_string_lossy().starts_with('.');
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "frame directory {} contains no frames",
            dir.display()
        )));
    }
    Ok(files)
}

pub fn load_frame(path: &Path, norm: &Normalization) -> Result<FrameTensor> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if !FRAME_EXTENSIONS.contains(&ext.as_str()) {
        return Err(Error::format(
            path,
            "unsupported frame format (expected ppm, pnm, png or jpeg)",
        ));
    }
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|cause| Error::Image {
            path: path.to_path_buf(),
            cause,
        })?;
    preprocess_frame(&img, norm)
}

/// Sample `wanted` frames from the clip and preprocess them, in index order.
pub fn load_frames(
    entry: &ManifestEntry,
    wanted: usize,
    norm: &Normalization,
) -> Result<Vec<FrameTensor>> {
    if wanted == 0 {
        return Err(Error::InvalidArgument("frames per clip must be positive".into()));
    }
    let files = list_frames(&entry.frames_dir)?;
    let indices = sample_frame_indices(files.len(), wanted);
    indices
        .par_iter()
        .map(|&i| load_frame(&files[i], norm))
        .collect()
}
