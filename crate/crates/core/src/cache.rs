//! On-disk cache of pooled clip embeddings so repeated runs skip frame
//! decoding and encoding.
//!
//! Little-endian layout: magic `MOBF`, u32 version, u8 backend code, u64
//! seed, u32 frames per clip, u8 pooling (0 mean, 1 max), u32 feature dim,
//! u32 joint dim, u32 clip count; then per clip a u32 id length, the UTF-8
//! id, u8 label index, u8 split, the pooled feature and the pooled joint
//! embedding as f32.

use std::fs;
use std::path::Path;

use crate::embedding::Pooling;
use crate::encoder::BackendKind;
use crate::error::{Error, Result};
use crate::eval::ClipEmbedding;
use crate::types::{ClassLabel, Split};

pub const CACHE_MAGIC: &[u8; 4] = b"MOBF";
const VERSION: u32 = 1;

/// What the cached embeddings were computed with. A cache is reused only
/// when every field matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheKey {
    pub backend: BackendKind,
    pub seed: u64,
    pub frames_per_clip: u32,
    pub pooling: Pooling,
}

fn split_code(s: Split) -> u8 {
    match s {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

pub fn write_cache(path: &Path, key: &CacheKey, clips: &[ClipEmbedding]) -> Result<()> {
    let (fdim, jdim) = clips
        .first()
        .map_or((0, 0), |c| (c.feature.len(), c.joint.len()));
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(key.backend.code());
    buf.extend_from_slice(&key.seed.to_le_bytes());
    buf.extend_from_slice(&key.frames_per_clip.to_le_bytes());
    buf.push(match key.pooling {
        Pooling::Mean => 0,
        Pooling::Max => 1,
    });
    buf.extend_from_slice(&(fdim as u32).to_le_bytes());
    buf.extend_from_slice(&(jdim as u32).to_le_bytes());
    buf.extend_from_slice(&(clips.len() as u32).to_le_bytes());
    for c in clips {
        if c.feature.len() != fdim || c.joint.len() != jdim {
            return Err(Error::InvalidArgument(format!(
                "clip {} has inconsistent embedding dimensions",
                c.id
            )));
        }
        buf.extend_from_slice(&(c.id.len() as u32).to_le_bytes());
        buf.extend_from_slice(c.id.as_bytes());
        buf.push(c.label.index() as u8);
        buf.push(split_code(c.split));
        for v in c.feature.iter().chain(&c.joint) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "feature cache is truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

/// Header of a cache file.
pub fn read_cache_key(path: &Path) -> Result<CacheKey> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    read_header(&mut r)
}

fn read_header(r: &mut Reader<'_>) -> Result<CacheKey> {
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::format(r.path, "bad magic, expected \"MOBF\""));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(r.path, format!("unsupported cache version {version}")));
    }
    let backend = match r.u8()? {
        0 => BackendKind::Reference,
        1 => BackendKind::ModelFile,
        other => return Err(Error::format(r.path, format!("unknown backend code {other}"))),
    };
    let seed = r.u64()?;
    let frames_per_clip = r.u32()?;
    let pooling = match r.u8()? {
        0 => Pooling::Mean,
        1 => Pooling::Max,
        other => return Err(Error::format(r.path, format!("unknown pooling code {other}"))),
    };
    Ok(CacheKey {
        backend,
        seed,
        frames_per_clip,
        pooling,
    })
}

/// Read a cache written with exactly `expected`.
pub fn read_cache(path: &Path, expected: &CacheKey) -> Result<Vec<ClipEmbedding>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let key = read_header(&mut r)?;
    if key != *expected {
        return Err(Error::format(
            path,
            format!("cache was built with {key:?}, requested {expected:?}"),
        ));
    }
    let fdim = r.u32()? as usize;
    let jdim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut clips = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let id = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::format(path, "clip id is not UTF-8"))?;
        let label = ClassLabel::from_index(r.u8()? as usize)
            .ok_or_else(|| Error::format(path, "bad label code"))?;
        let split = match r.u8()? {
            0 => Split::Train,
            1 => Split::Val,
            2 => Split::Test,
            _ => return Err(Error::format(path, "bad split code")),
        };
        clips.push(ClipEmbedding {
            id,
            label,
            split,
            feature: r.f32s(fdim)?,
            joint: r.f32s(jdim)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last clip"));
    }
    Ok(clips)
}
