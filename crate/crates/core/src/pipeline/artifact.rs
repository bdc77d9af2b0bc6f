use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sampler::{RngStream, StreamId};

/// Sidecar describing a raw little-endian `f32` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub dtype: String,
    pub order: String,
    pub shape: [usize; 2],
    pub fields: Vec<String>,
    pub seed: u64,
    pub rng: String,
    pub streams: Vec<StreamRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRef {
    pub name: StreamId,
    pub stream: u64,
}

impl StreamRef {
    pub fn new(seed: u64, id: StreamId) -> Self {
        StreamRef {
            name: id,
            stream: RngStream::new(seed, id).stream,
        }
    }
}

/// Relative path, digest and size of one written file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Hashes files below `root` into entries with `/`-separated relative paths.
pub fn describe(root: &Path, files: &[PathBuf]) -> Result<Vec<ArtifactEntry>> {
    files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(root).unwrap_or(f);
            let bytes = fs::metadata(f).map_err(|e| Error::io(f, e))?.len();
            Ok(ArtifactEntry {
                path: rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/"),
                sha256: sha256_file(f)?,
                bytes,
            })
        })
        .collect()
}

/// Writes `<stem>.f32` and `<stem>.json`, returning both paths.
pub fn write_array(dir: &Path, stem: &str, data: &[f32], meta: &ArrayMeta) -> Result<[PathBuf; 2]> {
    let [rows, cols] = meta.shape;
    if rows * cols != data.len() || meta.fields.len() != cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            actual: data.len(),
        });
    }
    let bin = dir.join(format!("{stem}.f32"));
    let side = dir.join(format!("{stem}.json"));
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    fs::write(&side, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&side, e))?;
    Ok([bin, side])
}

pub fn read_array_meta(path: &Path) -> Result<ArrayMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_array(dir: &Path, stem: &str) -> Result<(ArrayMeta, Vec<f32>)> {
    let meta = read_array_meta(&dir.join(format!("{stem}.json")))?;
    let bin = dir.join(format!("{stem}.f32"));
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = meta.shape[0] * meta.shape[1] * 4;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((meta, data))
}

/// Stable 64-bit seed for one asset: the first eight bytes of
/// `sha256(global_seed_le || asset_id)`.
pub fn asset_seed(global_seed: u64, asset_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(asset_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}
