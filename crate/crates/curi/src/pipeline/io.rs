//! Artifact serialization: JSONL files, the packed signature matrix, and
//! SHA-256 digests. All writes go through a temp file and rename so a
//! failed stage never leaves a partial artifact.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::bits::BitVec;

use super::PipelineError;

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = tmp_path(path);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for item in items {
            serde_json::to_writer(&mut w, item)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let mut hasher = Sha256::new();
    let mut reader = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

const SIGNATURE_MAGIC: &[u8; 8] = b"CURISIG1";

/// Packed signature matrix: magic, row count, pool length, then one
/// `ceil(pool_len / 8)`-byte row per concept in id order, bit `i` of a row
/// at byte `i / 8`, bit `i % 8` from the least significant end.
pub fn write_signature_matrix(
    path: &Path,
    rows: impl Iterator<Item = BitVec>,
    count: usize,
    pool_len: usize,
) -> Result<(), PipelineError> {
    let mut bytes: Vec<u8> =
        Vec::with_capacity(16 + 2 * 8 + count * pool_len.div_ceil(8));
    bytes.extend_from_slice(SIGNATURE_MAGIC);
    bytes.extend_from_slice(&(count as u64).to_le_bytes());
    bytes.extend_from_slice(&(pool_len as u64).to_le_bytes());
    let mut written = 0usize;
    for row in rows {
        debug_assert_eq!(row.len(), pool_len);
        bytes.extend_from_slice(&row.to_le_bytes());
        written += 1;
    }
    debug_assert_eq!(written, count);
    write_atomic(path, &bytes)
}

pub fn read_signature_matrix(path: &Path) -> Result<(Vec<BitVec>, usize), PipelineError> {
    let bytes = fs::read(path)?;
    let bad = || PipelineError::CorruptArtifact(path.display().to_string());
    if bytes.len() < 24 || &bytes[..8] != SIGNATURE_MAGIC {
        return Err(bad());
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let pool_len = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let row_bytes = pool_len.div_ceil(8);
    if bytes.len() != 24 + count * row_bytes {
        return Err(bad());
    }
    let rows = (0..count)
        .map(|i| {
            let start = 24 + i * row_bytes;
            BitVec::from_le_bytes(&bytes[start..start + row_bytes], pool_len)
        })
        .collect();
    Ok((rows, pool_len))
}
