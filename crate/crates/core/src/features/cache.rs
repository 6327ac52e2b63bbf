//! Binary feature cache: a sequence of records
//! `u32 id_len | id bytes | u32 frames | u32 dims | frames·dims f32 (LE, row-major)`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub fn write_feature_cache(
    path: impl AsRef<Path>,
    records: &[(String, FeatureMatrix)],
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for (id, f) in records {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        buf.extend_from_slice(&(f.frames() as u32).to_le_bytes());
        buf.extend_from_slice(&(f.dims() as u32).to_le_bytes());
        for &v in f.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<Vec<(String, FeatureMatrix)>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let truncated = || Error::Features(format!("{}: truncated feature cache", path.display()));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    let mut out = Vec::new();
    loop {
        let Ok(len) = take(4) else { break };
        let id_len = u32::from_le_bytes(len.try_into().expect("4 bytes")) as usize;
        let id = String::from_utf8(take(id_len)?.to_vec())
            .map_err(|_| Error::Features("non-UTF-8 utterance id in cache".into()))?;
        let frames = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let dims = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let raw = take(frames * dims * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push((id, FeatureMatrix::new(frames, dims, data)?));
    }
    Ok(out)
}
