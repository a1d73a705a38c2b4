//! Feature cache files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FCH1"
//! u32 d
//! u64 N
//! u8  standardized (0 | 1)
//! u8  orientation  (0 = low frequencies at the bottom, 1 = at the top)
//! u32 len, len bytes  extractor id (UTF-8)
//! N * d f32           row-major features
//! "ROWS"
//! N * (u32 frame_offset, u32 len, len bytes clip id)
//! ```
//!
//! The trailing `ROWS` section carries per-row provenance; readers that only
//! need the matrix can stop after the feature block.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{FeatureMatrix, RowId};
use crate::error::{Error, Result};
use crate::render::Orientation;

pub const CACHE_MAGIC: &[u8; 4] = b"FCH1";
const ROWS_MAGIC: &[u8; 4] = b"ROWS";

pub fn write_cache(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("partial");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    encode(m, &mut w).map_err(|e| Error::io(&tmp, e))?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode(m: &FeatureMatrix, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_u32::<LittleEndian>(m.dim() as u32)?;
    w.write_u64::<LittleEndian>(m.n_rows() as u64)?;
    w.write_u8(m.standardized as u8)?;
    w.write_u8(m.orientation.code())?;
    w.write_u32::<LittleEndian>(m.extractor_id.len() as u32)?;
    w.write_all(m.extractor_id.as_bytes())?;
    for &v in m.values.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.write_all(ROWS_MAGIC)?;
    for r in &m.rows {
        w.write_u32::<LittleEndian>(r.frame_offset)?;
        w.write_u32::<LittleEndian>(r.clip_id.len() as u32)?;
        w.write_all(r.clip_id.as_bytes())?;
    }
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn truncated(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |_| Error::Truncated(format!("feature cache {what}"))
}

fn read_string(r: &mut &[u8], what: &str) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(truncated(what))? as usize;
    if r.len() < len {
        return Err(Error::Truncated(format!("feature cache {what}")));
    }
    let (head, tail) = r.split_at(len);
    *r = tail;
    String::from_utf8(head.to_vec()).map_err(|e| Error::Format(format!("{what}: {e}")))
}

pub(crate) fn decode(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("header"))?;
    if &magic != CACHE_MAGIC {
        return Err(Error::BadMagic { expected: "FCH1" });
    }
    let d = r.read_u32::<LittleEndian>().map_err(truncated("header"))? as usize;
    let n = r.read_u64::<LittleEndian>().map_err(truncated("header"))? as usize;
    let standardized = match r.read_u8().map_err(truncated("header"))? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("standardized flag {v}"))),
    };
    let orientation = Orientation::from_code(r.read_u8().map_err(truncated("header"))?)?;
    let extractor_id = read_string(&mut r, "extractor id")?;
    let count = n
        .checked_mul(d)
        .filter(|c| c.checked_mul(4).is_some_and(|b| b <= r.len()))
        .ok_or_else(|| Error::Truncated("feature cache values".into()))?;
    let mut data = vec![0f32; count];
    r.read_f32_into::<LittleEndian>(&mut data).map_err(truncated("values"))?;
    let values = Array2::from_shape_vec((n, d), data).map_err(|e| Error::Format(e.to_string()))?;
    r.read_exact(&mut magic).map_err(truncated("row section"))?;
    if &magic != ROWS_MAGIC {
        return Err(Error::BadMagic { expected: "ROWS" });
    }
    let mut rows = Vec::with_capacity(n);
    let mut last: Option<Arc<str>> = None;
    for _ in 0..n {
        let frame_offset = r.read_u32::<LittleEndian>().map_err(truncated("row section"))?;
        let clip = read_string(&mut r, "row section")?;
        let clip_id = match &last {
            Some(prev) if **prev == *clip => Arc::clone(prev),
            _ => Arc::from(clip.as_str()),
        };
        last = Some(Arc::clone(&clip_id));
        rows.push(RowId { clip_id, frame_offset });
    }
    Ok(FeatureMatrix {
        values,
        rows,
        extractor_id,
        standardized,
        orientation,
    })
}
