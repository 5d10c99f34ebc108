//! Feature archive: `"FFKF"`, u32 dim, then until end of file one record per
//! utterance: u16 id length, UTF-8 id, u32 frame count, frames x dim
//! little-endian f32 values.

use std::io::{Read, Write};
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FFKF";

pub fn write_feature_archive<W: Write>(
    mut w: W,
    dim: usize,
    items: &[(String, FeatureMatrix)],
) -> std::io::Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for (id, feats) in items {
        assert_eq!(feats.dim(), dim, "feature dim mismatch for {id}");
        let id_bytes = id.as_bytes();
        w.write_all(&(id_bytes.len() as u16).to_le_bytes())?;
        w.write_all(id_bytes)?;
        w.write_all(&(feats.num_frames() as u32).to_le_bytes())?;
        for &v in feats.as_slice() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_feature_archive(path: &Path) -> Result<(usize, Vec<(String, FeatureMatrix)>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    let bad = |m: &str| Error::format(path, m);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != FEATURE_MAGIC {
        return Err(bad("bad magic, expected FFKF"));
    }
    let dim = read_u32(&mut r).ok_or_else(|| bad("truncated header"))? as usize;
    if dim == 0 {
        return Err(bad("zero dim"));
    }
    let mut items = Vec::new();
    while !r.is_empty() {
        let id_len = read_u16(&mut r).ok_or_else(|| bad("truncated record"))? as usize;
        let id = take(&mut r, id_len).ok_or_else(|| bad("truncated id"))?;
        let id = String::from_utf8(id.to_vec()).map_err(|_| bad("id is not UTF-8"))?;
        let frames = read_u32(&mut r).ok_or_else(|| bad("truncated record"))? as usize;
        let raw = take(&mut r, frames * dim * 4).ok_or_else(|| bad("truncated frames"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        items.push((id, FeatureMatrix::new(data, dim, 0.01)?));
    }
    Ok((dim, items))
}

pub(crate) fn take<'a>(r: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if r.len() < n {
        return None;
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Some(head)
}

pub(crate) fn read_u16(r: &mut &[u8]) -> Option<u16> {
    take(r, 2).map(|b| u16::from_le_bytes([b[0], b[1]]))
}

pub(crate) fn read_u32(r: &mut &[u8]) -> Option<u32> {
    take(r, 4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub(crate) fn read_u64(r: &mut &[u8]) -> Option<u64> {
    take(r, 8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let f = FeatureMatrix::new(vec![1.0, -2.0, 0.5, 4.0], 2, 0.01).unwrap();
        let mut buf = Vec::new();
        write_feature_archive(&mut buf, 2, &[("ab".into(), f.clone())]).unwrap();
        let mut expected = b"FFKF".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(2u16.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(2u32.to_le_bytes());
        for v in [1.0f32, -2.0, 0.5, 4.0] {
            expected.extend(v.to_le_bytes());
        }
        assert_eq!(buf, expected);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ffkf");
        std::fs::write(&p, &buf).unwrap();
        let (dim, items) = read_feature_archive(&p).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(items, vec![("ab".to_string(), f)]);
    }

    #[test]
    fn truncated_archive_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ffkf");
        let mut buf = Vec::new();
        let f = FeatureMatrix::new(vec![1.0; 6], 3, 0.01).unwrap();
        write_feature_archive(&mut buf, 3, &[("x".into(), f)]).unwrap();
        buf.pop();
        std::fs::write(&p, &buf).unwrap();
        assert!(matches!(read_feature_archive(&p), Err(Error::Format { .. })));
        std::fs::write(&p, b"FFKE\x01\0\0\0").unwrap();
        assert!(matches!(read_feature_archive(&p), Err(Error::Format { .. })));
    }
}
