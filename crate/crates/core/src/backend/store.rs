//! Embedding storage and its two on-disk forms.
//!
//! Binary archive: `"FFKE"`, u32 dim, u64 count, then `count` records of
//! u16 id length, UTF-8 id, `dim` little-endian f32 values. Text form: one
//! `id v1 v2 .. vE` line per embedding.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::archive::{read_u16, read_u32, read_u64, take};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"FFKE";

/// Id-addressed embeddings of one shared dimension, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    speakers: Option<HashMap<String, String>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, Vec<f64>)>>(dim: usize, pairs: I) -> Result<Self> {
        let mut s = Self::new(dim);
        for (id, v) in pairs {
            s.insert(id, v)?;
        }
        Ok(s)
    }

    pub fn insert(&mut self, id: String, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!("{id}: {} dims, store holds {}", v.len(), self.dim)));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Shape(format!("{id}: non-finite value")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Shape(format!("duplicate embedding id {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(v);
        Ok(())
    }

    /// Attaches an utterance-to-speaker map used by cohort construction.
    pub fn with_speakers(mut self, utt2spk: HashMap<String, String>) -> Self {
        self.speakers = Some(utt2spk);
        self
    }

    pub fn speakers(&self) -> Option<&HashMap<String, String>> {
        self.speakers.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }
}

pub fn write_embedding_archive<W: Write>(mut w: W, store: &EmbeddingStore) -> std::io::Result<()> {
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&(store.dim as u32).to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (id, v) in store.iter() {
        w.write_all(&(id.len() as u16).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for &x in v {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn write_embedding_text<W: Write>(mut w: W, store: &EmbeddingStore) -> std::io::Result<()> {
    for (id, v) in store.iter() {
        write!(w, "{id}")?;
        for x in v {
            write!(w, " {}", *x as f32)?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Reads either form; the binary one is recognized by its magic.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(EMBEDDING_MAGIC) {
        parse_archive(path, &bytes)
    } else {
        parse_text(path, &bytes)
    }
}

fn parse_archive(path: &Path, bytes: &[u8]) -> Result<EmbeddingStore> {
    let bad = |m: &str| Error::format(path, m);
    let mut r = &bytes[4..];
    let dim = read_u32(&mut r).ok_or_else(|| bad("truncated header"))? as usize;
    let count = read_u64(&mut r).ok_or_else(|| bad("truncated header"))?;
    if dim == 0 {
        return Err(bad("zero dim"));
    }
    let mut store = EmbeddingStore::new(dim);
    for _ in 0..count {
        let n = read_u16(&mut r).ok_or_else(|| bad("truncated record"))? as usize;
        let id = take(&mut r, n).ok_or_else(|| bad("truncated id"))?;
        let id = String::from_utf8(id.to_vec()).map_err(|_| bad("id is not UTF-8"))?;
        let raw = take(&mut r, dim * 4).ok_or_else(|| bad("truncated vector"))?;
        let v = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        store.insert(id, v).map_err(|e| bad(&e.to_string()))?;
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes after the last record"));
    }
    Ok(store)
}

fn parse_text(path: &Path, bytes: &[u8]) -> Result<EmbeddingStore> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format(path, "not UTF-8 text"))?;
    let mut store: Option<EmbeddingStore> = None;
    for (n, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let v = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        let s = store.get_or_insert_with(|| EmbeddingStore::new(v.len()));
        s.insert(id.to_string(), v).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
    }
    store.ok_or_else(|| Error::format(path, "no embeddings"))
}

/// `utt speaker` lines.
pub fn read_utt2spk(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [] => {}
            [utt, spk] => {
                map.insert(utt.to_string(), spk.to_string());
            }
            _ => return Err(Error::format(path, format!("line {}: expected `utt speaker`", n + 1))),
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> EmbeddingStore {
        EmbeddingStore::from_pairs(3, [("a".into(), vec![1.0, 2.0, 3.0]), ("bb".into(), vec![-0.5, 0.0, 0.25])])
            .unwrap()
    }

    #[test]
    fn archive_layout() {
        let mut buf = Vec::new();
        write_embedding_archive(&mut buf, &store()).unwrap();
        assert_eq!(&buf[..4], b"FFKE");
        assert_eq!(&buf[4..8], &3u32.to_le_bytes());
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..18], &1u16.to_le_bytes());
        assert_eq!(buf[18], b'a');
        assert_eq!(&buf[19..23], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 16 + (2 + 1 + 12) + (2 + 2 + 12));
    }

    #[test]
    fn both_forms_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("e.ffke");
        let txt = dir.path().join("e.txt");
        write_embedding_archive(std::fs::File::create(&bin).unwrap(), &store()).unwrap();
        write_embedding_text(std::fs::File::create(&txt).unwrap(), &store()).unwrap();
        assert_eq!(read_embeddings(&bin).unwrap(), store());
        assert_eq!(read_embeddings(&txt).unwrap(), store());
    }

    #[test]
    fn store_rejects_bad_inserts() {
        let mut s = store();
        assert!(s.insert("a".into(), vec![0.0; 3]).is_err());
        assert!(s.insert("c".into(), vec![0.0; 2]).is_err());
        assert!(matches!(s.require("zz"), Err(Error::UnknownId(_))));
    }

    #[test]
    fn ragged_text_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "a 1 2 3\nb 1 2\n").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format { .. })));
    }
}
