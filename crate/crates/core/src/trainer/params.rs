//! Parameters stored in the embedding archive format. Head rows use ids
//! `class:j:k`; every other tensor is flattened, cut into rows of the
//! embedding width and stored as `<name>:<len>:<chunk>`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::encoder::{EncoderParams, EncoderShape};
use crate::backend::{read_embeddings, write_embedding_archive, EmbeddingStore};
use crate::error::{Error, Result};
use crate::modelmath::{MqmhaParams, Pooling, SpeakerHead};

fn put(store: &mut EmbeddingStore, name: &str, values: &[f64]) -> Result<()> {
    let e = store.dim();
    if values.is_empty() {
        return store.insert(format!("{name}:0:0"), vec![0.0; e]);
    }
    for (c, part) in values.chunks(e).enumerate() {
        let mut row = part.to_vec();
        row.resize(e, 0.0);
        store.insert(format!("{name}:{}:{c}", values.len()), row)?;
    }
    Ok(())
}

pub fn write_params<W: Write>(w: W, p: &EncoderParams) -> Result<()> {
    let h = &p.head;
    let (q, heads) = match &p.pooling {
        Pooling::Gsp => (0, 0),
        Pooling::Mqmha(m) => (m.queries, m.heads),
    };
    let meta = [
        p.shape.input_dim,
        p.shape.hidden,
        p.shape.channels,
        q,
        heads,
        h.num_classes(),
        h.sub_centers(),
    ]
    .map(|v| v as f64);
    let mut store = EmbeddingStore::new(h.dim());
    put(&mut store, "meta", &meta)?;
    put(&mut store, "scale_margin", &[h.scale, h.margin])?;
    put(&mut store, "w1", &p.w1)?;
    put(&mut store, "b1", &p.b1)?;
    put(&mut store, "w2", &p.w2)?;
    put(&mut store, "b2", &p.b2)?;
    put(&mut store, "pool", p.pooling_vectors())?;
    let mask: Vec<f64> = h.reserved_mask().iter().map(|&r| if r { 1.0 } else { 0.0 }).collect();
    put(&mut store, "reserved", &mask)?;
    for j in 0..h.num_classes() {
        for k in 0..h.sub_centers() {
            store.insert(format!("class:{j}:{k}"), h.center(j, k).to_vec())?;
        }
    }
    write_embedding_archive(w, &store).map_err(|e| Error::io("<params>", e))
}

pub fn read_params(path: &Path) -> Result<EncoderParams> {
    let store = read_embeddings(path)?;
    let bad = |m: String| Error::format(path, m);
    let mut tensors: HashMap<&str, (usize, Vec<(usize, &[f64])>)> = HashMap::new();
    let mut rows: Vec<(usize, usize, &[f64])> = Vec::new();
    for (id, v) in store.iter() {
        let parts: Vec<&str> = id.split(':').collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad record id {id:?}")));
        match parts.as_slice() {
            ["class", j, k] => rows.push((num(j)?, num(k)?, v)),
            [name, len, c] => tensors.entry(name).or_insert((num(len)?, Vec::new())).1.push((num(c)?, v)),
            _ => return Err(bad(format!("bad record id {id:?}"))),
        }
    }
    let mut tensor = |name: &str| -> Result<Vec<f64>> {
        let (len, mut chunks) = tensors.remove(name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
        chunks.sort_by_key(|c| c.0);
        let mut out: Vec<f64> = chunks.iter().flat_map(|c| c.1.iter().copied()).collect();
        if out.len() < len {
            return Err(bad(format!("tensor {name} is truncated")));
        }
        out.truncate(len);
        Ok(out)
    };
    let meta: Vec<usize> = tensor("meta")?.iter().map(|&v| v as usize).collect();
    let [d, hidden, c, q, heads, j, k] = meta[..] else {
        return Err(bad("meta record has the wrong length".into()));
    };
    let sm = tensor("scale_margin")?;
    let shape = EncoderShape { input_dim: d, hidden, channels: c };
    let pooling = if q == 0 {
        Pooling::Gsp
    } else {
        let mut m = MqmhaParams::zeros(q, heads, c)?;
        m.vectors = tensor("pool")?;
        Pooling::Mqmha(m)
    };
    let reserved = tensor("reserved")?.iter().map(|&v| v != 0.0).collect();
    if rows.len() != j * k {
        return Err(bad(format!("expected {} head rows, found {}", j * k, rows.len())));
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let weights = rows.iter().flat_map(|r| r.2.iter().copied()).collect();
    let head = SpeakerHead::new(j, k, store.dim(), weights, reserved, sm[0], sm[1])?;
    let p = EncoderParams { shape, w1: tensor("w1")?, b1: tensor("b1")?, w2: tensor("w2")?, b2: tensor("b2")?, pooling, head };
    p.check().map_err(|e| bad(e.to_string()))?;
    Ok(p)
}
