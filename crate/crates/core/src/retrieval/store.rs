//! In-memory embedding store with exact cosine k-NN and the `XPES` file format.
//!
//! File layout (little-endian):
//!
//! ```text
//! b"XPES" | u32 version=1 | u32 dim | u32 count |
//! count x ( u16 id_len | id bytes | dim x f32 )
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Segment};
use crate::error::{Result, XpError};

use super::embed::TextEmbedder;

const MAGIC: &[u8; 4] = b"XPES";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentFilter {
    #[default]
    Any,
    Og,
    Gm,
}

impl SegmentFilter {
    fn admits(self, segment: Option<Segment>) -> bool {
        match self {
            SegmentFilter::Any => true,
            SegmentFilter::Og => segment == Some(Segment::Og),
            SegmentFilter::Gm => segment == Some(Segment::Gm),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f32>,
    segments: Vec<Option<Segment>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ids: Vec::new(),
            matrix: Vec::new(),
            segments: Vec::new(),
        }
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

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, idx: usize) -> &[f32] {
        &self.matrix[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn vector(&self, id: &str) -> Option<Vec<f64>> {
        self.position(id)
            .map(|i| self.row(i).iter().map(|&x| f64::from(x)).collect())
    }

    pub fn push(&mut self, id: String, vector: &[f64], segment: Option<Segment>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(XpError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.ids.push(id);
        self.matrix.extend(vector.iter().map(|&x| x as f32));
        self.segments.push(segment);
        Ok(())
    }

    /// Fill in segments from the catalog (file-loaded stores carry none).
    pub fn attach_segments(&mut self, catalog: &Catalog) {
        self.segments = self
            .ids
            .iter()
            .map(|id| catalog.get(id).map(|it| it.segment))
            .collect();
    }

    /// Exact top-`k` by cosine among rows passing `filter`; descending score,
    /// ascending id on ties.
    pub fn knn(&self, query: &[f64], k: usize, filter: SegmentFilter) -> Result<Vec<(String, f64)>> {
        if query.len() != self.dim {
            return Err(XpError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| filter.admits(self.segments[i]))
            .map(|i| {
                let row = self.row(i);
                let mut d = 0.0;
                let mut rn = 0.0;
                for (&r, &q) in row.iter().zip(query) {
                    let r = f64::from(r);
                    d += r * q;
                    rn += r * r;
                }
                let denom = rn.sqrt() * qn;
                (i, if denom == 0.0 { 0.0 } else { d / denom })
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u32).to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            let bytes = id.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| XpError::BadStore(format!("id too long: {id}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            for x in self.row(i) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(XpError::BadStore("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(XpError::BadStore(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let mut store = EmbeddingStore::new(dim);
        let mut seen = HashSet::with_capacity(count);
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| XpError::BadStore("id not utf-8".into()))?;
            if !seen.insert(id.clone()) {
                return Err(XpError::BadStore(format!("duplicate id {id}")));
            }
            let mut buf = vec![0u8; dim * 4];
            r.read_exact(&mut buf)?;
            store.ids.push(id);
            store.matrix.extend(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
            store.segments.push(None);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Embed `title | product_type | category` for every catalog item.
pub fn build_store(catalog: &Catalog, embedder: &dyn TextEmbedder) -> EmbeddingStore {
    let mut store = EmbeddingStore::new(embedder.dim());
    for item in catalog.items() {
        let v = embedder.embed(&item.embedding_text());
        store
            .push(item.item_id.clone(), &v, Some(item.segment))
            .expect("embedder returned wrong dimension");
    }
    store
}
