//! Item catalog: loading, validation and product-type indexing.
//!
//! A catalog is immutable once built. Popularity is attached separately
//! (it is derived from the transaction log) via [`Catalog::with_popularity`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Segment {
    /// Online grocery.
    #[serde(rename = "OG")]
    Og,
    /// General merchandise.
    #[serde(rename = "GM")]
    Gm,
}

impl Segment {
    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Og => "OG",
            Segment::Gm => "GM",
        }
    }

    /// Row index into the two-entry item-type embedding table.
    pub fn index(self) -> usize {
        match self {
            Segment::Og => 0,
            Segment::Gm => 1,
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Segment {
    type Err = XpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "OG" => Ok(Segment::Og),
            "GM" => Ok(Segment::Gm),
            other => Err(XpError::UnknownSegment(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub title: String,
    pub product_type: String,
    pub category: String,
    pub segment: Segment,
    pub price: f64,
}

impl ItemRecord {
    /// Text used for catalog embeddings: title plus hierarchy metadata.
    pub fn embedding_text(&self) -> String {
        format!("{} | {} | {}", self.title, self.product_type, self.category)
    }
}

/// Wire form of a catalog line; segment is kept as a string so an unknown
/// value maps to `UnknownSegment` rather than a generic parse error.
#[derive(Deserialize)]
struct RawItem {
    item_id: String,
    title: String,
    product_type: String,
    category: String,
    segment: String,
    price: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    items: Vec<ItemRecord>,
    by_id: HashMap<String, usize>,
    pt_index: BTreeMap<String, Vec<String>>,
    popularity: HashMap<String, f64>,
}

impl Catalog {
    pub fn new(items: Vec<ItemRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        let mut pt_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (idx, item) in items.iter().enumerate() {
            if by_id.insert(item.item_id.clone(), idx).is_some() {
                return Err(XpError::DuplicateItemId(item.item_id.clone()));
            }
            pt_index
                .entry(item.product_type.clone())
                .or_default()
                .push(item.item_id.clone());
        }
        Ok(Catalog {
            items,
            by_id,
            pt_index,
            popularity: HashMap::new(),
        })
    }

    /// Attach popularity counts. Ids not in the catalog are ignored.
    pub fn with_popularity(mut self, popularity: HashMap<String, f64>) -> Self {
        self.popularity = popularity
            .into_iter()
            .filter(|(id, v)| self.by_id.contains_key(id) && *v >= 0.0)
            .collect();
        self
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemRecord> {
        self.by_id.get(item_id).map(|&i| &self.items[i])
    }

    pub fn require(&self, item_id: &str) -> Result<&ItemRecord> {
        self.get(item_id)
            .ok_or_else(|| XpError::UnknownItem(item_id.to_string()))
    }

    /// Position of the item in load order.
    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.by_id.get(item_id).copied()
    }

    pub fn pt_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.pt_index
    }

    pub fn product_types(&self) -> impl Iterator<Item = &str> {
        self.pt_index.keys().map(String::as_str)
    }

    /// Product types whose items belong to `segment` (judged by the first item).
    pub fn product_types_in(&self, segment: Segment) -> Vec<String> {
        self.pt_index
            .iter()
            .filter(|(_, ids)| {
                ids.first()
                    .and_then(|id| self.get(id))
                    .map_or(false, |it| it.segment == segment)
            })
            .map(|(pt, _)| pt.clone())
            .collect()
    }

    pub fn popularity(&self, item_id: &str) -> f64 {
        self.popularity.get(item_id).copied().unwrap_or(0.0)
    }

    pub fn popularity_map(&self) -> &HashMap<String, f64> {
        &self.popularity
    }

    /// Up to `k` items of `pt` by descending popularity, ties on ascending id.
    pub fn popular_items_in_pt(&self, pt: &str, k: usize) -> Result<Vec<String>> {
        let ids = self
            .pt_index
            .get(pt)
            .ok_or_else(|| XpError::UnknownProductType(pt.to_string()))?;
        let mut ranked: Vec<&String> = ids.iter().collect();
        ranked.sort_by(|a, b| {
            self.popularity(b)
                .total_cmp(&self.popularity(a))
                .then_with(|| a.cmp(b))
        });
        Ok(ranked.into_iter().take(k).cloned().collect())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        for item in &self.items {
            serde_json::to_writer(&mut out, item)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parse catalog lines (one JSON object per line, blank lines skipped).
pub fn parse_catalog<R: BufRead>(reader: R) -> Result<Catalog> {
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawItem = serde_json::from_str(&line).map_err(|e| XpError::MalformedRecord {
            line: lineno,
            reason: e.to_string(),
        })?;
        let segment: Segment = raw.segment.parse()?;
        if raw.item_id.is_empty() {
            return Err(XpError::MalformedRecord {
                line: lineno,
                reason: "empty item_id".into(),
            });
        }
        if raw.product_type.is_empty() {
            return Err(XpError::MalformedRecord {
                line: lineno,
                reason: "empty product_type".into(),
            });
        }
        if !(raw.price.is_finite() && raw.price >= 0.0) {
            return Err(XpError::MalformedRecord {
                line: lineno,
                reason: format!("invalid price {}", raw.price),
            });
        }
        items.push(ItemRecord {
            item_id: raw.item_id,
            title: raw.title,
            product_type: raw.product_type,
            category: raw.category,
            segment,
            price: raw.price,
        });
    }
    Catalog::new(items)
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    let file = File::open(path)?;
    parse_catalog(BufReader::new(file))
}
