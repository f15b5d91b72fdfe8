//! Catalog retrieval and candidate scoring for the item-level pipeline.

mod embed;
pub mod pipeline;
pub mod report;
mod store;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Result, XpError};

pub use embed::{cosine, dot, normalize_or_basis, tokenize, HashNgramEmbedder, TextEmbedder, DEFAULT_EMBED_DIM};
pub(crate) use embed::fnv1a;
pub use pipeline::{generation_stage, item_xp_pipeline, retrieval_stage, PipelineConfig, PipelineDeps, PipelineOutput};
pub use store::{build_store, EmbeddingStore, SegmentFilter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    Mba,
    Llm,
    Similar,
}

impl CandidateSource {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateSource::Mba => "mba",
            CandidateSource::Llm => "llm",
            CandidateSource::Similar => "similar",
        }
    }
}

/// Five-way classification of the combined score. Ordered Poor < ... < Excellent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QualityBand {
    Poor,
    Fair,
    Good,
    VeryGood,
    Excellent,
}

impl QualityBand {
    pub const ALL: [QualityBand; 5] = [
        QualityBand::Poor,
        QualityBand::Fair,
        QualityBand::Good,
        QualityBand::VeryGood,
        QualityBand::Excellent,
    ];

    pub fn label(self) -> &'static str {
        match self {
            QualityBand::Poor => "Poor",
            QualityBand::Fair => "Fair",
            QualityBand::Good => "Good",
            QualityBand::VeryGood => "Very Good",
            QualityBand::Excellent => "Excellent",
        }
    }
}

impl fmt::Display for QualityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn check_unit(x: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(XpError::OutOfRange(x))
    }
}

/// CE score times LLM score.
pub fn combined_score(ce: f64, llm: f64) -> Result<f64> {
    Ok(check_unit(ce)? * check_unit(llm)?)
}

/// Lower-inclusive bands: [0,.4) [.4,.5) [.5,.6) [.6,.7) [.7,1].
pub fn band(score: f64) -> Result<QualityBand> {
    let s = check_unit(score)?;
    Ok(if s >= 0.7 {
        QualityBand::Excellent
    } else if s >= 0.6 {
        QualityBand::VeryGood
    } else if s >= 0.5 {
        QualityBand::Good
    } else if s >= 0.4 {
        QualityBand::Fair
    } else {
        QualityBand::Poor
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub anchor_item_id: String,
    pub item_id: String,
    pub source: CandidateSource,
    #[serde(default)]
    pub llm_rec: String,
    pub retrieval_sim: f64,
    #[serde(default)]
    pub ce_score: Option<f64>,
    #[serde(default)]
    pub llm_score: Option<f64>,
    #[serde(default)]
    pub combined: Option<f64>,
    #[serde(default)]
    pub band: Option<QualityBand>,
}

impl ScoredCandidate {
    pub fn mba(anchor_item_id: String, item_id: String, lift: f64) -> Self {
        ScoredCandidate {
            anchor_item_id,
            item_id,
            source: CandidateSource::Mba,
            llm_rec: String::new(),
            retrieval_sim: lift,
            ce_score: None,
            llm_score: None,
            combined: None,
            band: None,
        }
    }

    /// Set CE and LLM scores and derive `combined` and `band`.
    pub fn set_scores(&mut self, ce: f64, llm: f64) -> Result<()> {
        let c = combined_score(ce, llm)?;
        self.ce_score = Some(ce);
        self.llm_score = Some(llm);
        self.combined = Some(c);
        self.band = Some(band(c)?);
        Ok(())
    }

    /// Ordering key used when mixing sources: combined score when scored,
    /// otherwise the retrieval score.
    pub fn rank_score(&self) -> f64 {
        self.combined.unwrap_or(self.retrieval_sim)
    }
}

/// Scores the semantic match between a recommendation text and an item text.
pub trait CrossScorer: Send + Sync {
    fn score(&self, rec_text: &str, item_text: &str) -> f64;
}

/// `(cosine(embed(rec), embed(item)) + 1) / 2`.
pub struct EmbeddingCrossScorer<'a> {
    embedder: &'a dyn TextEmbedder,
}

impl<'a> EmbeddingCrossScorer<'a> {
    pub fn new(embedder: &'a dyn TextEmbedder) -> Self {
        EmbeddingCrossScorer { embedder }
    }
}

impl CrossScorer for EmbeddingCrossScorer<'_> {
    fn score(&self, rec_text: &str, item_text: &str) -> f64 {
        let c = cosine(&self.embedder.embed(rec_text), &self.embedder.embed(item_text));
        ((c + 1.0) / 2.0).clamp(0.0, 1.0)
    }
}

pub trait SimilarItems: Send + Sync {
    fn neighbors(&self, item_id: &str, n: usize) -> Vec<String>;
}

/// Same-PT peers by descending popularity (ascending id on ties).
pub struct PopularPeers<'a> {
    catalog: &'a Catalog,
}

impl<'a> PopularPeers<'a> {
    pub fn new(catalog: &'a Catalog) -> Self {
        PopularPeers { catalog }
    }
}

impl SimilarItems for PopularPeers<'_> {
    fn neighbors(&self, item_id: &str, n: usize) -> Vec<String> {
        let Some(item) = self.catalog.get(item_id) else {
            return Vec::new();
        };
        let Ok(ranked) = self.catalog.popular_items_in_pt(&item.product_type, n + 1) else {
            return Vec::new();
        };
        ranked.into_iter().filter(|id| id != item_id).take(n).collect()
    }
}

/// Union of per-item neighbors, first-seen order, excluding the inputs.
pub fn expand_similar(items: &[String], model: &dyn SimilarItems, per_item: usize) -> Vec<String> {
    if per_item == 0 {
        return Vec::new();
    }
    let originals: BTreeSet<&str> = items.iter().map(String::as_str).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for id in items {
        for n in model.neighbors(id, per_item) {
            if !originals.contains(n.as_str()) && seen.insert(n.clone()) {
                out.push(n);
            }
        }
    }
    out
}

pub fn write_candidates_jsonl(path: &Path, cands: &[ScoredCandidate]) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for c in cands {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_candidates_jsonl(path: &Path) -> Result<Vec<ScoredCandidate>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| XpError::MalformedRecord {
                line: idx + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ItemRecord, Segment};
    use std::collections::HashMap;

    #[test]
    fn combined_examples() {
        assert_eq!(combined_score(1.0, 0.37).unwrap(), 0.37);
        assert!((combined_score(0.9, 0.7).unwrap() - 0.63).abs() < 1e-12);
        assert_eq!(combined_score(0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(combined_score(1.2, 0.5), Err(XpError::OutOfRange(_))));
    }

    #[test]
    fn band_edges() {
        assert_eq!(band(0.63).unwrap(), QualityBand::VeryGood);
        assert_eq!(band(0.4).unwrap(), QualityBand::Fair);
        assert_eq!(band(0.5).unwrap(), QualityBand::Good);
        assert_eq!(band(0.6).unwrap(), QualityBand::VeryGood);
        assert_eq!(band(0.7).unwrap(), QualityBand::Excellent);
        assert_eq!(band(1.0).unwrap(), QualityBand::Excellent);
        assert_eq!(band(0.3999).unwrap(), QualityBand::Poor);
        assert!(band(-0.1).is_err());
    }

    fn peers_catalog() -> Catalog {
        let mk = |id: &str, pt: &str| ItemRecord {
            item_id: id.into(),
            title: id.into(),
            product_type: pt.into(),
            category: "c".into(),
            segment: Segment::Gm,
            price: 1.0,
        };
        Catalog::new(vec![mk("x", "P"), mk("p1", "P"), mk("p2", "P"), mk("p3", "P"), mk("q", "Q")])
            .unwrap()
            .with_popularity(HashMap::from([
                ("p1".to_string(), 3.0),
                ("p2".to_string(), 9.0),
                ("p3".to_string(), 5.0),
                ("x".to_string(), 100.0),
            ]))
    }

    #[test]
    fn expand_similar_stub() {
        let cat = peers_catalog();
        let model = PopularPeers::new(&cat);
        assert!(expand_similar(&["x".into()], &model, 0).is_empty());
        assert_eq!(expand_similar(&["x".into()], &model, 2), vec!["p2", "p3"]);
        let both = expand_similar(&["p1".into(), "p3".into()], &model, 3);
        let uniq: BTreeSet<_> = both.iter().collect();
        assert_eq!(uniq.len(), both.len());
        assert!(!both.contains(&"p1".to_string()) && !both.contains(&"p3".to_string()));
    }
}
