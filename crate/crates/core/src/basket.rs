//! Multi-session basket construction and OG -> GM product-type association
//! mining (support / confidence / lift over baskets).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Segment};
use crate::error::{Result, XpError};
use crate::retrieval::{cosine, CandidateSource, ScoredCandidate, TextEmbedder};

pub const SECONDS_PER_DAY: u64 = 86_400;
pub const DEFAULT_WINDOW_DAYS: u32 = 21;
pub const DEFAULT_MIN_SUPPORT: f64 = 0.0005;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub customer_id: String,
    pub item_id: String,
    pub ts: u64,
    /// Online/store channel tag; carried through but not used for weighting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basket {
    pub customer_id: String,
    pub window_start: u64,
    pub item_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRule {
    pub anchor_pt: String,
    pub rec_pt: String,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
}

/// Split each customer's purchases into tumbling windows of `window_days`
/// anchored at that customer's first purchase. Windows with fewer than two
/// distinct items are dropped.
pub fn build_baskets(transactions: &[Transaction], window_days: u32) -> Vec<Basket> {
    let width = u64::from(window_days.max(1)) * SECONDS_PER_DAY;
    let mut by_customer: BTreeMap<&str, Vec<&Transaction>> = BTreeMap::new();
    for t in transactions {
        by_customer.entry(t.customer_id.as_str()).or_default().push(t);
    }

    let mut baskets = Vec::new();
    for (customer, mut txs) in by_customer {
        txs.sort_by(|a, b| a.ts.cmp(&b.ts).then_with(|| a.item_id.cmp(&b.item_id)));
        let first = txs[0].ts;
        let mut windows: BTreeMap<u64, BTreeSet<String>> = BTreeMap::new();
        for t in txs {
            let w = (t.ts - first) / width;
            windows.entry(w).or_default().insert(t.item_id.clone());
        }
        for (w, items) in windows {
            if items.len() >= 2 {
                baskets.push(Basket {
                    customer_id: customer.to_string(),
                    window_start: first + w * width,
                    item_ids: items,
                });
            }
        }
    }
    baskets
}

/// Probabilities for one ordered PT pair over a basket collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub p_a: f64,
    pub p_b: f64,
    pub p_ab: f64,
}

impl PairStats {
    pub fn support(&self) -> f64 {
        self.p_ab
    }

    pub fn confidence(&self) -> f64 {
        if self.p_a == 0.0 {
            0.0
        } else {
            self.p_ab / self.p_a
        }
    }

    pub fn lift(&self) -> f64 {
        let denom = self.p_a * self.p_b;
        if denom == 0.0 {
            0.0
        } else {
            self.p_ab / denom
        }
    }
}

/// Baskets projected onto product-type sets.
#[derive(Debug, Clone)]
pub struct PtBaskets {
    sets: Vec<BTreeSet<String>>,
}

impl PtBaskets {
    /// Items missing from the catalog are skipped.
    pub fn project(baskets: &[Basket], catalog: &Catalog) -> Self {
        let sets = baskets
            .iter()
            .map(|b| {
                b.item_ids
                    .iter()
                    .filter_map(|id| catalog.get(id).map(|it| it.product_type.clone()))
                    .collect()
            })
            .collect();
        PtBaskets { sets }
    }

    pub fn from_sets(sets: Vec<BTreeSet<String>>) -> Self {
        PtBaskets { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Stats for any PT pair, irrespective of segment.
    pub fn stats(&self, a: &str, b: &str) -> PairStats {
        let n = self.sets.len() as f64;
        let (mut ca, mut cb, mut cab) = (0u64, 0u64, 0u64);
        for s in &self.sets {
            let ha = s.contains(a);
            let hb = s.contains(b);
            ca += ha as u64;
            cb += hb as u64;
            cab += (ha && hb) as u64;
        }
        PairStats {
            p_a: ca as f64 / n,
            p_b: cb as f64 / n,
            p_ab: cab as f64 / n,
        }
    }
}

fn check_threshold(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(XpError::ThresholdOutOfRange { name, value })
    }
}

/// Mine OG-anchor -> GM-rec product-type rules. Only pairs that co-occur in
/// at least one basket are candidates. Output is sorted by descending lift,
/// ties on (anchor_pt, rec_pt).
pub fn mine_pt_associations(
    baskets: &[Basket],
    catalog: &Catalog,
    min_support: f64,
    min_confidence: f64,
) -> Result<Vec<AssociationRule>> {
    check_threshold("min_support", min_support)?;
    check_threshold("min_confidence", min_confidence)?;
    if baskets.is_empty() {
        return Err(XpError::EmptyBaskets);
    }

    let n = baskets.len() as f64;
    let mut og_count: HashMap<&str, u64> = HashMap::new();
    let mut gm_count: HashMap<&str, u64> = HashMap::new();
    let mut pair_count: BTreeMap<(&str, &str), u64> = BTreeMap::new();

    for basket in baskets {
        let mut og: BTreeSet<&str> = BTreeSet::new();
        let mut gm: BTreeSet<&str> = BTreeSet::new();
        for id in &basket.item_ids {
            if let Some(item) = catalog.get(id) {
                match item.segment {
                    Segment::Og => og.insert(item.product_type.as_str()),
                    Segment::Gm => gm.insert(item.product_type.as_str()),
                };
            }
        }
        for a in &og {
            *og_count.entry(a).or_default() += 1;
        }
        for b in &gm {
            *gm_count.entry(b).or_default() += 1;
        }
        for a in &og {
            for b in &gm {
                *pair_count.entry((a, b)).or_default() += 1;
            }
        }
    }

    let mut rules: Vec<AssociationRule> = pair_count
        .into_iter()
        .filter_map(|((a, b), cab)| {
            let stats = PairStats {
                p_a: og_count[a] as f64 / n,
                p_b: gm_count[b] as f64 / n,
                p_ab: cab as f64 / n,
            };
            let rule = AssociationRule {
                anchor_pt: a.to_string(),
                rec_pt: b.to_string(),
                support: stats.support(),
                confidence: stats.confidence(),
                lift: stats.lift(),
            };
            (rule.support >= min_support && rule.confidence >= min_confidence).then_some(rule)
        })
        .collect();

    sort_rules(&mut rules);
    Ok(rules)
}

pub fn sort_rules(rules: &mut [AssociationRule]) {
    rules.sort_by(|x, y| {
        y.lift
            .total_cmp(&x.lift)
            .then_with(|| x.anchor_pt.cmp(&y.anchor_pt))
            .then_with(|| x.rec_pt.cmp(&y.rec_pt))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PtMatch {
    pub anchor_pt: String,
    pub rec_pt: String,
    pub similarity: f64,
}

/// Cross pairs whose PT-name embeddings have cosine >= `threshold`, sorted
/// descending with (anchor, rec) tie-break.
pub fn pt_semantic_matches(
    og_pts: &[String],
    gm_pts: &[String],
    embedder: &dyn TextEmbedder,
    threshold: f64,
) -> Vec<PtMatch> {
    let gm_vecs: Vec<Vec<f64>> = gm_pts.iter().map(|p| embedder.embed(p)).collect();
    let mut out = Vec::new();
    for a in og_pts {
        let va = embedder.embed(a);
        for (b, vb) in gm_pts.iter().zip(&gm_vecs) {
            let sim = cosine(&va, vb);
            if sim >= threshold {
                out.push(PtMatch {
                    anchor_pt: a.clone(),
                    rec_pt: b.clone(),
                    similarity: sim,
                });
            }
        }
    }
    out.sort_by(|x, y| {
        y.similarity
            .total_cmp(&x.similarity)
            .then_with(|| x.anchor_pt.cmp(&y.anchor_pt))
            .then_with(|| x.rec_pt.cmp(&y.rec_pt))
    });
    out
}

/// Popular items of each rule's rec PT, grouped by anchor PT. A GM item
/// reachable through several rules keeps the largest lift.
pub fn copurchase_candidates(
    rules: &[AssociationRule],
    catalog: &Catalog,
    per_pt_k: usize,
) -> BTreeMap<String, Vec<ScoredCandidate>> {
    let mut best: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for rule in rules {
        let Ok(items) = catalog.popular_items_in_pt(&rule.rec_pt, per_pt_k) else {
            continue;
        };
        let slot = best.entry(rule.anchor_pt.clone()).or_default();
        for id in items {
            let lift = slot.entry(id).or_insert(rule.lift);
            if rule.lift > *lift {
                *lift = rule.lift;
            }
        }
    }

    best.into_iter()
        .map(|(anchor_pt, items)| {
            let mut cands: Vec<ScoredCandidate> = items
                .into_iter()
                .map(|(item_id, lift)| ScoredCandidate::mba(String::new(), item_id, lift))
                .collect();
            cands.sort_by(|a, b| {
                b.retrieval_sim
                    .total_cmp(&a.retrieval_sim)
                    .then_with(|| catalog.popularity(&b.item_id).total_cmp(&catalog.popularity(&a.item_id)))
                    .then_with(|| a.item_id.cmp(&b.item_id))
            });
            debug_assert!(cands.iter().all(|c| c.source == CandidateSource::Mba));
            (anchor_pt, cands)
        })
        .collect()
}

/// Number of transaction records per item.
pub fn popularity_from_transactions(transactions: &[Transaction]) -> HashMap<String, f64> {
    let mut out: HashMap<String, f64> = HashMap::new();
    for t in transactions {
        *out.entry(t.item_id.clone()).or_default() += 1.0;
    }
    out
}

pub fn read_transactions(path: &Path) -> Result<Vec<Transaction>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transaction = serde_json::from_str(&line).map_err(|e| XpError::MalformedRecord {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_transactions(path: &Path, transactions: &[Transaction]) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for t in transactions {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rules_csv(path: &Path, rules: &[AssociationRule]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["anchor_pt", "rec_pt", "support", "confidence", "lift"])?;
    for r in rules {
        w.write_record([
            r.anchor_pt.clone(),
            r.rec_pt.clone(),
            format!("{:.8}", r.support),
            format!("{:.8}", r.confidence),
            format!("{:.8}", r.lift),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rules_csv(path: &Path) -> Result<Vec<AssociationRule>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
