//! Real-time cart recommendation engine: cart event ingestion, per-cart
//! candidate pools, ranking and carousel diversification.

pub mod http;
mod pool;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use dashmap::DashMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Result, XpError};
use crate::nn::Tensor;
use crate::ranker::{heuristic_weight, CartEntry, CartState, FeatureTable, PersonaMap, Platform, RankerModel, PERSONA_DIM};
use crate::retrieval::{CandidateSource, HashNgramEmbedder, QualityBand, ScoredCandidate};

pub use pool::{allocate, stratified_sample, CandidatePool, XpIndex, POOL_CAP, TOP_PER_ANCHOR};

pub const DEFAULT_MAX_PER_PT: usize = 2;
pub const DEFAULT_K: usize = 12;
/// Persona used for carts with no known customer.
pub const NEUTRAL_PERSONA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CartEventKind {
    Add,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartEvent {
    #[serde(rename = "type")]
    pub kind: CartEventKind,
    pub item_id: String,
    pub ts: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub customer_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<Platform>,
}

impl CartEvent {
    pub fn add(item_id: impl Into<String>, ts: u64) -> Self {
        CartEvent {
            kind: CartEventKind::Add,
            item_id: item_id.into(),
            ts,
            customer_id: None,
            persona: None,
            platform: None,
        }
    }

    pub fn remove(item_id: impl Into<String>, ts: u64) -> Self {
        CartEvent {
            kind: CartEventKind::Remove,
            ..CartEvent::add(item_id, ts)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Ranker,
    Heuristic,
}

impl std::str::FromStr for ModelTag {
    type Err = XpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ranker" => Ok(ModelTag::Ranker),
            "heuristic" => Ok(ModelTag::Heuristic),
            other => Err(XpError::ConfigInvalid(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub anchor_item_id: String,
    pub source: CandidateSource,
    pub llm_rec: String,
    pub retrieval_sim: f64,
    pub ce_score: Option<f64>,
    pub llm_score: Option<f64>,
    pub combined: Option<f64>,
    pub band: Option<QualityBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarouselItem {
    pub item_id: String,
    pub product_type: String,
    pub score: f64,
    pub source: CandidateSource,
    pub band: Option<QualityBand>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Carousel {
    pub cart_id: String,
    pub model_tag: ModelTag,
    pub generated_at: u64,
    pub ranked: Vec<CarouselItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CartSnapshot {
    pub cart: CartState,
    pub customer_id: Option<String>,
    pub pool: CandidatePool,
}

/// Trained model plus the item representations it was precomputed on.
pub struct RankerBundle {
    model: RankerModel,
    feats: FeatureTable,
    reprs: Tensor,
}

impl RankerBundle {
    pub fn new(model: RankerModel, catalog: &Catalog) -> Result<Self> {
        let feats = FeatureTable::build(catalog, &HashNgramEmbedder::new(model.config.embed_dim, 0));
        let reprs = model.precompute_reprs(&feats)?;
        Ok(RankerBundle { model, feats, reprs })
    }

    pub fn model(&self) -> &RankerModel {
        &self.model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineOptions {
    pub max_per_pt: usize,
    /// Seed for stratified sampling tie-breaks.
    pub seed: u64,
    /// Also drop candidates whose product type is already in the cart.
    pub exclude_cart_pts: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            max_per_pt: DEFAULT_MAX_PER_PT,
            seed: 0,
            exclude_cart_pts: false,
        }
    }
}

struct CartSlot {
    state: CartState,
    customer_id: Option<String>,
    pool: CandidatePool,
}

pub struct Engine {
    catalog: Arc<Catalog>,
    index: XpIndex,
    personas: HashMap<String, Vec<f64>>,
    persona_map: PersonaMap,
    ranker: Option<RankerBundle>,
    options: EngineOptions,
    carts: DashMap<String, Arc<Mutex<CartSlot>>>,
    log: Option<Mutex<File>>,
}

impl Engine {
    pub fn new(catalog: Arc<Catalog>, index: XpIndex, options: EngineOptions) -> Self {
        Engine {
            catalog,
            index,
            personas: HashMap::new(),
            persona_map: PersonaMap::new(),
            ranker: None,
            options,
            carts: DashMap::new(),
            log: None,
        }
    }

    pub fn with_ranker(mut self, ranker: RankerBundle) -> Self {
        self.ranker = Some(ranker);
        self
    }

    pub fn with_personas(mut self, personas: HashMap<String, Vec<f64>>, map: PersonaMap) -> Self {
        self.personas = personas;
        self.persona_map = map;
        self
    }

    /// Replays an existing event log, then appends every later event to it.
    pub fn with_event_log(mut self, path: &Path) -> Result<Self> {
        if path.exists() {
            let f = BufReader::new(File::open(path)?);
            for (i, line) in f.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: LogRecord = serde_json::from_str(&line).map_err(|e| XpError::MalformedRecord {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                self.apply(&rec.cart_id, &rec.event)?;
            }
        }
        self.log = Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?));
        Ok(self)
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    pub fn has_ranker(&self) -> bool {
        self.ranker.is_some()
    }

    pub fn cart_count(&self) -> usize {
        self.carts.len()
    }

    fn slot(&self, cart_id: &str) -> Result<Arc<Mutex<CartSlot>>> {
        self.carts
            .get(cart_id)
            .map(|s| Arc::clone(&s))
            .ok_or_else(|| XpError::UnknownCart(cart_id.to_string()))
    }

    fn neutral_persona() -> Vec<f64> {
        vec![NEUTRAL_PERSONA; PERSONA_DIM]
    }

    /// Applies one add/remove event. Carts are created on first use.
    pub fn on_cart_event(&self, cart_id: &str, event: &CartEvent) -> Result<CartSnapshot> {
        let snap = self.apply(cart_id, event)?;
        if let Some(log) = &self.log {
            let rec = LogRecord {
                cart_id: cart_id.to_string(),
                event: event.clone(),
            };
            let mut line = serde_json::to_vec(&rec)?;
            line.push(b'\n');
            let mut f = log.lock();
            f.write_all(&line)?;
            f.flush()?;
        }
        Ok(snap)
    }

    fn apply(&self, cart_id: &str, event: &CartEvent) -> Result<CartSnapshot> {
        self.catalog.require(&event.item_id)?;
        if let Some(p) = &event.persona {
            CartState::new(cart_id, p.clone(), Platform::Web).validate()?;
        }
        let slot = Arc::clone(
            &self
                .carts
                .entry(cart_id.to_string())
                .or_insert_with(|| {
                    Arc::new(Mutex::new(CartSlot {
                        state: CartState::new(cart_id, Self::neutral_persona(), Platform::default()),
                        customer_id: None,
                        pool: CandidatePool::empty(cart_id),
                    }))
                }),
        );
        let mut slot = slot.lock();
        if let Some(c) = &event.customer_id {
            slot.customer_id = Some(c.clone());
            if let Some(p) = self.personas.get(c) {
                slot.state.persona = p.clone();
            }
        }
        if let Some(p) = &event.persona {
            slot.state.persona = p.clone();
        }
        if let Some(p) = event.platform {
            slot.state.platform = p;
        }
        let entries = &mut slot.state.entries;
        match event.kind {
            CartEventKind::Add => {
                let at = entries.partition_point(|e| e.ts <= event.ts);
                entries.insert(
                    at,
                    CartEntry {
                        item_id: event.item_id.clone(),
                        ts: event.ts,
                    },
                );
            }
            CartEventKind::Remove => {
                if let Some(at) = entries.iter().rposition(|e| e.item_id == event.item_id) {
                    entries.remove(at);
                }
            }
        }
        let pool = CandidatePool::build(
            cart_id,
            slot.state.item_ids(),
            &self.index,
            &self.catalog,
            self.options.seed,
        )?;
        slot.pool = pool;
        Ok(snapshot(&slot))
    }

    pub fn cart(&self, cart_id: &str) -> Result<CartSnapshot> {
        let slot = self.slot(cart_id)?;
        let slot = slot.lock();
        Ok(snapshot(&slot))
    }

    /// Scores the cart's pool with the selected model and returns the
    /// diversified top-k. Cart items are never recommended.
    pub fn recommend(
        &self,
        cart_id: &str,
        k: usize,
        model_tag: ModelTag,
        explain: bool,
        max_per_pt: Option<usize>,
    ) -> Result<Carousel> {
        let slot = self.slot(cart_id)?;
        let slot = slot.lock();
        let cart = &slot.state;
        let in_cart: std::collections::BTreeSet<&str> = cart.item_ids().collect();
        let cart_pts: std::collections::BTreeSet<&str> = in_cart
            .iter()
            .filter_map(|id| self.catalog.get(id))
            .map(|i| i.product_type.as_str())
            .collect();
        let pool: Vec<&ScoredCandidate> = slot
            .pool
            .entries
            .iter()
            .filter(|c| !in_cart.contains(c.item_id.as_str()))
            .filter(|c| {
                !self.options.exclude_cart_pts
                    || self
                        .catalog
                        .get(&c.item_id)
                        .map_or(true, |i| !cart_pts.contains(i.product_type.as_str()))
            })
            .collect();
        let generated_at = cart.entries.iter().map(|e| e.ts).max().unwrap_or(0);
        let mut carousel = Carousel {
            cart_id: cart_id.to_string(),
            model_tag,
            generated_at,
            ranked: Vec::new(),
        };
        if pool.is_empty() || k == 0 {
            return Ok(carousel);
        }
        let scores = match model_tag {
            ModelTag::Heuristic => pool
                .iter()
                .map(|c| heuristic_weight(cart, &c.item_id, &c.anchor_item_id, &self.catalog, &self.persona_map))
                .collect(),
            ModelTag::Ranker => {
                let r = self.ranker.as_ref().ok_or(XpError::ModelUnavailable)?;
                let cart_rows = r.feats.rows_of(cart.item_ids())?;
                let cand_rows = r.feats.rows_of(pool.iter().map(|c| c.item_id.as_str()))?;
                r.model
                    .score_with_reprs(&r.reprs, &cart_rows, &cand_rows, &cart.persona, cart.platform)?
            }
        };
        let mut scored: Vec<(&ScoredCandidate, f64)> = pool.into_iter().zip(scores).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.item_id.cmp(&b.0.item_id)));
        let cap = max_per_pt.unwrap_or(self.options.max_per_pt);
        let picked = diversify(&scored, k, cap, |c| {
            self.catalog.get(&c.item_id).map_or("", |i| i.product_type.as_str())
        });
        carousel.ranked = picked
            .into_iter()
            .map(|(c, score)| CarouselItem {
                item_id: c.item_id.clone(),
                product_type: self
                    .catalog
                    .get(&c.item_id)
                    .map_or_else(String::new, |i| i.product_type.clone()),
                score,
                source: c.source,
                band: c.band,
                explanation: explain.then(|| Explanation {
                    anchor_item_id: c.anchor_item_id.clone(),
                    source: c.source,
                    llm_rec: c.llm_rec.clone(),
                    retrieval_sim: c.retrieval_sim,
                    ce_score: c.ce_score,
                    llm_score: c.llm_score,
                    combined: c.combined,
                    band: c.band,
                }),
            })
            .collect();
        Ok(carousel)
    }
}

fn snapshot(slot: &CartSlot) -> CartSnapshot {
    CartSnapshot {
        cart: slot.state.clone(),
        customer_id: slot.customer_id.clone(),
        pool: slot.pool.clone(),
    }
}

/// Greedy scan of a score-sorted list keeping at most `max_per_pt` items per
/// product type, stopping at `k` picks.
pub fn diversify<'a, T: Copy, F>(sorted: &[(T, f64)], k: usize, max_per_pt: usize, pt_of: F) -> Vec<(T, f64)>
where
    F: Fn(T) -> &'a str,
{
    let mut used: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(k);
    for &(item, score) in sorted {
        if out.len() == k {
            break;
        }
        let n = used.entry(pt_of(item)).or_insert(0);
        if *n < max_per_pt {
            *n += 1;
            out.push((item, score));
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct LogRecord {
    cart_id: String,
    event: CartEvent,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ItemRecord, Segment};

    fn catalog() -> Arc<Catalog> {
        let mut items = Vec::new();
        for a in 0..3 {
            items.push(ItemRecord {
                item_id: format!("og{a}"),
                title: format!("Fresh thing {a}"),
                product_type: format!("OgPt{a}"),
                category: "Grocery".into(),
                segment: Segment::Og,
                price: 2.0,
            });
        }
        for g in 0..12 {
            items.push(ItemRecord {
                item_id: format!("gm{g:02}"),
                title: format!("Gadget {g}"),
                product_type: format!("GmPt{}", g / 2),
                category: "Kitchen".into(),
                segment: Segment::Gm,
                price: 10.0,
            });
        }
        Arc::new(Catalog::new(items).unwrap())
    }

    fn engine() -> Engine {
        let cands = (0..12).map(|g| {
            let mut c = ScoredCandidate::mba("og0".into(), format!("gm{g:02}"), 0.0);
            c.set_scores(1.0 - g as f64 * 0.05, 0.9).unwrap();
            c
        });
        Engine::new(catalog(), XpIndex::new(cands), EngineOptions::default())
    }

    #[test]
    fn diversified_carousel_respects_caps() {
        let e = engine();
        e.on_cart_event("c", &CartEvent::add("og0", 1)).unwrap();
        let mut map = PersonaMap::new();
        map.insert("Kitchen".into(), vec![0]);
        let e = e.with_personas(HashMap::new(), map);
        let car = e.recommend("c", 4, ModelTag::Heuristic, true, Some(1)).unwrap();
        assert_eq!(car.ranked.len(), 4);
        let pts: std::collections::BTreeSet<_> = car.ranked.iter().map(|r| r.product_type.clone()).collect();
        assert_eq!(pts.len(), 4);
        assert_eq!(car.generated_at, 1);
        assert!(car.ranked[0].explanation.is_some());
    }

    #[test]
    fn unknown_cart_and_item() {
        let e = engine();
        assert!(matches!(e.recommend("nope", 3, ModelTag::Heuristic, false, None), Err(XpError::UnknownCart(_))));
        assert!(matches!(e.on_cart_event("c", &CartEvent::add("zzz", 1)), Err(XpError::UnknownItem(_))));
    }

    #[test]
    fn ranker_missing_is_reported() {
        let e = engine();
        e.on_cart_event("c", &CartEvent::add("og0", 1)).unwrap();
        assert!(matches!(e.recommend("c", 3, ModelTag::Ranker, false, None), Err(XpError::ModelUnavailable)));
    }

    #[test]
    fn cart_items_excluded_and_remove_is_latest() {
        let e = engine();
        e.on_cart_event("c", &CartEvent::add("og0", 1)).unwrap();
        e.on_cart_event("c", &CartEvent::add("gm00", 2)).unwrap();
        e.on_cart_event("c", &CartEvent::add("gm00", 5)).unwrap();
        let car = e.recommend("c", 12, ModelTag::Heuristic, false, Some(12)).unwrap();
        assert!(car.ranked.iter().all(|r| r.item_id != "gm00"));
        let s = e.on_cart_event("c", &CartEvent::remove("gm00", 6)).unwrap();
        assert_eq!(s.cart.entries.iter().map(|x| x.ts).collect::<Vec<_>>(), vec![1, 2]);
        let s = e.on_cart_event("c", &CartEvent::remove("og2", 7)).unwrap();
        assert_eq!(s.cart.entries.len(), 2);
    }

    #[test]
    fn event_log_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let e = engine().with_event_log(&path).unwrap();
        e.on_cart_event("c", &CartEvent::add("og0", 1)).unwrap();
        e.on_cart_event("d", &CartEvent::add("og1", 2)).unwrap();
        let before = e.cart("c").unwrap();
        drop(e);
        let e = engine().with_event_log(&path).unwrap();
        assert_eq!(e.cart("c").unwrap(), before);
        assert_eq!(e.cart_count(), 2);
    }
}
