//! Per-cart candidate pool: top-N Item XP candidates per OG anchor, merged,
//! deduplicated and capped with product-type stratified sampling.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::catalog::{Catalog, Segment};
use crate::error::{Result, XpError};
use crate::retrieval::ScoredCandidate;

pub const TOP_PER_ANCHOR: usize = 30;
pub const POOL_CAP: usize = 300;

/// Higher rank score first, then item id.
fn by_score(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.rank_score()
        .total_cmp(&a.rank_score())
        .then_with(|| a.item_id.cmp(&b.item_id))
}

/// Precomputed Item XP candidates keyed by anchor. Each list keeps the
/// order it was produced in, drops repeated items and is truncated to
/// [`TOP_PER_ANCHOR`].
#[derive(Debug, Clone, Default)]
pub struct XpIndex {
    by_anchor: HashMap<String, Vec<ScoredCandidate>>,
}

impl XpIndex {
    pub fn new(cands: impl IntoIterator<Item = ScoredCandidate>) -> Self {
        Self::with_limit(cands, TOP_PER_ANCHOR)
    }

    pub fn with_limit(cands: impl IntoIterator<Item = ScoredCandidate>, per_anchor: usize) -> Self {
        let mut by_anchor: HashMap<String, Vec<ScoredCandidate>> = HashMap::new();
        for c in cands {
            by_anchor.entry(c.anchor_item_id.clone()).or_default().push(c);
        }
        for list in by_anchor.values_mut() {
            let mut seen = BTreeSet::new();
            list.retain(|c| seen.insert(c.item_id.clone()));
            list.truncate(per_anchor);
        }
        XpIndex { by_anchor }
    }

    pub fn candidates(&self, anchor: &str) -> &[ScoredCandidate] {
        self.by_anchor.get(anchor).map_or(&[], Vec::as_slice)
    }

    pub fn anchors(&self) -> impl Iterator<Item = &str> {
        self.by_anchor.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_anchor.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidatePool {
    pub cart_id: String,
    pub entries: Vec<ScoredCandidate>,
    pub per_anchor_counts: BTreeMap<String, usize>,
}

impl CandidatePool {
    pub fn empty(cart_id: impl Into<String>) -> Self {
        CandidatePool {
            cart_id: cart_id.into(),
            entries: Vec::new(),
            per_anchor_counts: BTreeMap::new(),
        }
    }

    /// Builds the pool for a set of cart items. Only OG items act as anchors.
    /// The result depends only on the anchor set, so removing an anchor
    /// restores exactly the pool that existed before it was added.
    pub fn build<'a>(
        cart_id: impl Into<String>,
        cart_items: impl IntoIterator<Item = &'a str>,
        index: &XpIndex,
        catalog: &Catalog,
        seed: u64,
    ) -> Result<Self> {
        let anchors: BTreeSet<&str> = cart_items
            .into_iter()
            .filter(|id| catalog.get(id).map_or(false, |i| i.segment == Segment::Og))
            .collect();
        // anchors iterate in id order, so on equal scores the smaller anchor wins
        let mut best: HashMap<&str, &ScoredCandidate> = HashMap::new();
        for a in &anchors {
            for c in index.candidates(a) {
                match best.get(c.item_id.as_str()) {
                    Some(prev) if prev.rank_score() >= c.rank_score() => {}
                    _ => {
                        best.insert(c.item_id.as_str(), c);
                    }
                }
            }
        }
        let mut entries: Vec<ScoredCandidate> = best.into_values().cloned().collect();
        entries.sort_by(by_score);
        if entries.len() > POOL_CAP {
            entries = stratified_sample(entries, POOL_CAP, seed, |c| rec_pt(catalog, c))?;
        }
        let mut per_anchor_counts = BTreeMap::new();
        for c in &entries {
            *per_anchor_counts.entry(c.anchor_item_id.clone()).or_insert(0) += 1;
        }
        Ok(CandidatePool {
            cart_id: cart_id.into(),
            entries,
            per_anchor_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks size cap, per-anchor cap, uniqueness and count bookkeeping.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.entries.len() > POOL_CAP {
            return Err(format!("pool has {} entries", self.entries.len()));
        }
        let mut seen = BTreeSet::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &self.entries {
            if !seen.insert(c.item_id.as_str()) {
                return Err(format!("duplicate item {}", c.item_id));
            }
            *counts.entry(c.anchor_item_id.as_str()).or_insert(0) += 1;
        }
        if let Some((a, n)) = counts.iter().find(|(_, n)| **n > TOP_PER_ANCHOR) {
            return Err(format!("anchor {a} contributes {n} entries"));
        }
        let recorded: BTreeMap<&str, usize> = self.per_anchor_counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        if recorded != counts {
            return Err("per-anchor counts out of sync".into());
        }
        Ok(())
    }
}

fn rec_pt(catalog: &Catalog, c: &ScoredCandidate) -> String {
    catalog
        .get(&c.item_id)
        .map_or_else(|| c.item_id.clone(), |i| i.product_type.clone())
}

/// Per-stratum slot counts for a target. Every nonempty stratum gets one
/// slot; the rest is shared in proportion to `size - 1` by largest
/// remainder. When the target is below the number of strata, the largest
/// strata win. Ties break by a seeded random order.
pub fn allocate(sizes: &[usize], target: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiebreak: Vec<u64> = sizes.iter().map(|_| rng.gen()).collect();
    let total: usize = sizes.iter().sum();
    if target >= total {
        return sizes.to_vec();
    }
    let nonempty: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
    let mut alloc = vec![0; sizes.len()];
    if target < nonempty.len() {
        let mut order = nonempty;
        order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(tiebreak[a].cmp(&tiebreak[b])));
        for &i in &order[..target] {
            alloc[i] = 1;
        }
        return alloc;
    }
    let rest = target - nonempty.len();
    let spare = total - nonempty.len();
    let mut fracs = Vec::with_capacity(nonempty.len());
    let mut given = 0;
    for &i in &nonempty {
        let num = rest * (sizes[i] - 1);
        let q = num / spare;
        alloc[i] = 1 + q;
        given += q;
        fracs.push((i, num % spare));
    }
    fracs.sort_by(|a, b| b.1.cmp(&a.1).then(tiebreak[a.0].cmp(&tiebreak[b.0])));
    for &(i, _) in fracs.iter().take(rest - given) {
        alloc[i] += 1;
    }
    alloc
}

/// Caps `entries` at `target` while keeping every product type represented
/// as far as the target allows. Within a stratum the highest rank scores
/// are kept. The output is sorted by rank score.
pub fn stratified_sample<F>(entries: Vec<ScoredCandidate>, target: usize, seed: u64, stratum: F) -> Result<Vec<ScoredCandidate>>
where
    F: Fn(&ScoredCandidate) -> String,
{
    if target == 0 {
        return Err(XpError::TargetNonPositive);
    }
    let mut strata: BTreeMap<String, Vec<ScoredCandidate>> = BTreeMap::new();
    for c in entries {
        strata.entry(stratum(&c)).or_default().push(c);
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let alloc = allocate(&sizes, target, seed);
    let mut out = Vec::with_capacity(target);
    for (mut group, n) in strata.into_values().zip(alloc) {
        group.sort_by(by_score);
        group.truncate(n);
        out.extend(group);
    }
    out.sort_by(by_score);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ItemRecord;
    use crate::retrieval::CandidateSource;

    fn cand(anchor: &str, item: &str, score: f64) -> ScoredCandidate {
        ScoredCandidate {
            anchor_item_id: anchor.into(),
            item_id: item.into(),
            source: CandidateSource::Llm,
            llm_rec: String::new(),
            retrieval_sim: score,
            ce_score: None,
            llm_score: None,
            combined: None,
            band: None,
        }
    }

    fn item(id: &str, pt: &str, segment: Segment) -> ItemRecord {
        ItemRecord {
            item_id: id.into(),
            title: id.into(),
            product_type: pt.into(),
            category: "C".into(),
            segment,
            price: 1.0,
        }
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(&[10, 10, 10], 6, 0), vec![2, 2, 2]);
        assert_eq!(allocate(&[5, 1], 3, 0), vec![2, 1]);
        assert_eq!(allocate(&[301], 300, 0), vec![300]);
        assert_eq!(allocate(&[4, 2], 10, 0), vec![4, 2]);
        assert_eq!(allocate(&[7, 3, 1], 2, 9), vec![1, 1, 0]);
    }

    #[test]
    fn allocation_sums_to_target() {
        for seed in 0..20 {
            let sizes = [17, 1, 1, 40, 3, 0, 9];
            for target in 1..70 {
                let a = allocate(&sizes, target, seed);
                assert_eq!(a.iter().sum::<usize>(), target.min(71));
                assert!(a.iter().zip(&sizes).all(|(x, s)| x <= s));
            }
        }
    }

    #[test]
    fn single_stratum_keeps_top_scores() {
        let entries: Vec<_> = (0..301).map(|i| cand("a", &format!("g{i:03}"), i as f64)).collect();
        let out = stratified_sample(entries, 300, 3, |_| "pt".into()).unwrap();
        assert_eq!(out.len(), 300);
        assert!(out.iter().all(|c| c.item_id != "g000"));
    }

    #[test]
    fn zero_target_rejected() {
        let err = stratified_sample(vec![cand("a", "b", 1.0)], 0, 0, |_| "pt".into()).unwrap_err();
        assert!(matches!(err, XpError::TargetNonPositive));
    }

    #[test]
    fn index_keeps_order_and_truncates() {
        let mut cands: Vec<_> = (0..40).map(|i| cand("a", &format!("g{i:02}"), i as f64)).collect();
        cands.insert(1, cand("a", "g00", 99.0));
        let idx = XpIndex::new(cands);
        let c = idx.candidates("a");
        assert_eq!(c.len(), TOP_PER_ANCHOR);
        assert_eq!(c[0].item_id, "g00");
        assert_eq!(c[0].retrieval_sim, 0.0);
        assert_eq!(c[29].item_id, "g29");
        assert!(idx.candidates("zzz").is_empty());
    }

    #[test]
    fn duplicate_keeps_best_and_gm_anchor_ignored() {
        let catalog = Catalog::new(vec![
            item("o1", "Eggs", Segment::Og),
            item("o2", "Milk", Segment::Og),
            item("g1", "Pan", Segment::Gm),
            item("g2", "Cup", Segment::Gm),
        ])
        .unwrap();
        let idx = XpIndex::new(vec![
            cand("o1", "g1", 0.5),
            cand("o2", "g1", 0.9),
            cand("o2", "g2", 0.3),
            cand("g1", "g2", 0.99),
        ]);
        let pool = CandidatePool::build("c", ["o1", "o2", "g1"], &idx, &catalog, 0).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.entries[0].anchor_item_id, "o2");
        assert_eq!(pool.per_anchor_counts.get("o2"), Some(&2));
        pool.check_invariants().unwrap();

        let tie = XpIndex::new(vec![cand("o2", "g1", 0.5), cand("o1", "g1", 0.5)]);
        let pool = CandidatePool::build("c", ["o2", "o1"], &tie, &catalog, 0).unwrap();
        assert_eq!(pool.entries[0].anchor_item_id, "o1");
    }
}
