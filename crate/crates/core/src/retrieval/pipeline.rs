//! Item-level candidate pipeline for one OG anchor:
//! themes -> theme recs -> generation filter -> semantic retrieval ->
//! similar-item expansion -> CE + judge scoring -> banding -> merge with
//! co-purchase candidates.

use std::collections::{BTreeMap, HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ItemRecord};
use crate::error::Result;
use crate::llm::{
    evaluate_generation, filter_generated, generate_theme_recs, generate_themes, judge_retrieved, ChatClient,
    JudgeCache, LlmOptions, LlmRecommendation, Theme, DEFAULT_GEN_THRESHOLD,
};

use super::{
    expand_similar, CandidateSource, CrossScorer, EmbeddingStore, QualityBand, ScoredCandidate, SegmentFilter,
    SimilarItems, TextEmbedder,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k_retrieve: usize,
    pub sim_floor: f64,
    pub similar_per_item: usize,
    pub gen_threshold: f64,
    pub llm: LlmOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_retrieve: 10,
            sim_floor: 0.3,
            similar_per_item: 2,
            gen_threshold: DEFAULT_GEN_THRESHOLD,
            llm: LlmOptions::default(),
        }
    }
}

pub struct PipelineDeps<'a> {
    pub catalog: &'a Catalog,
    pub store: &'a EmbeddingStore,
    pub embedder: &'a dyn TextEmbedder,
    pub cross: &'a dyn CrossScorer,
    pub chat: &'a dyn ChatClient,
    pub similar: &'a dyn SimilarItems,
    pub judge_cache: &'a JudgeCache,
    /// Co-purchase candidates keyed by anchor product type.
    pub mba: &'a BTreeMap<String, Vec<ScoredCandidate>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub themes: Vec<Theme>,
    /// Every generated recommendation with its generation score.
    pub recs: Vec<LlmRecommendation>,
    /// All retrieved and scored llm/similar candidates, Poor included.
    pub evaluated: Vec<ScoredCandidate>,
    /// Final merged candidate list for the anchor.
    pub candidates: Vec<ScoredCandidate>,
}

struct Hit<'r> {
    rec: &'r LlmRecommendation,
    item_id: String,
    source: CandidateSource,
    sim: f64,
}

fn offer<'r>(slot: &mut HashMap<String, usize>, hit: Hit<'r>, hits: &mut Vec<Hit<'r>>) {
    let rank = |h: &Hit<'_>| (h.source == CandidateSource::Llm, h.sim);
    match slot.get(&hit.item_id) {
        Some(&i) => {
            let (a, b) = (rank(&hit), rank(&hits[i]));
            if a.0 > b.0 || (a.0 == b.0 && a.1 > b.1) {
                hits[i] = hit;
            }
        }
        None => {
            slot.insert(hit.item_id.clone(), hits.len());
            hits.push(hit);
        }
    }
}

pub fn item_xp_pipeline(anchor: &ItemRecord, deps: &PipelineDeps<'_>, config: &PipelineConfig) -> Result<PipelineOutput> {
    let (themes, recs) = generation_stage(anchor, deps.chat, config)?;
    let (evaluated, candidates) = retrieval_stage(anchor, &recs, deps, config)?;
    Ok(PipelineOutput {
        themes,
        recs,
        evaluated,
        candidates,
    })
}

/// Themes, theme-conditioned recommendations and their generation scores.
/// Recommendations whose evaluation fails are returned unscored.
pub fn generation_stage(
    anchor: &ItemRecord,
    chat: &dyn ChatClient,
    config: &PipelineConfig,
) -> Result<(Vec<Theme>, Vec<LlmRecommendation>)> {
    let opts = &config.llm;
    let themes = generate_themes(anchor, chat, opts)?;
    let mut recs = generate_theme_recs(anchor, &themes, chat, opts)?;
    for rec in recs.iter_mut() {
        if let Err(e) = evaluate_generation(rec, anchor, chat, opts) {
            warn!("skipping rec `{}` for {}: {e}", rec.rec_text, anchor.item_id);
        }
    }
    Ok((themes, recs))
}

/// Filters generated recommendations, retrieves and judges GM items, and
/// merges with co-purchase candidates. Returns (evaluated, candidates).
pub fn retrieval_stage(
    anchor: &ItemRecord,
    recs: &[LlmRecommendation],
    deps: &PipelineDeps<'_>,
    config: &PipelineConfig,
) -> Result<(Vec<ScoredCandidate>, Vec<ScoredCandidate>)> {
    let opts = &config.llm;
    let kept = filter_generated(recs.to_vec(), config.gen_threshold);

    // retrieval and expansion, deduplicated on item id
    let mut hits: Vec<Hit<'_>> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut rec_hits: Vec<(&LlmRecommendation, Vec<(String, f64)>)> = Vec::new();
    for rec in &kept {
        let query = deps.embedder.embed(&rec.rec_text);
        match deps.store.knn(&query, config.k_retrieve, SegmentFilter::Gm) {
            Ok(found) => {
                let found: Vec<(String, f64)> = found.into_iter().filter(|(_, s)| *s >= config.sim_floor).collect();
                rec_hits.push((rec, found));
            }
            Err(e) => warn!("retrieval failed for `{}`: {e}", rec.rec_text),
        }
    }
    for (rec, found) in &rec_hits {
        for (id, sim) in found {
            offer(
                &mut slot,
                Hit {
                    rec,
                    item_id: id.clone(),
                    source: CandidateSource::Llm,
                    sim: *sim,
                },
                &mut hits,
            );
        }
        for (id, sim) in found {
            for n in expand_similar(std::slice::from_ref(id), deps.similar, config.similar_per_item) {
                offer(
                &mut slot,
                    Hit {
                        rec,
                        item_id: n,
                        source: CandidateSource::Similar,
                        sim: *sim,
                    },
                    &mut hits,
                );
            }
        }
    }

    let mut evaluated = Vec::new();
    for hit in hits {
        let Some(item) = deps.catalog.get(&hit.item_id) else {
            warn!("retrieved item `{}` is not in the catalog", hit.item_id);
            continue;
        };
        if item.segment != crate::catalog::Segment::Gm {
            continue;
        }
        let ce = deps.cross.score(&hit.rec.rec_text, &item.embedding_text());
        let judged = match judge_retrieved(
            &anchor.product_type,
            &hit.rec.rec_text,
            &item.product_type,
            deps.chat,
            deps.judge_cache,
            opts,
        ) {
            Ok(j) => j,
            Err(e) => {
                warn!("judge failed for `{}` -> {}: {e}", hit.rec.rec_text, item.item_id);
                continue;
            }
        };
        let mut cand = ScoredCandidate {
            anchor_item_id: anchor.item_id.clone(),
            item_id: item.item_id.clone(),
            source: hit.source,
            llm_rec: hit.rec.rec_text.clone(),
            retrieval_sim: hit.sim,
            ce_score: None,
            llm_score: None,
            combined: None,
            band: None,
        };
        cand.set_scores(ce, judged.score)?;
        evaluated.push(cand);
    }

    let mut llm_list: Vec<ScoredCandidate> = evaluated
        .iter()
        .filter(|c| c.band.map_or(false, |b| b > QualityBand::Poor))
        .cloned()
        .collect();
    llm_list.sort_by(|a, b| {
        b.rank_score()
            .total_cmp(&a.rank_score())
            .then_with(|| a.item_id.cmp(&b.item_id))
    });

    let taken: HashSet<&str> = llm_list.iter().map(|c| c.item_id.as_str()).collect();
    let mba_list: Vec<ScoredCandidate> = deps
        .mba
        .get(&anchor.product_type)
        .map(|v| {
            v.iter()
                .filter(|c| !taken.contains(c.item_id.as_str()))
                .map(|c| ScoredCandidate {
                    anchor_item_id: anchor.item_id.clone(),
                    ..c.clone()
                })
                .collect()
        })
        .unwrap_or_default();

    let candidates = interleave(llm_list, mba_list);
    Ok((evaluated, candidates))
}

/// Round-robin merge, first list leading.
pub fn interleave<T>(first: Vec<T>, second: Vec<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(first.len() + second.len());
    let mut a = first.into_iter();
    let mut b = second.into_iter();
    loop {
        match (a.next(), b.next()) {
            (None, None) => break,
            (x, y) => {
                out.extend(x);
                out.extend(y);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::interleave;

    #[test]
    fn interleave_llm_first() {
        assert_eq!(interleave(vec![1, 3, 5, 7], vec![2, 4]), vec![1, 2, 3, 4, 5, 7]);
        assert_eq!(interleave(Vec::<i32>::new(), vec![2]), vec![2]);
    }
}
