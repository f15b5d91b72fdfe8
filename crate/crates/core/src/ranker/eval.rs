use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Result, XpError};
use crate::retrieval::ScoredCandidate;
use crate::table::{f4, signed_pct, Table};

use super::{train, CartState, EncoderKind, FeatureTable, LossKind, PersonaMap, RankerConfig, RankerModel, TrainingExample};

/// Binary-gain NDCG with a log2(position + 1) discount; 0 when nothing is relevant.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let disc = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(id.as_ref()))
        .map(|(i, _)| disc(i))
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(disc).sum();
    dcg / idcg
}

/// Mean persona score over the indices mapped to `category`; 0 if unmapped.
pub fn persona_affinity(persona: &[f64], category: &str, map: &PersonaMap) -> f64 {
    match map.get(category) {
        Some(idx) if !idx.is_empty() => {
            idx.iter().map(|&i| persona.get(i).copied().unwrap_or(0.0)).sum::<f64>() / idx.len() as f64
        }
        _ => 0.0,
    }
}

/// Persona affinity of the candidate's category times the number of
/// distinct cart items sharing its anchor's product type.
pub fn heuristic_weight(cart: &CartState, candidate: &str, anchor: &str, catalog: &Catalog, map: &PersonaMap) -> f64 {
    let Some(item) = catalog.get(candidate) else { return 0.0 };
    let Some(anchor_pt) = catalog.get(anchor).map(|a| a.product_type.as_str()) else {
        return 0.0;
    };
    let distinct: BTreeSet<&str> = cart
        .item_ids()
        .filter(|id| catalog.get(id).map_or(false, |i| i.product_type == anchor_pt))
        .collect();
    persona_affinity(&cart.persona, &item.category, map) * distinct.len() as f64
}

fn rank_by_weight(mut scored: Vec<(String, f64)>) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

pub fn heuristic_baseline_rank(
    cart: &CartState,
    candidates: &[ScoredCandidate],
    catalog: &Catalog,
    map: &PersonaMap,
) -> Vec<(String, f64)> {
    rank_by_weight(
        candidates
            .iter()
            .map(|c| {
                let w = heuristic_weight(cart, &c.item_id, &c.anchor_item_id, catalog, map);
                (c.item_id.clone(), w)
            })
            .collect(),
    )
}

fn heuristic_example(ex: &TrainingExample, catalog: &Catalog, map: &PersonaMap) -> Vec<String> {
    rank_by_weight(
        ex.candidates()
            .into_iter()
            .map(|id| {
                let anchor = ex.anchors.get(id).map_or("", String::as_str);
                (id.to_string(), heuristic_weight(&ex.cart, id, anchor, catalog, map))
            })
            .collect(),
    )
    .into_iter()
    .map(|(id, _)| id)
    .collect()
}

fn model_example(model: &RankerModel, feats: &FeatureTable, ex: &TrainingExample) -> Result<Vec<String>> {
    let cands = ex.candidates();
    let scores = model.score_batch(feats, &ex.cart, &cands)?;
    Ok(rank_by_weight(cands.iter().map(|c| c.to_string()).zip(scores).collect())
        .into_iter()
        .map(|(id, _)| id)
        .collect())
}

pub const CART_BUCKETS: [&str; 5] = ["<10", "10-20", "20-30", "30-40", "40-50"];

fn bucket_of(size: usize) -> usize {
    (size / 10).min(CART_BUCKETS.len() - 1)
}

fn lift(model: f64, base: f64) -> f64 {
    if base > 0.0 {
        (model - base) / base * 100.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BucketRow {
    pub label: String,
    pub n: usize,
    pub model: Vec<f64>,
    pub baseline: Vec<f64>,
    pub lift: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub n: usize,
    pub model: Vec<f64>,
    pub baseline: Vec<f64>,
    pub lift: Vec<f64>,
    pub buckets: Vec<BucketRow>,
    /// (cart size, model NDCG per k, baseline NDCG per k) for each example.
    pub per_example: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

impl EvalReport {
    /// Lift at `ks[ki]` over examples whose cart size satisfies `keep`.
    pub fn lift_where(&self, ki: usize, keep: impl Fn(usize) -> bool) -> f64 {
        let (mut m, mut b, mut n) = (0.0, 0.0, 0usize);
        for (size, mv, bv) in &self.per_example {
            if keep(*size) {
                m += mv[ki];
                b += bv[ki];
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            lift(m / n as f64, b / n as f64)
        }
    }

    pub fn overall_table(&self, title: &str) -> Table {
        let mut t = Table::new(title, &["k", "Model NDCG", "Baseline NDCG", "Lift %"]);
        for (i, k) in self.ks.iter().enumerate() {
            t.push(vec![
                format!("@{k}"),
                f4(self.model[i]),
                f4(self.baseline[i]),
                signed_pct(self.lift[i]),
            ]);
        }
        t
    }

    pub fn bucket_table(&self) -> Table {
        let mut headers = vec!["Cart Size".to_string(), "N".to_string()];
        headers.extend(self.ks.iter().map(|k| format!("@{k}")));
        let h: Vec<&str> = headers.iter().map(String::as_str).collect();
        let mut t = Table::new("NDCG lift % by cart size", &h);
        for b in &self.buckets {
            let mut row = vec![b.label.clone(), b.n.to_string()];
            row.extend(b.lift.iter().map(|l| signed_pct(*l)));
            t.push(row);
        }
        t
    }
}

/// Compares two rankers over the same examples.
pub fn evaluate_rankings(
    test: &[TrainingExample],
    ks: &[usize],
    mut model_rank: impl FnMut(&TrainingExample) -> Result<Vec<String>>,
    mut base_rank: impl FnMut(&TrainingExample) -> Result<Vec<String>>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(XpError::EmptyTestSet);
    }
    let mut per_example = Vec::with_capacity(test.len());
    for ex in test {
        let m = model_rank(ex)?;
        let b = base_rank(ex)?;
        let mv = ks.iter().map(|&k| ndcg_at_k(&m, &ex.positives, k)).collect();
        let bv = ks.iter().map(|&k| ndcg_at_k(&b, &ex.positives, k)).collect();
        per_example.push((ex.cart.entries.len(), mv, bv));
    }
    let mean = |sel: &dyn Fn(&(usize, Vec<f64>, Vec<f64>)) -> bool, which: usize, ki: usize| {
        let v: Vec<f64> = per_example
            .iter()
            .filter(|e| sel(e))
            .map(|e| if which == 0 { e.1[ki] } else { e.2[ki] })
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let all = |_: &(usize, Vec<f64>, Vec<f64>)| true;
    let model: Vec<f64> = (0..ks.len()).map(|i| mean(&all, 0, i)).collect();
    let baseline: Vec<f64> = (0..ks.len()).map(|i| mean(&all, 1, i)).collect();
    let lifts = model.iter().zip(&baseline).map(|(m, b)| lift(*m, *b)).collect();
    let buckets = CART_BUCKETS
        .iter()
        .enumerate()
        .map(|(bi, label)| {
            let sel = |e: &(usize, Vec<f64>, Vec<f64>)| bucket_of(e.0) == bi;
            let m: Vec<f64> = (0..ks.len()).map(|i| mean(&sel, 0, i)).collect();
            let b: Vec<f64> = (0..ks.len()).map(|i| mean(&sel, 1, i)).collect();
            BucketRow {
                label: label.to_string(),
                n: per_example.iter().filter(|e| sel(e)).count(),
                lift: m.iter().zip(&b).map(|(x, y)| lift(*x, *y)).collect(),
                model: m,
                baseline: b,
            }
        })
        .collect();
    Ok(EvalReport {
        ks: ks.to_vec(),
        n: test.len(),
        model,
        baseline,
        lift: lifts,
        buckets,
        per_example,
    })
}

/// Model vs heuristic baseline, overall and by cart size.
pub fn evaluate(
    model: &RankerModel,
    feats: &FeatureTable,
    catalog: &Catalog,
    map: &PersonaMap,
    test: &[TrainingExample],
    ks: &[usize],
) -> Result<EvalReport> {
    evaluate_rankings(
        test,
        ks,
        |ex| model_example(model, feats, ex),
        |ex| Ok(heuristic_example(ex, catalog, map)),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationSpec {
    pub name: String,
    pub encoder: EncoderKind,
    pub cross_attention: bool,
    pub loss: LossKind,
}

impl AblationSpec {
    pub fn grid() -> Vec<AblationSpec> {
        let s = |name: &str, encoder, cross_attention, loss| AblationSpec {
            name: name.to_string(),
            encoder,
            cross_attention,
            loss,
        };
        vec![
            s("Identity Cart Encoder", EncoderKind::Identity, false, LossKind::PairwiseHinge),
            s("Bidirectional LSTM Cart Encoder", EncoderKind::Bilstm, false, LossKind::PairwiseHinge),
            s("Transformer Cart Encoder", EncoderKind::Transformer, false, LossKind::PairwiseHinge),
            s("Transformer Cart Encoder + Cross Attention", EncoderKind::Transformer, true, LossKind::PairwiseHinge),
            s("Transformer Cart Encoder + Cross Attention", EncoderKind::Transformer, true, LossKind::ListwiseSoftmax),
        ]
    }

    pub fn apply(&self, base: &RankerConfig, seed: u64) -> RankerConfig {
        RankerConfig {
            encoder: self.encoder,
            cross_attention: self.cross_attention,
            loss: self.loss,
            seed,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationResult {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub specs: Vec<AblationSpec>,
    /// reports[spec][seed]
    pub reports: Vec<Vec<EvalReport>>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationResult {
    pub fn median_ndcg(&self, spec: usize, ki: usize) -> f64 {
        median(self.reports[spec].iter().map(|r| r.model[ki]).collect())
    }

    pub fn median_baseline(&self, ki: usize) -> f64 {
        median(self.reports[0].iter().map(|r| r.baseline[ki]).collect())
    }

    pub fn median_lift_where(&self, spec: usize, ki: usize, keep: impl Fn(usize) -> bool + Copy) -> f64 {
        median(self.reports[spec].iter().map(|r| r.lift_where(ki, keep)).collect())
    }
}

pub fn ablation(
    train_set: &[TrainingExample],
    test: &[TrainingExample],
    feats: &FeatureTable,
    catalog: &Catalog,
    map: &PersonaMap,
    base: &RankerConfig,
    specs: &[AblationSpec],
    seeds: &[u64],
    ks: &[usize],
) -> Result<AblationResult> {
    let mut reports = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let (model, _) = train(train_set, feats, &spec.apply(base, seed))?;
            per_seed.push(evaluate(&model, feats, catalog, map, test, ks)?);
        }
        reports.push(per_seed);
    }
    Ok(AblationResult {
        ks: ks.to_vec(),
        seeds: seeds.to_vec(),
        specs: specs.to_vec(),
        reports,
    })
}

/// Median NDCG and lift over seeds, one row per model plus the baseline.
pub fn ablation_table(r: &AblationResult) -> Table {
    let mut headers = vec!["Experiment".to_string(), "Loss".to_string()];
    headers.extend(r.ks.iter().map(|k| format!("NDCG@{k}")));
    headers.extend(r.ks.iter().map(|k| format!("Lift@{k} %")));
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut t = Table::new(format!("Median over {} seeds", r.seeds.len()), &h);
    let mut row = vec!["Production Heuristic".to_string(), "N/A".to_string()];
    row.extend((0..r.ks.len()).map(|ki| f4(r.median_baseline(ki))));
    row.extend(r.ks.iter().map(|_| "N/A".to_string()));
    t.push(row);
    for (si, spec) in r.specs.iter().enumerate() {
        let mut row = vec![spec.name.clone(), spec.loss.to_string()];
        row.extend((0..r.ks.len()).map(|ki| f4(r.median_ndcg(si, ki))));
        row.extend((0..r.ks.len()).map(|ki| signed_pct(lift(r.median_ndcg(si, ki), r.median_baseline(ki)))));
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ItemRecord, Segment};
    use crate::ranker::{CartEntry, Platform};
    use crate::retrieval::CandidateSource;

    fn rel(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&["a", "b", "c"], &rel(&["a", "b"]), 3), 1.0);
        let v = ndcg_at_k(&["neg", "pos"], &rel(&["pos"]), 2);
        assert!((v - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&["a"], &BTreeSet::new(), 2), 0.0);
    }

    fn fixture() -> (Catalog, PersonaMap) {
        let mk = |id: &str, pt: &str, cat: &str, seg| ItemRecord {
            item_id: id.into(),
            title: id.into(),
            product_type: pt.into(),
            category: cat.into(),
            segment: seg,
            price: 1.0,
        };
        let cat = Catalog::new(vec![
            mk("eggs1", "Eggs", "Dairy", Segment::Og),
            mk("eggs2", "Eggs", "Dairy", Segment::Og),
            mk("kibble", "Dog Food", "Pet", Segment::Og),
            mk("pan", "Skillet", "Kitchen", Segment::Gm),
            mk("bowl", "Dog Bowl", "Pets", Segment::Gm),
            mk("whisk", "Whisk", "Kitchen", Segment::Gm),
        ])
        .unwrap();
        let mut map = PersonaMap::new();
        map.insert("Kitchen".into(), vec![0, 1]);
        map.insert("Pets".into(), vec![2]);
        (cat, map)
    }

    fn cart(persona: Vec<f64>) -> CartState {
        let mut c = CartState::new("c", persona, Platform::Web);
        for (i, id) in ["eggs1", "eggs2", "eggs1", "kibble"].iter().enumerate() {
            c.entries.push(CartEntry {
                item_id: id.to_string(),
                ts: i as u64,
            });
        }
        c
    }

    fn cand(item: &str, anchor: &str) -> ScoredCandidate {
        ScoredCandidate::mba(anchor.into(), item.into(), 1.0)
    }

    #[test]
    fn heuristic_hand_computed() {
        let (cat, map) = fixture();
        let mut persona = vec![0.0; 64];
        persona[0] = 0.2;
        persona[1] = 0.4;
        persona[2] = 0.9;
        let c = cart(persona);
        // pan: 0.3 * 2 eggs = 0.6; bowl: 0.9 * 1 = 0.9; whisk via kibble: 0.3 * 1 = 0.3
        let ranked = heuristic_baseline_rank(&c, &[cand("pan", "eggs1"), cand("bowl", "kibble"), cand("whisk", "kibble")], &cat, &map);
        let ids: Vec<&str> = ranked.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(ids, ["bowl", "pan", "whisk"]);
        assert!((ranked[0].1 - 0.9).abs() < 1e-12);
        assert!((ranked[1].1 - 0.6).abs() < 1e-12);
        assert!((ranked[2].1 - 0.3).abs() < 1e-12);
        assert_eq!(ranked[0].0, "bowl");
        let one = heuristic_baseline_rank(&c, &[cand("pan", "eggs1")], &cat, &map);
        assert_eq!(one.len(), 1);
        let _ = CandidateSource::Mba;
    }

    #[test]
    fn heuristic_equal_personas_uses_counts() {
        let (cat, map) = fixture();
        let c = cart(vec![0.5; 64]);
        let ranked = heuristic_baseline_rank(&c, &[cand("bowl", "kibble"), cand("pan", "eggs2")], &cat, &map);
        assert_eq!(ranked[0].0, "pan");
    }

    fn example(size: usize, pos: &str, neg: &str) -> TrainingExample {
        let mut c = CartState::new("c", vec![0.5; 64], Platform::Web);
        for i in 0..size {
            c.entries.push(CartEntry {
                item_id: format!("i{i}"),
                ts: i as u64,
            });
        }
        TrainingExample {
            cart: c,
            positives: rel(&[pos]),
            negatives: rel(&[neg]),
            anchors: Default::default(),
        }
    }

    #[test]
    fn evaluate_identity_and_perfect() {
        let test = vec![example(3, "a", "b"), example(15, "b", "a"), example(45, "a", "c")];
        let same = evaluate_rankings(
            &test,
            &[2, 4],
            |e| Ok(e.candidates().iter().rev().map(|s| s.to_string()).collect()),
            |e| Ok(e.candidates().iter().rev().map(|s| s.to_string()).collect()),
        )
        .unwrap();
        assert!(same.lift.iter().all(|&l| l == 0.0));
        let perfect = evaluate_rankings(
            &test,
            &[2],
            |e| Ok(e.candidates().iter().map(|s| s.to_string()).collect()),
            |e| Ok(e.candidates().iter().rev().map(|s| s.to_string()).collect()),
        )
        .unwrap();
        assert_eq!(perfect.model, vec![1.0]);
        assert_eq!(perfect.buckets[0].n, 1);
        assert_eq!(perfect.buckets[1].n, 1);
        assert_eq!(perfect.buckets[4].n, 1);
        assert!(matches!(
            evaluate_rankings(&[], &[2], |_| Ok(vec![]), |_| Ok(vec![])),
            Err(XpError::EmptyTestSet)
        ));
    }
}
