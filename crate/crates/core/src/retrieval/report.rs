//! Quality reports over scored candidate sets: band distribution per
//! category, item-type leaderboards with poor-rate columns, CE/LLM
//! disagreement, worst recommendations, and naive-vs-theme comparison.

use std::collections::BTreeMap;

use crate::catalog::Catalog;
use crate::llm::LlmRecommendation;
use crate::table::{f4, pct, signed_pct, Table};

use super::{QualityBand, ScoredCandidate};

const POOR: f64 = 0.4;

struct Row<'a> {
    category: &'a str,
    item_type: &'a str,
    cand: &'a ScoredCandidate,
    ce: f64,
    llm: f64,
    combined: f64,
}

fn scored_rows<'a>(cands: &'a [ScoredCandidate], catalog: &'a Catalog) -> Vec<Row<'a>> {
    cands
        .iter()
        .filter_map(|c| {
            let (ce, llm, combined) = (c.ce_score?, c.llm_score?, c.combined?);
            let category = catalog.get(&c.anchor_item_id).map_or("unknown", |a| a.category.as_str());
            let item_type = catalog.get(&c.item_id).map_or("unknown", |i| i.product_type.as_str());
            Some(Row {
                category,
                item_type,
                cand: c,
                ce,
                llm,
                combined,
            })
        })
        .collect()
}

/// Percent of candidates per quality band, by anchor category.
pub fn band_distribution(cands: &[ScoredCandidate], catalog: &Catalog) -> Table {
    let mut t = Table::new(
        "Combined score distribution by quality band (%)",
        &["Category", "N", "Excellent", "Very Good", "Good", "Fair", "Poor"],
    );
    let mut by_cat: BTreeMap<&str, Vec<QualityBand>> = BTreeMap::new();
    for r in scored_rows(cands, catalog) {
        if let Some(b) = r.cand.band {
            by_cat.entry(r.category).or_default().push(b);
        }
    }
    for (cat, bands) in by_cat {
        let n = bands.len() as f64;
        let share = |b: QualityBand| pct(bands.iter().filter(|&&x| x == b).count() as f64 / n);
        t.push(vec![
            cat.to_string(),
            bands.len().to_string(),
            share(QualityBand::Excellent),
            share(QualityBand::VeryGood),
            share(QualityBand::Good),
            share(QualityBand::Fair),
            share(QualityBand::Poor),
        ]);
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ce,
    Llm,
    Combined,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Metric::Ce => "CE",
            Metric::Llm => "LLM",
            Metric::Combined => "Combined",
        }
    }
}

#[derive(Debug, Clone, Default)]
struct TypeStats {
    n: usize,
    ce: f64,
    llm: f64,
    combined: f64,
    poor_ce: usize,
    poor_llm: usize,
    poor_combined: usize,
}

impl TypeStats {
    fn add(&mut self, r: &Row<'_>) {
        self.n += 1;
        self.ce += r.ce;
        self.llm += r.llm;
        self.combined += r.combined;
        self.poor_ce += (r.ce < POOR) as usize;
        self.poor_llm += (r.llm < POOR) as usize;
        self.poor_combined += (r.combined < POOR) as usize;
    }

    fn mean(&self, m: Metric) -> f64 {
        let s = match m {
            Metric::Ce => self.ce,
            Metric::Llm => self.llm,
            Metric::Combined => self.combined,
        };
        s / self.n as f64
    }

    fn poor_rate(&self, m: Metric) -> f64 {
        let c = match m {
            Metric::Ce => self.poor_ce,
            Metric::Llm => self.poor_llm,
            Metric::Combined => self.poor_combined,
        };
        c as f64 / self.n as f64
    }
}

fn type_stats<'a>(rows: &[Row<'a>]) -> BTreeMap<&'a str, BTreeMap<&'a str, TypeStats>> {
    let mut out: BTreeMap<&str, BTreeMap<&str, TypeStats>> = BTreeMap::new();
    for r in rows {
        out.entry(r.category).or_default().entry(r.item_type).or_default().add(r);
    }
    out
}

/// Top and bottom `n` item types per category by the mean of `metric`.
pub fn leaderboard(cands: &[ScoredCandidate], catalog: &Catalog, metric: Metric, n: usize) -> Table {
    let mut t = Table::new(
        format!("Top {n} and bottom {n} item types by {} mean", metric.name()),
        &[
            "Category",
            "Rank",
            "Item Type",
            "CE Mean",
            "LLM Mean",
            "Combined Mean",
            "Pct Poor CE",
            "Pct Poor LLM",
            "Pct Poor Combined",
        ],
    );
    let rows = scored_rows(cands, catalog);
    for (cat, types) in type_stats(&rows) {
        let mut ranked: Vec<(&str, &TypeStats)> = types.iter().map(|(k, v)| (*k, v)).collect();
        ranked.sort_by(|a, b| b.1.mean(metric).total_cmp(&a.1.mean(metric)).then_with(|| a.0.cmp(b.0)));
        let top = ranked.iter().take(n).map(|r| ("top", r));
        let bottom_start = ranked.len().saturating_sub(n).max(n.min(ranked.len()));
        let bottom = ranked[bottom_start..].iter().rev().map(|r| ("bottom", r));
        for (rank, (ty, s)) in top.chain(bottom) {
            t.push(vec![
                cat.to_string(),
                rank.to_string(),
                ty.to_string(),
                f4(s.mean(Metric::Ce)),
                f4(s.mean(Metric::Llm)),
                f4(s.mean(Metric::Combined)),
                pct(s.poor_rate(Metric::Ce)),
                pct(s.poor_rate(Metric::Llm)),
                pct(s.poor_rate(Metric::Combined)),
            ]);
        }
    }
    t
}

/// Item types with the largest gap between mean CE and mean LLM score.
pub fn score_disagreement(cands: &[ScoredCandidate], catalog: &Catalog, n: usize) -> Table {
    let mut t = Table::new(
        "Largest CE vs LLM disagreement by item type",
        &["Category", "Item Type", "CE Mean", "LLM Mean", "Gap"],
    );
    let rows = scored_rows(cands, catalog);
    let mut all: Vec<(&str, &str, f64, f64)> = Vec::new();
    for (cat, types) in type_stats(&rows) {
        for (ty, s) in types {
            all.push((cat, ty, s.mean(Metric::Ce), s.mean(Metric::Llm)));
        }
    }
    all.sort_by(|a, b| {
        (b.2 - b.3)
            .abs()
            .total_cmp(&(a.2 - a.3).abs())
            .then_with(|| a.0.cmp(b.0))
            .then_with(|| a.1.cmp(b.1))
    });
    for (cat, ty, ce, llm) in all.into_iter().take(n) {
        t.push(vec![cat.to_string(), ty.to_string(), f4(ce), f4(llm), f4((ce - llm).abs())]);
    }
    t
}

/// Lowest combined-score recommendations per category.
pub fn worst_recommendations(cands: &[ScoredCandidate], catalog: &Catalog, n: usize) -> Table {
    let mut t = Table::new(
        format!("Worst {n} recommendations per category"),
        &["Category", "LLM Rec", "Item Type", "CE", "LLM", "Combined"],
    );
    let rows = scored_rows(cands, catalog);
    let mut by_cat: BTreeMap<&str, Vec<&Row<'_>>> = BTreeMap::new();
    for r in &rows {
        by_cat.entry(r.category).or_default().push(r);
    }
    for (cat, mut rs) in by_cat {
        rs.sort_by(|a, b| {
            a.combined
                .total_cmp(&b.combined)
                .then_with(|| a.cand.item_id.cmp(&b.cand.item_id))
        });
        for r in rs.into_iter().take(n) {
            t.push(vec![
                cat.to_string(),
                r.cand.llm_rec.clone(),
                r.item_type.to_string(),
                f4(r.ce),
                f4(r.llm),
                f4(r.combined),
            ]);
        }
    }
    t
}

/// Mean generation score per anchor category for two generators.
pub fn quality_comparison(naive: &[LlmRecommendation], theme: &[LlmRecommendation], catalog: &Catalog) -> Table {
    let mut t = Table::new(
        "Average generation score: naive vs theme-based",
        &["Category", "Naive", "Theme+Rec", "Lift"],
    );
    let mean_by_cat = |recs: &[LlmRecommendation]| {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in recs {
            if let Some(s) = r.gen_score {
                let cat = catalog
                    .get(&r.anchor_item_id)
                    .map_or_else(|| "unknown".to_string(), |a| a.category.clone());
                let e = acc.entry(cat).or_default();
                e.0 += s;
                e.1 += 1;
            }
        }
        acc.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect::<BTreeMap<_, _>>()
    };
    let a = mean_by_cat(naive);
    let b = mean_by_cat(theme);
    let cats: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    for cat in cats {
        let x = a.get(cat).copied();
        let y = b.get(cat).copied();
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let lift = match (x, y) {
            (Some(x), Some(y)) => signed_pct(y - x).replace('%', ""),
            _ => "-".to_string(),
        };
        t.push(vec![cat.clone(), fmt(x), fmt(y), lift]);
    }
    t
}
