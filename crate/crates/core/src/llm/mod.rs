//! Agentic LLM candidate generation: themes, theme-conditioned recommendations,
//! generation scoring and filtering, the naive baseline generator, and the
//! product-type level judge.

pub mod client;
pub mod parse;
pub mod prompts;

use std::sync::Arc;

use dashmap::DashMap;
use log::warn;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::{ItemRecord, Segment};
use crate::error::{Result, XpError};

pub use client::{
    prompt_hash, write_fixture, ChatClient, CountingChatClient, FixtureChatClient, HttpChatClient,
    RecordingChatClient,
};

pub const THEMES_PER_ANCHOR: usize = 5;
pub const RECS_PER_THEME: usize = 10;
pub const MIN_RECS_PER_THEME: usize = 5;
pub const DEFAULT_GEN_THRESHOLD: f64 = 0.4;

/// Judge rubric weights: cross-category discovery, relevance & coherence,
/// practical utility, matching accuracy.
pub const JUDGE_WEIGHTS: [(&str, f64); 4] = [
    ("cross_category_discovery", 0.25),
    ("relevance_coherence", 0.35),
    ("practical_utility", 0.25),
    ("matching_accuracy", 0.15),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlmOptions {
    pub temperature: f64,
    pub seed: u64,
    /// Extra attempts after a reply fails to parse.
    pub retries: u32,
}

impl Default for LlmOptions {
    fn default() -> Self {
        LlmOptions {
            temperature: 0.0,
            seed: 0,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub anchor_item_id: String,
    pub label: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRecommendation {
    pub anchor_item_id: String,
    #[serde(default)]
    pub theme_label: String,
    pub rec_text: String,
    #[serde(default)]
    pub explanation: String,
    #[serde(default)]
    pub gen_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub anchor_pt: String,
    pub llm_rec: String,
    pub rec_pt: String,
    pub score: f64,
    pub reasoning: String,
}

fn is_parse_error(e: &XpError) -> bool {
    matches!(e, XpError::LlmMalformedOutput(_) | XpError::LengthMismatch { .. })
}

/// Call the client and parse, retrying parse failures `opts.retries` times
/// with the same prompt. Transport errors are returned immediately.
fn complete_parsed<T>(
    client: &dyn ChatClient,
    prompt: &str,
    opts: &LlmOptions,
    parse: impl Fn(&str) -> Result<T>,
) -> Result<T> {
    let mut last = None;
    for attempt in 0..=opts.retries {
        let reply = client.complete(prompt, opts.temperature, opts.seed.wrapping_add(u64::from(attempt)))?;
        match parse(&reply) {
            Ok(v) => return Ok(v),
            Err(e) if is_parse_error(&e) => {
                warn!("unparseable reply (attempt {}): {e}", attempt + 1);
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| XpError::LlmMalformedOutput("no attempts made".into())))
}

fn anchor_of(item: &ItemRecord) -> String {
    prompts::anchor_text(&item.title, &item.product_type)
}

fn parse_themes(anchor_id: &str, reply: &str) -> Result<Vec<Theme>> {
    let entries = parse::extract_string_list(reply)?;
    if entries.len() != THEMES_PER_ANCHOR {
        return Err(XpError::LlmMalformedOutput(format!(
            "expected {THEMES_PER_ANCHOR} contexts, got {}",
            entries.len()
        )));
    }
    entries
        .iter()
        .map(|e| {
            let (label, explanation) = e.split_once(" - ").unwrap_or((e.as_str(), ""));
            let label = parse::clean_label(label);
            if label.is_empty() {
                return Err(XpError::LlmMalformedOutput(format!("empty context in `{e}`")));
            }
            Ok(Theme {
                anchor_item_id: anchor_id.to_string(),
                label,
                explanation: explanation.trim().to_string(),
            })
        })
        .collect()
}

pub fn generate_themes(anchor: &ItemRecord, client: &dyn ChatClient, opts: &LlmOptions) -> Result<Vec<Theme>> {
    if anchor.segment != Segment::Og {
        return Err(XpError::NotAnchor(anchor.item_id.clone()));
    }
    let prompt = prompts::theme_prompt(&anchor_of(anchor));
    complete_parsed(client, &prompt, opts, |r| parse_themes(&anchor.item_id, r))
}

/// Numbered `Label - explanation` lines substituted for the contexts slot.
pub fn format_contexts(themes: &[Theme]) -> String {
    themes
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.explanation.is_empty() {
                format!("{}. {}", i + 1, t.label)
            } else {
                format!("{}. {} - {}", i + 1, t.label, t.explanation)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn paired(recs: Vec<String>, explanations: Vec<String>) -> Result<Vec<(String, String)>> {
    if recs.len() != explanations.len() {
        return Err(XpError::LengthMismatch {
            recs: recs.len(),
            explanations: explanations.len(),
        });
    }
    Ok(recs
        .into_iter()
        .zip(explanations)
        .map(|(r, e)| (r.trim().to_string(), e.trim().to_string()))
        .filter(|(r, _)| !r.is_empty())
        .collect())
}

fn parse_theme_recs(anchor_id: &str, themes: &[Theme], reply: &str) -> Result<Vec<LlmRecommendation>> {
    let value = parse::extract_json(reply)?;
    let groups = value
        .as_array()
        .ok_or_else(|| XpError::LlmMalformedOutput("expected a list of context objects".into()))?;
    if groups.len() != themes.len() {
        return Err(XpError::LlmMalformedOutput(format!(
            "expected {} context objects, got {}",
            themes.len(),
            groups.len()
        )));
    }
    let mut out = Vec::new();
    for (theme, group) in themes.iter().zip(groups) {
        let recs = parse::get_string_list(group, "recs")?;
        let explanations = parse::get_string_list(group, "explanations")?;
        let mut pairs = paired(recs, explanations)?;
        if pairs.len() < MIN_RECS_PER_THEME {
            return Err(XpError::LlmMalformedOutput(format!(
                "context `{}` has {} recs, need at least {MIN_RECS_PER_THEME}",
                theme.label,
                pairs.len()
            )));
        }
        if pairs.len() < RECS_PER_THEME {
            warn!("context `{}` returned {} recs, expected {RECS_PER_THEME}", theme.label, pairs.len());
        }
        if pairs.len() > RECS_PER_THEME {
            warn!("context `{}` returned {} recs, keeping {RECS_PER_THEME}", theme.label, pairs.len());
            pairs.truncate(RECS_PER_THEME);
        }
        out.extend(pairs.into_iter().map(|(rec_text, explanation)| LlmRecommendation {
            anchor_item_id: anchor_id.to_string(),
            theme_label: theme.label.clone(),
            rec_text,
            explanation,
            gen_score: None,
        }));
    }
    Ok(out)
}

pub fn generate_theme_recs(
    anchor: &ItemRecord,
    themes: &[Theme],
    client: &dyn ChatClient,
    opts: &LlmOptions,
) -> Result<Vec<LlmRecommendation>> {
    if themes.len() != THEMES_PER_ANCHOR {
        return Err(XpError::LlmMalformedOutput(format!(
            "expected {THEMES_PER_ANCHOR} themes, got {}",
            themes.len()
        )));
    }
    let prompt = prompts::theme_recs_prompt(&anchor_of(anchor), &format_contexts(themes));
    complete_parsed(client, &prompt, opts, |r| parse_theme_recs(&anchor.item_id, themes, r))
}

fn parse_naive(anchor_id: &str, n: usize, reply: &str) -> Result<Vec<LlmRecommendation>> {
    let value = parse::extract_json(reply)?;
    let recs = parse::get_string_list(&value, "recs")?;
    let pairs = match value.get("explanation").or_else(|| value.get("explanations")) {
        Some(_) => {
            let key = if value.get("explanation").is_some() { "explanation" } else { "explanations" };
            paired(recs, parse::get_string_list(&value, key)?)?
        }
        // "Name: explanation" entries with no separate explanation list
        None => recs
            .into_iter()
            .map(|r| match r.split_once(": ") {
                Some((name, expl)) => (name.trim().to_string(), expl.trim().to_string()),
                None => (r.trim().to_string(), String::new()),
            })
            .filter(|(r, _)| !r.is_empty())
            .collect(),
    };
    if pairs.is_empty() {
        return Err(XpError::LlmMalformedOutput("no recommendations in reply".into()));
    }
    Ok(pairs
        .into_iter()
        .take(n)
        .map(|(rec_text, explanation)| LlmRecommendation {
            anchor_item_id: anchor_id.to_string(),
            theme_label: String::new(),
            rec_text,
            explanation,
            gen_score: None,
        })
        .collect())
}

/// Single-prompt baseline generator.
pub fn naive_generate(
    anchor: &ItemRecord,
    client: &dyn ChatClient,
    n: usize,
    opts: &LlmOptions,
) -> Result<Vec<LlmRecommendation>> {
    let prompt = prompts::naive_prompt(&anchor_of(anchor), n);
    complete_parsed(client, &prompt, opts, |r| parse_naive(&anchor.item_id, n, r))
}

fn clamp_score(raw: f64, what: &str) -> Result<f64> {
    if !raw.is_finite() {
        return Err(XpError::LlmMalformedOutput(format!("{what} score is not finite")));
    }
    if !(0.0..=1.0).contains(&raw) {
        warn!("{what} score {raw} outside [0, 1], clamping");
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// Score one (anchor, recommendation, explanation) triplet and store it in
/// `rec.gen_score`.
pub fn evaluate_generation(
    rec: &mut LlmRecommendation,
    anchor: &ItemRecord,
    client: &dyn ChatClient,
    opts: &LlmOptions,
) -> Result<f64> {
    let prompt = prompts::gen_evaluator_prompt(&anchor_of(anchor), &rec.rec_text, &rec.explanation);
    let score = complete_parsed(client, &prompt, opts, |r| {
        let v = parse::extract_json(r)?;
        clamp_score(parse::get_score(&v)?, "generation")
    })?;
    rec.gen_score = Some(score);
    Ok(score)
}

/// Keep recommendations with `gen_score >= threshold`; unscored ones are dropped.
pub fn filter_generated(recs: Vec<LlmRecommendation>, threshold: f64) -> Vec<LlmRecommendation> {
    recs.into_iter()
        .filter(|r| r.gen_score.map_or(false, |s| s >= threshold))
        .collect()
}

fn normalize_key(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

type JudgeKey = (String, String, String);

/// Product-type level judge results keyed on normalized triplet text.
/// Concurrent lookups of one key make a single client call; the first
/// stored result wins.
#[derive(Default)]
pub struct JudgeCache {
    slots: DashMap<JudgeKey, Arc<Mutex<Option<JudgeScore>>>>,
}

impl JudgeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|e| e.value().lock().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slot(&self, key: JudgeKey) -> Arc<Mutex<Option<JudgeScore>>> {
        self.slots.entry(key).or_default().clone()
    }
}

fn parse_judge(reply: &str) -> Result<(f64, String)> {
    let v = parse::extract_json(reply)?;
    let reasoning = v.get("reasoning").and_then(Value::as_str).unwrap_or_default().to_string();
    let raw = match parse::get_score(&v) {
        Ok(s) => s,
        Err(e) => weighted_dimensions(&v).ok_or(e)?,
    };
    Ok((clamp_score(raw, "judge")?, reasoning))
}

/// Weighted rubric score when a reply lists the four dimensions instead of
/// an overall `score`.
pub fn weighted_dimensions(v: &Value) -> Option<f64> {
    let dims = v.get("dimensions").unwrap_or(v);
    JUDGE_WEIGHTS
        .iter()
        .map(|(k, w)| dims.get(*k).and_then(Value::as_f64).map(|s| s * w))
        .sum()
}

pub fn judge_retrieved(
    anchor_pt: &str,
    llm_rec: &str,
    rec_pt: &str,
    client: &dyn ChatClient,
    cache: &JudgeCache,
    opts: &LlmOptions,
) -> Result<JudgeScore> {
    for (name, v) in [("anchor_pt", anchor_pt), ("llm_rec", llm_rec), ("rec_pt", rec_pt)] {
        if v.trim().is_empty() {
            return Err(XpError::LlmMalformedOutput(format!("judge input `{name}` is empty")));
        }
    }
    let key = (normalize_key(anchor_pt), normalize_key(llm_rec), normalize_key(rec_pt));
    let slot = cache.slot(key);
    let mut guard = slot.lock();
    if let Some(hit) = guard.as_ref() {
        return Ok(hit.clone());
    }
    let prompt = prompts::judge_prompt(anchor_pt, llm_rec, rec_pt);
    let (score, reasoning) = complete_parsed(client, &prompt, opts, parse_judge)?;
    let result = JudgeScore {
        anchor_pt: anchor_pt.to_string(),
        llm_rec: llm_rec.to_string(),
        rec_pt: rec_pt.to_string(),
        score,
        reasoning,
    };
    *guard = Some(result.clone());
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Canned(Vec<&'static str>, std::sync::atomic::AtomicUsize);

    impl Canned {
        fn new(replies: Vec<&'static str>) -> Self {
            Canned(replies, Default::default())
        }
    }

    impl ChatClient for Canned {
        fn complete(&self, _p: &str, _t: f64, _s: u64) -> Result<String> {
            let i = self.1.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(self.0[i.min(self.0.len() - 1)].to_string())
        }
    }

    fn eggs() -> ItemRecord {
        ItemRecord {
            item_id: "eggs".into(),
            title: "Eggs (fresh)".into(),
            product_type: "Eggs".into(),
            category: "Food".into(),
            segment: Segment::Og,
            price: 3.0,
        }
    }

    #[test]
    fn four_themes_is_malformed_after_retries() {
        let c = CountingChatClient::new(Canned::new(vec!["['a - x', 'b - x', 'c - x', 'd - x']"]));
        let err = generate_themes(&eggs(), &c, &LlmOptions::default()).unwrap_err();
        assert!(matches!(err, XpError::LlmMalformedOutput(_)));
        assert_eq!(c.calls(), 3);
    }

    #[test]
    fn retry_recovers() {
        let c = Canned::new(vec!["garbage", "['A - 1', 'B - 2', 'C - 3', 'D - 4', 'E - 5']"]);
        let t = generate_themes(&eggs(), &c, &LlmOptions::default()).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t[4].label, "E");
    }

    #[test]
    fn gm_anchor_rejected() {
        let mut item = eggs();
        item.segment = Segment::Gm;
        let c = Canned::new(vec!["[]"]);
        assert!(matches!(
            generate_themes(&item, &c, &LlmOptions::default()),
            Err(XpError::NotAnchor(_))
        ));
    }

    #[test]
    fn evaluation_clamps_and_requires_score() {
        let mut rec = LlmRecommendation {
            anchor_item_id: "eggs".into(),
            theme_label: String::new(),
            rec_text: "Egg Rings".into(),
            explanation: "patties".into(),
            gen_score: None,
        };
        let c = Canned::new(vec!["{\"score\": 1.7, \"reasoning\": \"x\"}"]);
        assert_eq!(evaluate_generation(&mut rec, &eggs(), &c, &LlmOptions::default()).unwrap(), 1.0);
        assert_eq!(rec.gen_score, Some(1.0));
        let c = Canned::new(vec!["{\"reasoning\": \"x\"}"]);
        assert!(matches!(
            evaluate_generation(&mut rec, &eggs(), &c, &LlmOptions::default()),
            Err(XpError::LlmMalformedOutput(_))
        ));
    }

    #[test]
    fn filter_boundary_kept() {
        let mk = |s: Option<f64>| LlmRecommendation {
            anchor_item_id: "a".into(),
            theme_label: String::new(),
            rec_text: "r".into(),
            explanation: String::new(),
            gen_score: s,
        };
        let recs = vec![mk(Some(0.39)), mk(Some(0.40)), mk(Some(0.90)), mk(None)];
        let kept: Vec<_> = filter_generated(recs.clone(), 0.4).iter().map(|r| r.gen_score.unwrap()).collect();
        assert_eq!(kept, vec![0.40, 0.90]);
        assert!(filter_generated(recs.clone(), 0.95).is_empty());
        assert_eq!(filter_generated(recs, 0.0).len(), 3);
    }

    #[test]
    fn naive_splits_colon_entries() {
        let c = Canned::new(vec!["\"recs\": [\"Egg Poachers: cook eggs\", \"Egg Cups: serve\"]"]);
        // a bare key/value fragment is not a JSON value; must fail
        assert!(naive_generate(&eggs(), &c, 13, &LlmOptions::default()).is_err());
        let c = Canned::new(vec!["{\"recs\": [\"Egg Poachers: cook eggs\", \"Egg Cups: serve\"]}"]);
        let recs = naive_generate(&eggs(), &c, 13, &LlmOptions::default()).unwrap();
        assert_eq!(recs[0].rec_text, "Egg Poachers");
        assert_eq!(recs[1].explanation, "serve");
    }

    #[test]
    fn theme_recs_length_mismatch() {
        let themes: Vec<Theme> = (0..5)
            .map(|i| Theme {
                anchor_item_id: "eggs".into(),
                label: format!("T{i}"),
                explanation: String::new(),
            })
            .collect();
        let group = r#"{"context":"T","recs":["a","b","c","d","e","f","g","h","i","j"],"explanations":["1","2","3","4","5","6","7","8","9"]}"#;
        let reply: &'static str = Box::leak(format!("[{g},{g},{g},{g},{g}]", g = group).into_boxed_str());
        let c = Canned::new(vec![reply]);
        assert!(matches!(
            generate_theme_recs(&eggs(), &themes, &c, &LlmOptions::default()),
            Err(XpError::LengthMismatch { recs: 10, explanations: 9 })
        ));
    }

    #[test]
    fn judge_cache_dedupes_normalized_triplets() {
        let c = CountingChatClient::new(Canned::new(vec!["{\"score\": 0.72, \"reasoning\": \"fine\"}"]));
        let cache = JudgeCache::new();
        let o = LlmOptions::default();
        let a = judge_retrieved("Eggs", "Egg  Poachers", "Egg Cookers", &c, &cache, &o).unwrap();
        let b = judge_retrieved("eggs", "egg poachers", "EGG COOKERS", &c, &cache, &o).unwrap();
        assert_eq!(c.calls(), 1);
        assert_eq!(a.score, 0.72);
        assert_eq!(a.score, b.score);
        judge_retrieved("Eggs", "Egg Poachers", "Egg Timers", &c, &cache, &o).unwrap();
        assert_eq!(c.calls(), 2);
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn judge_weighted_dimensions_fallback() {
        let v: Value = serde_json::from_str(
            r#"{"dimensions":{"cross_category_discovery":1.0,"relevance_coherence":0.0,"practical_utility":1.0,"matching_accuracy":0.0}}"#,
        )
        .unwrap();
        assert!((weighted_dimensions(&v).unwrap() - 0.5).abs() < 1e-12);
    }
}
