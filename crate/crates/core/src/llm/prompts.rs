//! Prompt templates for the generation, evaluation and judging agents.
//!
//! Templates use format-string conventions: `{name}` is substituted, `{{` and
//! `}}` render as literal braces. `{{name}}` where `name` is a bound variable
//! is also substituted (the naive template uses that form).

use std::collections::HashMap;

pub const NAIVE: &str = include_str!("templates/naive.txt");
pub const THEME: &str = include_str!("templates/theme.txt");
pub const THEME_RECS: &str = include_str!("templates/theme_recs.txt");
pub const GEN_EVALUATOR: &str = include_str!("templates/gen_evaluator.txt");
pub const JUDGE: &str = include_str!("templates/judge.txt");

/// Which agent a prompt belongs to, recovered from its fixed wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Naive,
    Theme,
    ThemeRecs,
    GenEvaluator,
    Judge,
}

impl PromptKind {
    pub fn detect(prompt: &str) -> Option<PromptKind> {
        if prompt.contains("identify the top 5 most popular usage contexts") {
            Some(PromptKind::Theme)
        } else if prompt.contains("For each context, generate 10 complementary") {
            Some(PromptKind::ThemeRecs)
        } else if prompt.contains("recommendation verification agent") {
            Some(PromptKind::GenEvaluator)
        } else if prompt.contains("recommendation evaluation agent") {
            Some(PromptKind::Judge)
        } else if prompt.contains("You are an e-commerce recommendation agent.") {
            Some(PromptKind::Naive)
        } else {
            None
        }
    }
}

pub fn render(template: &str, vars: &HashMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        if let Some(tail) = rest.strip_prefix("{{") {
            if let Some((name, after)) = split_ident(tail, "}}") {
                if let Some(v) = vars.get(name) {
                    out.push_str(v);
                    rest = after;
                    continue;
                }
            }
            out.push('{');
            rest = tail;
        } else if let Some(tail) = rest.strip_prefix("}}") {
            out.push('}');
            rest = tail;
        } else if let Some(tail) = rest.strip_prefix('{') {
            match split_ident(tail, "}") {
                Some((name, after)) if vars.contains_key(name) => {
                    out.push_str(&vars[name]);
                    rest = after;
                }
                _ => {
                    out.push('{');
                    rest = tail;
                }
            }
        } else {
            out.push('}');
            rest = &rest[1..];
        }
    }
    out.push_str(rest);
    out
}

fn split_ident<'a>(s: &'a str, close: &str) -> Option<(&'a str, &'a str)> {
    let end = s.find(close)?;
    let name = &s[..end];
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    ok.then(|| (name, &s[end + close.len()..]))
}

/// Anchor description used in every prompt, e.g. `Eggs (fresh), ProductType: Eggs`.
pub fn anchor_text(title: &str, product_type: &str) -> String {
    format!("{title}, ProductType: {product_type}")
}

pub fn naive_prompt(anchor: &str, n: usize) -> String {
    render(
        NAIVE,
        &HashMap::from([("item_input", anchor.to_string()), ("n", n.to_string())]),
    )
}

pub fn theme_prompt(anchor: &str) -> String {
    render(THEME, &HashMap::from([("anchor_item", anchor.to_string())]))
}

pub fn theme_recs_prompt(anchor: &str, contexts: &str) -> String {
    render(
        THEME_RECS,
        &HashMap::from([
            ("anchor_item", anchor.to_string()),
            ("anchor_contexts", contexts.to_string()),
        ]),
    )
}

pub fn gen_evaluator_prompt(anchor: &str, recommendation: &str, explanation: &str) -> String {
    render(
        GEN_EVALUATOR,
        &HashMap::from([
            ("anchor_item", anchor.to_string()),
            ("recommendation", recommendation.to_string()),
            ("explanation", explanation.to_string()),
        ]),
    )
}

pub fn judge_prompt(anchor_pt: &str, llm_rec: &str, rec_pt: &str) -> String {
    render(
        JUDGE,
        &HashMap::from([
            ("anchor_pt", anchor_pt.to_string()),
            ("llm_rec", llm_rec.to_string()),
            ("rec_pt", rec_pt.to_string()),
        ]),
    )
}

/// Extract the value bound to `label: ` on the first line that has it.
pub(crate) fn field_after<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.trim_start().strip_prefix(label))
        .map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_rules() {
        let vars = HashMap::from([("a", "X".to_string())]);
        assert_eq!(render("{a} {{a}} {{ }} {b}", &vars), "X X { } {b}");
        assert_eq!(render("{{\n  \"k\": 1\n}}", &vars), "{\n  \"k\": 1\n}");
    }

    #[test]
    fn templates_render_without_placeholders() {
        let a = anchor_text("Eggs (fresh)", "Eggs");
        let p = naive_prompt(&a, 13);
        assert!(p.contains("anchor_item: Eggs (fresh), ProductType: Eggs."));
        assert!(p.contains("top 13 recommendations"));
        let p = judge_prompt("Eggs", "Egg Poachers", "Egg Cookers");
        assert!(p.contains("- Anchor Category: Eggs"));
        assert!(p.contains("RELEVANCE & COHERENCE (35%)"));
        assert!(p.contains("{\n    \"score\""));
        let p = gen_evaluator_prompt(&a, "Egg Rings", "uniform patties");
        assert!(p.contains("RECOMMENDATION: Egg Rings"));
        assert!(!p.contains("{{"));
        let p = theme_recs_prompt(&a, "1. Breakfast - morning meals");
        assert!(p.contains("\"context\": \"Context Name 5\""));
        assert!(!p.contains("{anchor_item}"));
        for (p, k) in [
            (theme_prompt(&a), PromptKind::Theme),
            (theme_recs_prompt(&a, ""), PromptKind::ThemeRecs),
            (naive_prompt(&a, 3), PromptKind::Naive),
            (gen_evaluator_prompt(&a, "r", "e"), PromptKind::GenEvaluator),
            (judge_prompt("a", "b", "c"), PromptKind::Judge),
        ] {
            assert_eq!(PromptKind::detect(&p), Some(k));
        }
    }
}
