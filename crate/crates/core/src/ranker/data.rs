use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basket::SECONDS_PER_DAY;
use crate::catalog::{Catalog, Segment};
use crate::error::{Result, XpError};
use crate::retrieval::fnv1a;

use super::{CartEntry, CartState, Platform, TrainingExample, PERSONA_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CartAdd,
    View,
    Click,
    Atc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub customer_id: String,
    pub ts: u64,
    pub kind: EventKind,
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_item_id: Option<String>,
    #[serde(default)]
    pub platform: Platform,
}

/// Turns a session log into ranking examples.
///
/// Positives are GM items clicked in-session and added to cart by the same
/// customer within `horizon_days` of the click (inclusive). Negatives are
/// the remaining GM items viewed in-session, down-sampled to at most
/// `neg_per_pos` per positive. Sessions without an OG cart item, without a
/// GM view, or without a positive produce no example.
pub fn label_sessions(
    events: &[SessionEvent],
    catalog: &Catalog,
    personas: &HashMap<String, Vec<f64>>,
    horizon_days: u64,
    neg_per_pos: usize,
    seed: u64,
) -> Vec<TrainingExample> {
    let horizon = horizon_days * SECONDS_PER_DAY;
    let mut atc: HashMap<(&str, &str), Vec<u64>> = HashMap::new();
    let mut sessions: BTreeMap<&str, Vec<&SessionEvent>> = BTreeMap::new();
    for e in events {
        if e.kind == EventKind::Atc {
            atc.entry((e.customer_id.as_str(), e.item_id.as_str())).or_default().push(e.ts);
        } else {
            sessions.entry(e.session_id.as_str()).or_default().push(e);
        }
    }
    let is = |id: &str, seg: Segment| catalog.get(id).map_or(false, |i| i.segment == seg);

    let mut out = Vec::new();
    for (sid, mut evs) in sessions {
        evs.sort_by_key(|e| e.ts);
        let first = evs[0];
        let entries: Vec<CartEntry> = evs
            .iter()
            .filter(|e| e.kind == EventKind::CartAdd && catalog.get(&e.item_id).is_some())
            .map(|e| CartEntry {
                item_id: e.item_id.clone(),
                ts: e.ts,
            })
            .collect();
        if !entries.iter().any(|e| is(&e.item_id, Segment::Og)) {
            continue;
        }
        let mut viewed = BTreeSet::new();
        let mut positives = BTreeSet::new();
        let mut anchors = BTreeMap::new();
        for e in evs.iter().filter(|e| matches!(e.kind, EventKind::View | EventKind::Click)) {
            if !is(&e.item_id, Segment::Gm) {
                continue;
            }
            viewed.insert(e.item_id.clone());
            if let Some(a) = &e.anchor_item_id {
                anchors.entry(e.item_id.clone()).or_insert_with(|| a.clone());
            }
            if e.kind == EventKind::Click {
                let bought = atc
                    .get(&(e.customer_id.as_str(), e.item_id.as_str()))
                    .map_or(false, |ts| ts.iter().any(|&t| t >= e.ts && t - e.ts <= horizon));
                if bought {
                    positives.insert(e.item_id.clone());
                }
            }
        }
        if viewed.is_empty() || positives.is_empty() {
            continue;
        }
        let mut negatives: Vec<String> = viewed.difference(&positives).cloned().collect();
        let cap = neg_per_pos * positives.len();
        if negatives.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(0, sid.as_bytes()));
            negatives.shuffle(&mut rng);
            negatives.truncate(cap);
        }
        let negatives: BTreeSet<String> = negatives.into_iter().collect();
        anchors.retain(|k, _| positives.contains(k) || negatives.contains(k));
        let persona = personas.get(&first.customer_id).cloned().unwrap_or_else(|| {
            warn!("no persona for customer {}; using 0.5", first.customer_id);
            vec![0.5; PERSONA_DIM]
        });
        out.push(TrainingExample {
            cart: CartState {
                cart_id: sid.to_string(),
                entries,
                persona,
                platform: first.platform,
            },
            positives,
            negatives,
            anchors,
        });
    }
    out
}

pub fn write_sessions(path: &Path, events: &[SessionEvent]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sessions(path: &Path) -> Result<Vec<SessionEvent>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| XpError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PersonaRow {
    customer_id: String,
    persona: Vec<f64>,
}

pub fn write_personas(path: &Path, personas: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (k, v) in personas {
        serde_json::to_writer(
            &mut w,
            &PersonaRow {
                customer_id: k.clone(),
                persona: v.clone(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_personas(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: PersonaRow = serde_json::from_str(l).map_err(|e| XpError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if row.persona.len() != PERSONA_DIM || row.persona.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(XpError::MalformedRecord {
                line: i + 1,
                reason: format!("persona must be {PERSONA_DIM} values in [0, 1]"),
            });
        }
        out.insert(row.customer_id, row.persona);
    }
    Ok(out)
}
