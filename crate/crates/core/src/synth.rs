//! Synthetic grocery/merchandise world with planted cross-category structure.
//!
//! Every statistical property the toolkit claims is checked against this
//! generator: planted OG->GM product-type pairs drive both basket
//! co-occurrence and session purchase propensity, so miners and rankers can
//! be scored against known ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::basket::{write_transactions, Transaction, SECONDS_PER_DAY};
use crate::catalog::{Catalog, ItemRecord, Segment};
use crate::error::{Result, XpError};
use crate::llm::prompts::{field_after, PromptKind};
use crate::llm::ChatClient;
use crate::ranker::{write_personas, write_sessions, EventKind, PersonaMap, Platform, SessionEvent, PERSONA_DIM};
use crate::retrieval::fnv1a;

/// Natural OG -> GM pairs, used in order for the planted structure.
const PAIRED: [(&str, &str, &str, &str); 20] = [
    ("Eggs", "Dairy & Eggs", "Egg Poachers", "Kitchen"),
    ("Dog Food", "Pet Food", "Dog Bowls", "Pet Supplies"),
    ("Coffee Beans", "Beverages", "Coffee Grinders", "Kitchen"),
    ("Cat Food", "Pet Food", "Cat Litter Boxes", "Pet Supplies"),
    ("Baby Formula", "Baby Food", "Baby Bottles", "Baby"),
    ("Pasta", "Pantry", "Colanders", "Kitchen"),
    ("Loose Leaf Tea", "Beverages", "Tea Kettles", "Kitchen"),
    ("Steak", "Meat", "Grill Tools", "Outdoor"),
    ("Wine", "Beverages", "Wine Glasses", "Home"),
    ("Popcorn Kernels", "Snacks", "Popcorn Makers", "Appliances"),
    ("Tortillas", "Bakery", "Tortilla Warmers", "Kitchen"),
    ("Bread", "Bakery", "Toasters", "Appliances"),
    ("Rice", "Pantry", "Rice Cookers", "Appliances"),
    ("Ice Cream", "Frozen", "Ice Cream Scoops", "Kitchen"),
    ("Salad Greens", "Produce", "Salad Spinners", "Kitchen"),
    ("Lemons", "Produce", "Citrus Juicers", "Appliances"),
    ("Chicken Breast", "Meat", "Meat Thermometers", "Kitchen"),
    ("Hamburger Buns", "Bakery", "Burger Presses", "Outdoor"),
    ("Protein Powder", "Pantry", "Shaker Bottles", "Fitness"),
    ("Baby Wipes", "Baby Food", "Diaper Caddies", "Baby"),
];

const OG_EXTRA: [(&str, &str); 20] = [
    ("Milk", "Dairy & Eggs"),
    ("Butter", "Dairy & Eggs"),
    ("Cheddar Cheese", "Dairy & Eggs"),
    ("Yogurt", "Dairy & Eggs"),
    ("Apples", "Produce"),
    ("Potatoes", "Produce"),
    ("Onions", "Produce"),
    ("Carrots", "Produce"),
    ("Breakfast Cereal", "Pantry"),
    ("Peanut Butter", "Pantry"),
    ("Strawberry Jam", "Pantry"),
    ("Honey", "Pantry"),
    ("Olive Oil", "Pantry"),
    ("Canned Soup", "Pantry"),
    ("Frozen Pizza", "Frozen"),
    ("Potato Chips", "Snacks"),
    ("Cookies", "Snacks"),
    ("Orange Juice", "Beverages"),
    ("Bacon", "Meat"),
    ("Sparkling Water", "Beverages"),
];

const GM_EXTRA: [(&str, &str); 20] = [
    ("Bath Towels", "Home"),
    ("Phone Chargers", "Electronics"),
    ("Spiral Notebooks", "Home"),
    ("AA Batteries", "Electronics"),
    ("LED Light Bulbs", "Home"),
    ("Picture Frames", "Home"),
    ("Throw Pillows", "Home"),
    ("Desk Lamps", "Electronics"),
    ("Umbrellas", "Outdoor"),
    ("Yoga Mats", "Fitness"),
    ("Board Games", "Home"),
    ("Scented Candles", "Home"),
    ("Wool Socks", "Fitness"),
    ("Backpacks", "Outdoor"),
    ("Screwdriver Sets", "Home"),
    ("Extension Cords", "Electronics"),
    ("Shower Curtains", "Home"),
    ("Storage Bins", "Home"),
    ("Bluetooth Speakers", "Electronics"),
    ("Alarm Clocks", "Electronics"),
];

/// GM categories, each owning a contiguous block of persona indices.
pub const GM_CATEGORIES: [&str; 8] = [
    "Kitchen",
    "Pet Supplies",
    "Baby",
    "Outdoor",
    "Electronics",
    "Appliances",
    "Fitness",
    "Home",
];

const BRANDS: [&str; 8] = ["Harbor", "Sunfield", "Northway", "Maple & Co", "Brightline", "Oakridge", "Tidewater", "Summit"];
// Even positions are budget lines, odd positions premium.
const OG_VARIANTS: [&str; 6] = ["Value Pack", "Organic", "Classic", "Premium", "Family Size", "Artisan"];
const GM_VARIANTS: [&str; 6] = ["Everyday", "Stainless Steel", "Compact", "Deluxe", "Two-Pack", "Pro Series"];
const THEME_LABELS: [&str; 5] = ["Everyday Meals", "Hosting Guests", "Meal Prep", "Family Routines", "Weekend Treats"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_customers: usize,
    pub n_og_items: usize,
    pub n_gm_items: usize,
    pub n_pts_per_side: usize,
    pub n_planted_pairs: usize,
    /// Strengths are spaced evenly from `max_strength` (first pair) down to
    /// `min_strength` (last pair).
    pub min_strength: f64,
    pub max_strength: f64,
    pub n_sessions: usize,
    pub horizon_days: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_customers: 2000,
            n_og_items: 400,
            n_gm_items: 400,
            n_pts_per_side: 40,
            n_planted_pairs: 20,
            min_strength: 0.7,
            max_strength: 1.0,
            n_sessions: 6000,
            horizon_days: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(XpError::ConfigInvalid(m));
        if self.n_customers == 0 {
            return bad("n_customers must be positive".into());
        }
        if self.n_pts_per_side < 2 {
            return bad("n_pts_per_side must be at least 2".into());
        }
        if self.n_og_items < self.n_pts_per_side || self.n_gm_items < self.n_pts_per_side {
            return bad("need at least one item per product type".into());
        }
        if self.n_planted_pairs > self.n_pts_per_side {
            return bad(format!(
                "{} planted pairs need {} product types per side",
                self.n_planted_pairs, self.n_planted_pairs
            ));
        }
        for (name, v) in [("min_strength", self.min_strength), ("max_strength", self.max_strength)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name}={v} outside [0, 1]"));
            }
        }
        if self.min_strength > self.max_strength {
            return bad("min_strength exceeds max_strength".into());
        }
        if self.horizon_days == 0 {
            return bad("horizon_days must be positive".into());
        }
        Ok(())
    }

    pub fn strength(&self, i: usize) -> f64 {
        if self.n_planted_pairs <= 1 {
            return self.max_strength;
        }
        let t = i as f64 / (self.n_planted_pairs - 1) as f64;
        self.max_strength - t * (self.max_strength - self.min_strength)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub anchor_pt: String,
    pub rec_pt: String,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SynthConfig,
    pub planted: Vec<PlantedPair>,
    pub persona_map: PersonaMap,
}

impl Truth {
    pub fn strength(&self, anchor_pt: &str, rec_pt: &str) -> f64 {
        self.planted
            .iter()
            .find(|p| p.anchor_pt == anchor_pt && p.rec_pt == rec_pt)
            .map_or(0.0, |p| p.strength)
    }

    pub fn partner(&self, anchor_pt: &str) -> Option<&PlantedPair> {
        self.planted.iter().find(|p| p.anchor_pt == anchor_pt)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Truth> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub struct SynthWorld {
    pub catalog: Catalog,
    pub transactions: Vec<Transaction>,
    pub sessions: Vec<SessionEvent>,
    pub personas: BTreeMap<String, Vec<f64>>,
    pub truth: Truth,
}

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const TRANSACTIONS_FILE: &str = "transactions.jsonl";
pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const PERSONAS_FILE: &str = "personas.jsonl";
pub const TRUTH_FILE: &str = "truth.json";

impl SynthWorld {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.catalog.write_jsonl(&dir.join(CATALOG_FILE))?;
        write_transactions(&dir.join(TRANSACTIONS_FILE), &self.transactions)?;
        write_sessions(&dir.join(SESSIONS_FILE), &self.sessions)?;
        write_personas(&dir.join(PERSONAS_FILE), &self.personas)?;
        self.truth.write(&dir.join(TRUTH_FILE))
    }

    pub fn persona_lookup(&self) -> HashMap<String, Vec<f64>> {
        self.personas.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}

struct Pt {
    name: String,
    category: String,
}

fn vocab(cfg: &SynthConfig) -> (Vec<Pt>, Vec<Pt>) {
    let mut og = Vec::new();
    let mut gm = Vec::new();
    let natural = PAIRED.len() + OG_EXTRA.len();
    for i in 0..cfg.n_pts_per_side {
        let (o, oc, g, gc) = if i < PAIRED.len() {
            PAIRED[i]
        } else if i < natural {
            let (o, oc) = OG_EXTRA[i - PAIRED.len()];
            let (g, gc) = GM_EXTRA[i - PAIRED.len()];
            (o, oc, g, gc)
        } else {
            ("", "Pantry", "", GM_CATEGORIES[i % GM_CATEGORIES.len()])
        };
        og.push(Pt {
            name: if o.is_empty() { format!("Grocery Staple {}", i + 1) } else { o.to_string() },
            category: oc.to_string(),
        });
        gm.push(Pt {
            name: if g.is_empty() { format!("Household Good {}", i + 1) } else { g.to_string() },
            category: gc.to_string(),
        });
    }
    (og, gm)
}

/// Item records for one side: `n` items spread round-robin over the PTs.
/// Item records for one side plus whether each is a premium line.
fn items_for(pts: &[Pt], n: usize, segment: Segment, rng: &mut ChaCha8Rng) -> Vec<(ItemRecord, bool)> {
    let (prefix, variants, lo, hi) = match segment {
        Segment::Og => ("og", &OG_VARIANTS, 1.5, 20.0),
        Segment::Gm => ("gm", &GM_VARIANTS, 6.0, 120.0),
    };
    (0..n)
        .map(|i| {
            let pt = &pts[i % pts.len()];
            let brand = BRANDS[rng.gen_range(0..BRANDS.len())];
            let vi = (i / pts.len()) % variants.len();
            let premium = vi % 2 == 1;
            let price: f64 = rng.gen_range(lo..hi) * if premium { 2.0 } else { 1.0 };
            let variant = variants[vi];
            let item = ItemRecord {
                item_id: format!("{prefix}-{:04}", i + 1),
                title: format!("{brand} {variant} {}", pt.name),
                product_type: pt.name.clone(),
                category: pt.category.clone(),
                segment,
                price: (price * 100.0).round() / 100.0,
            };
            (item, premium)
        })
        .collect()
}

fn persona_map() -> PersonaMap {
    let block = PERSONA_DIM / GM_CATEGORIES.len();
    GM_CATEGORIES
        .iter()
        .enumerate()
        .map(|(k, c)| (c.to_string(), (k * block..(k + 1) * block).collect()))
        .collect()
}

/// Per-customer persona: one or two favoured categories score high, the
/// rest low.
fn sample_persona(map: &PersonaMap, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..PERSONA_DIM).map(|_| rng.gen_range(0.0..0.45)).collect();
    let n_fav = rng.gen_range(1..=2);
    let cats: Vec<&String> = map.keys().collect();
    for c in cats.choose_multiple(rng, n_fav) {
        for &i in &map[*c] {
            v[i] = rng.gen_range(0.7..1.0);
        }
    }
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

/// Utility of a GM candidate given its planted affinity with the cart and
/// the customer's affinity for its category.
pub fn purchase_utility(affinity: f64, persona_affinity: f64) -> f64 {
    4.5 * affinity + 6.0 * (persona_affinity - 0.5) - 3.0
}

/// Sequential multinomial-logit choice among shown items with an outside
/// option of utility 0: shown items compete for the shopper's attention.
fn choose_purchases(utilities: &[f64], rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let mut picked = BTreeSet::new();
    for _ in 0..MAX_PURCHASES {
        let weights: Vec<f64> = std::iter::once(1.0)
            .chain(
                utilities
                    .iter()
                    .enumerate()
                    .map(|(j, u)| if picked.contains(&j) { 0.0 } else { u.exp() }),
            )
            .collect();
        let Ok(dist) = WeightedIndex::new(&weights) else { break };
        match dist.sample(rng) {
            0 => break,
            j => picked.insert(j - 1),
        };
    }
    picked
}

const BASKETS_PER_CUSTOMER: usize = 3;
const PLANTED_RATE: f64 = 0.6;
const GM_NOISE_RATE: f64 = 0.03;
const VIEWS_PER_SESSION: usize = 8;
const TIER_MISMATCH: f64 = 0.2;
const MAX_PURCHASES: usize = 3;

pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (og_pts, gm_pts) = vocab(cfg);
    let mut items = items_for(&og_pts, cfg.n_og_items, Segment::Og, &mut rng);
    items.extend(items_for(&gm_pts, cfg.n_gm_items, Segment::Gm, &mut rng));
    let premium: HashMap<String, bool> = items.iter().map(|(it, p)| (it.item_id.clone(), *p)).collect();
    let catalog = Catalog::new(items.into_iter().map(|(it, _)| it).collect())?;

    let planted: Vec<PlantedPair> = (0..cfg.n_planted_pairs)
        .map(|i| PlantedPair {
            anchor_pt: og_pts[i].name.clone(),
            rec_pt: gm_pts[i].name.clone(),
            strength: cfg.strength(i),
        })
        .collect();
    // og pt index -> (gm pt index, strength)
    let partner: HashMap<usize, (usize, f64)> = (0..cfg.n_planted_pairs).map(|i| (i, (i, cfg.strength(i)))).collect();

    let by_pt = |seg: Segment, pt: &str| -> Vec<String> { catalog.pt_index()[pt].iter().filter(|id| catalog.get(id).unwrap().segment == seg).cloned().collect() };
    let og_items: Vec<Vec<String>> = og_pts.iter().map(|p| by_pt(Segment::Og, &p.name)).collect();
    let gm_items: Vec<Vec<String>> = gm_pts.iter().map(|p| by_pt(Segment::Gm, &p.name)).collect();
    let gm_pt_of: HashMap<&str, usize> = gm_items
        .iter()
        .enumerate()
        .flat_map(|(i, ids)| ids.iter().map(move |id| (id.as_str(), i)))
        .collect();

    let map = persona_map();
    let mut personas = BTreeMap::new();
    let mut pantries = Vec::with_capacity(cfg.n_customers);
    let n_pts = cfg.n_pts_per_side;
    let pantry_max = 20.min(n_pts);
    let pantry_min = 6.min(pantry_max);
    for c in 0..cfg.n_customers {
        personas.insert(customer_id(c), sample_persona(&map, &mut rng));
        let size = rng.gen_range(pantry_min..=pantry_max);
        // order is preference rank: carts draw Zipf-weighted from it
        pantries.push(rand::seq::index::sample(&mut rng, n_pts, size).into_vec());
    }

    // transactions: a few three-week baskets per customer
    let window = 21 * SECONDS_PER_DAY;
    let mut transactions = Vec::new();
    for (c, pantry) in pantries.iter().enumerate() {
        let offset = rng.gen_range(0..30) * SECONDS_PER_DAY;
        for w in 0..BASKETS_PER_CUSTOMER as u64 {
            let start = offset + w * window;
            let k = rng.gen_range(1..=4.min(pantry.len()));
            let mut basket: Vec<String> = Vec::new();
            for &pt in pantry.choose_multiple(&mut rng, k) {
                basket.push(og_items[pt].choose(&mut rng).unwrap().clone());
                if let Some(&(g, s)) = partner.get(&pt) {
                    if rng.gen_bool(s * PLANTED_RATE) {
                        basket.push(gm_items[g].choose(&mut rng).unwrap().clone());
                    }
                }
            }
            for ids in &gm_items {
                if rng.gen_bool(GM_NOISE_RATE) {
                    basket.push(ids.choose(&mut rng).unwrap().clone());
                }
            }
            for (j, item_id) in basket.into_iter().enumerate() {
                let ts = if j == 0 { start } else { start + rng.gen_range(0..window) };
                transactions.push(Transaction {
                    customer_id: customer_id(c),
                    item_id,
                    ts,
                    channel: Some(if rng.gen_bool(0.7) { "online" } else { "store" }.to_string()),
                });
            }
        }
    }
    transactions.sort_by(|a, b| (a.ts, &a.customer_id, &a.item_id).cmp(&(b.ts, &b.customer_id, &b.item_id)));

    // sessions
    let horizon = cfg.horizon_days * SECONDS_PER_DAY;
    let session_base = (30 + 21 * BASKETS_PER_CUSTOMER as u64 + 7) * SECONDS_PER_DAY;
    let mut sessions = Vec::new();
    let all_gm: Vec<&String> = gm_items.iter().flatten().collect();
    for s in 0..cfg.n_sessions {
        let c = rng.gen_range(0..cfg.n_customers);
        let cid = customer_id(c);
        let sid = format!("s{:05}", s + 1);
        let platform = [Platform::Web, Platform::Ios, Platform::Android][rng.gen_range(0..Platform::COUNT)];
        let pantry = &pantries[c];
        let zipf = WeightedIndex::new((1..=pantry.len()).map(|r| 1.0 / r as f64)).expect("nonempty pantry");
        let size = if rng.gen_bool(0.45) { rng.gen_range(1..10) } else { rng.gen_range(10..=50) };
        let mut ts = session_base + rng.gen_range(0..60) * SECONDS_PER_DAY + rng.gen_range(0..SECONDS_PER_DAY);
        let ev = |kind, item: &str, anchor: Option<&str>, ts: u64| SessionEvent {
            session_id: sid.clone(),
            customer_id: cid.clone(),
            ts,
            kind,
            item_id: item.to_string(),
            anchor_item_id: anchor.map(str::to_string),
            platform,
        };
        let mut cart_og: Vec<(usize, String)> = Vec::new();
        for _ in 0..size {
            ts += rng.gen_range(5..90);
            if rng.gen_bool(0.1) {
                let id = all_gm[rng.gen_range(0..all_gm.len())];
                sessions.push(ev(EventKind::CartAdd, id, None, ts));
            } else {
                let pt = pantry[zipf.sample(&mut rng)];
                let id = og_items[pt].choose(&mut rng).unwrap().clone();
                sessions.push(ev(EventKind::CartAdd, &id, None, ts));
                cart_og.push((pt, id));
            }
        }
        if cart_og.is_empty() {
            continue;
        }
        let cart_pts: BTreeSet<usize> = cart_og.iter().map(|(p, _)| *p).collect();
        let related: Vec<usize> = cart_pts.iter().filter_map(|p| partner.get(p).map(|(g, _)| *g)).collect();
        let decoys: Vec<usize> = (0..cfg.n_planted_pairs).filter(|g| !related.contains(g)).collect();
        // full strength only when the matching cart item shares the candidate's tier
        let affinity = |g: usize, item: &str| -> f64 {
            cart_og
                .iter()
                .filter_map(|(p, id)| {
                    let (pg, s) = partner.get(p)?;
                    let tier = if premium[id] == premium[item] { 1.0 } else { TIER_MISMATCH };
                    (*pg == g).then_some(s * tier)
                })
                .fold(0.0, f64::max)
        };
        let persona = &personas[&cid];
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut shown: Vec<(String, String, f64)> = Vec::new();
        for _ in 0..VIEWS_PER_SESSION * 4 {
            if shown.len() == VIEWS_PER_SESSION {
                break;
            }
            let (g, anchor) = if !related.is_empty() && rng.gen_bool(0.5) {
                let g = *related.choose(&mut rng).unwrap();
                let from: Vec<&String> =
                    cart_og.iter().filter(|(p, _)| partner.get(p).map(|x| x.0) == Some(g)).map(|(_, id)| id).collect();
                (g, from.choose(&mut rng).map(|a| (*a).clone()).unwrap())
            } else {
                // decoys come from paired PTs too, so relevance depends on the cart
                let g = match decoys.choose(&mut rng) {
                    Some(&g) => g,
                    None => rng.gen_range(0..gm_items.len()),
                };
                (g, cart_og.choose(&mut rng).unwrap().1.clone())
            };
            let item = gm_items[g].choose(&mut rng).unwrap().clone();
            if !seen.insert(item.clone()) {
                continue;
            }
            let cat = &gm_pts[gm_pt_of[item.as_str()]].category;
            let pa = map.get(cat).map_or(0.5, |idx| idx.iter().map(|&i| persona[i]).sum::<f64>() / idx.len() as f64);
            let u = purchase_utility(affinity(g, &item), pa);
            shown.push((item, anchor, u));
        }
        for (item, anchor, _) in &shown {
            ts += rng.gen_range(5..60);
            sessions.push(ev(EventKind::View, item, Some(anchor), ts));
        }
        let bought = choose_purchases(&shown.iter().map(|s| s.2).collect::<Vec<_>>(), &mut rng);
        for (j, (item, anchor, _)) in shown.iter().enumerate() {
            if bought.contains(&j) {
                ts += rng.gen_range(1..30);
                sessions.push(ev(EventKind::Click, item, Some(anchor), ts));
                let atc = ts + rng.gen_range(0..=horizon);
                sessions.push(ev(EventKind::Atc, item, None, atc));
            } else if rng.gen_bool(0.25) {
                ts += rng.gen_range(1..30);
                sessions.push(ev(EventKind::Click, item, Some(anchor), ts));
                if rng.gen_bool(0.2) {
                    // bought, but too late to count
                    let late = ts + horizon + rng.gen_range(1..5) * SECONDS_PER_DAY;
                    sessions.push(ev(EventKind::Atc, item, None, late));
                }
            }
        }
    }

    Ok(SynthWorld {
        catalog,
        transactions,
        sessions,
        personas,
        truth: Truth {
            config: cfg.clone(),
            planted,
            persona_map: map,
        },
    })
}

fn customer_id(c: usize) -> String {
    format!("c{:05}", c + 1)
}

/// Chat client that answers every prompt kind from the planted truth, so the
/// LLM pipeline can run offline with replies that carry real signal.
pub struct SyntheticChatClient {
    truth: Truth,
    og_pts: Vec<String>,
    gm_pts: Vec<String>,
}

fn between<'a>(s: &'a str, pre: &str, post: &str) -> Option<&'a str> {
    let start = s.find(pre)? + pre.len();
    let end = s[start..].find(post)? + start;
    Some(s[start..end].trim())
}

fn pt_of_anchor(anchor: &str) -> &str {
    anchor.rsplit_once("ProductType: ").map_or(anchor, |(_, pt)| pt.trim().trim_end_matches('.'))
}

fn unit(seed: u64, parts: &[&str]) -> f64 {
    let mut h = seed;
    for p in parts {
        h = fnv1a(h, p.as_bytes());
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl SyntheticChatClient {
    pub fn new(truth: Truth) -> Self {
        let (og, gm) = vocab(&truth.config);
        SyntheticChatClient {
            truth,
            og_pts: og.into_iter().map(|p| p.name).collect(),
            gm_pts: gm.into_iter().map(|p| p.name).collect(),
        }
    }

    /// GM product types suggested for an anchor: its planted partner (if
    /// any) first, then a deterministic spread of others.
    fn suggestions(&self, anchor_pt: &str, salt: &str, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(p) = self.truth.partner(anchor_pt) {
            out.push(p.rec_pt.clone());
        }
        let mut rest: Vec<&String> = self.gm_pts.iter().filter(|g| !out.contains(g)).collect();
        rest.sort_by(|a, b| unit(1, &[anchor_pt, salt, a]).total_cmp(&unit(1, &[anchor_pt, salt, b])));
        out.extend(rest.into_iter().take(n.saturating_sub(out.len())).cloned());
        out
    }

    fn themes(&self, anchor_pt: &str) -> String {
        let list: Vec<String> = THEME_LABELS
            .iter()
            .map(|l| format!("{l} - how {anchor_pt} fits into {}", l.to_lowercase()))
            .collect();
        serde_json::to_string(&list).unwrap_or_default()
    }

    fn theme_recs(&self, anchor_pt: &str) -> String {
        let groups: Vec<_> = THEME_LABELS
            .iter()
            .map(|label| {
                let recs: Vec<String> = self
                    .suggestions(anchor_pt, label, 10)
                    .into_iter()
                    .enumerate()
                    .map(|(i, pt)| format!("{} {pt}", GM_VARIANTS[i % GM_VARIANTS.len()]))
                    .collect();
                let explanations: Vec<String> =
                    recs.iter().map(|r| format!("{r} pairs with {anchor_pt} for {}", label.to_lowercase())).collect();
                json!({"context": label, "recs": recs, "explanations": explanations})
            })
            .collect();
        serde_json::to_string_pretty(&groups).unwrap_or_default()
    }

    fn naive(&self, anchor_pt: &str, n: usize) -> String {
        let recs = self.suggestions(anchor_pt, "naive", n);
        let expl: Vec<String> = recs.iter().map(|r| format!("{r} complement {anchor_pt}")).collect();
        json!({"recs": recs, "explanation": expl}).to_string()
    }

    /// Planted strength between an anchor PT and whichever GM PT the text names.
    fn relevance(&self, anchor_pt: &str, text: &str) -> Option<f64> {
        let lower = text.to_lowercase();
        self.gm_pts
            .iter()
            .filter(|g| lower.contains(&g.to_lowercase()))
            .map(|g| self.truth.strength(anchor_pt, g))
            .reduce(f64::max)
    }

    fn score_reply(score: f64, why: &str) -> String {
        json!({"score": (score * 1000.0).round() / 1000.0, "reasoning": why}).to_string()
    }
}

impl ChatClient for SyntheticChatClient {
    fn complete(&self, prompt: &str, _temperature: f64, _seed: u64) -> Result<String> {
        let kind = PromptKind::detect(prompt).ok_or_else(|| XpError::LlmMalformedOutput("unrecognised prompt".into()))?;
        let missing = || XpError::LlmMalformedOutput(format!("prompt fields missing for {kind:?}"));
        Ok(match kind {
            PromptKind::Theme => {
                let anchor = between(prompt, "following item: ", " and identify").ok_or_else(missing)?;
                self.themes(pt_of_anchor(anchor))
            }
            PromptKind::ThemeRecs => {
                let anchor = between(prompt, "usage contexts for ", ":\n").ok_or_else(missing)?;
                self.theme_recs(pt_of_anchor(anchor))
            }
            PromptKind::Naive => {
                let anchor = field_after(prompt, "anchor_item:").ok_or_else(missing)?;
                let n = between(prompt, "list of top ", " recommendations")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(missing)?;
                self.naive(pt_of_anchor(anchor), n)
            }
            PromptKind::GenEvaluator => {
                let anchor_pt = pt_of_anchor(field_after(prompt, "ANCHOR ITEM:").ok_or_else(missing)?);
                let rec = field_after(prompt, "RECOMMENDATION:").ok_or_else(missing)?;
                let score = match self.relevance(anchor_pt, rec) {
                    Some(s) if s > 0.0 => 0.8 + 0.2 * s,
                    _ => 0.2 + 0.5 * unit(2, &[anchor_pt, rec]),
                };
                Self::score_reply(score, "synthetic relevance")
            }
            PromptKind::Judge => {
                let anchor_pt = field_after(prompt, "- Anchor Category:").ok_or_else(missing)?;
                let rec_pt = field_after(prompt, "- Matched Product Category:").ok_or_else(missing)?;
                let s = self.truth.strength(anchor_pt, rec_pt);
                let score = if s > 0.0 {
                    0.75 + 0.25 * s
                } else {
                    0.15 + 0.45 * unit(3, &[anchor_pt, rec_pt])
                };
                Self::score_reply(score, "synthetic judgement")
            }
        })
    }
}

impl SyntheticChatClient {
    pub fn og_product_types(&self) -> &[String] {
        &self.og_pts
    }
}
