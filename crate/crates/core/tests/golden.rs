//! Regression guard for the item encoder and scorer of a freshly seeded
//! desk model. Set `XP_BLESS=1` to rewrite the golden file after an
//! intentional change.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use xp_core::catalog::{Catalog, ItemRecord, Segment};
use xp_core::ranker::{CartEntry, CartState, EncoderKind, FeatureTable, LossKind, Platform, RankerConfig, RankerModel, PERSONA_DIM};
use xp_core::retrieval::HashNgramEmbedder;

#[derive(Debug, Serialize, Deserialize)]
struct Golden {
    item_repr: Vec<f64>,
    scores: Vec<(String, Vec<f64>)>,
}

fn path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/desk_scores.json")
}

fn catalog() -> Catalog {
    let rows = [
        ("og1", "Large Brown Eggs", "Eggs", Segment::Og, 3.49),
        ("og2", "Whole Milk Gallon", "Milk", Segment::Og, 2.99),
        ("og3", "Dry Dog Food Chicken", "Dog Food", Segment::Og, 24.0),
        ("og4", "Sourdough Bread", "Bread", Segment::Og, 4.5),
        ("gm1", "Non-stick Egg Pan", "Cookware", Segment::Gm, 19.99),
        ("gm2", "Elevated Dog Bowl", "Pet Bowls", Segment::Gm, 14.0),
        ("gm3", "Milk Frother", "Kitchen Gadgets", Segment::Gm, 9.99),
        ("gm4", "Bread Box", "Storage", Segment::Gm, 29.0),
    ];
    Catalog::new(
        rows.iter()
            .map(|(id, title, pt, seg, price)| ItemRecord {
                item_id: id.to_string(),
                title: title.to_string(),
                product_type: pt.to_string(),
                category: pt.to_string(),
                segment: *seg,
                price: *price,
            })
            .collect(),
    )
    .unwrap()
}

fn compute() -> Golden {
    let catalog = catalog();
    let cands = ["gm1", "gm2", "gm3", "gm4"];
    let carts = [vec!["og1"], vec!["og1", "og2"], vec!["og3", "og4", "og2"]];
    let persona: Vec<f64> = (0..PERSONA_DIM).map(|i| (i % 5) as f64 / 4.0).collect();
    let mut scores = Vec::new();
    let mut item_repr = Vec::new();
    for (encoder, cross, loss) in [
        (EncoderKind::Identity, false, LossKind::PairwiseHinge),
        (EncoderKind::Bilstm, false, LossKind::PairwiseHinge),
        (EncoderKind::Transformer, true, LossKind::ListwiseSoftmax),
    ] {
        let config = RankerConfig {
            encoder,
            cross_attention: cross,
            loss,
            seed: 17,
            ..RankerConfig::desk()
        };
        let feats = FeatureTable::build(&catalog, &HashNgramEmbedder::new(config.embed_dim, 0));
        let model = RankerModel::new(config).unwrap();
        if item_repr.is_empty() {
            item_repr = model.item_repr(&feats, catalog.get("gm1").unwrap()).unwrap();
        }
        for (ci, ids) in carts.iter().enumerate() {
            let mut cart = CartState::new(format!("c{ci}"), persona.clone(), Platform::Android);
            cart.entries = ids
                .iter()
                .enumerate()
                .map(|(t, id)| CartEntry { item_id: id.to_string(), ts: t as u64 })
                .collect();
            let s = model.score_batch(&feats, &cart, &cands).unwrap();
            scores.push((format!("{encoder:?}/c{ci}"), s));
        }
    }
    Golden { item_repr, scores }
}

#[test]
fn desk_model_outputs_match_golden() {
    let got = compute();
    if std::env::var("XP_BLESS").is_ok_and(|v| v == "1") {
        std::fs::create_dir_all(path().parent().unwrap()).unwrap();
        std::fs::write(path(), serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let want: Golden = serde_json::from_str(&std::fs::read_to_string(path()).expect("golden file; run with XP_BLESS=1")).unwrap();
    assert_eq!(got.item_repr.len(), want.item_repr.len());
    for (a, b) in got.item_repr.iter().zip(&want.item_repr) {
        assert!((a - b).abs() < 1e-9, "item repr drifted: {a} vs {b}");
    }
    assert_eq!(got.scores.len(), want.scores.len());
    for ((ga, gs), (wa, ws)) in got.scores.iter().zip(&want.scores) {
        assert_eq!(ga, wa);
        for (a, b) in gs.iter().zip(ws) {
            assert!((a - b).abs() < 1e-9, "{ga}: score {a} vs golden {b}");
        }
    }
}
