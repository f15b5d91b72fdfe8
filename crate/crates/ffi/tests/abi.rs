use std::ffi::{CStr, CString};
use std::ptr;

use xp_core::catalog::Segment;
use xp_core::retrieval::{write_candidates_jsonl, ScoredCandidate};
use xp_core::synth::{generate, SynthConfig};
use xp_ffi::*;

fn last_error() -> String {
    let p = xp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    catalog: CString,
    candidates: CString,
    og: Vec<String>,
}

fn fixture() -> Fixture {
    let w = generate(&SynthConfig {
        n_customers: 30,
        n_og_items: 40,
        n_gm_items: 80,
        n_pts_per_side: 10,
        n_planted_pairs: 5,
        n_sessions: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    w.write_dir(dir.path()).unwrap();
    let gm: Vec<&str> = w.catalog.items().iter().filter(|i| i.segment == Segment::Gm).map(|i| i.item_id.as_str()).collect();
    let og: Vec<String> = w.catalog.items().iter().filter(|i| i.segment == Segment::Og).map(|i| i.item_id.clone()).collect();
    let mut cands = Vec::new();
    for (ai, a) in og.iter().enumerate() {
        for j in 0..35 {
            let g = gm[(ai * 7 + j) % gm.len()];
            cands.push(ScoredCandidate::mba(a.clone(), g.to_string(), 3.0 - j as f64 * 0.05));
        }
    }
    let cpath = dir.path().join("candidates.jsonl");
    write_candidates_jsonl(&cpath, &cands).unwrap();
    Fixture {
        catalog: CString::new(dir.path().join("catalog.jsonl").to_str().unwrap()).unwrap(),
        candidates: CString::new(cpath.to_str().unwrap()).unwrap(),
        _dir: dir,
        og,
    }
}

#[test]
fn engine_round_trip() {
    let fx = fixture();
    let mut engine: *mut XpEngine = ptr::null_mut();
    let st = unsafe { xp_engine_open(fx.catalog.as_ptr(), fx.candidates.as_ptr(), ptr::null(), 2, &mut engine) };
    assert_eq!(st, XpStatus::Ok);
    assert!(!engine.is_null());

    let cart = CString::new("cart-1").unwrap();
    let item = CString::new(fx.og[0].as_str()).unwrap();
    assert_eq!(unsafe { xp_cart_event(engine, cart.as_ptr(), item.as_ptr(), true, 1) }, XpStatus::Ok);
    let mut size = 0usize;
    assert_eq!(unsafe { xp_pool_size(engine, cart.as_ptr(), &mut size) }, XpStatus::Ok);
    assert_eq!(size, 30);

    let model = CString::new("heuristic").unwrap();
    let mut json = ptr::null_mut();
    let st = unsafe { xp_recommend_json(engine, cart.as_ptr(), 5, model.as_ptr(), true, &mut json) };
    assert_eq!(st, XpStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
    unsafe { xp_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["ranked"].as_array().unwrap().len(), 5);
    assert_eq!(v["model_tag"], "heuristic");

    let ranker = CString::new("ranker").unwrap();
    let st = unsafe { xp_recommend_json(engine, cart.as_ptr(), 5, ranker.as_ptr(), false, &mut json) };
    assert_eq!(st, XpStatus::ModelUnavailable);
    assert!(json.is_null());
    assert!(last_error().contains("not loaded"));

    assert_eq!(unsafe { xp_cart_event(engine, cart.as_ptr(), item.as_ptr(), false, 2) }, XpStatus::Ok);
    assert_eq!(unsafe { xp_pool_size(engine, cart.as_ptr(), &mut size) }, XpStatus::Ok);
    assert_eq!(size, 0);

    let bogus = CString::new("no-such-item").unwrap();
    assert_eq!(unsafe { xp_cart_event(engine, cart.as_ptr(), bogus.as_ptr(), true, 3) }, XpStatus::UnknownItem);
    let other = CString::new("ghost").unwrap();
    assert_eq!(unsafe { xp_pool_size(engine, other.as_ptr(), &mut size) }, XpStatus::UnknownCart);
    assert_eq!(unsafe { xp_cart_event(ptr::null(), cart.as_ptr(), item.as_ptr(), true, 3) }, XpStatus::NullArgument);

    unsafe { xp_engine_free(engine) };
}

#[test]
fn open_reports_missing_files() {
    let missing = CString::new("/definitely/not/here.jsonl").unwrap();
    let mut engine: *mut XpEngine = ptr::null_mut();
    let st = unsafe { xp_engine_open(missing.as_ptr(), missing.as_ptr(), ptr::null(), 0, &mut engine) };
    assert_eq!(st, XpStatus::Io);
    assert!(engine.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn scoring_helpers() {
    let mut x = 0.0;
    assert_eq!(unsafe { xp_combined_score(0.8, 0.5, &mut x) }, XpStatus::Ok);
    assert_eq!(x, 0.8 * 0.5);
    assert_eq!(unsafe { xp_combined_score(1.2, 0.5, &mut x) }, XpStatus::InvalidArgument);

    let mut b = XpBand::Poor;
    for (s, want) in [(0.39, XpBand::Poor), (0.4, XpBand::Fair), (0.5, XpBand::Good), (0.6, XpBand::VeryGood), (0.7, XpBand::Excellent)] {
        assert_eq!(unsafe { xp_quality_band(s, &mut b) }, XpStatus::Ok);
        assert_eq!(b, want, "score {s}");
    }

    let rel = [0u8, 1];
    assert_eq!(unsafe { xp_ndcg_at_k(rel.as_ptr(), 2, 2, &mut x) }, XpStatus::Ok);
    assert!((x - 0.63093).abs() < 1e-5);

    let neg = [0.0; 3];
    assert_eq!(unsafe { xp_listwise_loss([0.0].as_ptr(), 1, neg.as_ptr(), 3, 5.0, &mut x) }, XpStatus::Ok);
    assert!((x - 4f64.ln()).abs() < 1e-9);
    assert_eq!(unsafe { xp_listwise_loss(ptr::null(), 0, neg.as_ptr(), 3, 5.0, &mut x) }, XpStatus::InvalidArgument);
    assert_eq!(unsafe { xp_listwise_loss([0.0].as_ptr(), 1, ptr::null(), 0, 0.0, &mut x) }, XpStatus::InvalidArgument);

    assert_eq!(unsafe { xp_pairwise_hinge(3.0, 0.0, 5.0, &mut x) }, XpStatus::Ok);
    assert_eq!(x, 2.0);
    assert_eq!(unsafe { xp_pairwise_hinge(1.0, 0.0, 5.0, ptr::null_mut()) }, XpStatus::NullArgument);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/xp_ffi.h")).unwrap();
    for sym in [
        "xp_engine_open",
        "xp_engine_free",
        "xp_cart_event",
        "xp_pool_size",
        "xp_recommend_json",
        "xp_string_free",
        "xp_last_error",
        "xp_combined_score",
        "xp_quality_band",
        "xp_ndcg_at_k",
        "xp_listwise_loss",
        "xp_pairwise_hinge",
        "XP_STATUS_OK",
        "XP_BAND_EXCELLENT",
        "typedef struct XpEngine XpEngine",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
