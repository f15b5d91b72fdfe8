use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use xp_core::catalog::Segment;
use xp_core::ranker::{RankerConfig, RankerModel};
use xp_core::retrieval::{build_store, HashNgramEmbedder, ScoredCandidate, SegmentFilter};
use xp_core::serving::http::{router, AppState};
use xp_core::serving::{Engine, EngineOptions, RankerBundle, XpIndex};
use xp_core::synth::{generate, SynthConfig};

fn app() -> (Router, Vec<String>) {
    let cfg = SynthConfig {
        n_customers: 40,
        n_og_items: 60,
        n_gm_items: 60,
        n_pts_per_side: 12,
        n_planted_pairs: 6,
        n_sessions: 20,
        ..SynthConfig::default()
    };
    let w = generate(&cfg).unwrap();
    let store = build_store(&w.catalog, &HashNgramEmbedder::default());
    let mut cands = Vec::new();
    let mut og = Vec::new();
    for item in w.catalog.items().iter().filter(|i| i.segment == Segment::Og) {
        og.push(item.item_id.clone());
        let v = store.vector(&item.item_id).unwrap();
        for (id, sim) in store.knn(&v, 30, SegmentFilter::Gm).unwrap() {
            let mut c = ScoredCandidate::mba(item.item_id.clone(), id, sim);
            c.set_scores(sim.clamp(0.0, 1.0), 0.8).unwrap();
            cands.push(c);
        }
    }
    let catalog = Arc::new(w.catalog.clone());
    let model = RankerModel::new(RankerConfig::desk()).unwrap();
    let engine = Engine::new(Arc::clone(&catalog), XpIndex::new(cands), EngineOptions::default())
        .with_ranker(RankerBundle::new(model, &catalog).unwrap())
        .with_personas(w.persona_lookup(), w.truth.persona_map.clone());
    let state = Arc::new(AppState { engine, store });
    (router(state, &["http://localhost:5173".into()]).unwrap(), og)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri).header("origin", "http://localhost:5173");
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

#[tokio::test]
async fn health_reports_ok() {
    let (app, _) = app();
    let (s, v) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["ranker"], true);
}

#[tokio::test]
async fn add_recommend_remove_round_trip() {
    let (app, og) = app();
    let (s, v) = call(&app, "POST", "/v1/carts/c1/events", Some(json!({"type": "add", "item_id": og[0], "ts": 10}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["pool"]["entries"].as_array().unwrap().len(), 30);

    for model in ["ranker", "heuristic"] {
        let (s, v) = call(&app, "GET", &format!("/v1/carts/c1/recommendations?k=6&model={model}&explain=true"), None).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let ranked = v["ranked"].as_array().unwrap();
        assert_eq!(ranked.len(), 6);
        assert_eq!(v["model_tag"], model);
        assert_eq!(v["generated_at"], 10);
        let mut per_pt = std::collections::HashMap::new();
        for r in ranked {
            *per_pt.entry(r["product_type"].as_str().unwrap().to_string()).or_insert(0) += 1;
            assert_eq!(r["explanation"]["anchor_item_id"], og[0]);
        }
        assert!(per_pt.values().all(|&n| n <= 2));
    }

    let (_, a) = call(&app, "GET", "/v1/carts/c1/recommendations?k=6", None).await;
    let (_, b) = call(&app, "GET", "/v1/carts/c1/recommendations?k=6", None).await;
    assert_eq!(a, b);
    assert!(a["ranked"][0].get("explanation").is_none());

    let (s, v) = call(&app, "GET", "/v1/carts/c1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["cart"]["entries"].as_array().unwrap().len(), 1);

    call(&app, "POST", "/v1/carts/c1/events", Some(json!({"type": "remove", "item_id": og[0], "ts": 11}))).await;
    let (s, v) = call(&app, "GET", "/v1/carts/c1/recommendations?k=6&model=heuristic", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["ranked"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn errors_are_json_with_codes() {
    let (app, og) = app();
    let (s, v) = call(&app, "GET", "/v1/carts/ghost/recommendations", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_cart");
    assert!(v["message"].as_str().unwrap().contains("ghost"));

    let (s, v) = call(&app, "POST", "/v1/carts/c/events", Some(json!({"type": "add", "item_id": "nope", "ts": 1}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_item");

    let (s, v) = call(&app, "POST", "/v1/carts/c/events", Some(json!({"type": "hover", "item_id": og[0], "ts": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "config_invalid");

    call(&app, "POST", "/v1/carts/c/events", Some(json!({"type": "add", "item_id": og[0], "ts": 1}))).await;
    let (s, v) = call(&app, "GET", "/v1/carts/c/recommendations?model=magic", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "config_invalid");
    let (s, _) = call(&app, "GET", "/v1/carts/c/recommendations?k=-1", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = call(&app, "GET", "/v1/items/missing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_item");
}

#[tokio::test]
async fn item_lookup_lists_similar_items() {
    let (app, og) = app();
    let (s, v) = call(&app, "GET", &format!("/v1/items/{}", og[0]), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["item"]["item_id"], og[0]);
    assert_eq!(v["xp_candidates"], 30);
    let sim = v["similar"].as_array().unwrap();
    assert_eq!(sim.len(), 5);
    assert!(sim.iter().all(|x| x["item_id"] != og[0]));
}

#[tokio::test]
async fn cors_allows_configured_origin() {
    let (app, _) = app();
    let req = Request::builder()
        .uri("/healthz")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
}
