//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line whether or not it fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xp_core::basket::{mine_pt_associations, Basket};
use xp_core::bench::{bench_ranker_config, mine_world, planted_benchmark, planted_recall, BENCH_SEEDS, RECALL_TOP};
use xp_core::catalog::{Catalog, ItemRecord, Segment};
use xp_core::llm::{filter_generated, LlmRecommendation, DEFAULT_GEN_THRESHOLD};
use xp_core::nn::Session;
use xp_core::ranker::{
    ablation, listwise_graph, listwise_softmax_loss, ndcg_at_k, pairwise_graph, pairwise_hinge_loss, AblationSpec,
    CartEntry, CartState, FeatureTable, Platform, RankerConfig, RankerModel, PERSONA_DIM,
};
use xp_core::retrieval::{band, combined_score, HashNgramEmbedder, QualityBand, ScoredCandidate};
use xp_core::serving::{CartEvent, Engine, EngineOptions, XpIndex, POOL_CAP, TOP_PER_ANCHOR};
use xp_core::synth::{generate, SynthConfig};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(
        elapsed <= Duration::from_secs(limit_s),
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn item(id: &str, pt: &str, segment: Segment) -> ItemRecord {
    ItemRecord {
        item_id: id.into(),
        title: format!("{pt} {id}"),
        product_type: pt.into(),
        category: if segment == Segment::Og { "Pantry".into() } else { "Home".into() },
        segment,
        price: 4.0,
    }
}

// --- association mining --------------------------------------------------

fn lift_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let og_pts = ["A", "B", "C"];
    let gm_pts = ["X", "Y", "Z"];
    let mut items = Vec::new();
    for pt in og_pts {
        for j in 0..2 {
            items.push(item(&format!("{pt}{j}"), pt, Segment::Og));
        }
    }
    for pt in gm_pts {
        for j in 0..2 {
            items.push(item(&format!("{pt}{j}"), pt, Segment::Gm));
        }
    }
    let ids: Vec<String> = items.iter().map(|i| i.item_id.clone()).collect();
    let pt_of: BTreeMap<String, (String, Segment)> = items
        .iter()
        .map(|i| (i.item_id.clone(), (i.product_type.clone(), i.segment)))
        .collect();
    let catalog = Catalog::new(items).unwrap();

    let trials = 2000;
    let mut compared = 0usize;
    for _ in 0..trials {
        let n = rng.gen_range(1..=12);
        let baskets: Vec<Basket> = (0..n)
            .map(|b| Basket {
                customer_id: format!("c{b}"),
                window_start: 0,
                item_ids: ids.iter().filter(|_| rng.gen_bool(0.35)).cloned().collect(),
            })
            .collect();
        let mined = mine_pt_associations(&baskets, &catalog, 0.0, 0.0).map_err(|e| e.to_string())?;

        // exhaustive count over every OG x GM type pair
        let mut expected = BTreeMap::new();
        for a in og_pts {
            for b in gm_pts {
                let has = |bk: &Basket, pt: &str, seg: Segment| {
                    bk.item_ids.iter().any(|id| pt_of[id].0 == pt && pt_of[id].1 == seg)
                };
                let na = baskets.iter().filter(|bk| has(bk, a, Segment::Og)).count() as f64;
                let nb = baskets.iter().filter(|bk| has(bk, b, Segment::Gm)).count() as f64;
                let nab = baskets
                    .iter()
                    .filter(|bk| has(bk, a, Segment::Og) && has(bk, b, Segment::Gm))
                    .count() as f64;
                if nab > 0.0 {
                    let nf = n as f64;
                    let support = nab / nf;
                    let conf = nab / na;
                    let lift = conf / (nb / nf);
                    expected.insert((a.to_string(), b.to_string()), (support, conf, lift));
                }
            }
        }
        ensure(mined.len() == expected.len(), format!("rule count {} vs oracle {}", mined.len(), expected.len()))?;
        for r in &mined {
            let (s, c, l) = expected
                .get(&(r.anchor_pt.clone(), r.rec_pt.clone()))
                .ok_or_else(|| format!("unexpected rule {}->{}", r.anchor_pt, r.rec_pt))?;
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-12;
            ensure(
                close(r.support, *s) && close(r.confidence, *c) && close(r.lift, *l),
                format!("{}->{} differs from oracle", r.anchor_pt, r.rec_pt),
            )?;
            compared += 1;
        }
    }

    let cat = Catalog::new(vec![item("a", "A", Segment::Og), item("b", "B", Segment::Gm)]).unwrap();
    let bk = |ids: &[&str]| Basket {
        customer_id: "c".into(),
        window_start: 0,
        item_ids: ids.iter().map(|s| s.to_string()).collect(),
    };
    let rules = mine_pt_associations(&[bk(&["a", "b"]), bk(&["a", "b"]), bk(&["a"]), bk(&["b"])], &cat, 0.0, 0.0)
        .map_err(|e| e.to_string())?;
    ensure(rules.len() == 1, "worked example should yield one rule")?;
    let r = &rules[0];
    ensure(
        (r.support - 0.5).abs() < 1e-4 && (r.confidence - 0.6667).abs() < 1e-4 && (r.lift - 0.8889).abs() < 1e-4,
        format!("worked example gave {:.4}/{:.4}/{:.4}", r.support, r.confidence, r.lift),
    )?;
    within(start.elapsed(), 1)?;
    Ok(format!(
        "{trials} random basket sets, {compared} rules match; worked example {:.4}/{:.4}/{:.4}; {:.2}s",
        r.support,
        r.confidence,
        r.lift,
        start.elapsed().as_secs_f64()
    ))
}

fn planted_recovery() -> Outcome {
    let start = Instant::now();
    let world = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    ensure(world.truth.planted.len() == 20, "expected 20 planted pairs")?;
    ensure(world.truth.planted.iter().all(|p| p.strength >= 0.7), "planted strength below 0.7")?;
    let rules = mine_world(&world).map_err(|e| e.to_string())?;
    let recall = planted_recall(&rules, &world.truth, RECALL_TOP);
    ensure(recall >= 0.9, format!("recall {recall:.2} in top {RECALL_TOP}"))?;
    within(start.elapsed(), 30)?;
    Ok(format!("recall {recall:.2} in top {RECALL_TOP}; {:.1}s", start.elapsed().as_secs_f64()))
}

// --- losses and gradients -------------------------------------------------

fn loss_identities() -> Outcome {
    let e = |r: xp_core::Result<f64>| r.map_err(|e| e.to_string());
    let single = e(listwise_softmax_loss(&[1.7], &[], 5.0))?;
    ensure(single.abs() < 1e-12, format!("single positive loss {single}"))?;
    let ln4 = e(listwise_softmax_loss(&[0.3], &[0.3, 0.3, 0.3], 5.0))?;
    ensure((ln4 - 4f64.ln()).abs() < 1e-9, format!("equal-score loss {ln4}"))?;
    let pos = [0.4, -1.2];
    let neg = [2.0, 0.1, -0.7];
    let base = e(listwise_softmax_loss(&pos, &neg, 5.0))?;
    for shift in [-100.0, -3.5, 0.25, 42.0] {
        let p: Vec<f64> = pos.iter().map(|s| s + shift).collect();
        let n: Vec<f64> = neg.iter().map(|s| s + shift).collect();
        let shifted = e(listwise_softmax_loss(&p, &n, 5.0))?;
        ensure((shifted - base).abs() < 1e-9, format!("shift {shift} moved loss by {}", shifted - base))?;
    }
    let h3 = pairwise_hinge_loss(3.0, 0.0, 5.0);
    ensure(h3 == 2.0, format!("hinge at gap 3 = {h3}"))?;
    for gap in [5.0, 5.5, 9.0] {
        ensure(pairwise_hinge_loss(gap, 0.0, 5.0) == 0.0, format!("hinge at gap {gap} nonzero"))?;
    }
    Ok(format!("single 0, equal scores {ln4:.12} (ln 4), shift-invariant, hinge 2/0"))
}

fn desk_catalog(n_og: usize, n_gm: usize) -> Catalog {
    let mut items = Vec::new();
    for i in 0..n_og {
        items.push(item(&format!("og{i}"), &format!("Food {}", i % 7), Segment::Og));
    }
    for i in 0..n_gm {
        items.push(item(&format!("gm{i}"), &format!("Tool {}", i % 5), Segment::Gm));
    }
    Catalog::new(items).unwrap()
}

fn random_cart(rng: &mut ChaCha8Rng, catalog: &Catalog, n: usize) -> CartState {
    let ids: Vec<&ItemRecord> = catalog.items().iter().collect();
    let persona: Vec<f64> = (0..PERSONA_DIM).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut cart = CartState::new("c", persona, Platform::Ios);
    for t in 0..n {
        let it = ids[rng.gen_range(0..ids.len())];
        cart.entries.push(CartEntry {
            item_id: it.item_id.clone(),
            ts: t as u64,
        });
    }
    cart
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let catalog = desk_catalog(12, 12);
    let config = RankerConfig {
        seed: 3,
        ..RankerConfig::desk()
    };
    ensure(
        (config.title_dim, config.pt_dim, config.price_dim, config.type_dim, config.proj_dim, config.layers)
            == (32, 32, 4, 4, 32, 2),
        "desk profile dims changed",
    )?;
    let feats = FeatureTable::build(&catalog, &HashNgramEmbedder::new(config.embed_dim, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cart = random_cart(&mut rng, &catalog, 5);
    let cands = ["gm1", "gm4", "gm7", "gm9", "gm11"];
    let n_pos = 2;
    let weights: Vec<f64> = (0..cands.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (delta, tau) = (config.delta, config.tau);
    let mut model = RankerModel::new(config).map_err(|e| e.to_string())?;

    // objectives: weighted score sum, pairwise hinge, listwise softmax
    let objectives = |scores: &[f64]| -> [f64; 3] {
        let ws: f64 = scores.iter().zip(&weights).map(|(s, w)| s * w).sum();
        let mut hinge = 0.0;
        for p in &scores[..n_pos] {
            for n in &scores[n_pos..] {
                hinge += pairwise_hinge_loss(*p, *n, delta);
            }
        }
        hinge /= (n_pos * (scores.len() - n_pos)) as f64;
        let list = listwise_softmax_loss(&scores[..n_pos], &scores[n_pos..], tau).unwrap();
        [ws, hinge, list]
    };

    let mut analytic = Vec::new();
    for which in 0..3 {
        let mut s = Session::new(&model.params, true);
        let scores = model.score_graph(&mut s, &feats, &cart, &cands).map_err(|e| e.to_string())?;
        let out = match which {
            0 => {
                let w = s.g.constant(xp_core::nn::Tensor::new(vec![cands.len(), 1], weights.clone()).unwrap());
                let prod = s.g.mul(scores, w).map_err(|e| e.to_string())?;
                s.g.sum(prod)
            }
            1 => pairwise_graph(&mut s.g, scores, n_pos, delta).map_err(|e| e.to_string())?,
            _ => listwise_graph(&mut s.g, scores, n_pos, tau).map_err(|e| e.to_string())?,
        };
        let forward = s.g.value(out).data[0];
        let direct = objectives(&s.g.value(scores).data)[which];
        ensure((forward - direct).abs() < 1e-9, format!("graph objective {which} disagrees with direct formula"))?;
        analytic.push(s.grads(out).map_err(|e| e.to_string())?);
    }

    let eps = 1e-4;
    let ids: Vec<_> = model.params.ids().collect();
    let mut total = 0usize;
    let mut good = 0usize;
    let mut worst = 0.0f64;
    for (pi, id) in ids.iter().enumerate() {
        for j in 0..model.params.get(*id).data.len() {
            let orig = model.params.get(*id).data[j];
            model.params.get_mut(*id).data[j] = orig + eps;
            let up = objectives(&model.score_batch(&feats, &cart, &cands).map_err(|e| e.to_string())?);
            model.params.get_mut(*id).data[j] = orig - eps;
            let down = objectives(&model.score_batch(&feats, &cart, &cands).map_err(|e| e.to_string())?);
            model.params.get_mut(*id).data[j] = orig;
            for w in 0..3 {
                let numeric = (up[w] - down[w]) / (2.0 * eps);
                let a = analytic[w][pi].data[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                total += 1;
                if rel < 1e-4 {
                    good += 1;
                } else {
                    worst = worst.max(rel);
                }
            }
        }
    }
    let frac = good as f64 / total as f64;
    ensure(frac >= 0.99, format!("{:.2}% of gradients within 1e-4", 100.0 * frac))?;
    within(start.elapsed(), 60)?;
    Ok(format!(
        "{} params x 3 objectives, {:.2}% within rel 1e-4 (worst outlier {worst:.1e}); {:.1}s",
        model.param_count(),
        100.0 * frac,
        start.elapsed().as_secs_f64()
    ))
}

// --- ranking benchmark ----------------------------------------------------

struct AblationOutcome {
    ordering: Outcome,
    cart_size: Outcome,
}

fn ablation_checks() -> AblationOutcome {
    let start = Instant::now();
    let run = || -> Result<_, String> {
        let base = bench_ranker_config();
        let bench = planted_benchmark(&SynthConfig::default(), base.embed_dim).map_err(|e| e.to_string())?;
        let grid = AblationSpec::grid();
        let specs = vec![grid[0].clone(), grid[3].clone(), grid[4].clone()];
        ablation(
            &bench.train,
            &bench.test,
            &bench.feats,
            &bench.world.catalog,
            &bench.world.truth.persona_map,
            &base,
            &specs,
            &BENCH_SEEDS,
            &[4],
        )
        .map_err(|e| e.to_string())
    };
    let result = match run() {
        Ok(r) => r,
        Err(e) => {
            return AblationOutcome {
                ordering: Err(e.clone()),
                cart_size: Err(e),
            }
        }
    };
    let elapsed = start.elapsed();
    let (identity, pairwise, listwise) = (result.median_ndcg(0, 0), result.median_ndcg(1, 0), result.median_ndcg(2, 0));
    let baseline = result.median_baseline(0);
    let lift = (listwise - baseline) / baseline * 100.0;
    let detail = format!(
        "median NDCG@4 listwise {listwise:.4} >= pairwise {pairwise:.4} >= identity {identity:.4}; heuristic {baseline:.4}, lift {lift:+.1}%; {:.0}s",
        elapsed.as_secs_f64()
    );
    let ordering = ensure(listwise >= pairwise && pairwise >= identity, format!("ordering violated: {detail}"))
        .and_then(|_| ensure(lift >= 10.0, format!("lift below 10%: {detail}")))
        .and_then(|_| within(elapsed, 600))
        .map(|_| detail);

    let small = result.median_lift_where(2, 0, |n| n < 10);
    let big = result.median_lift_where(2, 0, |n| (10..=50).contains(&n));
    let detail = format!("median lift size 10-50 {big:+.1}% vs <10 {small:+.1}%");
    let cart_size = ensure(big >= small, detail.clone()).map(|_| detail);
    AblationOutcome { ordering, cart_size }
}

fn permutation_invariance() -> Outcome {
    let catalog = desk_catalog(30, 30);
    let config = RankerConfig {
        seed: 5,
        ..RankerConfig::desk()
    };
    let feats = FeatureTable::build(&catalog, &HashNgramEmbedder::new(config.embed_dim, 0));
    let model = RankerModel::new(config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cands: Vec<&str> = catalog
        .items()
        .iter()
        .filter(|i| i.segment == Segment::Gm)
        .map(|i| i.item_id.as_str())
        .take(8)
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=50);
        let cart = random_cart(&mut rng, &catalog, n);
        let before = model.score_batch(&feats, &cart, &cands).map_err(|e| e.to_string())?;
        let mut shuffled = cart.clone();
        shuffled.entries.shuffle(&mut rng);
        let after = model.score_batch(&feats, &shuffled, &cands).map_err(|e| e.to_string())?;
        for (a, b) in before.iter().zip(&after) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst < 1e-6, format!("max score change {worst:.2e}"))?;
    Ok(format!("100 carts, max score change {worst:.2e}"))
}

// --- pipeline -------------------------------------------------------------

fn run_xp(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_xp"))
        .arg("--dir")
        .arg(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("xp {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)),
    )
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn pipeline_determinism() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixtures = tmp.path().join("fixtures");
    let fixtures_s = fixtures.to_string_lossy().into_owned();
    let gen = ["gen", "--seed", "3", "--customers", "300", "--sessions", "400"];

    // record the model replies once, then replay them in every run
    let rec = tmp.path().join("record");
    run_xp(&rec, &gen)?;
    run_xp(&rec, &["mine"])?;
    run_xp(&rec, &["llm-run", "--anchors", "6", "--naive", "8", "--record", &fixtures_s])?;
    run_xp(&rec, &["retrieve", "--record", &fixtures_s])?;

    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        run_xp(&dir, &gen)?;
        run_xp(&dir, &["mine"])?;
        run_xp(&dir, &["llm-run", "--anchors", "6", "--naive", "8", "--fixtures", &fixtures_s])?;
        run_xp(&dir, &["retrieve", "--fixtures", &fixtures_s])?;
        run_xp(&dir, &["train", "--epochs", "1", "--seed", "2"])?;
        run_xp(&dir, &["eval"])?;
        snaps.push(snapshot(&dir)?);
    }
    let (a, b) = (&snaps[0], &snaps[1]);
    ensure(a.len() >= 10, format!("only {} artifacts produced", a.len()))?;
    ensure(
        a.keys().eq(b.keys()),
        format!("artifact sets differ: {:?} vs {:?}", a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>()),
    )?;
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure(differing.is_empty(), format!("files differ: {differing:?}"))?;
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok(format!(
        "{} artifacts ({bytes} bytes) identical across two runs; {:.1}s",
        a.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn scoring_banding() -> Outcome {
    let e = |x: xp_core::Result<f64>| x.map_err(|e| e.to_string());
    for (ce, llm) in [(0.0, 1.0), (0.8, 0.5), (0.37, 0.91), (1.0, 1.0), (0.123456789, 0.987654321)] {
        let c = e(combined_score(ce, llm))?;
        ensure(c == ce * llm, format!("combined({ce}, {llm}) = {c}"))?;
    }
    ensure(combined_score(1.2, 0.5).is_err() && combined_score(0.5, -0.1).is_err(), "out-of-range input accepted")?;
    let cases = [
        (0.0, QualityBand::Poor),
        (0.3999999, QualityBand::Poor),
        (0.4, QualityBand::Fair),
        (0.4999999, QualityBand::Fair),
        (0.5, QualityBand::Good),
        (0.6, QualityBand::VeryGood),
        (0.7, QualityBand::Excellent),
        (1.0, QualityBand::Excellent),
    ];
    for (s, want) in cases {
        let got = band(s).map_err(|e| e.to_string())?;
        ensure(got == want, format!("band({s}) = {got}, want {want}"))?;
    }
    let rec = |name: &str, s: Option<f64>| LlmRecommendation {
        anchor_item_id: "a".into(),
        theme_label: "t".into(),
        rec_text: name.into(),
        explanation: String::new(),
        gen_score: s,
    };
    let recs = vec![
        rec("below", Some(0.39)),
        rec("edge", Some(0.40)),
        rec("above", Some(0.41)),
        rec("just below", Some(0.3999999999)),
        rec("top", Some(1.0)),
    ];
    let kept: Vec<String> = filter_generated(recs, DEFAULT_GEN_THRESHOLD).into_iter().map(|r| r.rec_text).collect();
    ensure(kept == ["edge", "above", "top"], format!("filter kept {kept:?}"))?;
    Ok("combined = ce*llm; bands at 0.4/0.5/0.6/0.7; filter keeps 0.40, drops < 0.40".into())
}

fn pool_fuzzing() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let catalog = Arc::new(desk_catalog(60, 600));
    let og: Vec<String> = (0..60).map(|i| format!("og{i}")).collect();
    let gm: Vec<String> = (0..600).map(|i| format!("gm{i}")).collect();
    let mut cands = Vec::new();
    for a in &og {
        for _ in 0..45 {
            let it = gm[rng.gen_range(0..gm.len())].clone();
            let mut c = ScoredCandidate::mba(a.clone(), it, rng.gen_range(1.0..5.0));
            c.set_scores(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)).unwrap();
            cands.push(c);
        }
    }
    let engine = Engine::new(catalog, XpIndex::new(cands), EngineOptions::default());
    let mut events = 0usize;
    let mut restores = 0usize;
    let mut max_pool = 0usize;
    for seq in 0..1000 {
        let cart_id = format!("cart{seq}");
        let mut ts = 0u64;
        let mut contents: Vec<String> = Vec::new();
        for _ in 0..rng.gen_range(1..=30) {
            ts += 1;
            let remove = !contents.is_empty() && rng.gen_bool(0.3);
            let event = if remove {
                let id = contents.swap_remove(rng.gen_range(0..contents.len()));
                CartEvent::remove(id, ts)
            } else {
                let pool = if rng.gen_bool(0.85) { &og } else { &gm };
                let id = pool[rng.gen_range(0..pool.len())].clone();
                contents.push(id.clone());
                CartEvent::add(id, ts)
            };
            let before = engine.cart(&cart_id).ok().map(|s| s.pool);
            let snap = engine.on_cart_event(&cart_id, &event).map_err(|e| e.to_string())?;
            events += 1;
            snap.pool.check_invariants().map_err(|e| format!("sequence {seq}: {e}"))?;
            ensure(snap.pool.len() <= POOL_CAP, "pool over cap")?;
            ensure(
                snap.pool.per_anchor_counts.values().all(|&n| n <= TOP_PER_ANCHOR),
                "anchor over its share",
            )?;
            max_pool = max_pool.max(snap.pool.len());

            if !remove && rng.gen_bool(0.3) {
                // undo the add and compare against the pool from before it
                ts += 1;
                let id = contents.pop().unwrap();
                let undone = engine.on_cart_event(&cart_id, &CartEvent::remove(id, ts)).map_err(|e| e.to_string())?;
                events += 1;
                let prior = before.unwrap_or_else(|| xp_core::serving::CandidatePool::empty(cart_id.clone()));
                ensure(undone.pool == prior, format!("sequence {seq}: remove after add did not restore the pool"))?;
                restores += 1;
            }
        }
    }
    ensure(max_pool == POOL_CAP, format!("fuzzing never reached the cap (max {max_pool})"))?;
    Ok(format!(
        "1000 sequences, {events} events, {restores} add/remove restores, max pool {max_pool}; {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn ndcg_oracle() -> Outcome {
    fn permutations(v: &[usize]) -> Vec<Vec<usize>> {
        if v.len() <= 1 {
            return vec![v.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..v.len() {
            let mut rest = v.to_vec();
            let x = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }
    let dcg = |rel: &[bool], k: usize| -> f64 {
        rel.iter()
            .take(k)
            .enumerate()
            .map(|(i, &r)| if r { 1.0 / (i as f64 + 2.0).log2() } else { 0.0 })
            .sum()
    };
    let mut cases = 0usize;
    for n in 1..=6usize {
        let ids: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
        let orders = permutations(&(0..n).collect::<Vec<_>>());
        for mask in 0u32..(1 << n) {
            let is_rel: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let relevant: BTreeSet<String> = (0..n).filter(|&i| is_rel[i]).map(|i| ids[i].clone()).collect();
            // best DCG over every ordering of the items, per cutoff
            let ideal: Vec<f64> = (0..=n + 1)
                .map(|k| {
                    orders
                        .iter()
                        .map(|p| dcg(&p.iter().map(|&i| is_rel[i]).collect::<Vec<_>>(), k))
                        .fold(0.0, f64::max)
                })
                .collect();
            for order in &orders {
                let ranked: Vec<&str> = order.iter().map(|&i| ids[i].as_str()).collect();
                let rel: Vec<bool> = order.iter().map(|&i| is_rel[i]).collect();
                for k in 1..=n + 1 {
                    let want = if ideal[k] > 0.0 { dcg(&rel, k) / ideal[k] } else { 0.0 };
                    let got = ndcg_at_k(&ranked, &relevant, k);
                    ensure((got - want).abs() < 1e-12, format!("{ranked:?} k={k}: {got} vs {want}"))?;
                    cases += 1;
                }
            }
        }
    }
    let relevant: BTreeSet<String> = ["pos".to_string()].into();
    let worked = ndcg_at_k(&["neg", "pos"], &relevant, 2);
    ensure((worked - 0.63093).abs() < 1e-5, format!("[neg, pos]@2 = {worked}"))?;
    Ok(format!("{cases} rankings match the permutation oracle; [neg, pos]@2 = {worked:.5}"))
}

fn main() {
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("lift/support/confidence oracle", Box::new(lift_oracle)),
        ("planted-pair recovery", Box::new(planted_recovery)),
        ("loss identities", Box::new(loss_identities)),
        ("gradient correctness", Box::new(gradient_check)),
        ("permutation invariance", Box::new(permutation_invariance)),
        ("pipeline determinism", Box::new(pipeline_determinism)),
        ("scoring and banding", Box::new(scoring_banding)),
        ("pool fuzzing", Box::new(pool_fuzzing)),
        ("ndcg oracle", Box::new(ndcg_oracle)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str()));

    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL  {name}: {detail}");
        }
    };
    for (name, check) in &checks {
        if wanted(name) {
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
                .unwrap_or_else(|_| Err("panicked".into()));
            report(name, outcome);
        }
    }
    if wanted("architecture/loss ordering") || wanted("cart-size behavior") {
        let a = ablation_checks();
        report("architecture/loss ordering", a.ordering);
        report("cart-size behavior", a.cart_size);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
