//! The planted ranking benchmark shared by the CLI and the test suites.

use crate::basket::{build_baskets, mine_pt_associations, AssociationRule, DEFAULT_MIN_CONFIDENCE, DEFAULT_MIN_SUPPORT, DEFAULT_WINDOW_DAYS};
use crate::error::Result;
use crate::ranker::{label_sessions, FeatureTable, RankerConfig, TrainingExample};
use crate::retrieval::HashNgramEmbedder;
use crate::synth::{generate, SynthConfig, SynthWorld, Truth};

/// Negatives kept per positive when labeling sessions.
pub const NEG_PER_POS: usize = 8;
pub const LABEL_SEED: u64 = 1;
pub const TEST_FRACTION: f64 = 0.25;
pub const BENCH_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Number of top rules searched for planted pairs.
pub const RECALL_TOP: usize = 40;

/// Desk-scale ranker settings used for the benchmark and `xp train`.
pub fn bench_ranker_config() -> RankerConfig {
    RankerConfig {
        epochs: 6,
        batch: 16,
        lr: 1e-3,
        ..RankerConfig::desk()
    }
}

/// Session-order split: the first part trains, the tail tests.
pub fn split_examples(mut examples: Vec<TrainingExample>, test_fraction: f64) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
    let n_test = ((examples.len() as f64) * test_fraction).round() as usize;
    let test = examples.split_off(examples.len() - n_test.min(examples.len()));
    (examples, test)
}

pub struct Benchmark {
    pub world: SynthWorld,
    pub train: Vec<TrainingExample>,
    pub test: Vec<TrainingExample>,
    pub feats: FeatureTable,
}

pub fn labeled_examples(world: &SynthWorld) -> Vec<TrainingExample> {
    label_sessions(
        &world.sessions,
        &world.catalog,
        &world.persona_lookup(),
        world.truth.config.horizon_days,
        NEG_PER_POS,
        LABEL_SEED,
    )
}

pub fn planted_benchmark(cfg: &SynthConfig, embed_dim: usize) -> Result<Benchmark> {
    let world = generate(cfg)?;
    let (train, test) = split_examples(labeled_examples(&world), TEST_FRACTION);
    let feats = FeatureTable::build(&world.catalog, &HashNgramEmbedder::new(embed_dim, 0));
    Ok(Benchmark {
        world,
        train,
        test,
        feats,
    })
}

/// Mines rules from the world's transactions at default thresholds.
pub fn mine_world(world: &SynthWorld) -> Result<Vec<AssociationRule>> {
    let baskets = build_baskets(&world.transactions, DEFAULT_WINDOW_DAYS);
    mine_pt_associations(&baskets, &world.catalog, DEFAULT_MIN_SUPPORT, DEFAULT_MIN_CONFIDENCE)
}

/// Fraction of planted pairs found among the first `top` rules.
pub fn planted_recall(rules: &[AssociationRule], truth: &Truth, top: usize) -> f64 {
    if truth.planted.is_empty() {
        return 1.0;
    }
    let head = &rules[..top.min(rules.len())];
    let hits = truth
        .planted
        .iter()
        .filter(|p| head.iter().any(|r| r.anchor_pt == p.anchor_pt && r.rec_pt == p.rec_pt))
        .count();
    hits as f64 / truth.planted.len() as f64
}
