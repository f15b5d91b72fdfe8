use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use xp_core::basket::{
    build_baskets, copurchase_candidates, mine_pt_associations, popularity_from_transactions, read_rules_csv,
    read_transactions, write_rules_csv, DEFAULT_MIN_CONFIDENCE, DEFAULT_MIN_SUPPORT, DEFAULT_WINDOW_DAYS,
};
use xp_core::bench::{bench_ranker_config, planted_recall, split_examples, BENCH_SEEDS, LABEL_SEED, NEG_PER_POS, RECALL_TOP, TEST_FRACTION};
use xp_core::catalog::{load_catalog, Catalog, Segment};
use xp_core::llm::{
    evaluate_generation, naive_generate, ChatClient, FixtureChatClient, HttpChatClient, JudgeCache, LlmRecommendation,
    RecordingChatClient, Theme,
};
use xp_core::ranker::{
    ablation, ablation_table, evaluate, label_sessions, read_examples, read_personas, read_sessions, train,
    write_examples, AblationSpec, EncoderKind, FeatureTable, LossKind, RankerConfig, RankerModel, CART_BUCKETS,
};
use xp_core::retrieval::report::{band_distribution, leaderboard, quality_comparison, score_disagreement, worst_recommendations, Metric};
use xp_core::retrieval::{
    build_store, generation_stage, retrieval_stage, EmbeddingCrossScorer, HashNgramEmbedder,
    PipelineConfig, PipelineDeps, PopularPeers, ScoredCandidate,
};
use xp_core::serving::http::{serve, ServeConfig};
use xp_core::serving::DEFAULT_MAX_PER_PT;
use xp_core::synth::{generate, SynthConfig, SyntheticChatClient, Truth, CATALOG_FILE, PERSONAS_FILE, SESSIONS_FILE, TRANSACTIONS_FILE, TRUTH_FILE};
use xp_core::table::{f4, signed_pct, Table};
use xp_core::{Result, XpError};

const RULES_FILE: &str = "rules.csv";
const THEMES_FILE: &str = "themes.jsonl";
const RECS_FILE: &str = "recs.jsonl";
const NAIVE_FILE: &str = "naive.jsonl";
const STORE_FILE: &str = "store.xpes";
const EVALUATED_FILE: &str = "evaluated.jsonl";
const CANDIDATES_FILE: &str = "candidates.jsonl";
const TRAIN_FILE: &str = "train.jsonl";
const TEST_FILE: &str = "test.jsonl";
const MODEL_FILE: &str = "model.xpnn";
const KS: [usize; 3] = [2, 4, 6];
/// Co-purchase candidates kept per rule's rec PT.
const MBA_PER_PT: usize = 5;
const DEFAULT_MIN_LIFT: f64 = 2.0;

#[derive(Parser)]
#[command(name = "xp", version, about = "Cross-category recommendation toolkit")]
struct Cli {
    /// Working directory holding inputs and artifacts.
    #[arg(long, global = true, default_value = "xp-out")]
    dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic world with planted cross-category pairs.
    Gen(GenArgs),
    /// Mine OG -> GM product-type association rules.
    Mine(MineArgs),
    /// Generate themes and recommendations with the LLM agents.
    LlmRun(LlmRunArgs),
    /// Build the embedding store, retrieve and judge candidates.
    Retrieve(RetrieveArgs),
    /// Band distributions, leaderboards and disagreement tables.
    Report(ReportArgs),
    /// Label sessions and train the cart ranker.
    Train(TrainArgs),
    /// Evaluate the trained ranker, or mined rules with --rules.
    Eval(EvalArgs),
    /// Architecture and loss ablation grid.
    Ablate(AblateArgs),
    /// Run the recommendation HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenArgs {
    /// TOML file with SynthConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    customers: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS)]
    window_days: u32,
    #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
    min_support: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_CONFIDENCE)]
    min_confidence: f64,
    /// Rows in the printed top-rules table.
    #[arg(long, default_value_t = RECALL_TOP)]
    top: usize,
}

#[derive(Args, Clone)]
struct LlmArgs {
    /// Replay recorded replies from this fixture directory.
    #[arg(long, conflicts_with = "live")]
    fixtures: Option<PathBuf>,
    /// Call the endpoint named by XP_LLM_URL / XP_LLM_KEY / XP_LLM_MODEL.
    #[arg(long)]
    live: bool,
    /// Store every reply as a fixture in this directory.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    llm_seed: u64,
}

#[derive(Args)]
struct LlmRunArgs {
    #[command(flatten)]
    llm: LlmArgs,
    /// Limit to the first N OG anchors (0 = all).
    #[arg(long, default_value_t = 0)]
    anchors: usize,
    /// Also run the single-prompt generator with this many recommendations.
    #[arg(long, default_value_t = 0)]
    naive: usize,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    llm: LlmArgs,
    /// Rules at or below this lift do not feed co-purchase candidates.
    #[arg(long, default_value_t = DEFAULT_MIN_LIFT)]
    min_lift: f64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Identity,
    Bilstm,
    Transformer,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Pairwise,
    Listwise,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    #[arg(long, value_enum)]
    encoder: Option<EncoderArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    no_cross: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Score mined rules against the planted pairs instead of the ranker.
    #[arg(long)]
    rules: bool,
    #[arg(long, default_value_t = RECALL_TOP)]
    top: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_values_t = BENCH_SEEDS.to_vec())]
    seeds: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    /// TOML service config. Without it, artifacts are taken from --dir.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let is_serve = matches!(cli.cmd, Cmd::Serve(_));
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if is_serve && matches!(e, XpError::BadCheckpoint(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<Value> {
    let dir = cli.dir;
    match cli.cmd {
        Cmd::Gen(a) => cmd_gen(&dir, a),
        Cmd::Mine(a) => cmd_mine(&dir, a),
        Cmd::LlmRun(a) => cmd_llm_run(&dir, a),
        Cmd::Retrieve(a) => cmd_retrieve(&dir, a),
        Cmd::Report(a) => cmd_report(&dir, a),
        Cmd::Train(a) => cmd_train(&dir, a),
        Cmd::Eval(a) => cmd_eval(&dir, a),
        Cmd::Ablate(a) => cmd_ablate(&dir, a),
        Cmd::Serve(a) => cmd_serve(&dir, a),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| XpError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Catalog with popularity counted from the transaction log when present.
fn load_world_catalog(dir: &Path) -> Result<Catalog> {
    let catalog = load_catalog(&dir.join(CATALOG_FILE))?;
    let tx = dir.join(TRANSACTIONS_FILE);
    if tx.exists() {
        Ok(catalog.with_popularity(popularity_from_transactions(&read_transactions(&tx)?)))
    } else {
        Ok(catalog)
    }
}

fn load_truth(dir: &Path) -> Result<Truth> {
    Truth::read(&dir.join(TRUTH_FILE))
}

fn chat_client(dir: &Path, a: &LlmArgs) -> Result<Box<dyn ChatClient>> {
    let base: Box<dyn ChatClient> = if let Some(f) = &a.fixtures {
        Box::new(FixtureChatClient::new(f))
    } else if a.live {
        Box::new(HttpChatClient::from_env()?)
    } else {
        Box::new(SyntheticChatClient::new(load_truth(dir)?))
    };
    Ok(match &a.record {
        Some(r) => Box::new(RecordingChatClient::new(base, r)?),
        None => base,
    })
}

fn pipeline_config(a: &LlmArgs) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.llm.seed = a.llm_seed;
    cfg
}

fn og_anchors(catalog: &Catalog, limit: usize) -> Vec<&xp_core::catalog::ItemRecord> {
    let all = catalog.items().iter().filter(|i| i.segment == Segment::Og);
    if limit == 0 {
        all.collect()
    } else {
        all.take(limit).collect()
    }
}

fn cmd_gen(dir: &Path, a: GenArgs) -> Result<Value> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str(&fs::read_to_string(p)?).map_err(|e| XpError::ConfigInvalid(e.to_string()))?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.customers {
        cfg.n_customers = v;
    }
    if let Some(v) = a.pairs {
        cfg.n_planted_pairs = v;
    }
    if let Some(v) = a.sessions {
        cfg.n_sessions = v;
    }
    let world = generate(&cfg)?;
    world.write_dir(dir)?;
    Ok(json!({
        "cmd": "gen",
        "dir": dir,
        "items": world.catalog.len(),
        "transactions": world.transactions.len(),
        "session_events": world.sessions.len(),
        "customers": world.personas.len(),
        "planted_pairs": world.truth.planted.len(),
    }))
}

fn rules_table(rules: &[xp_core::basket::AssociationRule], top: usize) -> Table {
    let mut t = Table::new(
        format!("Top {top} OG -> GM rules by lift"),
        &["Anchor PT", "Rec PT", "Support", "Confidence", "Lift"],
    );
    for r in rules.iter().take(top) {
        t.push(vec![
            r.anchor_pt.clone(),
            r.rec_pt.clone(),
            format!("{:.5}", r.support),
            f4(r.confidence),
            f4(r.lift),
        ]);
    }
    t
}

fn cmd_mine(dir: &Path, a: MineArgs) -> Result<Value> {
    let catalog = load_world_catalog(dir)?;
    let tx = read_transactions(&dir.join(TRANSACTIONS_FILE))?;
    let baskets = build_baskets(&tx, a.window_days);
    let rules = mine_pt_associations(&baskets, &catalog, a.min_support, a.min_confidence)?;
    write_rules_csv(&dir.join(RULES_FILE), &rules)?;
    rules_table(&rules, a.top).write_both(dir, "rules_top")?;
    Ok(json!({
        "cmd": "mine",
        "baskets": baskets.len(),
        "rules": rules.len(),
        "top_lift": rules.first().map(|r| r.lift),
        "artifact": dir.join(RULES_FILE),
    }))
}

fn cmd_llm_run(dir: &Path, a: LlmRunArgs) -> Result<Value> {
    let catalog = load_world_catalog(dir)?;
    let client = chat_client(dir, &a.llm)?;
    let cfg = pipeline_config(&a.llm);
    let mut themes: Vec<Theme> = Vec::new();
    let mut recs: Vec<LlmRecommendation> = Vec::new();
    let mut naive: Vec<LlmRecommendation> = Vec::new();
    let mut failed = 0usize;
    let anchors = og_anchors(&catalog, a.anchors);
    for anchor in &anchors {
        match generation_stage(anchor, client.as_ref(), &cfg) {
            Ok((t, r)) => {
                themes.extend(t);
                recs.extend(r);
            }
            Err(e) => {
                log::warn!("generation failed for {}: {e}", anchor.item_id);
                failed += 1;
            }
        }
        if a.naive > 0 {
            match naive_generate(anchor, client.as_ref(), a.naive, &cfg.llm) {
                Ok(mut r) => {
                    for rec in r.iter_mut() {
                        if let Err(e) = evaluate_generation(rec, anchor, client.as_ref(), &cfg.llm) {
                            log::warn!("naive rec `{}` unscored: {e}", rec.rec_text);
                        }
                    }
                    naive.extend(r);
                }
                Err(e) => log::warn!("naive generation failed for {}: {e}", anchor.item_id),
            }
        }
    }
    write_jsonl(&dir.join(THEMES_FILE), &themes)?;
    write_jsonl(&dir.join(RECS_FILE), &recs)?;
    if a.naive > 0 {
        write_jsonl(&dir.join(NAIVE_FILE), &naive)?;
    }
    let kept = recs.iter().filter(|r| r.gen_score.map_or(false, |s| s >= cfg.gen_threshold)).count();
    Ok(json!({
        "cmd": "llm-run",
        "anchors": anchors.len(),
        "failed_anchors": failed,
        "themes": themes.len(),
        "recs": recs.len(),
        "recs_kept": kept,
        "naive_recs": naive.len(),
    }))
}

fn cmd_retrieve(dir: &Path, a: RetrieveArgs) -> Result<Value> {
    let catalog = load_world_catalog(dir)?;
    let client = chat_client(dir, &a.llm)?;
    let cfg = pipeline_config(&a.llm);
    let embedder = HashNgramEmbedder::default();
    let store = build_store(&catalog, &embedder);
    store.save(&dir.join(STORE_FILE))?;
    let rules_path = dir.join(RULES_FILE);
    let mut rules = if rules_path.exists() { read_rules_csv(&rules_path)? } else { Vec::new() };
    rules.retain(|r| r.lift > a.min_lift);
    let mba = copurchase_candidates(&rules, &catalog, MBA_PER_PT);
    let cross = EmbeddingCrossScorer::new(&embedder);
    let similar = PopularPeers::new(&catalog);
    let judge_cache = JudgeCache::new();
    let deps = PipelineDeps {
        catalog: &catalog,
        store: &store,
        embedder: &embedder,
        cross: &cross,
        chat: client.as_ref(),
        similar: &similar,
        judge_cache: &judge_cache,
        mba: &mba,
    };
    let recs: Vec<LlmRecommendation> = read_jsonl(&dir.join(RECS_FILE))?;
    let mut by_anchor: BTreeMap<&str, Vec<LlmRecommendation>> = BTreeMap::new();
    for r in &recs {
        by_anchor.entry(r.anchor_item_id.as_str()).or_default().push(r.clone());
    }
    let mut evaluated: Vec<ScoredCandidate> = Vec::new();
    let mut candidates: Vec<ScoredCandidate> = Vec::new();
    // anchors in catalog order so artifacts do not depend on map layout
    for anchor in og_anchors(&catalog, 0) {
        let Some(rs) = by_anchor.get(anchor.item_id.as_str()) else {
            continue;
        };
        let (ev, cands) = retrieval_stage(anchor, rs, &deps, &cfg)?;
        evaluated.extend(ev);
        candidates.extend(cands);
    }
    write_jsonl(&dir.join(EVALUATED_FILE), &evaluated)?;
    write_jsonl(&dir.join(CANDIDATES_FILE), &candidates)?;
    Ok(json!({
        "cmd": "retrieve",
        "store_items": store.len(),
        "anchors": by_anchor.len(),
        "evaluated": evaluated.len(),
        "candidates": candidates.len(),
        "judge_cache": judge_cache.len(),
    }))
}

fn cmd_report(dir: &Path, a: ReportArgs) -> Result<Value> {
    let catalog = load_world_catalog(dir)?;
    let evaluated: Vec<ScoredCandidate> = read_jsonl(&dir.join(EVALUATED_FILE))?;
    let mut written = vec!["bands", "leaderboard_ce", "leaderboard_llm", "leaderboard_combined", "disagreement", "worst"];
    band_distribution(&evaluated, &catalog).write_both(dir, "bands")?;
    leaderboard(&evaluated, &catalog, Metric::Ce, a.top).write_both(dir, "leaderboard_ce")?;
    leaderboard(&evaluated, &catalog, Metric::Llm, a.top).write_both(dir, "leaderboard_llm")?;
    leaderboard(&evaluated, &catalog, Metric::Combined, a.top).write_both(dir, "leaderboard_combined")?;
    score_disagreement(&evaluated, &catalog, a.top).write_both(dir, "disagreement")?;
    worst_recommendations(&evaluated, &catalog, a.top).write_both(dir, "worst")?;
    let naive_path = dir.join(NAIVE_FILE);
    if naive_path.exists() {
        let naive: Vec<LlmRecommendation> = read_jsonl(&naive_path)?;
        let theme: Vec<LlmRecommendation> = read_jsonl(&dir.join(RECS_FILE))?;
        quality_comparison(&naive, &theme, &catalog).write_both(dir, "naive_vs_theme")?;
        written.push("naive_vs_theme");
    }
    Ok(json!({ "cmd": "report", "candidates": evaluated.len(), "tables": written }))
}

fn ranker_config(a: &TrainArgs) -> RankerConfig {
    let mut cfg = match a.profile {
        Profile::Desk => bench_ranker_config(),
        Profile::Paper => RankerConfig::paper(),
    };
    if let Some(e) = a.encoder {
        cfg.encoder = match e {
            EncoderArg::Identity => EncoderKind::Identity,
            EncoderArg::Bilstm => EncoderKind::Bilstm,
            EncoderArg::Transformer => EncoderKind::Transformer,
        };
    }
    if let Some(l) = a.loss {
        cfg.loss = match l {
            LossArg::Pairwise => LossKind::PairwiseHinge,
            LossArg::Listwise => LossKind::ListwiseSoftmax,
        };
    }
    if a.no_cross {
        cfg.cross_attention = false;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    cfg.seed = a.seed;
    cfg
}

/// Labels sessions into train/test example files unless they already exist.
fn ensure_examples(dir: &Path, catalog: &Catalog) -> Result<(Vec<xp_core::ranker::TrainingExample>, Vec<xp_core::ranker::TrainingExample>)> {
    let (tr, te) = (dir.join(TRAIN_FILE), dir.join(TEST_FILE));
    if tr.exists() && te.exists() {
        return Ok((read_examples(&tr)?, read_examples(&te)?));
    }
    let sessions = read_sessions(&dir.join(SESSIONS_FILE))?;
    let personas = read_personas(&dir.join(PERSONAS_FILE))?;
    let horizon = load_truth(dir).map_or(7, |t| t.config.horizon_days);
    let examples = label_sessions(&sessions, catalog, &personas, horizon, NEG_PER_POS, LABEL_SEED);
    let (train_set, test) = split_examples(examples, TEST_FRACTION);
    write_examples(&tr, &train_set)?;
    write_examples(&te, &test)?;
    Ok((train_set, test))
}

fn features(catalog: &Catalog, cfg: &RankerConfig) -> FeatureTable {
    FeatureTable::build(catalog, &HashNgramEmbedder::new(cfg.embed_dim, 0))
}

fn cmd_train(dir: &Path, a: TrainArgs) -> Result<Value> {
    let catalog = load_world_catalog(dir)?;
    let cfg = ranker_config(&a);
    let (train_set, test) = ensure_examples(dir, &catalog)?;
    let feats = features(&catalog, &cfg);
    let (model, report) = train(&train_set, &feats, &cfg)?;
    model.save(&dir.join(MODEL_FILE))?;
    fs::write(dir.join("train_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(json!({
        "cmd": "train",
        "train_examples": train_set.len(),
        "test_examples": test.len(),
        "params": report.param_count,
        "first_loss": report.epoch_losses.first(),
        "final_loss": report.epoch_losses.last(),
        "checkpoint": dir.join(MODEL_FILE),
    }))
}

fn cmd_eval(dir: &Path, a: EvalArgs) -> Result<Value> {
    if a.rules {
        let truth = load_truth(dir)?;
        let rules = read_rules_csv(&dir.join(RULES_FILE))?;
        let recall = planted_recall(&rules, &truth, a.top);
        let mut t = Table::new(format!("Planted pairs in top {} rules", a.top), &["Anchor PT", "Rec PT", "Strength", "Rank"]);
        for p in &truth.planted {
            let rank = rules.iter().position(|r| r.anchor_pt == p.anchor_pt && r.rec_pt == p.rec_pt);
            t.push(vec![
                p.anchor_pt.clone(),
                p.rec_pt.clone(),
                f4(p.strength),
                rank.map_or_else(|| "-".into(), |r| (r + 1).to_string()),
            ]);
        }
        t.write_both(dir, "planted_recall")?;
        return Ok(json!({ "cmd": "eval", "mode": "rules", "top": a.top, "recall": recall }));
    }
    let catalog = load_world_catalog(dir)?;
    let model = RankerModel::load(&dir.join(MODEL_FILE))?;
    let test = read_examples(&dir.join(TEST_FILE))?;
    let truth = load_truth(dir)?;
    let feats = features(&catalog, &model.config);
    let report = evaluate(&model, &feats, &catalog, &truth.persona_map, &test, &KS)?;
    report.overall_table("Ranker vs production heuristic").write_both(dir, "eval_overall")?;
    report.bucket_table().write_both(dir, "eval_cart_size")?;
    Ok(json!({
        "cmd": "eval",
        "mode": "ranker",
        "examples": report.n,
        "ndcg": KS.iter().zip(&report.model).map(|(k, v)| (format!("@{k}"), *v)).collect::<BTreeMap<_, _>>(),
        "baseline": KS.iter().zip(&report.baseline).map(|(k, v)| (format!("@{k}"), *v)).collect::<BTreeMap<_, _>>(),
        "lift_pct": KS.iter().zip(&report.lift).map(|(k, v)| (format!("@{k}"), *v)).collect::<BTreeMap<_, _>>(),
    }))
}

fn cmd_ablate(dir: &Path, a: AblateArgs) -> Result<Value> {
    let catalog = load_world_catalog(dir)?;
    let truth = load_truth(dir)?;
    let mut base = bench_ranker_config();
    if let Some(e) = a.epochs {
        base.epochs = e;
    }
    let (train_set, test) = ensure_examples(dir, &catalog)?;
    let feats = features(&catalog, &base);
    let specs = AblationSpec::grid();
    let result = ablation(&train_set, &test, &feats, &catalog, &truth.persona_map, &base, &specs, &a.seeds, &KS)?;
    ablation_table(&result).write_both(dir, "ablation")?;

    let full = specs.len() - 1;
    let mut headers = vec!["Cart Size".to_string()];
    headers.extend(KS.iter().map(|k| format!("Lift@{k} %")));
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut t = Table::new("Full model NDCG lift by cart size (median over seeds)", &h);
    for (bi, label) in CART_BUCKETS.iter().enumerate() {
        let mut row = vec![label.to_string()];
        for ki in 0..KS.len() {
            let in_bucket = move |n: usize| (n / 10).min(CART_BUCKETS.len() - 1) == bi;
            row.push(signed_pct(result.median_lift_where(full, ki, in_bucket)));
        }
        t.push(row);
    }
    t.write_both(dir, "ablation_cart_size")?;
    fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&result)? + "\n")?;
    let names: BTreeSet<String> = specs.iter().map(|s| format!("{} {}", s.name, s.loss)).collect();
    Ok(json!({
        "cmd": "ablate",
        "seeds": a.seeds,
        "models": names.len(),
        "median_ndcg4": (0..specs.len()).map(|s| result.median_ndcg(s, 1)).collect::<Vec<_>>(),
        "baseline_ndcg4": result.median_baseline(1),
    }))
}

fn cmd_serve(dir: &Path, a: ServeArgs) -> Result<Value> {
    let mut cfg = match &a.config {
        Some(p) => ServeConfig::load(p)?,
        None => ServeConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            catalog: dir.join(CATALOG_FILE),
            candidates: dir.join(CANDIDATES_FILE),
            checkpoint: dir.join(MODEL_FILE),
            store: dir.join(STORE_FILE),
            personas: Some(dir.join(PERSONAS_FILE)).filter(|p| p.exists()),
            persona_map: Some(dir.join(TRUTH_FILE)).filter(|p| p.exists()),
            event_log: None,
            max_per_pt: DEFAULT_MAX_PER_PT,
            seed: 0,
            exclude_cart_pts: false,
            cors_origins: Vec::new(),
        },
    };
    if let Some(c) = a.checkpoint {
        cfg.checkpoint = c;
    }
    if let Some(p) = a.port {
        cfg.port = p;
    }
    if !cfg.checkpoint.exists() {
        return Err(XpError::BadCheckpoint(format!("{} not found", cfg.checkpoint.display())));
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(cfg.clone()))?;
    Ok(json!({ "cmd": "serve", "port": cfg.port, "status": "stopped" }))
}
