//! Cart-context neural ranker: item representations, cart encoders,
//! cross-attention fusion, MLP scorer, ranking losses, session labeling,
//! NDCG evaluation and the heuristic baseline.

mod data;
mod eval;
mod loss;
mod model;
mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XpError};

pub use data::{label_sessions, read_personas, read_sessions, write_personas, write_sessions, EventKind, SessionEvent};
pub use eval::{
    ablation, ablation_table, evaluate, heuristic_baseline_rank, heuristic_weight, ndcg_at_k, persona_affinity,
    AblationResult, AblationSpec, BucketRow, EvalReport, CART_BUCKETS,
};
pub use loss::{listwise_graph, listwise_softmax_loss, pairwise_graph, pairwise_hinge_loss};
pub use model::{FeatureTable, RankerModel};
pub use train::{train, TrainReport};

pub const PERSONA_DIM: usize = 64;

/// Category name -> persona indices whose mean is that category's affinity.
pub type PersonaMap = BTreeMap<String, Vec<usize>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Identity,
    Bilstm,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PairwiseHinge,
    ListwiseSoftmax,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::PairwiseHinge => "pairwise",
            LossKind::ListwiseSoftmax => "listwise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    #[default]
    Web,
    Ios,
    Android,
}

impl Platform {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Platform {
    type Err = XpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "web" => Ok(Platform::Web),
            "ios" => Ok(Platform::Ios),
            "android" => Ok(Platform::Android),
            other => Err(XpError::ConfigInvalid(format!("unknown platform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    /// Width of the text embeddings fed to the title/PT projections.
    pub embed_dim: usize,
    pub title_dim: usize,
    pub pt_dim: usize,
    pub price_dim: usize,
    pub type_dim: usize,
    pub proj_dim: usize,
    pub persona_in: usize,
    pub persona_dim: usize,
    pub platform_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_cart: usize,
    pub encoder: EncoderKind,
    pub cross_attention: bool,
    pub positional: bool,
    pub mlp_hidden: [usize; 2],
    pub loss: LossKind,
    pub delta: f64,
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl RankerConfig {
    pub fn paper() -> Self {
        RankerConfig {
            embed_dim: 768,
            title_dim: 768,
            pt_dim: 768,
            price_dim: 16,
            type_dim: 8,
            proj_dim: 128,
            persona_in: PERSONA_DIM,
            persona_dim: 128,
            platform_dim: 8,
            layers: 4,
            heads: 4,
            max_cart: 50,
            encoder: EncoderKind::Transformer,
            cross_attention: true,
            positional: false,
            mlp_hidden: [256, 64],
            loss: LossKind::ListwiseSoftmax,
            delta: 5.0,
            tau: 5.0,
            lr: 1e-3,
            epochs: 10,
            batch: 32,
            seed: 0,
        }
    }

    /// Small profile for desk-scale training and tests.
    pub fn desk() -> Self {
        RankerConfig {
            embed_dim: 64,
            title_dim: 32,
            pt_dim: 32,
            price_dim: 4,
            type_dim: 4,
            proj_dim: 32,
            persona_dim: 32,
            layers: 2,
            ..RankerConfig::paper()
        }
    }

    pub fn item_concat_dim(&self) -> usize {
        self.title_dim + self.pt_dim + self.price_dim + self.type_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.proj_dim % self.heads != 0 {
            return Err(XpError::BadHeadCount {
                dim: self.proj_dim,
                heads: self.heads,
            });
        }
        if self.max_cart == 0 {
            return Err(XpError::ConfigInvalid("max_cart must be at least 1".into()));
        }
        if self.tau <= 0.0 || self.batch == 0 {
            return Err(XpError::ConfigInvalid("tau and batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartEntry {
    pub item_id: String,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartState {
    pub cart_id: String,
    pub entries: Vec<CartEntry>,
    pub persona: Vec<f64>,
    #[serde(default)]
    pub platform: Platform,
}

impl CartState {
    pub fn new(cart_id: impl Into<String>, persona: Vec<f64>, platform: Platform) -> Self {
        CartState {
            cart_id: cart_id.into(),
            entries: Vec::new(),
            persona,
            platform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.persona.len() != PERSONA_DIM {
            return Err(XpError::DimensionMismatch {
                expected: PERSONA_DIM,
                got: self.persona.len(),
            });
        }
        if let Some(p) = self.persona.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(XpError::OutOfRange(*p));
        }
        Ok(())
    }

    /// The most recent `max_cart` entries, oldest first.
    pub fn recent(&self, max_cart: usize) -> &[CartEntry] {
        &self.entries[self.entries.len().saturating_sub(max_cart)..]
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.item_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub cart: CartState,
    pub positives: BTreeSet<String>,
    pub negatives: BTreeSet<String>,
    /// Candidate -> cart anchor item that surfaced it.
    #[serde(default)]
    pub anchors: BTreeMap<String, String>,
}

impl TrainingExample {
    /// Positives first, then negatives, each in id order.
    pub fn candidates(&self) -> Vec<&str> {
        self.positives
            .iter()
            .chain(&self.negatives)
            .map(String::as_str)
            .collect()
    }
}

pub fn write_examples(path: &std::path::Path, examples: &[TrainingExample]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples(path: &std::path::Path) -> Result<Vec<TrainingExample>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(XpError::from))
        .collect()
}
