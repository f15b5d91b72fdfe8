use std::io;

use thiserror::Error;

pub type Result<T, E = XpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum XpError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("duplicate item id `{0}`")]
    DuplicateItemId(String),

    #[error("unknown segment `{0}` (expected OG or GM)")]
    UnknownSegment(String),

    #[error("unknown product type `{0}`")]
    UnknownProductType(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("no baskets to mine")]
    EmptyBaskets,

    #[error("threshold {name}={value} outside [0, 1]")]
    ThresholdOutOfRange { name: &'static str, value: f64 },

    #[error("item `{0}` is not an OG anchor")]
    NotAnchor(String),

    #[error("llm transport error: {0}")]
    LlmTransport(String),

    #[error("malformed llm output: {0}")]
    LlmMalformedOutput(String),

    #[error("recs/explanations length mismatch: {recs} recs vs {explanations} explanations")]
    LengthMismatch { recs: usize, explanations: usize },

    #[error("missing fixture for prompt hash {0}")]
    MissingFixture(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("model dimension {dim} not divisible by {heads} heads")]
    BadHeadCount { dim: usize, heads: usize },

    #[error("backward called on a non-scalar tensor of shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("computation graph contains a cycle")]
    GraphCycle,

    #[error("cart is empty")]
    EmptyCart,

    #[error("positive set is empty")]
    EmptyPositives,

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("stratified sample target must be positive")]
    TargetNonPositive,

    #[error("unknown cart `{0}`")]
    UnknownCart(String),

    #[error("ranker model is not loaded")]
    ModelUnavailable,

    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("invalid embedding store file: {0}")]
    BadStore(String),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl XpError {
    /// Stable short code used by the HTTP API and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            XpError::Io(_) => "io",
            XpError::MalformedRecord { .. } => "malformed_record",
            XpError::DuplicateItemId(_) => "duplicate_item_id",
            XpError::UnknownSegment(_) => "unknown_segment",
            XpError::UnknownProductType(_) => "unknown_product_type",
            XpError::UnknownItem(_) => "unknown_item",
            XpError::EmptyBaskets => "empty_baskets",
            XpError::ThresholdOutOfRange { .. } => "threshold_out_of_range",
            XpError::NotAnchor(_) => "not_anchor",
            XpError::LlmTransport(_) => "llm_transport",
            XpError::LlmMalformedOutput(_) => "llm_malformed_output",
            XpError::LengthMismatch { .. } => "length_mismatch",
            XpError::MissingFixture(_) => "missing_fixture",
            XpError::DimensionMismatch { .. } => "dimension_mismatch",
            XpError::OutOfRange(_) => "out_of_range",
            XpError::ShapeMismatch(_) => "shape_mismatch",
            XpError::BadHeadCount { .. } => "bad_head_count",
            XpError::NotScalar(_) => "not_scalar",
            XpError::GraphCycle => "graph_cycle",
            XpError::EmptyCart => "empty_cart",
            XpError::EmptyPositives => "empty_positives",
            XpError::NonFiniteLoss { .. } => "non_finite_loss",
            XpError::EmptyTestSet => "empty_test_set",
            XpError::TargetNonPositive => "target_non_positive",
            XpError::UnknownCart(_) => "unknown_cart",
            XpError::ModelUnavailable => "model_unavailable",
            XpError::BadCheckpoint(_) => "bad_checkpoint",
            XpError::BadStore(_) => "bad_store",
            XpError::ConfigInvalid(_) => "config_invalid",
            XpError::Json(_) => "json",
            XpError::Csv(_) => "csv",
        }
    }
}
