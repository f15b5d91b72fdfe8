//! Cross-category recommendation toolkit: co-purchase mining, LLM-driven
//! candidate generation and judging, semantic retrieval, cart-aware neural
//! ranking, and a small serving layer.

pub mod basket;
pub mod bench;
pub mod catalog;
pub mod error;
pub mod llm;
pub mod nn;
pub mod ranker;
pub mod retrieval;
pub mod serving;
pub mod synth;
pub mod table;

pub use error::{Result, XpError};
