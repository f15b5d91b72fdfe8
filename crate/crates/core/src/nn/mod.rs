//! Dense tensors with tape-based reverse-mode autodiff, attention layers,
//! a parameter store with Adam, and the XPNN checkpoint format.

mod graph;
mod layers;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var, LN_EPS};
pub use layers::{
    attention, cross_attention, self_attention, AttentionParams, BiLstm, LayerNorm, Linear, LstmCell,
    MultiHeadAttention, TransformerEncoder, TransformerLayer,
};
pub use params::{Adam, ParamId, ParamStore, Session, MAGIC, VERSION};
pub use tensor::Tensor;
