use rand_chacha::ChaCha8Rng;

use crate::error::{Result, XpError};

use super::graph::Var;
use super::params::{ParamId, ParamStore, Session};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let w = ps.xavier(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| ps.zeros(format!("{name}.b"), 1, fan_out));
        Linear { w, b }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.p(self.w);
        let y = s.g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = s.p(b);
                s.g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub dk: usize,
}

impl AttentionParams {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, dk: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionParams {
            wq: ps.xavier(format!("{name}.wq"), d, dk, rng),
            wk: ps.xavier(format!("{name}.wk"), d, dk, rng),
            wv: ps.xavier(format!("{name}.wv"), d, dk, rng),
            dk,
        }
    }
}

/// softmax((q W_Q)(kv W_K)^T / sqrt(d_k)) (kv W_V)
pub fn attention(s: &mut Session<'_>, q: Var, kv: Var, p: &AttentionParams) -> Result<Var> {
    let (wq, wk, wv) = (s.p(p.wq), s.p(p.wk), s.p(p.wv));
    let (dq, dkv) = (s.g.dims(q).1, s.g.dims(kv).1);
    let d = s.g.dims(wq).0;
    if dq != d || dkv != d {
        return Err(XpError::ShapeMismatch(format!(
            "attention expects width {d}, got query {dq} and context {dkv}"
        )));
    }
    let qh = s.g.matmul(q, wq)?;
    let kh = s.g.matmul(kv, wk)?;
    let vh = s.g.matmul(kv, wv)?;
    let kt = s.g.transpose(kh);
    let logits = s.g.matmul(qh, kt)?;
    let logits = s.g.scale(logits, 1.0 / (p.dk as f64).sqrt());
    let a = s.g.softmax_rows(logits);
    s.g.matmul(a, vh)
}

pub fn self_attention(s: &mut Session<'_>, x: Var, p: &AttentionParams) -> Result<Var> {
    attention(s, x, x, p)
}

/// Single query row attending over `context`.
pub fn cross_attention(s: &mut Session<'_>, r: Var, context: Var, p: &AttentionParams) -> Result<Var> {
    if s.g.dims(r).0 != 1 {
        return Err(XpError::ShapeMismatch("cross_attention query must be one row".into()));
    }
    attention(s, r, context, p)
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: ps.ones(format!("{name}.gamma"), 1, d),
            beta: ps.zeros(format!("{name}.beta"), 1, d),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let n = s.g.layernorm_rows(x);
        let (g, b) = (s.p(self.gamma), s.p(self.beta));
        let y = s.g.mul_row(n, g)?;
        s.g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: Vec<AttentionParams>,
    pub wo: Linear,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(XpError::BadHeadCount { dim: d, heads });
        }
        let dk = d / heads;
        let heads = (0..heads)
            .map(|h| AttentionParams::new(ps, &format!("{name}.h{h}"), d, dk, rng))
            .collect();
        let wo = Linear::new(ps, &format!("{name}.wo"), d, d, true, rng);
        Ok(MultiHeadAttention { heads, wo })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let outs = self
            .heads
            .iter()
            .map(|h| self_attention(s, x, h))
            .collect::<Result<Vec<_>>>()?;
        let cat = if outs.len() == 1 { outs[0] } else { s.g.concat_cols(&outs)? };
        self.wo.forward(s, cat)
    }
}

/// Post-norm encoder block: LN(x + MHA(x)), then LN(h + FF(h)) with a
/// GELU feed-forward of hidden width 2d.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub mha: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl TransformerLayer {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(TransformerLayer {
            mha: MultiHeadAttention::new(ps, &format!("{name}.mha"), d, heads, rng)?,
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d),
            ff1: Linear::new(ps, &format!("{name}.ff1"), d, 2 * d, true, rng),
            ff2: Linear::new(ps, &format!("{name}.ff2"), 2 * d, d, true, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d),
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let a = self.mha.forward(s, x)?;
        let r = s.g.add(x, a)?;
        let h = self.ln1.forward(s, r)?;
        let f = self.ff1.forward(s, h)?;
        let f = s.g.gelu(f);
        let f = self.ff2.forward(s, f)?;
        let r2 = s.g.add(h, f)?;
        self.ln2.forward(s, r2)
    }
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub layers: Vec<TransformerLayer>,
    /// Learned position table (max_len x d) when enabled.
    pub positions: Option<ParamId>,
    pub dim: usize,
}

impl TransformerEncoder {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        d: usize,
        layers: usize,
        heads: usize,
        positions: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(XpError::BadHeadCount { dim: d, heads });
        }
        let layers = (0..layers)
            .map(|l| TransformerLayer::new(ps, &format!("{name}.l{l}"), d, heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let positions = positions.map(|n| ps.xavier(format!("{name}.pos"), n, d, rng));
        Ok(TransformerEncoder { layers, positions, dim: d })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (n, d) = s.g.dims(x);
        if d != self.dim {
            return Err(XpError::ShapeMismatch(format!("encoder width {} got {d}", self.dim)));
        }
        let mut h = x;
        if let Some(pos) = self.positions {
            let table = s.p(pos);
            let rows = s.g.dims(table).0;
            let idx: Vec<usize> = (0..n).map(|i| i.min(rows - 1)).collect();
            let p = s.g.gather_rows(table, &idx)?;
            h = s.g.add(h, p)?;
        }
        for layer in &self.layers {
            h = layer.forward(s, h)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        LstmCell {
            wx: ps.xavier(format!("{name}.wx"), d, 4 * hidden, rng),
            wh: ps.xavier(format!("{name}.wh"), hidden, 4 * hidden, rng),
            b: ps.zeros(format!("{name}.b"), 1, 4 * hidden),
            hidden,
        }
    }

    /// Runs over rows of `x` in the given order; returns one hidden row per step.
    fn run(&self, s: &mut Session<'_>, x: Var, order: &[usize]) -> Result<Vec<Var>> {
        let hd = self.hidden;
        let (wx, wh, b) = (s.p(self.wx), s.p(self.wh), s.p(self.b));
        let xw = s.g.matmul(x, wx)?;
        let xw = s.g.add_row(xw, b)?;
        let mut h = s.g.constant(super::Tensor::zeros(1, hd));
        let mut c = s.g.constant(super::Tensor::zeros(1, hd));
        let mut out = vec![h; order.len()];
        for &t in order {
            let xt = s.g.slice_rows(xw, t, t + 1)?;
            let hh = s.g.matmul(h, wh)?;
            let z = s.g.add(xt, hh)?;
            let i = s.g.slice_cols(z, 0, hd)?;
            let f = s.g.slice_cols(z, hd, 2 * hd)?;
            let gg = s.g.slice_cols(z, 2 * hd, 3 * hd)?;
            let o = s.g.slice_cols(z, 3 * hd, 4 * hd)?;
            let (i, f, o) = (s.g.sigmoid(i), s.g.sigmoid(f), s.g.sigmoid(o));
            let gg = s.g.tanh(gg);
            let fc = s.g.mul(f, c)?;
            let ig = s.g.mul(i, gg)?;
            c = s.g.add(fc, ig)?;
            let tc = s.g.tanh(c);
            h = s.g.mul(o, tc)?;
            out[t] = h;
        }
        Ok(out)
    }
}

/// Single-layer bidirectional LSTM; directions concatenated then
/// projected back to the input width.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub out: Linear,
}

impl BiLstm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        BiLstm {
            fwd: LstmCell::new(ps, &format!("{name}.fwd"), d, d, rng),
            bwd: LstmCell::new(ps, &format!("{name}.bwd"), d, d, rng),
            out: Linear::new(ps, &format!("{name}.out"), 2 * d, d, true, rng),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let n = s.g.dims(x).0;
        let order: Vec<usize> = (0..n).collect();
        let rev: Vec<usize> = (0..n).rev().collect();
        let f = self.fwd.run(s, x, &order)?;
        let b = self.bwd.run(s, x, &rev)?;
        let fr = s.g.concat_rows(&f)?;
        let br = s.g.concat_rows(&b)?;
        let cat = s.g.concat_cols(&[fr, br])?;
        self.out.forward(s, cat)
    }
}
