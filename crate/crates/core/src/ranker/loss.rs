use crate::error::{Result, XpError};
use crate::nn::{Graph, Tensor, Var};

pub fn pairwise_hinge_loss(s_pos: f64, s_neg: f64, delta: f64) -> f64 {
    (delta - (s_pos - s_neg)).max(0.0)
}

/// -(1/|P|) sum_{i in P} log softmax(s / tau)_i over P and N together.
pub fn listwise_softmax_loss(pos: &[f64], neg: &[f64], tau: f64) -> Result<f64> {
    if pos.is_empty() {
        return Err(XpError::EmptyPositives);
    }
    let z: Vec<f64> = pos.iter().chain(neg).map(|s| s / tau).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - pos.iter().map(|s| s / tau).sum::<f64>() / pos.len() as f64)
}

/// Mean hinge over every (positive, negative) pair. `scores` is m x 1 with
/// the first `n_pos` rows positive.
pub fn pairwise_graph(g: &mut Graph, scores: Var, n_pos: usize, delta: f64) -> Result<Var> {
    let m = g.dims(scores).0;
    if n_pos == 0 {
        return Err(XpError::EmptyPositives);
    }
    if n_pos == m {
        let z = g.sum(scores);
        return Ok(g.scale(z, 0.0));
    }
    let mut pi = Vec::with_capacity(n_pos * (m - n_pos));
    let mut ni = Vec::with_capacity(n_pos * (m - n_pos));
    for p in 0..n_pos {
        for n in n_pos..m {
            pi.push(p);
            ni.push(n);
        }
    }
    let sp = g.gather_rows(scores, &pi)?;
    let sn = g.gather_rows(scores, &ni)?;
    let gap = g.sub(sn, sp)?;
    let h = g.add_scalar(gap, delta);
    let h = g.relu(h);
    Ok(g.mean(h))
}

pub fn listwise_graph(g: &mut Graph, scores: Var, n_pos: usize, tau: f64) -> Result<Var> {
    if n_pos == 0 {
        return Err(XpError::EmptyPositives);
    }
    let z = g.scale(scores, 1.0 / tau);
    let lse = g.logsumexp(z);
    let idx: Vec<usize> = (0..n_pos).collect();
    let p = g.gather_rows(z, &idx)?;
    let pm = g.mean(p);
    g.sub(lse, pm)
}

/// Scalar graph node holding zero; used as the sum seed for batch losses.
pub(crate) fn zero(g: &mut Graph) -> Var {
    g.constant(Tensor::scalar(0.0))
}
