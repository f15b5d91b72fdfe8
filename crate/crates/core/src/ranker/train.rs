use std::collections::HashMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XpError};
use crate::nn::{Adam, Session, Var};

use super::loss::{listwise_graph, pairwise_graph, zero};
use super::{FeatureTable, LossKind, Platform, RankerConfig, RankerModel, TrainingExample};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub examples: usize,
    pub param_count: usize,
}

pub(crate) struct Prepared<'a> {
    pub cart: Vec<usize>,
    pub cands: Vec<usize>,
    pub n_pos: usize,
    pub persona: &'a [f64],
    pub platform: Platform,
}

pub(crate) fn prepare<'a>(ex: &'a TrainingExample, feats: &FeatureTable, max_cart: usize) -> Result<Prepared<'a>> {
    if ex.positives.is_empty() {
        return Err(XpError::EmptyPositives);
    }
    let recent = ex.cart.recent(max_cart);
    if recent.is_empty() {
        return Err(XpError::EmptyCart);
    }
    Ok(Prepared {
        cart: feats.rows_of(recent.iter().map(|e| e.item_id.as_str()))?,
        cands: feats.rows_of(ex.candidates())?,
        n_pos: ex.positives.len(),
        persona: &ex.cart.persona,
        platform: ex.cart.platform,
    })
}

/// Mean loss over a batch, computed on one graph with item representations
/// shared across the batch.
pub(crate) fn batch_loss(model: &RankerModel, s: &mut Session<'_>, feats: &FeatureTable, batch: &[&Prepared<'_>]) -> Result<Var> {
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut rows = Vec::new();
    for p in batch {
        for &r in p.cart.iter().chain(&p.cands) {
            local.entry(r).or_insert_with(|| {
                rows.push(r);
                rows.len() - 1
            });
        }
    }
    let reprs = model.encode_items(s, feats, &rows)?;
    let mut inputs = Vec::with_capacity(batch.len());
    for p in batch {
        let cart: Vec<usize> = p.cart.iter().map(|r| local[r]).collect();
        let cands: Vec<usize> = p.cands.iter().map(|r| local[r]).collect();
        inputs.push(model.head_inputs(s, reprs, &cart, &cands, p.persona, p.platform)?);
    }
    let h = s.g.concat_rows(&inputs)?;
    let all = model.head(s, h)?;
    let mut total = zero(&mut s.g);
    let mut off = 0;
    for p in batch {
        let scores = s.g.slice_rows(all, off, off + p.cands.len())?;
        off += p.cands.len();
        let l = match model.config.loss {
            LossKind::PairwiseHinge => pairwise_graph(&mut s.g, scores, p.n_pos, model.config.delta)?,
            LossKind::ListwiseSoftmax => listwise_graph(&mut s.g, scores, p.n_pos, model.config.tau)?,
        };
        total = s.g.add(total, l)?;
    }
    Ok(s.g.scale(total, 1.0 / batch.len() as f64))
}

/// Adam on mini-batches; deterministic for a given config (the seed drives
/// both initialisation and shuffling).
pub fn train(examples: &[TrainingExample], feats: &FeatureTable, config: &RankerConfig) -> Result<(RankerModel, TrainReport)> {
    let mut model = RankerModel::new(config.clone())?;
    let prepared = examples
        .iter()
        .map(|e| prepare(e, feats, config.max_cart))
        .collect::<Result<Vec<_>>>()?;
    if prepared.is_empty() {
        return Err(XpError::EmptyTestSet);
    }
    let mut opt = Adam::new(&model.params, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<&Prepared<'_>> = chunk.iter().map(|&i| &prepared[i]).collect();
            let grads = {
                let mut s = Session::new(&model.params, true);
                let loss = batch_loss(&model, &mut s, feats, &batch)?;
                let lv = s.g.value(loss).data[0];
                if !lv.is_finite() {
                    return Err(XpError::NonFiniteLoss { epoch });
                }
                sum += lv * batch.len() as f64;
                s.grads(loss)?
            };
            opt.step(&mut model.params, &grads);
        }
        let mean = sum / prepared.len() as f64;
        info!("epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    // Keep in-memory values identical to what a checkpoint restores.
    model.params.quantize_f32();
    let report = TrainReport {
        epoch_losses,
        examples: prepared.len(),
        param_count: model.param_count(),
    };
    Ok((model, report))
}
