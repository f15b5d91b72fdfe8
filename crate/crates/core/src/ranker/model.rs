use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Catalog, ItemRecord};
use crate::error::{Result, XpError};
use crate::nn::{attention, AttentionParams, BiLstm, Linear, ParamId, ParamStore, Session, Tensor, TransformerEncoder, Var};
use crate::retrieval::TextEmbedder;

use super::{CartState, EncoderKind, Platform, RankerConfig};

/// Fixed per-item inputs: text embeddings of title and product type,
/// log(1 + price) and the OG/GM type index.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    title: Vec<f64>,
    pt: Vec<f64>,
    log_price: Vec<f64>,
    types: Vec<usize>,
}

impl FeatureTable {
    pub fn build(catalog: &Catalog, embedder: &dyn TextEmbedder) -> Self {
        let dim = embedder.dim();
        let mut pt_cache: HashMap<&str, Vec<f64>> = HashMap::new();
        let mut t = FeatureTable {
            dim,
            ids: Vec::with_capacity(catalog.len()),
            index: HashMap::with_capacity(catalog.len()),
            title: Vec::with_capacity(catalog.len() * dim),
            pt: Vec::with_capacity(catalog.len() * dim),
            log_price: Vec::with_capacity(catalog.len()),
            types: Vec::with_capacity(catalog.len()),
        };
        for item in catalog.items() {
            t.index.insert(item.item_id.clone(), t.ids.len());
            t.ids.push(item.item_id.clone());
            t.title.extend(embedder.embed(&item.title));
            let pv = pt_cache
                .entry(item.product_type.as_str())
                .or_insert_with(|| embedder.embed(&item.product_type));
            t.pt.extend_from_slice(pv);
            t.log_price.push(item.price.ln_1p());
            t.types.push(item.segment.index());
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row_of(&self, item_id: &str) -> Result<usize> {
        self.index
            .get(item_id)
            .copied()
            .ok_or_else(|| XpError::UnknownItem(item_id.to_string()))
    }

    pub fn rows_of<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        ids.into_iter().map(|id| self.row_of(id)).collect()
    }

    fn gather(&self, src: &[f64], rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(&src[r * self.dim..(r + 1) * self.dim]);
        }
        Tensor::new(vec![rows.len(), self.dim], data).expect("nonempty rows")
    }
}

#[derive(Debug, Clone)]
enum Encoder {
    Identity,
    Bilstm(BiLstm),
    Transformer(TransformerEncoder),
}

#[derive(Debug, Clone)]
pub struct RankerModel {
    pub config: RankerConfig,
    pub params: ParamStore,
    title_proj: Option<Linear>,
    pt_proj: Option<Linear>,
    price: Linear,
    type_table: ParamId,
    w_r: Linear,
    persona: Linear,
    platform: ParamId,
    encoder: Encoder,
    cross: Option<AttentionParams>,
    mlp: [Linear; 3],
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl RankerModel {
    pub fn new(config: RankerConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut ps = ParamStore::new();
        let title_proj = (c.embed_dim != c.title_dim)
            .then(|| Linear::new(&mut ps, "item.title", c.embed_dim, c.title_dim, false, &mut rng));
        let pt_proj =
            (c.embed_dim != c.pt_dim).then(|| Linear::new(&mut ps, "item.pt", c.embed_dim, c.pt_dim, false, &mut rng));
        let price = Linear::new(&mut ps, "item.price", 1, c.price_dim, true, &mut rng);
        let type_table = ps.xavier("item.type", 2, c.type_dim, &mut rng);
        let w_r = Linear::new(&mut ps, "item.w_r", c.item_concat_dim(), c.proj_dim, false, &mut rng);
        let persona = Linear::new(&mut ps, "persona", c.persona_in, c.persona_dim, true, &mut rng);
        let platform = ps.xavier("platform", Platform::COUNT, c.platform_dim, &mut rng);
        let encoder = match c.encoder {
            EncoderKind::Identity => Encoder::Identity,
            EncoderKind::Bilstm => Encoder::Bilstm(BiLstm::new(&mut ps, "enc", c.proj_dim, &mut rng)),
            EncoderKind::Transformer => Encoder::Transformer(TransformerEncoder::new(
                &mut ps,
                "enc",
                c.proj_dim,
                c.layers,
                c.heads,
                c.positional.then_some(c.max_cart),
                &mut rng,
            )?),
        };
        let cross = c
            .cross_attention
            .then(|| AttentionParams::new(&mut ps, "cross", c.proj_dim, c.proj_dim, &mut rng));
        let mlp_in = 2 * c.proj_dim + c.platform_dim + c.persona_dim;
        let mlp = [
            Linear::new(&mut ps, "mlp.0", mlp_in, c.mlp_hidden[0], true, &mut rng),
            Linear::new(&mut ps, "mlp.1", c.mlp_hidden[0], c.mlp_hidden[1], true, &mut rng),
            Linear::new(&mut ps, "mlp.2", c.mlp_hidden[1], 1, true, &mut rng),
        ];
        Ok(RankerModel {
            config,
            params: ps,
            title_proj,
            pt_proj,
            price,
            type_table,
            w_r,
            persona,
            platform,
            encoder,
            cross,
            mlp,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Projected item representations r' for the given feature rows (n x proj_dim).
    pub fn encode_items(&self, s: &mut Session<'_>, feats: &FeatureTable, rows: &[usize]) -> Result<Var> {
        let c = &self.config;
        let text = |s: &mut Session<'_>, src: &[f64], proj: &Option<Linear>, want: usize| -> Result<Var> {
            let x = s.g.constant(feats.gather(src, rows));
            match proj {
                Some(l) => l.forward(s, x),
                None if feats.dim == want => Ok(x),
                None => Err(XpError::DimensionMismatch {
                    expected: want,
                    got: feats.dim,
                }),
            }
        };
        if feats.dim != c.embed_dim {
            return Err(XpError::DimensionMismatch {
                expected: c.embed_dim,
                got: feats.dim,
            });
        }
        let t = text(s, &feats.title, &self.title_proj, c.title_dim)?;
        let v = text(s, &feats.pt, &self.pt_proj, c.pt_dim)?;
        let lp = s.g.constant(Tensor::new(vec![rows.len(), 1], rows.iter().map(|&r| feats.log_price[r]).collect())?);
        let p = self.price.forward(s, lp)?;
        let table = s.p(self.type_table);
        let types: Vec<usize> = rows.iter().map(|&r| feats.types[r]).collect();
        let ty = s.g.gather_rows(table, &types)?;
        let cat = s.g.concat_cols(&[t, v, p, ty])?;
        self.w_r.forward(s, cat)
    }

    /// Scores (m x 1) of candidate rows of `reprs` given cart rows of `reprs`.
    pub fn score_reprs(
        &self,
        s: &mut Session<'_>,
        reprs: Var,
        cart: &[usize],
        cands: &[usize],
        persona: &[f64],
        platform: Platform,
    ) -> Result<Var> {
        let h = self.head_inputs(s, reprs, cart, cands, persona, platform)?;
        self.head(s, h)
    }

    /// Rows of MLP input, one per candidate: [mean T(c), A, e_p, e_u].
    pub(crate) fn head_inputs(
        &self,
        s: &mut Session<'_>,
        reprs: Var,
        cart: &[usize],
        cands: &[usize],
        persona: &[f64],
        platform: Platform,
    ) -> Result<Var> {
        let c = &self.config;
        if cart.is_empty() {
            return Err(XpError::EmptyCart);
        }
        if persona.len() != c.persona_in {
            return Err(XpError::DimensionMismatch {
                expected: c.persona_in,
                got: persona.len(),
            });
        }
        let m = cands.len();
        let x = s.g.gather_rows(reprs, cart)?;
        let enc = match &self.encoder {
            Encoder::Identity => x,
            Encoder::Bilstm(b) => b.forward(s, x)?,
            Encoder::Transformer(t) => t.forward(s, x)?,
        };
        let pooled = s.g.mean_rows(enc);
        let pooled = s.g.gather_rows(pooled, &vec![0; m])?;
        let r = s.g.gather_rows(reprs, cands)?;
        let a = match &self.cross {
            Some(p) => {
                let att = attention(s, r, enc, p)?;
                s.g.add(r, att)?
            }
            None => r,
        };
        let table = s.p(self.platform);
        let ep = s.g.gather_rows(table, &vec![platform.index(); m])?;
        let pv = s.g.constant(Tensor::row_vector(persona.to_vec()));
        let eu = self.persona.forward(s, pv)?;
        let eu = s.g.gather_rows(eu, &vec![0; m])?;
        s.g.concat_cols(&[pooled, a, ep, eu])
    }

    /// Row-wise MLP scorer; rows may come from several carts.
    pub(crate) fn head(&self, s: &mut Session<'_>, h: Var) -> Result<Var> {
        let h = self.mlp[0].forward(s, h)?;
        let h = s.g.gelu(h);
        let h = self.mlp[1].forward(s, h)?;
        let h = s.g.gelu(h);
        self.mlp[2].forward(s, h)
    }

    /// Scores for `candidates` against the cart, truncated to the most
    /// recent `max_cart` entries.
    pub fn score_graph(
        &self,
        s: &mut Session<'_>,
        feats: &FeatureTable,
        cart: &CartState,
        candidates: &[&str],
    ) -> Result<Var> {
        let recent = cart.recent(self.config.max_cart);
        if recent.is_empty() {
            return Err(XpError::EmptyCart);
        }
        let mut rows = feats.rows_of(recent.iter().map(|e| e.item_id.as_str()))?;
        let n = rows.len();
        rows.extend(feats.rows_of(candidates.iter().copied())?);
        let reprs = self.encode_items(s, feats, &rows)?;
        let cart_idx: Vec<usize> = (0..n).collect();
        let cand_idx: Vec<usize> = (n..rows.len()).collect();
        self.score_reprs(s, reprs, &cart_idx, &cand_idx, &cart.persona, cart.platform)
    }

    pub fn score_batch(&self, feats: &FeatureTable, cart: &CartState, candidates: &[&str]) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let mut s = Session::new(&self.params, false);
        let v = self.score_graph(&mut s, feats, cart, candidates)?;
        Ok(s.g.value(v).data.clone())
    }

    pub fn score(&self, feats: &FeatureTable, cart: &CartState, candidate: &str) -> Result<f64> {
        Ok(self.score_batch(feats, cart, &[candidate])?[0])
    }

    /// r' for one item.
    pub fn item_repr(&self, feats: &FeatureTable, item: &ItemRecord) -> Result<Vec<f64>> {
        let row = feats.row_of(&item.item_id)?;
        let mut s = Session::new(&self.params, false);
        let v = self.encode_items(&mut s, feats, &[row])?;
        Ok(s.g.value(v).data.clone())
    }

    /// r' for every row of the feature table, in table order.
    pub fn precompute_reprs(&self, feats: &FeatureTable) -> Result<Tensor> {
        let mut s = Session::new(&self.params, false);
        let rows: Vec<usize> = (0..feats.len()).collect();
        let v = self.encode_items(&mut s, feats, &rows)?;
        Ok(s.g.value(v).clone())
    }

    /// Scores against a precomputed representation table (serving path).
    pub fn score_with_reprs(
        &self,
        reprs: &Tensor,
        cart_rows: &[usize],
        cand_rows: &[usize],
        persona: &[f64],
        platform: Platform,
    ) -> Result<Vec<f64>> {
        if cand_rows.is_empty() {
            return Ok(Vec::new());
        }
        let keep = &cart_rows[cart_rows.len().saturating_sub(self.config.max_cart)..];
        let mut rows = keep.to_vec();
        rows.extend_from_slice(cand_rows);
        let mut data = Vec::with_capacity(rows.len() * reprs.cols());
        for &r in &rows {
            data.extend_from_slice(reprs.row(r));
        }
        let mut s = Session::new(&self.params, false);
        let t = s.g.constant(Tensor::new(vec![rows.len(), reprs.cols()], data)?);
        let n = keep.len();
        let cart_idx: Vec<usize> = (0..n).collect();
        let cand_idx: Vec<usize> = (n..rows.len()).collect();
        let v = self.score_reprs(&mut s, t, &cart_idx, &cand_idx, persona, platform)?;
        Ok(s.g.value(v).data.clone())
    }

    /// Writes the XPNN checkpoint and a `<path>.json` config sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg_path = sidecar(path);
        let text = std::fs::read_to_string(&cfg_path)
            .map_err(|e| XpError::BadCheckpoint(format!("{}: {e}", cfg_path.display())))?;
        let config: RankerConfig = serde_json::from_str(&text)?;
        let stored = ParamStore::load(path)?;
        let mut model = RankerModel::new(config)?;
        model.params.load_values(&stored)?;
        Ok(model)
    }
}
