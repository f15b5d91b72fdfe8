use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, XpError};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

pub const MAGIC: &[u8; 4] = b"XPNN";
pub const VERSION: u32 = 1;

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Xavier-uniform `rows x cols` matrix.
    pub fn xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, Tensor::new(vec![rows, cols], data).expect("positive dims"))
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::filled(rows, cols, 1.0))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Round every value through f32, matching what a checkpoint stores.
    pub fn quantize_f32(&mut self) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.to_f32() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |m: &str| XpError::BadCheckpoint(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(XpError::BadCheckpoint(format!("unsupported version {version}")));
        }
        let n = read_u32(r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let mut lb = [0u8; 2];
            r.read_exact(&mut lb).map_err(|_| bad("truncated name"))?;
            let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("name is not utf-8"))?;
            if store.index.contains_key(&name) {
                return Err(XpError::BadCheckpoint(format!("duplicate tensor {name}")));
            }
            let ndim = read_u32(r)? as usize;
            if ndim == 0 || ndim > 8 {
                return Err(bad("bad rank"));
            }
            let shape = (0..ndim).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut buf = vec![0u8; len * 4];
            r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| XpError::BadCheckpoint(e.to_string()))?;
            store.add(name, t);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Copy values from `other` by name; shapes must match.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .index
                .get(name)
                .ok_or_else(|| XpError::BadCheckpoint(format!("missing tensor {name}")))?;
            let src = &other.tensors[*j];
            if src.len() != self.tensors[i].len() {
                return Err(XpError::BadCheckpoint(format!(
                    "tensor {name}: shape {:?} vs {:?}",
                    src.shape, self.tensors[i].shape
                )));
            }
            self.tensors[i].data.clone_from(&src.data);
        }
        if other.len() != self.len() {
            return Err(XpError::BadCheckpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| XpError::BadCheckpoint("truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// A graph bound to a parameter store. Each parameter becomes a leaf the
/// first time it is used.
pub struct Session<'p> {
    pub g: Graph,
    params: &'p ParamStore,
    leaves: Vec<Option<Var>>,
    train: bool,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamStore, train: bool) -> Self {
        Session {
            g: Graph::new(),
            params,
            leaves: vec![None; params.len()],
            train,
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let t = self.params.get(id).clone();
        let v = if self.train { self.g.leaf(t) } else { self.g.constant(t) };
        self.leaves[id.0] = Some(v);
        v
    }

    /// Gradient per parameter (zeros for parameters the loss never touched).
    pub fn grads(&self, loss: Var) -> Result<Vec<Tensor>> {
        let gr = self.g.backward(loss)?;
        Ok(self
            .params
            .ids()
            .map(|id| {
                self.leaves[id.0]
                    .and_then(|v| gr.get(v).cloned())
                    .unwrap_or_else(|| {
                        let t = self.params.get(id);
                        Tensor {
                            shape: t.shape.clone(),
                            data: vec![0.0; t.len()],
                        }
                    })
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(ParamId(i));
            for (k, &gk) in g.data.iter().enumerate() {
                let m = &mut self.m[i][k];
                let v = &mut self.v[i][k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gk;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gk * gk;
                let mh = *m / bc1;
                let vh = *v / bc2;
                p.data[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.xavier("enc.w", 4, 3, &mut rng);
        s.zeros("enc.b", 1, 3);
        s
    }

    #[test]
    fn xavier_bounds() {
        let s = store();
        let a = (6.0f64 / 7.0).sqrt();
        assert!(s.get(ParamId(0)).data.iter().all(|v| v.abs() < a));
        assert_eq!(s.count(), 15);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let s = store();
        let mut a = Vec::new();
        s.write_to(&mut a).unwrap();
        assert_eq!(&a[..4], b"XPNN");
        let back = ParamStore::read_from(&mut a.as_slice()).unwrap();
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(back.name(ParamId(0)), "enc.w");
        let mut q = s.clone();
        q.quantize_f32();
        assert_eq!(q, back);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(matches!(ParamStore::read_from(&mut &b"NOPE"[..]), Err(XpError::BadCheckpoint(_))));
        let mut a = Vec::new();
        store().write_to(&mut a).unwrap();
        a.truncate(a.len() - 3);
        assert!(ParamStore::read_from(&mut a.as_slice()).is_err());
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::row_vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(&s, 0.1);
        for _ in 0..500 {
            let mut sess = Session::new(&s, true);
            let x = sess.p(id);
            let sq = sess.g.mul(x, x).unwrap();
            let l = sess.g.sum(sq);
            let grads = sess.grads(l).unwrap();
            opt.step(&mut s, &grads);
        }
        assert!(s.get(id).data.iter().all(|v| v.abs() < 1e-2));
    }
}
