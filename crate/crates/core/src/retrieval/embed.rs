//! Text embedding seam and the default hashed character-trigram embedder.

pub const DEFAULT_EMBED_DIM: usize = 64;

/// Maps text to a unit vector. Implementations must be deterministic.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing of word-boundary-padded character trigrams, then
/// L2 normalization. Strings that share trigrams land on shared buckets so
/// their cosine is high; unrelated strings sit near zero.
#[derive(Debug, Clone)]
pub struct HashNgramEmbedder {
    dim: usize,
    seed: u64,
}

impl HashNgramEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashNgramEmbedder { dim, seed }
    }
}

impl Default for HashNgramEmbedder {
    fn default() -> Self {
        HashNgramEmbedder::new(DEFAULT_EMBED_DIM, 0)
    }
}

pub(crate) fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche so low bits depend on every input byte
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl TextEmbedder for HashNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0f64; self.dim];
        for token in tokenize(text) {
            let padded: Vec<char> = std::iter::once('#')
                .chain(token.chars())
                .chain(std::iter::once('#'))
                .collect();
            for gram in padded.windows(3) {
                let s: String = gram.iter().collect();
                let h = fnv1a(self.seed, s.as_bytes());
                let bucket = (h % self.dim as u64) as usize;
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                v[bucket] += sign;
            }
        }
        normalize_or_basis(&mut v);
        v
    }
}

/// L2-normalize in place; an all-zero vector becomes the first basis vector.
pub fn normalize_or_basis(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_deterministic() {
        let e = HashNgramEmbedder::new(32, 3);
        for text in ["Egg Poachers", "", "x", "Dog Food | Pet Supplies"] {
            let v = e.embed(text);
            assert_eq!(v.len(), 32);
            assert!((dot(&v, &v).sqrt() - 1.0).abs() < 1e-12);
            assert_eq!(v, e.embed(text));
        }
    }

    #[test]
    fn similar_strings_are_closer() {
        let e = HashNgramEmbedder::new(64, 0);
        let a = e.embed("elevated dog bowls");
        let b = e.embed("dog bowls");
        let c = e.embed("shower curtain");
        assert!(cosine(&a, &b) > cosine(&a, &c));
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
    }
}
