use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded 64-bit hash of a byte string (FNV-1a followed by a mixing step).
pub fn seeded_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix(seed);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix(h)
}

/// Unit vector built by signed feature hashing of the character 3-grams of
/// `^text$`.
pub fn hash_encode(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::invalid("cannot encode empty text"));
    }
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let chars: Vec<char> = std::iter::once('^')
        .chain(text.chars())
        .chain(std::iter::once('$'))
        .collect();
    let mut v = vec![0.0; dim];
    let mut buf = String::new();
    for gram in chars.windows(3) {
        buf.clear();
        buf.extend(gram);
        let h = seeded_hash(buf.as_bytes(), seed);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Every bucket cancelled; fall back to the whole-string bucket.
        let h = seeded_hash(text.as_bytes(), seed);
        v[(h % dim as u64) as usize] = 1.0;
        return Ok(v);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Source of fixed-dimension text encodings: either deterministic feature
/// hashing or a precomputed table in word2vec text format.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Hash {
        dim: usize,
        seed: u64,
    },
    File {
        dim: usize,
        table: HashMap<String, Vec<f64>>,
        /// Seed of the hashing fallback used when no word of a text is in the table.
        fallback_seed: u64,
    },
}

impl EmbeddingProvider {
    pub fn hash(dim: usize, seed: u64) -> Self {
        EmbeddingProvider::Hash { dim, seed }
    }

    /// Parses `token v1 ... vD` lines. A leading `count dim` header line is
    /// skipped.
    pub fn from_word2vec_text(text: &str, fallback_seed: u64) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
            if fields.is_empty() {
                continue;
            }
            if n == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                continue;
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(n + 1, format!("bad vector component: {e}")))?;
            if values.is_empty() {
                return Err(Error::parse(n + 1, "token without vector"));
            }
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(n + 1, "non-finite vector component"));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::parse(
                        n + 1,
                        format!("expected {d} components, found {}", values.len()),
                    ))
                }
                _ => {}
            }
            table.insert(fields[0].to_string(), values);
        }
        let dim = dim.ok_or_else(|| Error::invalid("embedding file has no vectors"))?;
        Ok(EmbeddingProvider::File {
            dim,
            table,
            fallback_seed,
        })
    }

    pub fn from_word2vec_file(path: &Path, fallback_seed: u64) -> Result<Self> {
        Self::from_word2vec_text(&std::fs::read_to_string(path)?, fallback_seed)
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Hash { dim, .. } | EmbeddingProvider::File { dim, .. } => *dim,
        }
    }

    /// Encodes a short text (an argument or a slot string) as one unit.
    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        match self {
            EmbeddingProvider::Hash { dim, seed } => hash_encode(text, *dim, *seed),
            EmbeddingProvider::File {
                dim,
                table,
                fallback_seed,
            } => {
                let text = text.trim();
                if text.is_empty() {
                    return Err(Error::invalid("cannot encode empty text"));
                }
                if let Some(v) = table.get(text) {
                    return Ok(v.clone());
                }
                let found: Vec<&Vec<f64>> = text
                    .split_whitespace()
                    .filter_map(|w| table.get(w).or_else(|| table.get(&w.to_lowercase())))
                    .collect();
                if found.is_empty() {
                    return hash_encode(text, *dim, *fallback_seed);
                }
                Ok(mean_of(found.into_iter().map(Vec::as_slice), *dim))
            }
        }
    }

    /// Sentence encoding: mean of the per-word encodings.
    pub fn encode_passage(&self, text: &str) -> Result<Vec<f64>> {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::invalid("cannot encode empty passage"));
        }
        let encoded = words
            .iter()
            .map(|w| self.encode(w))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_of(encoded.iter().map(Vec::as_slice), self.dim()))
    }
}

pub(crate) fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}
