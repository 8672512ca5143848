//! Cosine similarity and the auxiliary similarity κ between entity keys.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::RwLock;

use crate::embedder::EmbeddingSets;
use crate::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

/// `uᵀv / (|u||v|)`, or 0 when either norm is below 1e-12.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with {} and {} components",
            u.len(),
            v.len()
        )));
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < NORM_FLOOR || nv < NORM_FLOOR {
        return 0.0;
    }
    dot / (nu * nv)
}

/// Maximum cosine over all cross pairs; 0 when either set is empty.
pub fn max_cosine(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for u in a {
        for v in b {
            let c = cosine(u, v)?;
            best = Some(best.map_or(c, |m| m.max(c)));
        }
    }
    Ok(best.unwrap_or(0.0))
}

/// Event-embedding sets per entity key with a symmetric memo of κ values.
#[derive(Debug, Default)]
pub struct KappaCache {
    index: HashMap<String, u32>,
    sets: Vec<Vec<Vec<f64>>>,
    memo: RwLock<HashMap<(u32, u32), f64>>,
}

impl KappaCache {
    pub fn new(sets: BTreeMap<String, Vec<Vec<f64>>>) -> Result<Self> {
        let dim = sets.values().flatten().map(Vec::len).next();
        if let Some(d) = dim {
            if let Some((k, _)) = sets.iter().find(|(_, s)| s.iter().any(|v| v.len() != d)) {
                return Err(Error::Shape(format!("set of `{k}` mixes vector lengths")));
            }
        }
        let mut index = HashMap::new();
        let mut stored = Vec::new();
        for (n, (key, set)) in sets.into_iter().enumerate() {
            index.insert(key, n as u32);
            stored.push(set);
        }
        Ok(KappaCache {
            index,
            sets: stored,
            memo: RwLock::new(HashMap::new()),
        })
    }

    pub fn from_embedding_sets(sets: &EmbeddingSets) -> Result<Self> {
        Self::new(
            sets.iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|e| e.vector.clone()).collect()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// Stored set of a key; empty for unknown keys.
    pub fn set(&self, key: &str) -> &[Vec<f64>] {
        self.index
            .get(key)
            .map(|&i| self.sets[i as usize].as_slice())
            .unwrap_or(&[])
    }

    /// κ(i, j); unknown keys have empty sets and give 0.
    pub fn kappa(&self, i: &str, j: &str) -> f64 {
        let (Some(&a), Some(&b)) = (self.index.get(i), self.index.get(j)) else {
            return 0.0;
        };
        let pair = (a.min(b), a.max(b));
        if let Some(&v) = self.memo.read().expect("kappa memo poisoned").get(&pair) {
            return v;
        }
        let (sa, sb) = (&self.sets[pair.0 as usize], &self.sets[pair.1 as usize]);
        let v = max_cosine(sa, sb).expect("set lengths checked at construction");
        self.memo
            .write()
            .expect("kappa memo poisoned")
            .insert(pair, v);
        v
    }

    pub fn memo_len(&self) -> usize {
        self.memo.read().expect("kappa memo poisoned").len()
    }

    /// Writes `key_i,key_j,kappa` for every unordered pair of non-empty sets.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let mut keys: Vec<&str> = self.keys().filter(|k| !self.set(k).is_empty()).collect();
        keys.sort_unstable();
        writeln!(out, "key_i,key_j,kappa")?;
        for (n, a) in keys.iter().enumerate() {
            for b in &keys[n + 1..] {
                writeln!(
                    out,
                    "{},{},{}",
                    csv_field(a),
                    csv_field(b),
                    self.kappa(a, b)
                )?;
            }
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
