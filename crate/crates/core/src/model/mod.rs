//! Windowed feed-forward sequence tagger.
//!
//! Each token is represented by the concatenated embeddings of the tokens in
//! a `±w` window (positions past either edge use a learned padding row), fed
//! through one `tanh` hidden layer and a linear tag head. Hidden rows double
//! as the token states that entity representations are averaged from.

mod checkpoint;
mod optim;

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{repair_bio, BioTag, Document};
use crate::{Error, Result};

pub use optim::{clip_global_norm, AdamW, OptimConfig};

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            hidden_dim: 128,
            window: 2,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.embed_dim * (2 * self.window + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        Ok(())
    }
}

/// Token vocabulary. Id 0 is the padding row and id 1 the shared unknown row.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Sorted, deduplicated vocabulary over `tokens`.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = tokens
            .into_iter()
            .filter(|t| *t != PAD && *t != UNK)
            .collect();
        let all = [PAD, UNK]
            .into_iter()
            .chain(set)
            .map(String::from)
            .collect();
        Vocab::from_tokens(all).expect("reserved entries placed first")
    }

    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        Vocab::build(
            docs.into_iter()
                .flat_map(|d| d.tokens.iter().map(String::as_str)),
        )
    }

    pub(crate) fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD || tokens[UNK_ID] != UNK {
            return Err(Error::Checkpoint(format!(
                "vocabulary must start with {PAD} and {UNK}"
            )));
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::Checkpoint("duplicate vocabulary entries".into()));
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// `O` followed by `B-`/`I-` pairs for each type in sorted order.
pub fn tag_inventory<'a>(entity_types: impl IntoIterator<Item = &'a str>) -> Vec<BioTag> {
    let types: BTreeSet<&str> = entity_types.into_iter().collect();
    std::iter::once(BioTag::Outside)
        .chain(
            types
                .into_iter()
                .flat_map(|t| [BioTag::Begin(t.into()), BioTag::Inside(t.into())]),
        )
        .collect()
}

/// All parameter blocks as flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `V × d_e`
    pub embed: Vec<f64>,
    /// `d_h × d_e(2w+1)`
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    /// `T × d_h`
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Params {
    pub const BLOCKS: [&'static str; 5] = ["embed", "w_hidden", "b_hidden", "w_out", "b_out"];

    pub fn zeros_like(other: &Params) -> Params {
        Params {
            embed: vec![0.0; other.embed.len()],
            w_hidden: vec![0.0; other.w_hidden.len()],
            b_hidden: vec![0.0; other.b_hidden.len()],
            w_out: vec![0.0; other.w_out.len()],
            b_out: vec![0.0; other.b_out.len()],
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("embed", &self.embed),
            ("w_hidden", &self.w_hidden),
            ("b_hidden", &self.b_hidden),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 5] {
        [
            ("embed", &mut self.embed),
            ("w_hidden", &mut self.w_hidden),
            ("b_hidden", &mut self.b_hidden),
            ("w_out", &mut self.w_out),
            ("b_out", &mut self.b_out),
        ]
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, b) in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }
}

/// Intermediates of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub ids: Vec<usize>,
    /// `tokens × d_h`
    pub hidden: Vec<Vec<f64>>,
    /// `tokens × T`
    pub logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    config: ModelConfig,
    vocab: Vocab,
    tags: Vec<BioTag>,
    tag_index: HashMap<BioTag, usize>,
    pub params: Params,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl TaggerModel {
    /// Freshly initialized model: uniform Xavier weights and embeddings, zero
    /// biases.
    pub fn new(config: ModelConfig, vocab: Vocab, tags: Vec<BioTag>, seed: u64) -> Result<Self> {
        config.validate()?;
        if tags.first() != Some(&BioTag::Outside) {
            return Err(Error::invalid("tag inventory must start with O"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, de, dh, t) = (vocab.len(), config.embed_dim, config.hidden_dim, tags.len());
        let din = config.input_dim();
        let params = Params {
            embed: xavier(&mut rng, v, de, v * de),
            w_hidden: xavier(&mut rng, din, dh, dh * din),
            b_hidden: vec![0.0; dh],
            w_out: xavier(&mut rng, dh, t, t * dh),
            b_out: vec![0.0; t],
        };
        Self::from_parts(config, vocab, tags, params)
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        vocab: Vocab,
        tags: Vec<BioTag>,
        params: Params,
    ) -> Result<Self> {
        let (v, de, dh, t) = (vocab.len(), config.embed_dim, config.hidden_dim, tags.len());
        let expected = [v * de, dh * config.input_dim(), dh, t * dh, t];
        for ((name, block), want) in params.blocks().iter().zip(expected) {
            if block.len() != want {
                return Err(Error::Shape(format!(
                    "parameter block `{name}` has {} values, expected {want}",
                    block.len()
                )));
            }
        }
        let tag_index: HashMap<BioTag, usize> = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if tag_index.len() != tags.len() {
            return Err(Error::invalid("duplicate tags in inventory"));
        }
        Ok(TaggerModel {
            config,
            vocab,
            tags,
            tag_index,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn tags(&self) -> &[BioTag] {
        &self.tags
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    /// Errors unless the model's tag inventory equals `tags`.
    pub fn expect_tags(&self, tags: &[BioTag]) -> Result<()> {
        if self.tags != tags {
            return Err(Error::Shape(format!(
                "model has {} tags, expected {}",
                self.tags.len(),
                tags.len()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// Tag ids of the document's gold tags.
    pub fn gold_indices(&self, doc: &Document) -> Result<Vec<usize>> {
        doc.tags
            .iter()
            .map(|t| {
                self.tag_index.get(t).copied().ok_or_else(|| {
                    Error::invalid(format!("tag `{t}` of `{}` not in model inventory", doc.id))
                })
            })
            .collect()
    }

    fn window_ids<'a>(&self, ids: &'a [usize], t: usize) -> impl Iterator<Item = usize> + 'a {
        let w = self.config.window as isize;
        let n = ids.len() as isize;
        (-w..=w).map(move |o| {
            let p = t as isize + o;
            if p < 0 || p >= n {
                PAD_ID
            } else {
                ids[p as usize]
            }
        })
    }

    fn input_vector(&self, ids: &[usize], t: usize) -> Vec<f64> {
        let de = self.config.embed_dim;
        let mut x = Vec::with_capacity(self.config.input_dim());
        for id in self.window_ids(ids, t) {
            x.extend_from_slice(&self.params.embed[id * de..(id + 1) * de]);
        }
        x
    }

    pub fn forward_ids(&self, ids: &[usize]) -> Forward {
        let (dh, din, nt) = (
            self.config.hidden_dim,
            self.config.input_dim(),
            self.tags.len(),
        );
        let p = &self.params;
        let mut hidden = Vec::with_capacity(ids.len());
        let mut logits = Vec::with_capacity(ids.len());
        for t in 0..ids.len() {
            let x = self.input_vector(ids, t);
            let h: Vec<f64> = (0..dh)
                .map(|j| (p.b_hidden[j] + dot(&p.w_hidden[j * din..(j + 1) * din], &x)).tanh())
                .collect();
            let z: Vec<f64> = (0..nt)
                .map(|k| p.b_out[k] + dot(&p.w_out[k * dh..(k + 1) * dh], &h))
                .collect();
            hidden.push(h);
            logits.push(z);
        }
        Forward {
            ids: ids.to_vec(),
            hidden,
            logits,
        }
    }

    pub fn forward(&self, doc: &Document) -> Forward {
        self.forward_ids(&self.encode(&doc.tokens))
    }

    /// Accumulates parameter gradients into `grads` given the loss gradient
    /// with respect to the logits and, optionally, extra gradient arriving
    /// directly at the hidden states.
    pub fn backward(
        &self,
        fwd: &Forward,
        d_logits: &[Vec<f64>],
        d_hidden: Option<&[Vec<f64>]>,
        grads: &mut Params,
    ) {
        let (de, dh, din, nt) = (
            self.config.embed_dim,
            self.config.hidden_dim,
            self.config.input_dim(),
            self.tags.len(),
        );
        let p = &self.params;
        let mut dz = vec![0.0; dh];
        let mut dx = vec![0.0; din];
        for t in 0..fwd.ids.len() {
            let h = &fwd.hidden[t];
            let dl = &d_logits[t];
            dz.iter_mut().for_each(|v| *v = 0.0);
            for (k, &g) in dl.iter().enumerate().take(nt) {
                if g == 0.0 {
                    continue;
                }
                grads.b_out[k] += g;
                let row = &mut grads.w_out[k * dh..(k + 1) * dh];
                axpy(row, g, h);
                axpy(&mut dz, g, &p.w_out[k * dh..(k + 1) * dh]);
            }
            if let Some(extra) = d_hidden {
                for (a, b) in dz.iter_mut().zip(&extra[t]) {
                    *a += b;
                }
            }
            for (a, hv) in dz.iter_mut().zip(h) {
                *a *= 1.0 - hv * hv;
            }
            let x = self.input_vector(&fwd.ids, t);
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (j, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grads.b_hidden[j] += g;
                axpy(&mut grads.w_hidden[j * din..(j + 1) * din], g, &x);
                axpy(&mut dx, g, &p.w_hidden[j * din..(j + 1) * din]);
            }
            for (slot, id) in self.window_ids(&fwd.ids, t).enumerate() {
                axpy(
                    &mut grads.embed[id * de..(id + 1) * de],
                    1.0,
                    &dx[slot * de..(slot + 1) * de],
                );
            }
        }
    }

    /// Argmax tags with illegal continuations repaired.
    pub fn predict(&self, doc: &Document) -> Vec<BioTag> {
        if doc.is_empty() {
            return Vec::new();
        }
        let fwd = self.forward(doc);
        let mut tags: Vec<BioTag> = fwd
            .logits
            .iter()
            .map(|row| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                    );
                self.tags[best.0].clone()
            })
            .collect();
        repair_bio(&mut tags);
        tags
    }
}

/// Mean of the hidden rows in `[start, end)`.
pub fn entity_repr(hidden: &[Vec<f64>], start: usize, end: usize) -> Result<Vec<f64>> {
    if start >= end || end > hidden.len() {
        return Err(Error::invalid(format!(
            "span [{start}, {end}) invalid for {} tokens",
            hidden.len()
        )));
    }
    let dim = hidden[start].len();
    let mut out = vec![0.0; dim];
    for row in &hidden[start..end] {
        axpy(&mut out, 1.0, row);
    }
    let n = (end - start) as f64;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

/// Spreads a representation gradient evenly over the span's hidden rows.
pub fn entity_repr_backward(d_hidden: &mut [Vec<f64>], start: usize, end: usize, d_rep: &[f64]) {
    let scale = 1.0 / (end - start) as f64;
    for row in &mut d_hidden[start..end] {
        axpy(row, scale, d_rep);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
