use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::concat::{compress, embed_event_concat, pad_state_for, K};
use super::provider::EmbeddingProvider;
use super::template::{embed_event_template, TemplateSet};
use crate::corpus::{CorpusBundle, EventMention};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EmbeddingMode {
    #[default]
    #[serde(rename = "concat")]
    Concat,
    #[serde(rename = "sentEnc")]
    SentEnc,
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(EmbeddingMode::Concat),
            "sentEnc" | "sentenc" | "sent-enc" => Ok(EmbeddingMode::SentEnc),
            _ => Err(Error::invalid(format!("unknown embedding mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingMode::Concat => "concat",
            EmbeddingMode::SentEnc => "sentEnc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEmbedding {
    pub event_id: String,
    pub focus_key: Option<String>,
    pub vector: Vec<f64>,
}

/// Entity key to its auxiliary vectors, one per event, sorted by event id.
pub type EmbeddingSets = BTreeMap<String, Vec<EventEmbedding>>;

/// Builds `E(k)` for every entity key of the bundle. Keys without events map
/// to an empty list.
pub fn build_embedding_sets(
    bundle: &CorpusBundle,
    mode: EmbeddingMode,
    provider: &EmbeddingProvider,
    templates: &TemplateSet,
    pad_seed: u64,
) -> Result<EmbeddingSets> {
    let lookup = |id: &str| bundle.event(id);
    let mut keys: Vec<&str> = bundle.entities().iter().map(|e| e.key.as_str()).collect();
    keys.extend(bundle.participation().keys().map(String::as_str));
    keys.sort_unstable();
    keys.dedup();

    match mode {
        EmbeddingMode::Concat => {
            let pad = pad_state_for(bundle.events(), provider, pad_seed)?;
            keys.par_iter()
                .map(|&key| {
                    let set = bundle
                        .events_of(key)
                        .iter()
                        .map(|id| {
                            let ev = event(bundle, id)?;
                            Ok(EventEmbedding {
                                event_id: id.clone(),
                                focus_key: Some(key.to_string()),
                                vector: embed_event_concat(ev, Some(key), provider, &pad, &lookup)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok((key.to_string(), set))
                })
                .collect()
        }
        EmbeddingMode::SentEnc => {
            let per_event: BTreeMap<&str, Vec<f64>> = bundle
                .events()
                .par_iter()
                .map(|ev| {
                    Ok((
                        ev.id.as_str(),
                        embed_event_template(ev, templates, provider, &lookup)?,
                    ))
                })
                .collect::<Result<_>>()?;
            Ok(keys
                .iter()
                .map(|&key| {
                    let set = bundle
                        .events_of(key)
                        .iter()
                        .map(|id| EventEmbedding {
                            event_id: id.clone(),
                            focus_key: None,
                            vector: per_event[id.as_str()].clone(),
                        })
                        .collect();
                    (key.to_string(), set)
                })
                .collect())
        }
    }
}

fn event<'a>(bundle: &'a CorpusBundle, id: &str) -> Result<&'a EventMention> {
    bundle
        .event(id)
        .ok_or_else(|| Error::DanglingRef(id.to_string()))
}

/// On-disk form of embedding sets. `sets` holds the vectors used for κ; in
/// concat mode `compressed` also carries the `D`-length views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSetsFile {
    pub mode: EmbeddingMode,
    pub dim: usize,
    pub sets: BTreeMap<String, Vec<EventEmbedding>>,
    #[serde(default)]
    pub compressed: BTreeMap<String, Vec<Vec<f64>>>,
}

impl EmbeddingSetsFile {
    pub fn new(mode: EmbeddingMode, dim: usize, sets: EmbeddingSets) -> Result<Self> {
        let compressed = match mode {
            EmbeddingMode::Concat => sets
                .iter()
                .map(|(k, v)| {
                    let c = v
                        .iter()
                        .map(|e| compress(&e.vector, K))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((k.clone(), c))
                })
                .collect::<Result<_>>()?,
            EmbeddingMode::SentEnc => BTreeMap::new(),
        };
        Ok(EmbeddingSetsFile {
            mode,
            dim,
            sets,
            compressed,
        })
    }

    pub fn empty_keys(&self) -> usize {
        self.sets.values().filter(|v| v.is_empty()).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let expected = match file.mode {
            EmbeddingMode::Concat => K * file.dim,
            EmbeddingMode::SentEnc => file.dim,
        };
        for (key, set) in &file.sets {
            if let Some(bad) = set.iter().find(|e| e.vector.len() != expected) {
                return Err(Error::Shape(format!(
                    "vector for `{key}` / `{}` has {} components, expected {expected}",
                    bad.event_id,
                    bad.vector.len()
                )));
            }
        }
        Ok(file)
    }
}
