//! Corpus data model and ingestion.
//!
//! Documents carry tokens with BIO tags. Entity mentions are typed token spans.
//! Event mentions come from BioNLP-style standoff files and may nest other
//! events as arguments. A [`CorpusBundle`] ties the three together and indexes
//! which events each entity key participates in.

mod conll;
mod fewshot;
mod standoff;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use conll::{parse_conll, write_conll};
pub use fewshot::downsample_fewshot;
pub use standoff::{
    load_standoff_dir, parse_standoff, to_standoff, tokenize, write_standoff_dir, StandoffDocument,
    StandoffFiles, Token,
};
pub use synth::{gen_synthetic, SynthConfig, SyntheticCorpora};

/// One BIO tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BioTag {
    Outside,
    Begin(String),
    Inside(String),
}

impl BioTag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            BioTag::Outside => None,
            BioTag::Begin(t) | BioTag::Inside(t) => Some(t),
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::Outside => f.write_str("O"),
            BioTag::Begin(t) => write!(f, "B-{t}"),
            BioTag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for BioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(BioTag::Outside);
        }
        let bad = || Error::invalid(format!("unknown tag shape `{s}`"));
        let (prefix, ty) = s.split_once('-').ok_or_else(bad)?;
        if ty.is_empty() || ty.chars().any(char::is_whitespace) {
            return Err(bad());
        }
        match prefix {
            "B" => Ok(BioTag::Begin(ty.to_string())),
            "I" => Ok(BioTag::Inside(ty.to_string())),
            _ => Err(bad()),
        }
    }
}

impl Serialize for BioTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BioTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rewrites every `I-T` whose predecessor is neither `B-T` nor `I-T` into
/// `B-T`. Returns the number of tags changed.
pub fn repair_bio(tags: &mut [BioTag]) -> usize {
    let mut repaired = 0;
    for i in 0..tags.len() {
        if let BioTag::Inside(ty) = &tags[i] {
            let legal = i > 0 && tags[i - 1].entity_type() == Some(ty.as_str());
            if !legal {
                tags[i] = BioTag::Begin(ty.clone());
                repaired += 1;
            }
        }
    }
    repaired
}

/// Half-open `[start, end)` spans of the entities encoded in a repaired tag
/// sequence, with their types.
pub fn decode_spans(tags: &[BioTag]) -> Vec<(usize, usize, String)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            BioTag::Outside => {
                if let Some((s, ty)) = open.take() {
                    spans.push((s, i, ty.to_string()));
                }
            }
            BioTag::Begin(ty) => {
                if let Some((s, prev)) = open.take() {
                    spans.push((s, i, prev.to_string()));
                }
                open = Some((i, ty));
            }
            BioTag::Inside(ty) => match open {
                Some((_, prev)) if prev == ty => {}
                _ => {
                    // Illegal continuation starts a new entity, same as the ingest repair.
                    if let Some((s, prev)) = open.take() {
                        spans.push((s, i, prev.to_string()));
                    }
                    open = Some((i, ty));
                }
            },
        }
    }
    if let Some((s, ty)) = open {
        spans.push((s, tags.len(), ty.to_string()));
    }
    spans
}

/// Lowercased, whitespace-collapsed form of a surface string.
pub fn normalize_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A tokenized passage with one BIO tag per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<BioTag>,
}

impl Document {
    /// Builds a document, repairing illegal `I-` continuations.
    pub fn new(id: impl Into<String>, tokens: Vec<String>, mut tags: Vec<BioTag>) -> Result<Self> {
        let id = id.into();
        if tokens.len() != tags.len() {
            return Err(Error::invalid(format!(
                "document `{id}` has {} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        repair_bio(&mut tags);
        Ok(Document { id, tokens, tags })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold entities encoded by the tags.
    pub fn entities(&self) -> Vec<EntityMention> {
        decode_spans(&self.tags)
            .into_iter()
            .enumerate()
            .map(|(n, (start, end, ty))| {
                EntityMention::from_tokens(
                    format!("{}:e{n}", self.id),
                    &self.id,
                    &self.tokens,
                    start,
                    end,
                    ty,
                )
            })
            .collect()
    }
}

/// A typed entity span inside one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub id: String,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
    /// Lowercased, space-joined tokens of the span.
    pub surface: String,
    /// Lookup key for event participation.
    pub key: String,
}

impl EntityMention {
    pub fn from_tokens(
        id: impl Into<String>,
        doc_id: &str,
        tokens: &[String],
        start: usize,
        end: usize,
        entity_type: impl Into<String>,
    ) -> Self {
        let surface = tokens[start..end]
            .iter()
            .map(|t| t.to_lowercase())
            .collect::<Vec<_>>()
            .join(" ");
        let key = normalize_key(&surface);
        EntityMention {
            id: id.into(),
            doc_id: doc_id.to_string(),
            start,
            end,
            entity_type: entity_type.into(),
            surface,
            key,
        }
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

/// Argument filler that points at a text-bound annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub id: String,
    /// Annotated text, original casing.
    pub text: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgFiller {
    Entity(EntityRef),
    Event(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventArgument {
    pub role: String,
    pub filler: ArgFiller,
}

/// Role name with any numeric suffix removed (`Theme2` -> `Theme`).
pub fn role_family(role: &str) -> &str {
    role.trim_end_matches(|c: char| c.is_ascii_digit())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMention {
    pub id: String,
    pub doc_id: String,
    pub event_type: String,
    pub trigger_text: String,
    /// Token span of the trigger, when known.
    pub trigger_tokens: Option<(usize, usize)>,
    pub modifiers: BTreeSet<String>,
    pub arguments: Vec<EventArgument>,
}

impl EventMention {
    pub fn trigger_key(&self) -> String {
        normalize_key(&self.trigger_text)
    }

    pub fn nested_events(&self) -> impl Iterator<Item = &str> {
        self.arguments.iter().filter_map(|a| match &a.filler {
            ArgFiller::Event(id) => Some(id.as_str()),
            ArgFiller::Entity(_) => None,
        })
    }

    pub fn entity_fillers(&self) -> impl Iterator<Item = (&str, &EntityRef)> {
        self.arguments.iter().filter_map(|a| match &a.filler {
            ArgFiller::Entity(e) => Some((a.role.as_str(), e)),
            ArgFiller::Event(_) => None,
        })
    }
}

/// Documents, entities and events of one domain, plus the participation index
/// from entity key to the ids of the events that key takes part in.
#[derive(Debug, Clone, Default)]
pub struct CorpusBundle {
    documents: Vec<Document>,
    entities: Vec<EntityMention>,
    events: Vec<EventMention>,
    participation: BTreeMap<String, Vec<String>>,
    distractors: Vec<EntityMention>,
    event_index: HashMap<String, usize>,
}

impl CorpusBundle {
    /// Validates references and builds the participation index.
    pub fn new(
        documents: Vec<Document>,
        entities: Vec<EntityMention>,
        events: Vec<EventMention>,
    ) -> Result<Self> {
        let event_index: HashMap<String, usize> = events
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        if event_index.len() != events.len() {
            return Err(Error::invalid("duplicate event ids in bundle"));
        }
        let entity_ids: BTreeSet<&str> = entities.iter().map(|e| e.id.as_str()).collect();
        for ev in &events {
            for arg in &ev.arguments {
                match &arg.filler {
                    ArgFiller::Entity(r) if !entity_ids.contains(r.id.as_str()) => {
                        return Err(Error::DanglingRef(r.id.clone()))
                    }
                    ArgFiller::Event(id) if !event_index.contains_key(id) => {
                        return Err(Error::DanglingRef(id.clone()))
                    }
                    _ => {}
                }
            }
        }
        check_acyclic(&events, &event_index)?;

        let entity_keys: BTreeSet<&str> = entities.iter().map(|e| e.key.as_str()).collect();
        let mut participation: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for ev in &events {
            for (_, r) in ev.entity_fillers() {
                participation
                    .entry(r.key.clone())
                    .or_default()
                    .insert(ev.id.clone());
            }
            let tk = ev.trigger_key();
            if entity_keys.contains(tk.as_str()) {
                participation.entry(tk).or_default().insert(ev.id.clone());
            }
        }
        let participation = participation
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect();

        Ok(CorpusBundle {
            documents,
            entities,
            events,
            participation,
            distractors: Vec::new(),
            event_index,
        })
    }

    /// Bundle for corpora without event annotation (entities come from tags).
    pub fn from_documents(documents: Vec<Document>) -> Self {
        let entities = documents.iter().flat_map(Document::entities).collect();
        CorpusBundle::new(documents, entities, Vec::new())
            .expect("tag-derived entities carry no event references")
    }

    /// Attaches spans of entities present in the text but deliberately left
    /// unannotated (known out-of-domain mentions).
    pub fn with_distractors(mut self, distractors: Vec<EntityMention>) -> Self {
        self.distractors = distractors;
        self
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn entities(&self) -> &[EntityMention] {
        &self.entities
    }

    pub fn events(&self) -> &[EventMention] {
        &self.events
    }

    pub fn participation(&self) -> &BTreeMap<String, Vec<String>> {
        &self.participation
    }

    pub fn distractors(&self) -> &[EntityMention] {
        &self.distractors
    }

    pub fn event(&self, id: &str) -> Option<&EventMention> {
        self.event_index.get(id).map(|&i| &self.events[i])
    }

    /// Event ids a key participates in, sorted.
    pub fn events_of(&self, key: &str) -> &[String] {
        self.participation
            .get(key)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Entity types appearing in document tags, sorted.
    pub fn entity_types(&self) -> BTreeSet<String> {
        self.documents
            .iter()
            .flat_map(|d| {
                d.tags
                    .iter()
                    .filter_map(|t| t.entity_type().map(String::from))
            })
            .collect()
    }
}

fn check_acyclic(events: &[EventMention], index: &HashMap<String, usize>) -> Result<()> {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit(
        i: usize,
        events: &[EventMention],
        index: &HashMap<String, usize>,
        state: &mut [u8],
    ) -> Result<()> {
        match state[i] {
            1 => return Err(Error::CyclicEvent(events[i].id.clone())),
            2 => return Ok(()),
            _ => {}
        }
        state[i] = 1;
        for nested in events[i].nested_events() {
            if let Some(&j) = index.get(nested) {
                visit(j, events, index, state)?;
            }
        }
        state[i] = 2;
        Ok(())
    }
    let mut state = vec![0u8; events.len()];
    for i in 0..events.len() {
        visit(i, events, index, &mut state)?;
    }
    Ok(())
}
