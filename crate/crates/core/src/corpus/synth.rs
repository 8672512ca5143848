//! Deterministic synthetic source/target corpora.
//!
//! Both domains are built from the same filler and cue vocabularies, so the
//! context around an entity carries no domain signal. Source documents are
//! organized by sub-topic: each sub-topic owns a slice of every source entity
//! vocabulary and a set of event types, and events connect entities of the
//! document's sub-topic. Target documents carry gold target-type entities and,
//! at the configured co-occurrence rate, source-vocabulary mentions that are
//! left untagged. Those untagged spans are recorded as distractors.

use std::collections::{BTreeSet, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ArgFiller, BioTag, CorpusBundle, Document, EntityMention, EntityRef, EventArgument,
    EventMention,
};
use crate::{Error, Result};

const SOURCE_TYPE_NAMES: &[&str] = &[
    "Gene_or_gene_product",
    "Cell",
    "Organism",
    "Tissue",
    "Cellular_component",
    "Cancer",
];
const TARGET_TYPE_NAMES: &[&str] = &["Chemical", "Disease", "Drug", "Compound"];

/// Event types with (role, optional) lists; the first role is always filled.
const EVENT_SHAPES: &[(&str, &[(&str, bool)])] = &[
    (
        "Binding",
        &[("Theme", false), ("Theme2", true), ("Product", true)],
    ),
    (
        "Phosphorylation",
        &[("Theme", false), ("Site", true), ("Cause", true)],
    ),
    ("Gene_expression", &[("Theme", false)]),
    ("Localization", &[("Theme", false), ("ToLoc", true)]),
    ("Degradation", &[("Theme", false)]),
    (
        "Acetylation",
        &[("Theme", false), ("Site", true), ("Cause", true)],
    ),
    (
        "Transport",
        &[("Theme", false), ("FromLoc", true), ("ToLoc", true)],
    ),
    ("Pathway", &[("Participant", false), ("Participant2", true)]),
    ("Dissociation", &[("Theme", false), ("Product", true)]),
];
const NESTING_TYPES: &[&str] = &["Positive_regulation", "Negative_regulation", "Regulation"];
const MODIFIERS: &[&str] = &["Negation", "Speculation"];

/// Generator settings. Every field has a default, so a partial JSON object is
/// a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub source_train_docs: usize,
    pub source_valid_docs: usize,
    pub target_train_docs: usize,
    pub target_valid_docs: usize,
    pub target_test_docs: usize,
    /// Number of source entity types.
    pub source_types: usize,
    /// Number of target entity types.
    pub target_types: usize,
    /// Distinct entity names per source type.
    pub source_vocab_per_type: usize,
    /// Distinct entity names per target type.
    pub target_vocab_per_type: usize,
    pub filler_vocab: usize,
    pub cue_vocab: usize,
    /// Sub-topics partitioning the source vocabularies and event types.
    pub subtopics: usize,
    /// Trigger words per event type.
    pub triggers_per_event_type: usize,
    pub entities_per_doc: usize,
    pub min_filler: usize,
    pub max_filler: usize,
    /// Probability that an entity name has two tokens.
    pub multi_token_rate: f64,
    /// Mean events per source document.
    pub events_per_doc: f64,
    /// Probability that an event is wrapped by a regulation event.
    pub nested_event_rate: f64,
    pub modifier_rate: f64,
    /// Fraction of target documents that contain untagged source entities.
    pub cooccurrence_rate: f64,
    /// Untagged source mentions in a co-occurring target document.
    pub distractors_per_doc: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            source_train_docs: 60,
            source_valid_docs: 20,
            target_train_docs: 80,
            target_valid_docs: 80,
            target_test_docs: 200,
            source_types: 2,
            target_types: 2,
            source_vocab_per_type: 60,
            target_vocab_per_type: 40,
            filler_vocab: 120,
            cue_vocab: 16,
            subtopics: 3,
            triggers_per_event_type: 3,
            entities_per_doc: 6,
            min_filler: 1,
            max_filler: 3,
            multi_token_rate: 0.25,
            events_per_doc: 3.0,
            nested_event_rate: 0.2,
            modifier_rate: 0.15,
            cooccurrence_rate: 0.8,
            distractors_per_doc: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let zero = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::invalid(format!(
                    "synthetic config: `{name}` must be positive"
                )))
            } else {
                Ok(())
            }
        };
        zero("source_vocab_per_type", self.source_vocab_per_type)?;
        zero("target_vocab_per_type", self.target_vocab_per_type)?;
        zero("filler_vocab", self.filler_vocab)?;
        zero("cue_vocab", self.cue_vocab)?;
        zero("source_types", self.source_types)?;
        zero("target_types", self.target_types)?;
        zero("subtopics", self.subtopics)?;
        zero("triggers_per_event_type", self.triggers_per_event_type)?;
        for (name, rate) in [
            ("multi_token_rate", self.multi_token_rate),
            ("nested_event_rate", self.nested_event_rate),
            ("modifier_rate", self.modifier_rate),
            ("cooccurrence_rate", self.cooccurrence_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::invalid(format!(
                    "synthetic config: `{name}` = {rate} is outside [0, 1]"
                )));
            }
        }
        if !(self.events_per_doc >= 0.0 && self.events_per_doc.is_finite()) {
            return Err(Error::invalid(
                "synthetic config: `events_per_doc` must be >= 0",
            ));
        }
        if self.source_types > SOURCE_TYPE_NAMES.len()
            || self.target_types > TARGET_TYPE_NAMES.len()
        {
            return Err(Error::invalid("synthetic config: too many entity types"));
        }
        if self.subtopics > self.source_vocab_per_type {
            return Err(Error::invalid(
                "synthetic config: more sub-topics than names per source type",
            ));
        }
        if self.min_filler > self.max_filler {
            return Err(Error::invalid("synthetic config: min_filler > max_filler"));
        }
        if self.cooccurrence_rate > 0.0 && self.distractors_per_doc == 0 {
            return Err(Error::invalid(
                "synthetic config: positive co-occurrence rate needs distractors_per_doc >= 1",
            ));
        }
        Ok(())
    }

    pub fn source_type_names(&self) -> Vec<String> {
        SOURCE_TYPE_NAMES[..self.source_types]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    pub fn target_type_names(&self) -> Vec<String> {
        TARGET_TYPE_NAMES[..self.target_types]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

/// Output of [`gen_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticCorpora {
    /// Source training documents with entities and events.
    pub source: CorpusBundle,
    pub source_valid: Vec<Document>,
    /// Target training documents; distractors recorded on the bundle.
    pub target: CorpusBundle,
    pub target_valid: CorpusBundle,
    pub target_test: CorpusBundle,
}

struct Vocabulary {
    filler: Vec<String>,
    cue: Vec<String>,
    /// [type][name] -> tokens
    source: Vec<Vec<Vec<String>>>,
    target: Vec<Vec<Vec<String>>>,
    /// [event shape] -> trigger words
    triggers: Vec<Vec<String>>,
    nesting_triggers: Vec<Vec<String>>,
}

struct WordFactory {
    seen: HashSet<String>,
}

impl WordFactory {
    const ONSETS: &'static [&'static str] = &[
        "b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
        "st", "pl", "kr",
    ];
    const VOWELS: &'static [&'static str] = &["a", "e", "i", "o", "u", "y", "ao", "ei"];

    fn word(&mut self, rng: &mut ChaCha8Rng, syllables: usize, suffix: &str) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(Self::ONSETS.choose(rng).unwrap());
                w.push_str(Self::VOWELS.choose(rng).unwrap());
            }
            w.push_str(suffix);
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn build_vocabulary(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vocabulary {
    let mut wf = WordFactory {
        seen: HashSet::new(),
    };
    let filler = (0..cfg.filler_vocab).map(|_| wf.word(rng, 2, "")).collect();
    let cue = (0..cfg.cue_vocab).map(|_| wf.word(rng, 1, "s")).collect();
    let mut names = |n_types: usize, per_type: usize, rng: &mut ChaCha8Rng, suffixes: &[&str]| {
        (0..n_types)
            .map(|t| {
                (0..per_type)
                    .map(|_| {
                        let mut toks = vec![wf.word(rng, 2, suffixes[t % suffixes.len()])];
                        if rng.random_bool(cfg.multi_token_rate) {
                            toks.push(wf.word(rng, 1, "-1"));
                        }
                        toks
                    })
                    .collect()
            })
            .collect()
    };
    let source = names(
        cfg.source_types,
        cfg.source_vocab_per_type,
        rng,
        &["n", "k", "l", "m"],
    );
    let target = names(
        cfg.target_types,
        cfg.target_vocab_per_type,
        rng,
        &["ol", "ide", "ate"],
    );
    let triggers = EVENT_SHAPES
        .iter()
        .map(|_| {
            (0..cfg.triggers_per_event_type)
                .map(|_| wf.word(rng, 2, "es"))
                .collect()
        })
        .collect();
    let nesting_triggers = NESTING_TYPES
        .iter()
        .map(|_| {
            (0..cfg.triggers_per_event_type)
                .map(|_| wf.word(rng, 2, "ates"))
                .collect()
        })
        .collect();
    Vocabulary {
        filler,
        cue,
        source,
        target,
        triggers,
        nesting_triggers,
    }
}

/// Accumulates tokens and tags for one document.
struct DocBuilder {
    tokens: Vec<String>,
    tags: Vec<BioTag>,
}

impl DocBuilder {
    fn new() -> Self {
        DocBuilder {
            tokens: Vec::new(),
            tags: Vec::new(),
        }
    }

    fn filler(&mut self, vocab: &Vocabulary, cfg: &SynthConfig, rng: &mut ChaCha8Rng) {
        let n = rng.random_range(cfg.min_filler..=cfg.max_filler);
        for _ in 0..n {
            self.push(vocab.filler.choose(rng).unwrap().clone(), BioTag::Outside);
        }
    }

    fn push(&mut self, token: String, tag: BioTag) {
        self.tokens.push(token);
        self.tags.push(tag);
    }

    /// Appends `cue NAME` and returns the name's token span.
    fn mention(
        &mut self,
        vocab: &Vocabulary,
        rng: &mut ChaCha8Rng,
        name: &[String],
        ty: Option<&str>,
    ) -> (usize, usize) {
        self.push(vocab.cue.choose(rng).unwrap().clone(), BioTag::Outside);
        let start = self.tokens.len();
        for (i, tok) in name.iter().enumerate() {
            let tag = match (ty, i) {
                (None, _) => BioTag::Outside,
                (Some(t), 0) => BioTag::Begin(t.to_string()),
                (Some(t), _) => BioTag::Inside(t.to_string()),
            };
            self.push(tok.clone(), tag);
        }
        (start, self.tokens.len())
    }

    fn finish(mut self, id: String) -> Document {
        self.push(".".to_string(), BioTag::Outside);
        Document {
            id,
            tokens: self.tokens,
            tags: self.tags,
        }
    }
}

struct SourceDoc {
    document: Document,
    entities: Vec<EntityMention>,
    events: Vec<EventMention>,
}

fn subtopic_slice(per_type: usize, subtopics: usize, topic: usize) -> std::ops::Range<usize> {
    let lo = topic * per_type / subtopics;
    let hi = (topic + 1) * per_type / subtopics;
    lo..hi
}

fn gen_source_doc(
    id: String,
    cfg: &SynthConfig,
    vocab: &Vocabulary,
    types: &[String],
    rng: &mut ChaCha8Rng,
) -> SourceDoc {
    let topic = rng.random_range(0..cfg.subtopics);
    let mut b = DocBuilder::new();
    let mut mentions: Vec<(usize, usize, usize)> = Vec::new(); // (start, end, type)
    for _ in 0..cfg.entities_per_doc {
        b.filler(vocab, cfg, rng);
        let ty = rng.random_range(0..types.len());
        // Mostly on-topic names, occasionally any name of the type.
        let range = if rng.random_bool(0.85) {
            subtopic_slice(cfg.source_vocab_per_type, cfg.subtopics, topic)
        } else {
            0..cfg.source_vocab_per_type
        };
        let name = &vocab.source[ty][rng.random_range(range)];
        let (s, e) = b.mention(vocab, rng, name, Some(&types[ty]));
        mentions.push((s, e, ty));
    }

    // Event types available to this topic: a contiguous slice of the shapes.
    let shapes: Vec<usize> = (0..EVENT_SHAPES.len())
        .filter(|k| k % cfg.subtopics == topic)
        .collect();
    let shapes = if shapes.is_empty() {
        (0..EVENT_SHAPES.len()).collect()
    } else {
        shapes
    };
    let n_events = {
        let base = cfg.events_per_doc.floor() as usize;
        base + usize::from(rng.random_bool(cfg.events_per_doc - base as f64))
    };

    let mut events: Vec<EventMention> = Vec::new();
    let mut used_entities: BTreeSet<usize> = BTreeSet::new();
    let entity_id = |k: usize| format!("{id}:T{}", k + 1);
    let token_span_text = |b: &DocBuilder, s: usize, e: usize| b.tokens[s..e].join(" ");
    if !mentions.is_empty() {
        for _ in 0..n_events {
            let shape_idx = *shapes.choose(rng).unwrap();
            let (ety, roles) = EVENT_SHAPES[shape_idx];
            b.filler(vocab, cfg, rng);
            let tstart = b.tokens.len();
            b.push(
                vocab.triggers[shape_idx].choose(rng).unwrap().clone(),
                BioTag::Outside,
            );
            let trigger_tokens = (tstart, tstart + 1);
            let mut arguments = Vec::new();
            let mut taken = BTreeSet::new();
            for &(role, optional) in roles {
                if optional && !rng.random_bool(0.5) {
                    continue;
                }
                let k = rng.random_range(0..mentions.len());
                if !taken.insert(k) {
                    continue;
                }
                used_entities.insert(k);
                let (s, e, _) = mentions[k];
                let text = token_span_text(&b, s, e);
                arguments.push(EventArgument {
                    role: role.to_string(),
                    filler: ArgFiller::Entity(EntityRef {
                        id: entity_id(k),
                        key: crate::corpus::normalize_key(&text),
                        text,
                    }),
                });
            }
            let mut modifiers = BTreeSet::new();
            if rng.random_bool(cfg.modifier_rate) {
                modifiers.insert(MODIFIERS.choose(rng).unwrap().to_string());
            }
            let ev_id = format!("{id}:E{}", events.len() + 1);
            events.push(EventMention {
                id: ev_id.clone(),
                doc_id: id.clone(),
                event_type: ety.to_string(),
                trigger_text: token_span_text(&b, tstart, tstart + 1),
                trigger_tokens: Some(trigger_tokens),
                modifiers,
                arguments,
            });

            if rng.random_bool(cfg.nested_event_rate) {
                let n = rng.random_range(0..NESTING_TYPES.len());
                b.filler(vocab, cfg, rng);
                let ts = b.tokens.len();
                b.push(
                    vocab.nesting_triggers[n].choose(rng).unwrap().clone(),
                    BioTag::Outside,
                );
                let mut arguments = vec![EventArgument {
                    role: "Theme".to_string(),
                    filler: ArgFiller::Event(ev_id),
                }];
                let k = rng.random_range(0..mentions.len());
                used_entities.insert(k);
                let (s, e, _) = mentions[k];
                let text = token_span_text(&b, s, e);
                arguments.push(EventArgument {
                    role: "Cause".to_string(),
                    filler: ArgFiller::Entity(EntityRef {
                        id: entity_id(k),
                        key: crate::corpus::normalize_key(&text),
                        text,
                    }),
                });
                events.push(EventMention {
                    id: format!("{id}:E{}", events.len() + 1),
                    doc_id: id.clone(),
                    event_type: NESTING_TYPES[n].to_string(),
                    trigger_text: token_span_text(&b, ts, ts + 1),
                    trigger_tokens: Some((ts, ts + 1)),
                    modifiers: BTreeSet::new(),
                    arguments,
                });
            }
        }
    }
    let document = b.finish(id.clone());
    let entities = mentions
        .iter()
        .enumerate()
        .map(|(k, &(s, e, ty))| {
            EntityMention::from_tokens(entity_id(k), &id, &document.tokens, s, e, types[ty].clone())
        })
        .collect();
    SourceDoc {
        document,
        entities,
        events,
    }
}

fn gen_target_doc(
    id: String,
    cfg: &SynthConfig,
    vocab: &Vocabulary,
    types: &[String],
    rng: &mut ChaCha8Rng,
) -> (Document, Vec<EntityMention>) {
    let mut b = DocBuilder::new();
    let n_distractors = if rng.random_bool(cfg.cooccurrence_rate) {
        cfg.distractors_per_doc
    } else {
        0
    };
    // Slots: true = target entity, false = distractor, in random order.
    let mut slots: Vec<bool> = std::iter::repeat_n(true, cfg.entities_per_doc)
        .chain(std::iter::repeat_n(false, n_distractors))
        .collect();
    for i in (1..slots.len()).rev() {
        let j = rng.random_range(0..=i);
        slots.swap(i, j);
    }
    let mut distractor_spans = Vec::new();
    for is_target in slots {
        b.filler(vocab, cfg, rng);
        if is_target {
            let ty = rng.random_range(0..types.len());
            let name = vocab.target[ty].choose(rng).unwrap().clone();
            b.mention(vocab, rng, &name, Some(&types[ty]));
        } else {
            let sty = rng.random_range(0..cfg.source_types);
            let name = vocab.source[sty].choose(rng).unwrap().clone();
            let (s, e) = b.mention(vocab, rng, &name, None);
            distractor_spans.push((s, e, sty));
        }
    }
    let document = b.finish(id.clone());
    let source_types = cfg.source_type_names();
    let distractors = distractor_spans
        .into_iter()
        .enumerate()
        .map(|(n, (s, e, sty))| {
            EntityMention::from_tokens(
                format!("{id}:x{n}"),
                &id,
                &document.tokens,
                s,
                e,
                source_types[sty].clone(),
            )
        })
        .collect();
    (document, distractors)
}

fn target_bundle(
    prefix: &str,
    n: usize,
    cfg: &SynthConfig,
    vocab: &Vocabulary,
    types: &[String],
    rng: &mut ChaCha8Rng,
) -> CorpusBundle {
    let mut docs = Vec::with_capacity(n);
    let mut distractors = Vec::new();
    for i in 0..n {
        let (d, x) = gen_target_doc(format!("{prefix}{i:04}"), cfg, vocab, types, rng);
        docs.push(d);
        distractors.extend(x);
    }
    CorpusBundle::from_documents(docs).with_distractors(distractors)
}

/// Generates source and target corpora. A pure function of `(cfg, seed)`.
pub fn gen_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpora> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = build_vocabulary(cfg, &mut rng);
    let source_types = cfg.source_type_names();
    let target_types = cfg.target_type_names();

    let mut documents = Vec::new();
    let mut entities = Vec::new();
    let mut events = Vec::new();
    for i in 0..cfg.source_train_docs {
        let d = gen_source_doc(format!("src{i:04}"), cfg, &vocab, &source_types, &mut rng);
        documents.push(d.document);
        entities.extend(d.entities);
        events.extend(d.events);
    }
    let source = CorpusBundle::new(documents, entities, events)?;
    let source_valid = (0..cfg.source_valid_docs)
        .map(|i| {
            gen_source_doc(
                format!("srcval{i:04}"),
                cfg,
                &vocab,
                &source_types,
                &mut rng,
            )
            .document
        })
        .collect();

    let target = target_bundle(
        "tgt",
        cfg.target_train_docs,
        cfg,
        &vocab,
        &target_types,
        &mut rng,
    );
    let target_valid = target_bundle(
        "tgtval",
        cfg.target_valid_docs,
        cfg,
        &vocab,
        &target_types,
        &mut rng,
    );
    let target_test = target_bundle(
        "tgttest",
        cfg.target_test_docs,
        cfg,
        &vocab,
        &target_types,
        &mut rng,
    );
    Ok(SyntheticCorpora {
        source,
        source_valid,
        target,
        target_valid,
        target_test,
    })
}

/// All tokens of every source entity name.
pub fn source_vocabulary_tokens(cfg: &SynthConfig, seed: u64) -> BTreeSet<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = build_vocabulary(cfg, &mut rng);
    vocab.source.into_iter().flatten().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_conll;

    fn small() -> SynthConfig {
        SynthConfig {
            source_train_docs: 20,
            source_valid_docs: 5,
            target_train_docs: 30,
            target_valid_docs: 5,
            target_test_docs: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_rate_keeps_source_words_out_of_target() {
        let cfg = SynthConfig {
            cooccurrence_rate: 0.0,
            ..small()
        };
        let out = gen_synthetic(&cfg, 3).unwrap();
        let src = source_vocabulary_tokens(&cfg, 3);
        for bundle in [&out.target, &out.target_valid, &out.target_test] {
            assert!(bundle.distractors().is_empty());
            for d in bundle.documents() {
                assert!(d.tokens.iter().all(|t| !src.contains(t)));
            }
        }
    }

    #[test]
    fn full_rate_puts_a_source_entity_in_every_target_doc() {
        let cfg = SynthConfig {
            cooccurrence_rate: 1.0,
            target_train_docs: 100,
            ..small()
        };
        let out = gen_synthetic(&cfg, 5).unwrap();
        let src = source_vocabulary_tokens(&cfg, 5);
        let hits = out
            .target
            .documents()
            .iter()
            .filter(|d| d.tokens.iter().any(|t| src.contains(t)))
            .count();
        assert_eq!(hits, 100);
    }

    #[test]
    fn deterministic() {
        let a = gen_synthetic(&small(), 11).unwrap();
        let b = gen_synthetic(&small(), 11).unwrap();
        assert_eq!(
            write_conll(a.source.documents()),
            write_conll(b.source.documents())
        );
        assert_eq!(a.source.events(), b.source.events());
        assert_eq!(
            write_conll(a.target_test.documents()),
            write_conll(b.target_test.documents())
        );
    }

    #[test]
    fn zero_vocabulary_rejected() {
        let cfg = SynthConfig {
            filler_vocab: 0,
            ..small()
        };
        assert!(gen_synthetic(&cfg, 0).is_err());
        let cfg = SynthConfig {
            cooccurrence_rate: 1.5,
            ..small()
        };
        assert!(gen_synthetic(&cfg, 0).is_err());
    }

    #[test]
    fn source_bundle_has_events_over_its_entities() {
        let out = gen_synthetic(&small(), 2).unwrap();
        assert!(!out.source.events().is_empty());
        assert!(!out.source.participation().is_empty());
        for ev in out.source.events() {
            for (_, r) in ev.entity_fillers() {
                assert!(out.source.entities().iter().any(|e| e.id == r.id));
            }
        }
    }
}
