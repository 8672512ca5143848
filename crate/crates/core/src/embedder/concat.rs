use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::provider::{mean_of, seeded_hash, EmbeddingProvider};
use crate::corpus::{role_family, ArgFiller, EventMention};
use crate::{Error, Result};

/// Resolves nested event ids.
pub type EventLookup<'a> = dyn Fn(&str) -> Option<&'a EventMention> + 'a;

/// Lookup over a slice of events.
pub fn lookup_in<'a>(events: &'a [EventMention]) -> impl Fn(&str) -> Option<&'a EventMention> + 'a {
    move |id| events.iter().find(|e| e.id == id)
}

/// Number of slots in a concatenated event embedding.
pub const K: usize = 5;

/// Nesting deeper than this is treated as a malformed (cyclic) event graph.
pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    EventType,
    Theme,
    Cause,
    Site,
    Product,
}

impl Slot {
    pub const ALL: [Slot; K] = [
        Slot::EventType,
        Slot::Theme,
        Slot::Cause,
        Slot::Site,
        Slot::Product,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Slot an argument role is folded into. Unlisted roles count as Theme.
    pub fn for_role(role: &str) -> Slot {
        match role_family(role) {
            "Cause" | "Instrument" => Slot::Cause,
            "Site" | "CSite" | "AtLoc" | "FromLoc" | "ToLoc" => Slot::Site,
            "Product" => Slot::Product,
            _ => Slot::Theme,
        }
    }
}

/// `"<EventName> (<Mod1,...>): <trigger>"`, underscores in the type name
/// rendered as spaces.
pub fn event_type_text(event: &EventMention) -> String {
    let name = event.event_type.replace('_', " ");
    if event.modifiers.is_empty() {
        format!("{name}: {}", event.trigger_text)
    } else {
        let mods: Vec<&str> = event.modifiers.iter().map(String::as_str).collect();
        format!("{name} ({}): {}", mods.join(", "), event.trigger_text)
    }
}

/// What fills one slot of an event.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotFiller<'a> {
    Text(String),
    Nested(&'a str),
}

/// Fillers of `slot`, in argument order. Entity fillers whose key equals
/// `focus_key` are suffixed with `" (self)"`.
pub fn slot_fillers<'a>(
    event: &'a EventMention,
    slot: Slot,
    focus_key: Option<&str>,
) -> Vec<SlotFiller<'a>> {
    if slot == Slot::EventType {
        return vec![SlotFiller::Text(event_type_text(event))];
    }
    event
        .arguments
        .iter()
        .filter(|a| Slot::for_role(&a.role) == slot)
        .map(|a| match &a.filler {
            ArgFiller::Entity(r) if Some(r.key.as_str()) == focus_key => {
                SlotFiller::Text(format!("{} (self)", r.text))
            }
            ArgFiller::Entity(r) => SlotFiller::Text(r.text.clone()),
            ArgFiller::Event(id) => SlotFiller::Nested(id),
        })
        .collect()
}

/// Text rendering of a slot, or `None` when the role is absent. Nested events
/// render as their trigger text.
pub fn slot_texts(
    event: &EventMention,
    slot: Slot,
    focus_key: Option<&str>,
    lookup: &EventLookup<'_>,
) -> Option<Vec<String>> {
    let fillers = slot_fillers(event, slot, focus_key);
    if fillers.is_empty() {
        return None;
    }
    Some(
        fillers
            .into_iter()
            .map(|f| match f {
                SlotFiller::Text(t) => t,
                SlotFiller::Nested(id) => lookup(id)
                    .map(|e| e.trigger_text.clone())
                    .unwrap_or_else(|| id.to_string()),
            })
            .collect(),
    )
}

/// Averages each consecutive block of `k` components.
pub fn compress(e: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || !e.len().is_multiple_of(k) {
        return Err(Error::Shape(format!(
            "cannot compress {} components in blocks of {k}",
            e.len()
        )));
    }
    Ok(e.chunks_exact(k)
        .map(|c| c.iter().sum::<f64>() / k as f64)
        .collect())
}

/// Componentwise mean and population variance of observed slot encodings,
/// used to draw padding for absent slots.
#[derive(Debug, Clone)]
pub struct PadState {
    dim: usize,
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    seed: u64,
}

impl PadState {
    pub fn new(dim: usize, seed: u64) -> Self {
        PadState {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            seed,
        }
    }

    pub fn from_vectors<'a>(
        dim: usize,
        seed: u64,
        vectors: impl IntoIterator<Item = &'a [f64]>,
    ) -> Self {
        let mut s = PadState::new(dim, seed);
        for v in vectors {
            s.observe(v);
        }
        s
    }

    /// Welford update.
    pub fn observe(&mut self, v: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), x) in self.mean.iter_mut().zip(&mut self.m2).zip(v) {
            let d = x - *m;
            *m += d / n;
            *m2 += d * (x - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim];
        }
        self.m2.iter().map(|m2| m2 / self.count as f64).collect()
    }

    /// One draw from the diagonal Gaussian. Zero vector when fewer than two
    /// encodings were observed.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.dim];
        }
        self.mean
            .iter()
            .zip(self.variance())
            .map(|(m, var)| {
                let z: f64 = StandardNormal.sample(rng);
                m + var.sqrt() * z
            })
            .collect()
    }

    /// Reproducible draw for an absent slot of a given event.
    pub fn sample_for(&self, event_id: &str, slot: Slot) -> Vec<f64> {
        let h = seeded_hash(event_id.as_bytes(), self.seed ^ slot.index() as u64);
        self.sample(&mut ChaCha8Rng::seed_from_u64(h))
    }
}

/// Moments over the encodings of every present slot text in `events` (no
/// self-marking, nested fillers excluded).
pub fn pad_state_for(
    events: &[EventMention],
    provider: &EmbeddingProvider,
    seed: u64,
) -> Result<PadState> {
    let mut state = PadState::new(provider.dim(), seed);
    for ev in events {
        for slot in Slot::ALL {
            for f in slot_fillers(ev, slot, None) {
                if let SlotFiller::Text(t) = f {
                    state.observe(&provider.encode(&t)?);
                }
            }
        }
    }
    Ok(state)
}

/// Full `K·D` concatenated embedding of `event` as seen from `focus_key`.
pub fn embed_event_concat(
    event: &EventMention,
    focus_key: Option<&str>,
    provider: &EmbeddingProvider,
    pad: &PadState,
    lookup: &EventLookup<'_>,
) -> Result<Vec<f64>> {
    embed_at_depth(event, focus_key, provider, pad, lookup, 0)
}

fn embed_at_depth(
    event: &EventMention,
    focus_key: Option<&str>,
    provider: &EmbeddingProvider,
    pad: &PadState,
    lookup: &EventLookup<'_>,
    depth: usize,
) -> Result<Vec<f64>> {
    if depth > MAX_DEPTH {
        return Err(Error::CyclicEvent(event.id.clone()));
    }
    let dim = provider.dim();
    let mut out = Vec::with_capacity(K * dim);
    for slot in Slot::ALL {
        let fillers = slot_fillers(event, slot, focus_key);
        if fillers.is_empty() {
            out.extend(pad.sample_for(&event.id, slot));
            continue;
        }
        let mut parts = Vec::with_capacity(fillers.len());
        for f in fillers {
            parts.push(match f {
                SlotFiller::Text(t) => provider.encode(&t)?,
                SlotFiller::Nested(id) => {
                    let nested = lookup(id).ok_or_else(|| Error::DanglingRef(id.to_string()))?;
                    let full = embed_at_depth(nested, focus_key, provider, pad, lookup, depth + 1)?;
                    compress(&full, K)?
                }
            });
        }
        out.extend(mean_of(parts.iter().map(Vec::as_slice), dim));
    }
    Ok(out)
}
