use std::collections::BTreeMap;
use std::path::Path;

use super::concat::EventLookup;
use super::provider::EmbeddingProvider;
use crate::corpus::{role_family, ArgFiller, EventMention};
use crate::{Error, Result};

/// Placeholder names a template may use.
pub const PLACEHOLDERS: [&str; 11] = [
    "Trigger",
    "Theme",
    "Cause",
    "Site",
    "Product",
    "Participant",
    "AtLoc",
    "FromLoc",
    "ToLoc",
    "Instrument",
    "CSite",
];

pub const FALLBACK_TEMPLATE: &str =
    "Indicated by the given trigger <Trigger>, involving <Theme> <Cause> <Site> <Product> <Participant>.";

const PATHWAY_CURATION: &str = include_str!("../../templates/pathway_curation.json");
const CANCER_GENETICS: &str = include_str!("../../templates/cancer_genetics.json");
const INFECTIOUS_DISEASES: &str = include_str!("../../templates/infectious_diseases.json");

fn type_key(event_type: &str) -> String {
    event_type
        .replace('_', " ")
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Placeholder names found in a template, in order of appearance.
fn placeholders(template: &str) -> Result<Vec<&str>> {
    let mut found = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('<') {
        let after = &rest[open + 1..];
        let close = after
            .find('>')
            .ok_or_else(|| Error::invalid(format!("unclosed placeholder in `{template}`")))?;
        let name = &after[..close];
        if !PLACEHOLDERS.contains(&name) {
            return Err(Error::invalid(format!(
                "unknown placeholder `<{name}>` in `{template}`"
            )));
        }
        found.push(name);
        rest = &after[close + 1..];
    }
    Ok(found)
}

/// Event-type templates, looked up case-insensitively with `_` and space
/// treated alike.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
    fallback: bool,
}

impl TemplateSet {
    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for (ty, tpl) in map {
            placeholders(&tpl)?;
            templates.insert(type_key(&ty), tpl);
        }
        Ok(TemplateSet {
            templates,
            fallback: false,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_map(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The shipped pathway-curation, cancer-genetics and infectious-disease
    /// tables merged; earlier tables win on shared event types.
    pub fn builtin() -> Self {
        let mut merged = TemplateSet::default();
        for text in [INFECTIOUS_DISEASES, CANCER_GENETICS, PATHWAY_CURATION] {
            let set = TemplateSet::from_json(text).expect("shipped templates are valid");
            merged.templates.extend(set.templates);
        }
        merged
    }

    pub fn with_fallback(mut self, enabled: bool) -> Self {
        self.fallback = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, event_type: &str) -> Option<&str> {
        self.templates
            .get(&type_key(event_type))
            .map(String::as_str)
    }

    fn template_for(&self, event_type: &str) -> Result<&str> {
        match self.get(event_type) {
            Some(t) => Ok(t),
            None if self.fallback => Ok(FALLBACK_TEMPLATE),
            None => Err(Error::MissingTemplate(event_type.to_string())),
        }
    }

    /// Fills the event's template: each placeholder becomes the comma-joined
    /// fillers of that role, absent roles become empty, and whitespace is
    /// tidied afterwards.
    pub fn fill(&self, event: &EventMention, lookup: &EventLookup<'_>) -> Result<String> {
        let template = self.template_for(&event.event_type)?.replace("><", "> <");
        let mut by_role: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for arg in &event.arguments {
            let text = match &arg.filler {
                ArgFiller::Entity(r) => r.text.clone(),
                ArgFiller::Event(id) => lookup(id)
                    .map(|e| e.trigger_text.clone())
                    .ok_or_else(|| Error::DanglingRef(id.clone()))?,
            };
            by_role
                .entry(role_family(&arg.role))
                .or_default()
                .push(text);
        }
        let mut out = template;
        for name in PLACEHOLDERS {
            let fill = if name == "Trigger" {
                event.trigger_text.clone()
            } else {
                by_role.get(name).map(|v| v.join(", ")).unwrap_or_default()
            };
            out = out.replace(&format!("<{name}>"), &fill);
        }
        Ok(tidy(&out))
    }
}

/// Collapses whitespace and drops spaces left in front of punctuation by
/// empty placeholders.
fn tidy(text: &str) -> String {
    let mut s = text.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let next = s.replace(" ,", ",").replace(" .", ".").replace(",,", ",");
        if next == s {
            return s;
        }
        s = next;
    }
}

/// Sentence encoding of the filled template.
pub fn embed_event_template(
    event: &EventMention,
    templates: &TemplateSet,
    provider: &EmbeddingProvider,
    lookup: &EventLookup<'_>,
) -> Result<Vec<f64>> {
    provider.encode_passage(&templates.fill(event, lookup)?)
}
