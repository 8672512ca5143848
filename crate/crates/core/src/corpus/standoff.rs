//! BioNLP shared-task standoff annotations (`.txt` / `.a1` / `.a2`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::{
    normalize_key, ArgFiller, BioTag, CorpusBundle, Document, EntityMention, EntityRef,
    EventArgument, EventMention,
};
use crate::{Error, Result};

const SPLIT_PUNCT: &[char] = &[
    '.', ',', ';', ':', '!', '?', '(', ')', '[', ']', '{', '}', '"', '\'',
];

/// A token with character offsets into the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Whitespace tokenization with leading and trailing punctuation split into
/// single-character tokens. Offsets count characters, not bytes.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        let (mut s, mut e) = (i, j);
        let mut head = Vec::new();
        while s < e && SPLIT_PUNCT.contains(&chars[s]) {
            head.push(s);
            s += 1;
        }
        let mut tail = Vec::new();
        while e > s && SPLIT_PUNCT.contains(&chars[e - 1]) {
            e -= 1;
            tail.push(e);
        }
        let single = |k: usize| Token {
            text: chars[k].to_string(),
            start: k,
            end: k + 1,
        };
        tokens.extend(head.into_iter().map(single));
        if s < e {
            tokens.push(Token {
                text: chars[s..e].iter().collect(),
                start: s,
                end: e,
            });
        }
        tokens.extend(tail.into_iter().rev().map(single));
        i = j;
    }
    tokens
}

/// Parsed contents of one standoff triple.
#[derive(Debug, Clone)]
pub struct StandoffDocument {
    pub document: Document,
    /// `.a1` entities plus any `.a2` text-bound annotation used as an argument.
    pub entities: Vec<EntityMention>,
    pub events: Vec<EventMention>,
}

#[derive(Debug, Clone)]
struct TextBound {
    ty: String,
    char_start: usize,
    text: String,
    tok_start: usize,
    tok_end: usize,
    from_a1: bool,
}

fn fields_of(line: &str) -> Vec<&str> {
    line.split('\t').collect()
}

fn parse_textbound(
    line_no: usize,
    line: &str,
    tokens: &[Token],
    from_a1: bool,
) -> Result<(String, TextBound)> {
    let f = fields_of(line);
    if f.len() < 2 {
        return Err(Error::parse(
            line_no,
            "text-bound line needs an id and a type/span field",
        ));
    }
    let id = f[0].trim().to_string();
    let mut parts = f[1].split_whitespace();
    let ty = parts
        .next()
        .ok_or_else(|| Error::parse(line_no, "missing annotation type"))?
        .to_string();
    let spans = parts.collect::<Vec<_>>().join(" ");
    // Discontinuous spans ("s1 e1;s2 e2") are flattened to the covering range.
    let mut bounds = Vec::new();
    for piece in spans.split(';') {
        let nums: Vec<&str> = piece.split_whitespace().collect();
        if nums.len() != 2 {
            return Err(Error::parse(line_no, format!("bad span `{piece}`")));
        }
        let s: usize = nums[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad offset `{}`", nums[0])))?;
        let e: usize = nums[1]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad offset `{}`", nums[1])))?;
        if e <= s {
            return Err(Error::parse(line_no, format!("empty span {s}..{e}")));
        }
        bounds.push((s, e));
    }
    let char_start = bounds.iter().map(|b| b.0).min().unwrap_or(0);
    let char_end = bounds.iter().map(|b| b.1).max().unwrap_or(0);

    // Snap outward to every token the character span touches.
    let covered: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.start < char_end && t.end > char_start)
        .map(|(i, _)| i)
        .collect();
    let (tok_start, tok_end) = match (covered.first(), covered.last()) {
        (Some(&a), Some(&b)) => (a, b + 1),
        _ => {
            return Err(Error::Standoff(format!(
                "span {char_start}..{char_end} of `{id}` covers no token"
            )))
        }
    };
    let text = f.get(2).map(|s| s.to_string()).unwrap_or_default();
    Ok((
        id,
        TextBound {
            ty,
            char_start,
            text,
            tok_start,
            tok_end,
            from_a1,
        },
    ))
}

/// Parses one standoff triple. Ids in the output are prefixed with
/// `doc_id:` so they stay unique once documents are pooled.
pub fn parse_standoff(doc_id: &str, txt: &str, a1: &str, a2: &str) -> Result<StandoffDocument> {
    let tokens = tokenize(txt);
    let mut textbounds: BTreeMap<String, TextBound> = BTreeMap::new();
    let mut tb_order: Vec<String> = Vec::new();

    for (n, line) in a1.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.starts_with('T') {
            let (id, tb) = parse_textbound(n + 1, line, &tokens, true)?;
            tb_order.push(id.clone());
            textbounds.insert(id, tb);
        }
    }

    struct RawEvent {
        id: String,
        ty: String,
        trigger: String,
        args: Vec<(String, String)>,
    }
    let mut raw_events: Vec<RawEvent> = Vec::new();
    let mut raw_mods: Vec<(String, String)> = Vec::new();

    for (n, line) in a2.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        match line.chars().next() {
            Some('T') => {
                let (id, tb) = parse_textbound(line_no, line, &tokens, false)?;
                tb_order.push(id.clone());
                textbounds.insert(id, tb);
            }
            Some('E') => {
                let f = fields_of(line);
                if f.len() < 2 {
                    return Err(Error::parse(
                        line_no,
                        "event line needs an id and arguments",
                    ));
                }
                let mut parts = f[1].split_whitespace();
                let head = parts
                    .next()
                    .ok_or_else(|| Error::parse(line_no, "event without trigger"))?;
                let (ty, trigger) = head
                    .split_once(':')
                    .ok_or_else(|| Error::parse(line_no, format!("bad trigger `{head}`")))?;
                let mut args = Vec::new();
                for p in parts {
                    let (role, target) = p
                        .split_once(':')
                        .ok_or_else(|| Error::parse(line_no, format!("bad argument `{p}`")))?;
                    args.push((role.to_string(), target.to_string()));
                }
                raw_events.push(RawEvent {
                    id: f[0].trim().to_string(),
                    ty: ty.to_string(),
                    trigger: trigger.to_string(),
                    args,
                });
            }
            Some('M') | Some('A') => {
                let f = fields_of(line);
                let parts: Vec<&str> = f
                    .get(1)
                    .map(|s| s.split_whitespace().collect())
                    .unwrap_or_default();
                if parts.len() < 2 {
                    return Err(Error::parse(
                        line_no,
                        "modifier line needs a type and a target",
                    ));
                }
                raw_mods.push((parts[0].to_string(), parts[1].to_string()));
            }
            _ => {}
        }
    }

    let event_ids: BTreeSet<&str> = raw_events.iter().map(|e| e.id.as_str()).collect();
    let prefixed = |id: &str| format!("{doc_id}:{id}");

    let mut used_as_argument: BTreeSet<String> = BTreeSet::new();
    let mut events = Vec::with_capacity(raw_events.len());
    for raw in &raw_events {
        let trig = textbounds
            .get(&raw.trigger)
            .ok_or_else(|| Error::DanglingRef(raw.trigger.clone()))?;
        let mut arguments = Vec::new();
        for (role, target) in &raw.args {
            let filler = if event_ids.contains(target.as_str()) {
                ArgFiller::Event(prefixed(target))
            } else if let Some(tb) = textbounds.get(target) {
                used_as_argument.insert(target.clone());
                ArgFiller::Entity(EntityRef {
                    id: prefixed(target),
                    text: tb.text.clone(),
                    key: span_key(&tokens, tb.tok_start, tb.tok_end),
                })
            } else {
                return Err(Error::DanglingRef(target.clone()));
            };
            arguments.push(EventArgument {
                role: role.clone(),
                filler,
            });
        }
        events.push(EventMention {
            id: prefixed(&raw.id),
            doc_id: doc_id.to_string(),
            event_type: raw.ty.clone(),
            trigger_text: trig.text.clone(),
            trigger_tokens: Some((trig.tok_start, trig.tok_end)),
            modifiers: BTreeSet::new(),
            arguments,
        });
    }
    let index: HashMap<String, usize> = events
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.clone(), i))
        .collect();
    for (modifier, target) in raw_mods {
        let i = index
            .get(&prefixed(&target))
            .ok_or_else(|| Error::DanglingRef(target.clone()))?;
        events[*i].modifiers.insert(modifier);
    }

    let token_texts: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
    let mut entities = Vec::new();
    for id in &tb_order {
        let tb = &textbounds[id];
        if tb.from_a1 || used_as_argument.contains(id) {
            entities.push(EntityMention::from_tokens(
                prefixed(id),
                doc_id,
                &token_texts,
                tb.tok_start,
                tb.tok_end,
                tb.ty.clone(),
            ));
        }
    }

    // Tags come from `.a1` only; overlapping annotations keep the earliest,
    // then longest, span.
    let mut a1_spans: Vec<&TextBound> = textbounds.values().filter(|t| t.from_a1).collect();
    a1_spans.sort_by(|a, b| {
        a.tok_start
            .cmp(&b.tok_start)
            .then(b.tok_end.cmp(&a.tok_end))
            .then(a.char_start.cmp(&b.char_start))
    });
    let mut tags = vec![BioTag::Outside; tokens.len()];
    let mut covered_until = 0;
    for tb in a1_spans {
        if tb.tok_start < covered_until {
            continue;
        }
        tags[tb.tok_start] = BioTag::Begin(tb.ty.clone());
        for tag in &mut tags[tb.tok_start + 1..tb.tok_end] {
            *tag = BioTag::Inside(tb.ty.clone());
        }
        covered_until = tb.tok_end;
    }
    let document = Document::new(doc_id, token_texts, tags)?;

    // Acyclicity is checked on the per-document graph before pooling.
    CorpusBundle::new(Vec::new(), entities.clone(), events.clone())?;

    Ok(StandoffDocument {
        document,
        entities,
        events,
    })
}

fn span_key(tokens: &[Token], start: usize, end: usize) -> String {
    let joined = tokens[start..end]
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    normalize_key(&joined)
}

/// Text of a standoff triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StandoffFiles {
    pub txt: String,
    pub a1: String,
    pub a2: String,
}

/// Serializes a document with its `.a1` entities and events. The text is the
/// tokens joined by single spaces; ids are renumbered `T1..`, `E1..`, `M1..`.
pub fn to_standoff(
    document: &Document,
    entities: &[EntityMention],
    events: &[EventMention],
) -> Result<StandoffFiles> {
    let mut offsets = Vec::with_capacity(document.tokens.len());
    let mut txt = String::new();
    let mut pos = 0;
    for (i, tok) in document.tokens.iter().enumerate() {
        if i > 0 {
            txt.push(' ');
            pos += 1;
        }
        let n = tok.chars().count();
        offsets.push((pos, pos + n));
        txt.push_str(tok);
        pos += n;
    }
    txt.push('\n');
    let span_text = |s: usize, e: usize| document.tokens[s..e].join(" ");

    let mut a1 = String::new();
    let mut tb_ids: HashMap<&str, String> = HashMap::new();
    for (n, ent) in entities.iter().enumerate() {
        let id = format!("T{}", n + 1);
        a1.push_str(&format!(
            "{id}\t{} {} {}\t{}\n",
            ent.entity_type,
            offsets[ent.start].0,
            offsets[ent.end - 1].1,
            span_text(ent.start, ent.end)
        ));
        tb_ids.insert(ent.id.as_str(), id);
    }

    let mut a2 = String::new();
    let ev_ids: HashMap<&str, String> = events
        .iter()
        .enumerate()
        .map(|(n, e)| (e.id.as_str(), format!("E{}", n + 1)))
        .collect();
    let mut event_lines = String::new();
    let mut mod_lines = String::new();
    let mut next_m = 1;
    for (next_t, ev) in (entities.len() + 1..).zip(events) {
        let (ts, te) = ev.trigger_tokens.ok_or_else(|| {
            Error::invalid(format!(
                "event `{}` has no trigger span to serialize",
                ev.id
            ))
        })?;
        let trig = format!("T{next_t}");
        a2.push_str(&format!(
            "{trig}\t{} {} {}\t{}\n",
            ev.event_type.replace(' ', "_"),
            offsets[ts].0,
            offsets[te - 1].1,
            span_text(ts, te)
        ));
        let mut line = format!(
            "{}\t{}:{trig}",
            ev_ids[ev.id.as_str()],
            ev.event_type.replace(' ', "_")
        );
        for arg in &ev.arguments {
            let target = match &arg.filler {
                ArgFiller::Entity(r) => tb_ids
                    .get(r.id.as_str())
                    .cloned()
                    .ok_or_else(|| Error::DanglingRef(r.id.clone()))?,
                ArgFiller::Event(id) => ev_ids
                    .get(id.as_str())
                    .cloned()
                    .ok_or_else(|| Error::DanglingRef(id.clone()))?,
            };
            line.push_str(&format!(" {}:{target}", arg.role));
        }
        event_lines.push_str(&line);
        event_lines.push('\n');
        for m in &ev.modifiers {
            mod_lines.push_str(&format!("M{next_m}\t{m} {}\n", ev_ids[ev.id.as_str()]));
            next_m += 1;
        }
    }
    a2.push_str(&event_lines);
    a2.push_str(&mod_lines);
    Ok(StandoffFiles { txt, a1, a2 })
}

/// Loads every `<name>.txt` in `dir` with its `.a1` / `.a2` companions
/// (missing companions read as empty), sorted by name.
pub fn load_standoff_dir(dir: &Path) -> Result<CorpusBundle> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    let read_opt = |path: &Path| -> Result<String> {
        match fs::read_to_string(path) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(e.into()),
        }
    };
    let mut documents = Vec::new();
    let mut entities = Vec::new();
    let mut events = Vec::new();
    for name in names {
        let txt = fs::read_to_string(dir.join(format!("{name}.txt")))?;
        let a1 = read_opt(&dir.join(format!("{name}.a1")))?;
        let a2 = read_opt(&dir.join(format!("{name}.a2")))?;
        let parsed = parse_standoff(&name, &txt, &a1, &a2)
            .map_err(|e| Error::Standoff(format!("{name}: {e}")))?;
        documents.push(parsed.document);
        entities.extend(parsed.entities);
        events.extend(parsed.events);
    }
    CorpusBundle::new(documents, entities, events)
}

/// Writes a bundle as standoff triples named after the document ids. Entities
/// written to `.a1` are the tag-derived gold entities of each document.
pub fn write_standoff_dir(dir: &Path, bundle: &CorpusBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut by_doc: BTreeMap<&str, Vec<EventMention>> = BTreeMap::new();
    for ev in bundle.events() {
        by_doc
            .entry(ev.doc_id.as_str())
            .or_default()
            .push(ev.clone());
    }
    let mut doc_entities: BTreeMap<&str, Vec<EntityMention>> = BTreeMap::new();
    for ent in bundle.entities() {
        doc_entities
            .entry(ent.doc_id.as_str())
            .or_default()
            .push(ent.clone());
    }
    for doc in bundle.documents() {
        let ents = doc_entities.remove(doc.id.as_str()).unwrap_or_default();
        let evs = by_doc.remove(doc.id.as_str()).unwrap_or_default();
        let files = to_standoff(doc, &ents, &evs)?;
        fs::write(dir.join(format!("{}.txt", doc.id)), files.txt)?;
        fs::write(dir.join(format!("{}.a1", doc.id)), files.a1)?;
        fs::write(dir.join(format!("{}.a2", doc.id)), files.a2)?;
    }
    Ok(())
}
