use crate::corpus::{BioTag, Document};
use crate::{Error, Result};

const DOCSTART: &str = "-DOCSTART-";

/// Parses `token<TAB>tag` lines. Blank lines and `-DOCSTART-` lines close the
/// current passage; a single whitespace-free word after `-DOCSTART-` names the
/// next document.
pub fn parse_conll(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut pending_id: Option<String> = None;

    let flush = |tokens: &mut Vec<String>,
                 tags: &mut Vec<BioTag>,
                 pending_id: &mut Option<String>,
                 docs: &mut Vec<Document>|
     -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let id = pending_id
            .take()
            .unwrap_or_else(|| format!("doc{:05}", docs.len()));
        docs.push(Document::new(
            id,
            std::mem::take(tokens),
            std::mem::take(tags),
        )?);
        Ok(())
    };

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut pending_id, &mut docs)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix(DOCSTART) {
            flush(&mut tokens, &mut tags, &mut pending_id, &mut docs)?;
            let rest = rest.trim();
            pending_id =
                (!rest.is_empty() && !rest.contains(char::is_whitespace)).then(|| rest.to_string());
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(
                line_no,
                format!("expected `token<TAB>tag`, found {} fields", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(Error::parse(line_no, "empty token"));
        }
        let tag: BioTag = fields[1]
            .trim()
            .parse()
            .map_err(|e: Error| Error::parse(line_no, e.to_string()))?;
        tokens.push(fields[0].to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags, &mut pending_id, &mut docs)?;
    Ok(docs)
}

/// Canonical CoNLL form: each document preceded by `-DOCSTART- <id>` and
/// followed by a blank line.
pub fn write_conll(docs: &[Document]) -> String {
    let mut out = String::new();
    for doc in docs {
        out.push_str(DOCSTART);
        out.push(' ');
        out.push_str(&doc.id);
        out.push('\n');
        for (tok, tag) in doc.tokens.iter().zip(&doc.tags) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
