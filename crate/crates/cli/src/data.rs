//! On-disk corpus layout.
//!
//! ```text
//! source/train/               standoff triples (.txt, .a1, .a2) with events
//! source/train.conll          the same documents as CoNLL
//! source/valid.conll
//! target/{train,valid,test}.conll
//! target/test.distractors.json  optional untagged source-domain mentions
//! ```

use std::fs;
use std::path::Path;

use anyhow::Context;

use ctner::corpus::{
    load_standoff_dir, parse_conll, write_conll, write_standoff_dir, CorpusBundle, Document,
    EntityMention, SyntheticCorpora,
};
use ctner::pipeline::ExperimentData;

pub fn read_conll(path: &Path) -> anyhow::Result<Vec<Document>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_conll(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Source training bundle: standoff when `train/` exists, CoNLL otherwise
/// (no events then).
pub fn load_source_train(dir: &Path) -> anyhow::Result<CorpusBundle> {
    let standoff = dir.join("train");
    if standoff.is_dir() {
        load_standoff_dir(&standoff).with_context(|| format!("loading {}", standoff.display()))
    } else {
        Ok(CorpusBundle::from_documents(read_conll(
            &dir.join("train.conll"),
        )?))
    }
}

pub fn load_target_test(dir: &Path) -> anyhow::Result<CorpusBundle> {
    let docs = read_conll(&dir.join("test.conll"))?;
    let path = dir.join("test.distractors.json");
    let distractors: Vec<EntityMention> = if path.exists() {
        serde_json::from_str(&fs::read_to_string(&path)?)
            .with_context(|| format!("parsing {}", path.display()))?
    } else {
        Vec::new()
    };
    Ok(CorpusBundle::from_documents(docs).with_distractors(distractors))
}

pub fn load_experiment(source: &Path, target: &Path) -> anyhow::Result<ExperimentData> {
    Ok(ExperimentData {
        source_train: load_source_train(source)?,
        source_valid: read_conll(&source.join("valid.conll"))?,
        target_train: read_conll(&target.join("train.conll"))?,
        target_valid: read_conll(&target.join("valid.conll"))?,
        target_test: load_target_test(target)?,
    })
}

pub fn write_synthetic(out: &Path, corpora: &SyntheticCorpora) -> anyhow::Result<()> {
    let source = out.join("source");
    let target = out.join("target");
    fs::create_dir_all(&source)?;
    fs::create_dir_all(&target)?;
    write_standoff_dir(&source.join("train"), &corpora.source)?;
    fs::write(
        source.join("train.conll"),
        write_conll(corpora.source.documents()),
    )?;
    fs::write(
        source.join("valid.conll"),
        write_conll(&corpora.source_valid),
    )?;
    let splits = [
        ("train", &corpora.target),
        ("valid", &corpora.target_valid),
        ("test", &corpora.target_test),
    ];
    for (name, bundle) in splits {
        fs::write(
            target.join(format!("{name}.conll")),
            write_conll(bundle.documents()),
        )?;
        fs::write(
            target.join(format!("{name}.distractors.json")),
            serde_json::to_string_pretty(bundle.distractors())?,
        )?;
    }
    Ok(())
}
