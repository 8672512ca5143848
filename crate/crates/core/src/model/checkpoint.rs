use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params, TaggerModel, Vocab};
use crate::corpus::BioTag;
use crate::{Error, Result};

pub const FORMAT: &str = "cts-ckpt-1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    vocab: Vec<String>,
    tags: Vec<BioTag>,
    params: Params,
}

impl TaggerModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointFile {
            format: FORMAT.to_string(),
            config: self.config,
            vocab: self.vocab.tokens().to_vec(),
            tags: self.tags.clone(),
            params: self.params.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}`, expected `{FORMAT}`",
                file.format
            )));
        }
        file.config.validate()?;
        let model = TaggerModel::from_parts(
            file.config,
            Vocab::from_tokens(file.vocab)?,
            file.tags,
            file.params,
        )?;
        if !model.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::fixture;

    #[test]
    fn round_trip_is_bit_exact() {
        let (mut m, doc) = fixture();
        // Values that need all 17 significant digits.
        m.params.b_out[0] = 0.1 + 0.2;
        m.params.embed[3] = 1.0 / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save_checkpoint(&path).unwrap();
        let back = TaggerModel::load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        let (a, b) = (m.forward(&doc), back.forward(&doc));
        for (x, y) in a.logits.iter().flatten().zip(b.logits.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn truncated_file_fails() {
        let (m, _) = fixture();
        let json = m.to_json().unwrap();
        let err = TaggerModel::from_json(&json[..json.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn version_mismatch() {
        let (m, _) = fixture();
        let json = m.to_json().unwrap().replace(FORMAT, "cts-ckpt-0");
        let err = TaggerModel::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("cts-ckpt-0"));
    }

    #[test]
    fn tag_count_mismatch() {
        let (m, _) = fixture();
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["tags"].as_array_mut().unwrap().pop();
        let err = TaggerModel::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        let fewer = crate::model::tag_inventory(["Chem"]);
        assert!(matches!(m.expect_tags(&fewer), Err(Error::Shape(_))));
    }
}
