use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_specs, params, EncoderModel, HeadConfig, ModelConfig, ParamStore};
use crate::autodiff::checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const MODEL_MANIFEST: &str = "model.toml";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    #[serde(default)]
    heads: HeadConfig,
}

/// Writes the parameter container, its manifest and `model.toml` to `dir`.
pub fn save_model(model: &EncoderModel, dir: &Path) -> Result<()> {
    let entries: Vec<(&str, _)> = model.params.iter().collect();
    save_checkpoint(dir, &entries)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: model.config.clone(),
        heads: model.heads.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let path = dir.join(MODEL_MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_model(dir: &Path) -> Result<EncoderModel> {
    let path = dir.join(MODEL_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported model format version {}",
            manifest.format_version
        )));
    }
    manifest.model.validate()?;
    let mut store = ParamStore::default();
    for (name, t) in load_checkpoint(dir)? {
        store.insert(name, t);
    }
    params::check_against_specs(&store, &param_specs(&manifest.model, &manifest.heads))?;
    Ok(EncoderModel {
        config: manifest.model,
        heads: manifest.heads,
        params: store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = EncoderModel::init(ModelConfig::tiny(300), 1).unwrap();
        m.attach_tok_head(9, 2).unwrap();
        save_model(&m, dir.path()).unwrap();
        assert_eq!(load_model(dir.path()).unwrap(), m);
    }

    #[test]
    fn config_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = EncoderModel::init(ModelConfig::tiny(300), 1).unwrap();
        save_model(&m, dir.path()).unwrap();
        let path = dir.path().join(MODEL_MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("vocab_size = 300", "vocab_size = 301");
        fs::write(&path, text).unwrap();
        assert!(load_model(dir.path()).is_err());
    }
}
