//! A trained model on disk: the checkpoint at `path` plus a JSON sidecar at
//! `path.meta` holding the configuration and class names.

use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, OrientationAwareModel};
use crate::error::{Error, Result};
use crate::numerics::{read_checkpoint, write_checkpoint, ParamStore};

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    classes: Vec<String>,
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

#[derive(Debug)]
pub struct ModelBundle {
    pub model: OrientationAwareModel,
    pub store: ParamStore,
    /// Class names in logit order.
    pub classes: Vec<String>,
}

impl ModelBundle {
    pub fn new(model: OrientationAwareModel, store: ParamStore, classes: Vec<String>) -> Result<Self> {
        model.check_params(&store)?;
        if classes.len() != model.config().num_classes {
            return Err(Error::Checkpoint(format!(
                "{} class names for {} logits",
                classes.len(),
                model.config().num_classes
            )));
        }
        Ok(Self { model, store, classes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&self.store, &mut out)?;
        out.flush()?;
        let meta = Meta {
            config: self.model.config().clone(),
            classes: self.classes.clone(),
        };
        std::fs::write(meta_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_file = meta_path(path);
        let text = std::fs::read_to_string(&meta_file)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", meta_file.display())))?;
        let meta: Meta = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("bad sidecar {}: {e}", meta_file.display())))?;
        let store = read_checkpoint(BufReader::new(std::fs::File::open(path)?))?;
        Self::new(OrientationAwareModel::new(meta.config)?, store, meta.classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_config;
    use rand::SeedableRng;

    #[test]
    fn save_load_is_bit_exact() {
        let model = OrientationAwareModel::new(tiny_config(3)).unwrap();
        let store = model.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let classes = vec!["a".to_string(), "b".into(), "c".into()];
        let bundle = ModelBundle::new(model, store, classes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        bundle.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back.classes, bundle.classes);
        assert_eq!(back.model.config(), bundle.model.config());
        for (name, t) in bundle.store.iter() {
            let u = back.store.get(name).unwrap();
            assert_eq!(t.shape(), u.shape());
            assert!(t
                .data()
                .iter()
                .zip(u.data())
                .all(|(a, b)| (*a as f32 as f64).to_bits() == b.to_bits()));
        }
        let again = dir.path().join("n.ckpt");
        back.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        assert_eq!(std::fs::read(meta_path(&path)).unwrap(), std::fs::read(meta_path(&again)).unwrap());
    }

    #[test]
    fn missing_sidecar_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"OAZR1\n").unwrap();
        assert!(matches!(ModelBundle::load(&path), Err(Error::Checkpoint(_))));
    }
}
