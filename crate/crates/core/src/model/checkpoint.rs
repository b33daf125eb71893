use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ParamLayout};
use crate::container::{self, Tensor};
use crate::error::{Error, Result};

/// Adam first and second moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub param_count: usize,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub manifest_hash: String,
    pub adam_t: Option<u64>,
}

/// Model parameters, optimizer state and provenance, saved as one container file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f32>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(model: &Model<f32>, adam: Option<AdamState>, step: u64, epoch: usize, manifest_hash: &str) -> Self {
        Self {
            meta: CheckpointMeta {
                config: model.config.clone(),
                param_count: model.param_count(),
                step,
                epoch,
                manifest_hash: manifest_hash.to_string(),
                adam_t: adam.as_ref().map(|a| a.t),
            },
            params: model.params.clone(),
            adam,
        }
    }

    pub fn model(&self) -> Result<Model<f32>> {
        Model::from_params(self.meta.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = ParamLayout::new(&self.meta.config);
        if layout.total != self.params.len() {
            return Err(Error::Integrity(format!("{} parameters, config implies {}", self.params.len(), layout.total)));
        }
        let mut tensors: Vec<Tensor<'_>> = layout
            .entries
            .iter()
            .map(|e| Tensor { name: e.name.clone(), shape: e.shape.clone(), data: &self.params[e.start..e.end] })
            .collect();
        if let Some(a) = &self.adam {
            tensors.push(Tensor { name: "adam.m".into(), shape: vec![a.m.len()], data: &a.m });
            tensors.push(Tensor { name: "adam.v".into(), shape: vec![a.v.len()], data: &a.v });
        }
        container::encode(&self.meta, &tensors)
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut dec = container::decode::<CheckpointMeta>(bytes, context)?;
        let meta = dec.meta.clone();
        let layout = ParamLayout::new(&meta.config);
        if layout.total != meta.param_count {
            return Err(Error::Integrity(format!(
                "{context}: header reports {} parameters, config implies {}",
                meta.param_count, layout.total
            )));
        }
        let mut params = vec![0.0f32; layout.total];
        for e in &layout.entries {
            let (entry, data) =
                dec.take(&e.name).ok_or_else(|| Error::Integrity(format!("{context}: missing tensor `{}`", e.name)))?;
            if entry.shape != e.shape {
                return Err(Error::Integrity(format!(
                    "{context}: tensor `{}` has shape {:?}, expected {:?}",
                    e.name, entry.shape, e.shape
                )));
            }
            params[e.start..e.end].copy_from_slice(&data);
        }
        let adam = match meta.adam_t {
            Some(t) => {
                let mut moment = |name: &str| -> Result<Vec<f32>> {
                    let (_, data) =
                        dec.take(name).ok_or_else(|| Error::Integrity(format!("{context}: missing tensor `{name}`")))?;
                    if data.len() != layout.total {
                        return Err(Error::Integrity(format!("{context}: `{name}` has {} values", data.len())));
                    }
                    Ok(data)
                };
                let m = moment("adam.m")?;
                let v = moment("adam.v")?;
                Some(AdamState { m, v, t })
            }
            None => None,
        };
        Ok(Self { meta, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Hex sha256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model<f32> {
        Model::new(ModelConfig {
            hidden_dim: 8,
            n_layers: 1,
            n_heads: 2,
            vocab_size: 9,
            patch_dim: 12,
            max_patches: 4,
            max_text_len: 6,
            mlp_ratio: 2,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let m = model();
        let mut adam = AdamState::zeros(m.param_count());
        adam.m[3] = 1.5e-7;
        adam.v[7] = f32::MIN_POSITIVE;
        adam.t = 12;
        let ck = Checkpoint::new(&m, Some(adam), 12, 3, "abc");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert!(back.params.iter().zip(&ck.params).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.hash().unwrap(), ck.hash().unwrap());
    }

    #[test]
    fn without_optimizer_state() {
        let ck = Checkpoint::new(&model(), None, 0, 0, "");
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap(), "mem").unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap().params, ck.params);
    }

    #[test]
    fn truncated_file_is_an_integrity_error() {
        let bytes = Checkpoint::new(&model(), None, 0, 0, "").to_bytes().unwrap();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 4], "mem").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }
}
