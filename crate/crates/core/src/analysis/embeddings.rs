use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, Tensor};
use crate::error::{Error, Result};
use crate::latent::Attribute;
use crate::scenegen::Subset;

/// Attribute values of an object, indexed in `Attribute::ALL` order
/// (shape, color, material, size).
pub type AttributeTuple = [usize; 4];

pub fn attr_index(attribute: Attribute) -> usize {
    Attribute::ALL.iter().position(|&a| a == attribute).expect("attribute in ALL")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub subset: Subset,
    pub sample_id: usize,
    pub entity_index: usize,
    pub attributes: AttributeTuple,
    pub masked: Attribute,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub vector: Vec<f32>,
    pub meta: EmbeddingMeta,
}

impl EmbeddingRecord {
    pub fn value(&self, attribute: Attribute) -> usize {
        self.meta.attributes[attr_index(attribute)]
    }
}

/// Representation vectors of objects, each tagged with the object's latent values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
    /// Hashes of the checkpoint and dataset the vectors came from, when known.
    pub checkpoint_hash: Option<String>,
    pub manifest_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct FileMeta {
    dim: usize,
    count: usize,
    attribute_schema: Vec<Attribute>,
    records: Vec<EmbeddingMeta>,
    checkpoint_hash: Option<String>,
    manifest_hash: Option<String>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn push(&mut self, vector: Vec<f32>, meta: EmbeddingMeta) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::param("vector", format!("dimension {} (set has {})", vector.len(), self.dim)));
        }
        self.records.push(EmbeddingRecord { vector, meta });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records whose vectors were taken at the masked position of `attribute`.
    pub fn for_task(&self, attribute: Attribute) -> EmbeddingSet {
        EmbeddingSet {
            dim: self.dim,
            records: self.records.iter().filter(|r| r.meta.masked == attribute).cloned().collect(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            manifest_hash: self.manifest_hash.clone(),
        }
    }

    /// Applies `f` to every vector.
    pub fn map_vectors(&self, f: impl Fn(&[f32]) -> Vec<f32>) -> EmbeddingSet {
        let records: Vec<EmbeddingRecord> =
            self.records.iter().map(|r| EmbeddingRecord { vector: f(&r.vector), meta: r.meta.clone() }).collect();
        EmbeddingSet {
            dim: records.first().map_or(self.dim, |r| r.vector.len()),
            records,
            checkpoint_hash: self.checkpoint_hash.clone(),
            manifest_hash: self.manifest_hash.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = FileMeta {
            dim: self.dim,
            count: self.records.len(),
            attribute_schema: Attribute::ALL.to_vec(),
            records: self.records.iter().map(|r| r.meta.clone()).collect(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            manifest_hash: self.manifest_hash.clone(),
        };
        let flat: Vec<f32> = self.records.iter().flat_map(|r| r.vector.iter().copied()).collect();
        container::write_file(
            path,
            &meta,
            &[Tensor { name: "vectors".into(), shape: vec![self.records.len(), self.dim], data: &flat }],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut decoded = container::read_file::<FileMeta>(path)?;
        let meta = decoded.meta;
        let bad = |why: &str| Error::Integrity(format!("{}: {why}", path.display()));
        if meta.attribute_schema != Attribute::ALL.to_vec() {
            return Err(bad("unexpected attribute schema"));
        }
        if meta.records.len() != meta.count {
            return Err(bad("record count mismatch"));
        }
        let (entry, flat) = decoded.tensors.pop().ok_or_else(|| bad("missing vectors"))?;
        if entry.shape != [meta.count, meta.dim] {
            return Err(bad("vector payload shape mismatch"));
        }
        let records = meta
            .records
            .into_iter()
            .enumerate()
            .map(|(i, m)| EmbeddingRecord { vector: flat[i * meta.dim..(i + 1) * meta.dim].to_vec(), meta: m })
            .collect();
        Ok(Self { dim: meta.dim, records, checkpoint_hash: meta.checkpoint_hash, manifest_hash: meta.manifest_hash })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip() {
        let mut set = EmbeddingSet::new(3);
        for i in 0..4 {
            set.push(
                vec![i as f32, 0.5, -1.0],
                EmbeddingMeta {
                    subset: Subset::TestOod,
                    sample_id: i,
                    entity_index: 1,
                    attributes: [1, i, 0, 1],
                    masked: Attribute::Shape,
                },
            )
            .unwrap();
        }
        set.manifest_hash = Some("abc".into());
        assert!(set.push(vec![0.0], set.records[0].meta.clone()).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        set.save(&path).unwrap();
        assert_eq!(EmbeddingSet::load(&path).unwrap(), set);
    }
}
