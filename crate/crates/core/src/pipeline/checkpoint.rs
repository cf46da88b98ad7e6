use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use its_tensor::tsr1::{self, DType, RawTensor};
use its_tensor::{Adam, ParamStore};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::config::{ModelConfig, Stage};

pub const PARAMS_FILE: &str = "params.tsr1c";
pub const OPTIMIZER_FILE: &str = "optimizer.tsr1c";
pub const META_FILE: &str = "meta.json";
pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub step: usize,
    pub config_hash: String,
    pub corpus_hash: String,
    pub seed: u64,
    pub frozen: Vec<String>,
    pub threads: usize,
    pub optimizer_step: u64,
    pub model: ModelConfig,
}

/// Parameters, Adam moments and metadata of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<(String, RawTensor)>,
    /// Adam moments keyed by parameter name.
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn capture(meta: CheckpointMeta, store: &ParamStore, adam: &Adam) -> Checkpoint {
        let params = store.iter().map(|p| (p.name.clone(), RawTensor::from_tensor(&p.tensor))).collect();
        let moments = adam.state().map(|(n, m, v)| (n.to_string(), (m.to_vec(), v.to_vec()))).collect();
        Checkpoint { meta: CheckpointMeta { optimizer_step: adam.steps_taken(), ..meta }, params, moments }
    }

    pub fn param(&self, name: &str) -> Option<&RawTensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies every parameter whose name starts with `prefix` into `store`; returns how many.
    pub fn load_into(&self, store: &ParamStore, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, t) in self.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
            store.load(name, &t.shape, t.data.clone())?;
            n += 1;
        }
        let expected = store.iter().filter(|p| p.name.starts_with(prefix)).count();
        if n != expected {
            return Err(invalid(format!("checkpoint has {n} of {expected} parameters under {prefix:?}")));
        }
        Ok(n)
    }

    pub fn adam(&self) -> Adam {
        let mut adam = Adam::default();
        adam.restore(self.meta.optimizer_step, self.moments.clone());
        adam
    }

    pub fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.meta.stage != stage {
            return Err(Error::StageMismatch { expected: stage.name().into(), found: self.meta.stage.name().into() });
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        tsr1::save_container(dir.join(PARAMS_FILE), self.params.iter().map(|(n, t)| (n.as_str(), t)), DType::F64)?;
        let mut records = Vec::with_capacity(2 * self.moments.len());
        for (name, (m, v)) in &self.moments {
            records.push((format!("m/{name}"), RawTensor::new(vec![m.len()], m.clone())));
            records.push((format!("v/{name}"), RawTensor::new(vec![v.len()], v.clone())));
        }
        tsr1::save_container(dir.join(OPTIMIZER_FILE), records.iter().map(|(n, t)| (n.as_str(), t)), DType::F64)?;
        let mut meta = serde_json::to_string_pretty(&self.meta)?;
        meta.push('\n');
        fs::write(dir.join(META_FILE), meta)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint> {
        let dir = dir.as_ref();
        let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        let params = tsr1::load_container(dir.join(PARAMS_FILE))?;
        let mut first: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut moments = BTreeMap::new();
        for (name, t) in tsr1::load_container(dir.join(OPTIMIZER_FILE))? {
            if let Some(n) = name.strip_prefix("m/") {
                first.insert(n.to_string(), t.data);
            } else if let Some(n) = name.strip_prefix("v/") {
                let m = first.remove(n).ok_or_else(|| invalid(format!("optimizer record v/{n} without m/{n}")))?;
                moments.insert(n.to_string(), (m, t.data));
            } else {
                return Err(invalid(format!("unexpected optimizer record {name:?}")));
            }
        }
        if let Some(n) = first.keys().next() {
            return Err(invalid(format!("optimizer record m/{n} without v/{n}")));
        }
        Ok(Checkpoint { meta, params, moments })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use its_tensor::Tensor;

    #[test]
    fn roundtrip_with_moments() {
        let mut store = ParamStore::new();
        let w = store.add("a/w", Tensor::from_slice(&[0.1, 0.2, 0.3]));
        w.mul(&w).unwrap().sum().backward().unwrap();
        let mut adam = Adam::default();
        adam.step(&store, 0.1).unwrap();
        let meta = CheckpointMeta {
            stage: Stage::Encoder,
            step: 1,
            config_hash: "x".into(),
            corpus_hash: "y".into(),
            seed: 3,
            frozen: vec![],
            threads: 1,
            optimizer_step: 0,
            model: ModelConfig::default(),
        };
        let ck = Checkpoint::capture(meta, &store, &adam);
        assert_eq!(ck.meta.optimizer_step, 1);
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert!(back.expect_stage(Stage::Its).is_err());
        let fresh = ParamStore::new();
        assert!(back.load_into(&fresh, "a/").is_err());
    }
}
