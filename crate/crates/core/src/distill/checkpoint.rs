//! Model checkpoints on top of the tensor container.
//!
//! Tensors are stored as `param/<name>` for every parameter and buffer, and
//! optionally `adam.m/<name>` / `adam.v/<name>` for optimizer moments. The
//! metadata records the model configuration, the epoch, and the optimizer
//! step count.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::align::ADAPTER_PREFIX;
use super::container::{Container, FORMAT_VERSION};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::StereoNet;
use crate::nn::{Adam, ParamKind, ParamStore};
use crate::tensor::Tensor;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    kind: String,
    model: Option<ModelConfig>,
    epoch: Option<usize>,
    adam_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// `(name, m, v)` per trainable parameter that has been updated.
    pub moments: Vec<(String, Tensor, Tensor)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: Option<ModelConfig>,
    /// Number of completed epochs.
    pub epoch: Option<usize>,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_store(
        model: Option<&ModelConfig>,
        store: &ParamStore,
        epoch: Option<usize>,
        adam: Option<&Adam>,
    ) -> Self {
        let params = store.entries().map(|(_, e)| (e.name.clone(), e.value.clone())).collect();
        let optimizer = adam.map(|a| OptimizerState {
            step: a.steps_taken(),
            moments: store
                .entries()
                .filter(|(_, e)| e.kind == ParamKind::Trainable)
                .filter_map(|(id, e)| {
                    a.moments(id).map(|(m, v)| {
                        let s = e.value.shape();
                        (
                            e.name.clone(),
                            Tensor::from_vec(s, m.to_vec()).unwrap(),
                            Tensor::from_vec(s, v.to_vec()).unwrap(),
                        )
                    })
                })
                .collect(),
        });
        Checkpoint { format_version: FORMAT_VERSION, model: model.cloned(), epoch, params, optimizer }
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = Meta {
            kind: "checkpoint".into(),
            model: self.model.clone(),
            epoch: self.epoch,
            adam_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let mut c = Container::new(serde_json::to_value(meta).expect("metadata serializes"));
        for (name, t) in &self.params {
            c.insert(format!("{PARAM}{name}"), t.clone())?;
        }
        if let Some(o) = &self.optimizer {
            for (name, m, v) in &o.moments {
                c.insert(format!("{ADAM_M}{name}"), m.clone())?;
                c.insert(format!("{ADAM_V}{name}"), v.clone())?;
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let c = Container::read(path)?;
        let meta: Meta = serde_json::from_value(c.metadata.clone())
            .map_err(|e| Error::format(path, format!("checkpoint metadata: {e}")))?;
        if meta.kind != "checkpoint" {
            return Err(Error::format(path, format!("expected a checkpoint, found {:?}", meta.kind)));
        }
        let mut params = Vec::new();
        let mut ms = Vec::new();
        let mut vs = std::collections::HashMap::new();
        for (name, t) in c.tensors() {
            if let Some(n) = name.strip_prefix(PARAM) {
                params.push((n.to_string(), t.clone()));
            } else if let Some(n) = name.strip_prefix(ADAM_M) {
                ms.push((n.to_string(), t.clone()));
            } else if let Some(n) = name.strip_prefix(ADAM_V) {
                vs.insert(n.to_string(), t.clone());
            } else {
                return Err(Error::format(path, format!("unexpected tensor {name}")));
            }
        }
        let optimizer = match meta.adam_step {
            Some(step) => Some(OptimizerState {
                step,
                moments: ms
                    .into_iter()
                    .map(|(n, m)| {
                        let v = vs
                            .remove(&n)
                            .ok_or_else(|| Error::format(path, format!("missing second moment of {n}")))?;
                        Ok((n, m, v))
                    })
                    .collect::<Result<_>>()?,
            }),
            None => None,
        };
        Ok(Checkpoint { format_version: FORMAT_VERSION, model: meta.model, epoch: meta.epoch, params, optimizer })
    }

    /// Copies values into `store`. Every store entry must be present with
    /// the same shape; checkpoint entries under `ignore_prefix` may be absent
    /// from the store, any other extra entry is an error.
    pub fn load_into(&self, store: &mut ParamStore, ignore_prefix: Option<&str>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, t) in &self.params {
            match store.id(name) {
                Some(id) => {
                    if store.value(id).shape() != t.shape() {
                        return Err(Error::Shape(format!(
                            "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                            t.shape(),
                            store.value(id).shape()
                        )));
                    }
                    *store.value_mut(id) = t.clone();
                    seen.insert(name.as_str());
                }
                None if ignore_prefix.is_some_and(|p| name.starts_with(p)) => {}
                None => return Err(Error::Shape(format!("checkpoint parameter {name} does not exist in the model"))),
            }
        }
        if let Some((_, e)) = store.entries().find(|(_, e)| !seen.contains(e.name.as_str())) {
            return Err(Error::Shape(format!("parameter {} missing from checkpoint", e.name)));
        }
        Ok(())
    }

    /// Builds the recorded (or given) network and loads the weights into it;
    /// adapter parameters are skipped.
    pub fn build_model(&self, config: Option<&ModelConfig>, origin: &Path) -> Result<(StereoNet, ParamStore)> {
        let cfg = match (config, &self.model) {
            (Some(c), Some(m)) if c != m => {
                return Err(Error::Config(format!(
                    "checkpoint {} holds {}, not {}",
                    origin.display(),
                    m.name(),
                    c.name()
                )))
            }
            (Some(c), _) => c.clone(),
            (None, Some(m)) => m.clone(),
            (None, None) => {
                return Err(Error::Config(format!("checkpoint {} records no model config", origin.display())))
            }
        };
        let mut store = ParamStore::new();
        let net = StereoNet::build(&cfg, &mut store, "", 0)?;
        self.load_into(&mut store, Some(ADAPTER_PREFIX))?;
        Ok((net, store))
    }

    pub fn restore_optimizer(&self, store: &ParamStore, adam: &mut Adam) -> Result<()> {
        let Some(o) = &self.optimizer else { return Ok(()) };
        for (name, m, v) in &o.moments {
            let id =
                store.id(name).ok_or_else(|| Error::Shape(format!("optimizer state for unknown parameter {name}")))?;
            adam.restore(o.step, id, m.data().to_vec(), v.data().to_vec());
        }
        Ok(())
    }
}
