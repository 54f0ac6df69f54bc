//! Versioned model checkpoints.
//!
//! Layout: the version line `fbnet-ckpt-v1`, one line of JSON metadata
//! (configuration echo and the name and shape of every stored array), then
//! the arrays as little-endian `f64`: parameter values in metadata order,
//! followed by the optimizer's first and second moments when present.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FbNet, FbNetConfig};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_VERSION: &str = "fbnet-ckpt-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: FbNetConfig,
    pub epoch: usize,
    pub params: Vec<ArrayMeta>,
    /// Adam step count, present when moments are stored.
    pub optimizer_step: Option<u64>,
    /// Free-form context such as the training configuration.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub type Moments = (Vec<Tensor<f64>>, Vec<Tensor<f64>>);

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub values: Vec<Tensor<f64>>,
    /// Adam first and second moments.
    pub moments: Option<Moments>,
}

impl Checkpoint {
    pub fn from_store<S: Scalar>(
        model: &FbNetConfig,
        store: &ParamStore<S>,
        epoch: usize,
        adam: Option<&Adam<S>>,
        extra: serde_json::Value,
    ) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| ArrayMeta { name: p.name.clone(), rows: p.value.rows(), cols: p.value.cols() })
            .collect();
        let values = store.iter().map(|(_, p)| p.value.cast()).collect();
        let moments = adam.map(|a| {
            let (m, v) = a.moments();
            (m.iter().map(Tensor::cast).collect(), v.iter().map(Tensor::cast).collect())
        });
        Checkpoint {
            meta: CheckpointMeta {
                model: model.clone(),
                epoch,
                params,
                optimizer_step: adam.map(Adam::steps_taken),
                extra,
            },
            values,
            moments,
        }
    }

    /// Total number of learnable scalars.
    pub fn num_params(&self) -> usize {
        self.meta.params.iter().map(|p| p.rows * p.cols).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_VERSION.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&self.meta)?.as_bytes());
        out.push(b'\n');
        let mut arrays: Vec<&Tensor<f64>> = self.values.iter().collect();
        if let Some((m, v)) = &self.moments {
            arrays.extend(m.iter().chain(v));
        }
        for t in arrays {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (version, rest) = split_line(bytes)
            .ok_or_else(|| Error::Checkpoint("missing version header".into()))?;
        if version != CHECKPOINT_VERSION.as_bytes() {
            let shown: String = String::from_utf8_lossy(&version[..version.len().min(40)]).into();
            return Err(Error::Checkpoint(format!(
                "version mismatch: found '{shown}', expected '{CHECKPOINT_VERSION}'"
            )));
        }
        let (meta_line, mut body) =
            split_line(rest).ok_or_else(|| Error::Checkpoint("missing metadata line".into()))?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_line)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        let scalars = meta.params.iter().map(|p| p.rows * p.cols).sum::<usize>();
        let copies = if meta.optimizer_step.is_some() { 3 } else { 1 };
        if body.len() != 8 * scalars * copies {
            return Err(Error::Checkpoint(format!(
                "payload is {} bytes, metadata describes {}",
                body.len(),
                8 * scalars * copies
            )));
        }
        let mut read_set = || -> Vec<Tensor<f64>> {
            meta.params
                .iter()
                .map(|p| {
                    let n = p.rows * p.cols;
                    let data = body[..8 * n]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect();
                    body = &body[8 * n..];
                    Tensor::from_vec(p.rows, p.cols, data)
                })
                .collect()
        };
        let values = read_set();
        let moments = meta.optimizer_step.map(|_| (read_set(), read_set()));
        Ok(Checkpoint { meta, values, moments })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Rebuilds the network and fills its parameters from the stored values.
    pub fn build_model<S: Scalar>(&self) -> Result<(FbNet, ParamStore<S>)> {
        let mut store = ParamStore::new();
        let net = FbNet::new(&mut store, &self.meta.model, 0)
            .map_err(|e| Error::Checkpoint(format!("stored model configuration is invalid: {e}")))?;
        if store.len() != self.meta.params.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} parameter arrays, checkpoint has {}",
                store.len(),
                self.meta.params.len()
            )));
        }
        for (meta, value) in self.meta.params.iter().zip(&self.values) {
            let id = store
                .id(&meta.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{}'", meta.name)))?;
            let slot = store.value_mut(id);
            if slot.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?}, checkpoint stores {:?}",
                    meta.name,
                    slot.shape(),
                    value.shape()
                )));
            }
            *slot = value.cast();
        }
        Ok((net, store))
    }

    /// Restores optimizer moments into `adam`, which must have been created
    /// for the store returned by [`Checkpoint::build_model`].
    pub fn restore_optimizer<S: Scalar>(&self, store: &ParamStore<S>, adam: &mut Adam<S>) -> Result<()> {
        let (Some(step), Some((m, v))) = (self.meta.optimizer_step, &self.moments) else {
            return Err(Error::Checkpoint("checkpoint holds no optimizer state".into()));
        };
        // Moments are stored in checkpoint order; map them to store order.
        let mut ms = vec![None; store.len()];
        let mut vs = vec![None; store.len()];
        for (i, meta) in self.meta.params.iter().enumerate() {
            let id = store
                .id(&meta.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{}'", meta.name)))?;
            ms[id.index()] = Some(m[i].cast());
            vs[id.index()] = Some(v[i].cast());
        }
        let unwrap = |x: Vec<Option<Tensor<S>>>| x.into_iter().collect::<Option<Vec<_>>>();
        match (unwrap(ms), unwrap(vs)) {
            (Some(m), Some(v)) => {
                adam.restore(step, m, v);
                Ok(())
            }
            _ => Err(Error::Checkpoint("optimizer state does not cover every parameter".into())),
        }
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..nl], &bytes[nl + 1..]))
}
