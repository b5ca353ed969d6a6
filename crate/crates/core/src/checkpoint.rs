//! Model checkpoints in the AVFS container.
//!
//! The first record, `meta`, is a byte tensor holding JSON with the model and
//! training configuration; every parameter follows as an `f64` matrix named
//! as in [`Parameters::tensors`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::avfs::{self, Tensor, TensorData};
use crate::error::{Error, Result};
use crate::gradcheck::Parameters;
use crate::model::{AvrnParams, ModelConfig};
use crate::tensor::Matrix;
use crate::train::TrainConfig;

const META: &str = "meta";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

pub fn to_tensors(params: &AvrnParams, train: Option<&TrainConfig>) -> Vec<Tensor> {
    let meta = CheckpointMeta {
        model: params.config.clone(),
        train: train.cloned(),
    };
    let json = serde_json::to_vec(&meta).expect("config serializes");
    let mut out = vec![Tensor {
        name: META.to_string(),
        dims: vec![json.len() as u64],
        data: TensorData::Bytes(json),
    }];
    for (name, m) in params.tensors() {
        out.push(Tensor {
            name,
            dims: vec![m.rows() as u64, m.cols() as u64],
            data: TensorData::F64(m.data().to_vec()),
        });
    }
    out
}

pub fn save(path: &Path, params: &AvrnParams, train: Option<&TrainConfig>) -> Result<()> {
    avfs::write_file(path, &to_tensors(params, train))
}

pub fn from_tensors(tensors: &[Tensor], origin: &Path) -> Result<(AvrnParams, CheckpointMeta)> {
    let meta = match tensors.first() {
        Some(Tensor {
            name,
            data: TensorData::Bytes(b),
            ..
        }) if name == META => serde_json::from_slice::<CheckpointMeta>(b)
            .map_err(|e| Error::format(origin, format!("checkpoint meta: {e}")))?,
        _ => return Err(Error::format(origin, "checkpoint must start with a meta record")),
    };
    let mut params = AvrnParams::zeros(meta.model.clone())?;
    let names: Vec<(String, (usize, usize))> = params
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.shape()))
        .collect();
    let stored = &tensors[1..];
    if stored.len() != names.len() {
        return Err(Error::format(
            origin,
            format!("checkpoint has {} parameter tensors, model needs {}", stored.len(), names.len()),
        ));
    }
    for ((slot, (name, shape)), t) in params.tensors_mut().into_iter().zip(&names).zip(stored) {
        if &t.name != name || t.matrix_shape() != Some(*shape) {
            return Err(Error::format(
                origin,
                format!("expected {name} {shape:?}, found {} {:?}", t.name, t.dims),
            ));
        }
        let TensorData::F64(values) = &t.data else {
            return Err(Error::format(origin, format!("{name} must be f64")));
        };
        *slot = Matrix::from_vec(shape.0, shape.1, values.clone())?;
    }
    params.validate()?;
    Ok((params, meta))
}

pub fn load(path: &Path) -> Result<(AvrnParams, CheckpointMeta)> {
    from_tensors(&avfs::read_file(path)?, path)
}
