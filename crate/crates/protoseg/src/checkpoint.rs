//! Model checkpoints with the run configuration embedded.
//!
//! The configuration travels as one extra rank-1 tensor holding the bytes of
//! its JSON form, so the checkpoint stays a flat list of named tensors.

use std::path::Path;

use protoseg_core::{ProtoSeg, Tensor};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::format::{decode_checkpoint, encode_checkpoint};

pub const CONFIG_TENSOR: &str = "meta.config";

pub fn encode_model(model: &ProtoSeg, config: &RunConfig) -> Result<Vec<u8>> {
    let mut config = config.clone();
    config.model = model.config.clone();
    let json = config.to_json().into_bytes();
    let mut tensors = vec![(
        CONFIG_TENSOR.to_string(),
        Tensor::new(vec![json.len()], json.iter().map(|&b| b as f64).collect())?,
    )];
    for (_, name, t) in model.params.iter() {
        tensors.push((
            name.to_string(),
            Tensor::new(t.shape().to_vec(), t.values().to_vec())?,
        ));
    }
    encode_checkpoint(&tensors)
}

pub fn decode_model(buf: &[u8]) -> Result<(ProtoSeg, RunConfig)> {
    let tensors = decode_checkpoint(buf)?;
    let (_, meta) = tensors
        .iter()
        .find(|(n, _)| n == CONFIG_TENSOR)
        .ok_or_else(|| Error::Data(format!("checkpoint has no `{CONFIG_TENSOR}` tensor")))?;
    let bytes = meta
        .values()
        .iter()
        .map(|&v| {
            (v.fract() == 0.0 && (0.0..=255.0).contains(&v))
                .then_some(v as u8)
                .ok_or_else(|| Error::Data("embedded config is not a byte string".into()))
        })
        .collect::<Result<Vec<u8>>>()?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Data("embedded config is not UTF-8".into()))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("embedded config: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::Data(format!("embedded config: {e}")))?;

    let mut model = ProtoSeg::new(config.model.clone()).map_err(|e| Error::Data(e.to_string()))?;
    let expected = model.params.len();
    let mut loaded = 0;
    for (name, t) in &tensors {
        if name == CONFIG_TENSOR {
            continue;
        }
        let id = model
            .params
            .find(name)
            .ok_or_else(|| Error::Data(format!("unexpected tensor `{name}`")))?;
        let p = model.params.get_mut(id);
        if p.shape() != t.shape() {
            return Err(Error::Data(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                t.shape(),
                p.shape()
            )));
        }
        p.values_mut().copy_from_slice(t.values());
        loaded += 1;
    }
    if loaded != expected {
        return Err(Error::Data(format!(
            "checkpoint holds {loaded} of {expected} parameter tensors"
        )));
    }
    Ok((model, config))
}

pub fn save_model(model: &ProtoSeg, config: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model, config)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ProtoSeg, RunConfig)> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&buf)
}
