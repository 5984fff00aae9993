//! Single-file checkpoints: a safetensors archive whose header metadata holds
//! the format tag and the model configuration as JSON.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "mipcnet-ckpt-v1";

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

fn to_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    match T::DTYPE {
        "f32" => t.data().iter().flat_map(|v| v.to_f32().unwrap().to_le_bytes()).collect(),
        _ => t.data().iter().flat_map(|v| v.to_f64().unwrap().to_le_bytes()).collect(),
    }
}

fn from_view<T: Scalar>(view: &TensorView<'_>) -> Option<Tensor<T>> {
    let data: Vec<T> = match view.dtype() {
        Dtype::F32 => view
            .data()
            .chunks_exact(4)
            .map(|b| T::from_f32(f32::from_le_bytes(b.try_into().unwrap())).unwrap())
            .collect(),
        Dtype::F64 => view
            .data()
            .chunks_exact(8)
            .map(|b| T::from_f64_lossy(f64::from_le_bytes(b.try_into().unwrap())))
            .collect(),
        _ => return None,
    };
    Tensor::new(view.shape().to_vec(), data).ok()
}

/// Stored scalar type ("f32" or "f64") and configuration of a checkpoint.
pub fn checkpoint_info(path: &Path) -> Result<(String, ModelConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| ckpt_err(path, e))?;
    let meta = header.metadata().clone().unwrap_or_default();
    if meta.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
        return Err(ckpt_err(path, format!("not a {CHECKPOINT_FORMAT} file")));
    }
    let dtype = meta.get("dtype").cloned().unwrap_or_else(|| "f32".into());
    let cfg = serde_json::from_str(meta.get("config").ok_or_else(|| ckpt_err(path, "missing config"))?)?;
    Ok((dtype, cfg))
}

impl<T: Scalar> Model<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let dtype = if T::DTYPE == "f32" { Dtype::F32 } else { Dtype::F64 };
        let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.value.shape().to_vec(), to_bytes(&e.value)))
            .collect();
        let views = buffers
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(dtype, shape.clone(), bytes).map(|v| (name.as_str(), v)).map_err(|e| ckpt_err(path, e))
            })
            .collect::<Result<Vec<_>>>()?;
        let metadata = HashMap::from([
            ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
            ("config".to_string(), serde_json::to_string(self.config())?),
            ("dtype".to_string(), T::DTYPE.to_string()),
        ]);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        safetensors::serialize_to_file(views, &Some(metadata), path).map_err(|e| ckpt_err(path, e))
    }

    /// Loads a checkpoint, converting stored values to `T` if needed.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| ckpt_err(path, e))?;
        let meta = header.metadata().clone().unwrap_or_default();
        match meta.get("format").map(String::as_str) {
            Some(CHECKPOINT_FORMAT) => {}
            other => return Err(ckpt_err(path, format!("format tag {other:?}, expected {CHECKPOINT_FORMAT}"))),
        }
        let cfg: ModelConfig = serde_json::from_str(meta.get("config").ok_or_else(|| ckpt_err(path, "missing config"))?)?;
        let mut model = Model::<T>::new(&cfg, 0)?;
        let archive = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(path, e))?;
        if archive.len() != model.params.len() {
            return Err(ckpt_err(path, format!("{} arrays, model has {}", archive.len(), model.params.len())));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.entry(id).name.clone();
            let view = archive.tensor(&name).map_err(|_| ckpt_err(path, format!("missing array {name}")))?;
            let value = from_view::<T>(&view).ok_or_else(|| ckpt_err(path, format!("unsupported dtype for {name}")))?;
            if value.shape() != model.params.get(id).shape() {
                return Err(ckpt_err(
                    path,
                    format!("{name} has shape {:?}, config implies {:?}", value.shape(), model.params.get(id).shape()),
                ));
            }
            model.params.set(id, value);
        }
        Ok(model)
    }
}
