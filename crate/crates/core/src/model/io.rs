use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, Model, VNetConfig};
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::tensor::{read_vten, write_vten, Tensor};

pub const WEIGHTS_MANIFEST: &str = "manifest.json";
const FORMAT: &str = "vnet-weights";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    precision: String,
    config: VNetConfig,
    params: Vec<Entry>,
    /// Running statistics, one `2×C` tensor (mean row, variance row) per layer.
    batch_norm: Vec<Entry>,
}

/// Writes `manifest.json` plus one VTEN file per tensor into `dir`.
pub fn save_weights<T: Real>(model: &Model<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut params = Vec::new();
    for (id, p) in model.params.iter() {
        let file = format!("p{:04}.vten", id.0);
        write_vten(dir.join(&file), &p.value)?;
        params.push(Entry {
            name: p.name.clone(),
            file,
            shape: p.value.shape().to_vec(),
        });
    }
    let mut batch_norm = Vec::new();
    for (i, bn) in model.batch_norms().into_iter().enumerate() {
        let c = bn.channels();
        let stats = Tensor::from_fn(&[2, c], |e| if e < c { bn.moving_mean[e] } else { bn.moving_var[e - c] });
        let file = format!("bn{i:04}.vten");
        write_vten(dir.join(&file), &stats)?;
        batch_norm.push(Entry {
            name: bn_name(model, bn.gamma),
            file,
            shape: vec![2, c],
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        precision: T::NAME.into(),
        config: model.config.clone(),
        params,
        batch_norm,
    };
    std::fs::write(dir.join(WEIGHTS_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn bn_name<T: Real>(model: &Model<T>, gamma: crate::autodiff::ParamId) -> String {
    model.params.name(gamma).trim_end_matches(".gamma").to_string()
}

/// Rebuilds the architecture from the stored config and loads every tensor,
/// converting precision if needed.
pub fn load_weights<T: Real>(dir: impl AsRef<Path>) -> Result<Model<T>> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join(WEIGHTS_MANIFEST))?)?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(Error::Format(format!(
            "unsupported weights format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut model: Model<T> = build_model(&manifest.config)?;
    if manifest.params.len() != model.params.len() {
        return Err(invalid!(
            "manifest lists {} tensors, architecture has {}",
            manifest.params.len(),
            model.params.len()
        ));
    }
    for e in &manifest.params {
        let id = model
            .params
            .find(&e.name)
            .ok_or_else(|| invalid!("unknown parameter '{}'", e.name))?;
        let t = read_vten::<T>(dir.join(&e.file))?;
        t.check_finite()?;
        model.params.set(id, t)?;
    }
    let names: Vec<String> = model.batch_norms().iter().map(|bn| bn_name(&model, bn.gamma)).collect();
    for (bn, name) in model.batch_norms_mut().into_iter().zip(names) {
        let e = manifest
            .batch_norm
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| invalid!("missing running statistics for '{name}'"))?;
        let t = read_vten::<T>(dir.join(&e.file))?;
        let c = bn.channels();
        if t.shape() != [2, c] {
            return Err(invalid!("running statistics for '{name}' have shape {:?}", t.shape()));
        }
        bn.set_running(t.data()[..c].to_vec(), t.data()[c..].to_vec())?;
    }
    Ok(model)
}
