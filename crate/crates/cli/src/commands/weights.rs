use std::path::Path;

use parereg_core::io::{encode_weights, load_weights, write_json};
use parereg_core::params::{export, import, NamedTensors};
use parereg_core::pipeline::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ensure_dir;
use crate::config::AppConfig;
use crate::error::{CliError, Result, StageExt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub parameters: usize,
    pub tensors: Vec<TensorShape>,
}

impl Layout {
    fn of(tensors: &NamedTensors) -> Self {
        Self {
            parameters: tensors.iter().map(|(_, m)| m.len()).sum(),
            tensors: tensors
                .iter()
                .map(|(name, m)| TensorShape {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        }
    }
}

fn write(tensors: &NamedTensors, out: &Path) -> Result<Layout> {
    ensure_dir(out)?;
    let bytes = encode_weights(tensors).stage("weights")?;
    std::fs::write(out.join("weights.bin"), bytes)
        .map_err(|e| CliError::input(format!("{}: {e}", out.join("weights.bin").display())))?;
    let layout = Layout::of(tensors);
    write_json(&layout, out.join("layout.json")).stage("output")?;
    Ok(layout)
}

/// Random weights for the configured model, written to `out/weights.bin` with `out/layout.json`.
pub fn init_weights(cfg: &AppConfig, seed: u64, out: &Path) -> Result<Layout> {
    let model = Model::<f64>::random(&mut ChaCha8Rng::seed_from_u64(seed), &cfg.model).stage("weights")?;
    write(&export(&model), out)
}

/// Loads a container and checks it against the configured model.
pub fn load_model(cfg: &AppConfig, path: &Path) -> Result<Model<f64>> {
    let tensors = load_weights(path).stage("weights")?;
    let mut model = Model::<f64>::zeros(&cfg.model).stage("weights")?;
    import(&mut model, &tensors).stage("weights")?;
    Ok(model)
}

/// Validates `path` against the config; with `out`, re-saves it there.
pub fn inspect_weights(cfg: &AppConfig, path: &Path, out: Option<&Path>) -> Result<Layout> {
    let tensors = export(&load_model(cfg, path)?);
    match out {
        Some(dir) => write(&tensors, dir),
        None => Ok(Layout::of(&tensors)),
    }
}
