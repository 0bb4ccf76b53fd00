//! Built-in workloads, devices and the calibrated default settings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::config::SimConfig;
use crate::cost_model::{CostContext, CostOptions, SoftmaxUnitParams};
use crate::error::{Error, Result};
use crate::workload::ModelConfig;
use crate::xbar_map::{DeviceAssignment, DeviceParams, TileConfig};

pub(crate) const MODELS: &str = include_str!("../presets/models.toml");
pub(crate) const DEVICES: &str = include_str!("../presets/devices.toml");
pub(crate) const DEFAULTS: &str = include_str!("../presets/calibrated.toml");

pub(crate) fn table(src: &str, origin: &str) -> toml::Table {
    toml::from_str(src).unwrap_or_else(|e| panic!("built-in {origin} is malformed: {e}"))
}

fn lookup<T: DeserializeOwned>(src: &str, origin: &str, kind: &'static str, name: &str) -> Result<T> {
    let mut t = table(src, origin);
    let available = t.keys().cloned().collect::<Vec<_>>().join(", ");
    let v = t.remove(name).ok_or(Error::UnknownStrategy {
        kind,
        name: name.to_string(),
        available,
    })?;
    v.try_into().map_err(|e| Error::Parse {
        path: Path::new(origin).to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn model_names() -> Vec<String> {
    table(MODELS, "models.toml").keys().cloned().collect()
}

pub fn model(name: &str) -> Result<ModelConfig> {
    lookup(MODELS, "models.toml", "model", name)
}

pub fn device(name: &str) -> Result<DeviceParams> {
    lookup(DEVICES, "devices.toml", "device", name)
}

/// `fefet`, `sram`, or `hybrid` (FeFET weights, SRAM attention matmuls).
pub fn devices(spec: &str) -> Result<DeviceAssignment> {
    match spec {
        "hybrid" | "fefet+sram" => Ok(DeviceAssignment::hybrid(device("fefet")?, device("sram")?)),
        name => Ok(DeviceAssignment::uniform(device(name)?)),
    }
}

fn default_section<T: DeserializeOwned>(name: &str) -> T {
    lookup(DEFAULTS, "calibrated.toml", "section", name).expect("built-in defaults")
}

pub fn tiles() -> TileConfig {
    default_section("tiles")
}

pub fn softmax_unit() -> SoftmaxUnitParams {
    default_section("softmax_unit")
}

pub fn cost_options() -> CostOptions {
    default_section("cost")
}

/// Calibrated pricing context for a device spec accepted by [`devices`].
pub fn context(device_spec: &str) -> Result<CostContext> {
    Ok(CostContext {
        devices: devices(device_spec)?,
        tiles: tiles(),
        softmax: softmax_unit(),
        opts: cost_options(),
    })
}

/// Full default configuration for a model / device pair.
pub fn config(model_name: &str, device_spec: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::from_toml_str("<defaults>", "")?;
    cfg.model = model(model_name)?;
    cfg.devices = devices(device_spec)?;
    Ok(cfg)
}

pub fn all_models() -> BTreeMap<String, ModelConfig> {
    model_names()
        .into_iter()
        .map(|n| {
            let m = model(&n).expect("listed preset");
            (n, m)
        })
        .collect()
}
