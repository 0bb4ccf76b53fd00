//! TOML configuration: every section overlays the built-in defaults.
//!
//! ```toml
//! [model]
//! preset = "lv-vit-s"   # optional, defaults to deit-s
//! t = 198               # any ModelConfig field overrides the preset
//!
//! [device]
//! preset = "fefet"        # or "hybrid": fefet weights, sram matmuls
//! matmul_preset = "sram"   # optional: attention matmuls on another device
//! read_var = 0.05
//!
//! [tiles]         # xbar_size, n_x_pe, n_pe_tile, adc_bits
//! [softmax_unit]  # per-element softmax unit costs
//! [cost]          # accounting conventions
//! [noise]         # functional simulator noise
//! [baselines]     # comparison technique settings
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cost_model::{CostContext, CostOptions, PredictorOverhead, SoftmaxUnitParams};
use crate::error::{Error, Result};
use crate::func_sim::NoiseForm;
use crate::presets;
use crate::workload::ModelConfig;
use crate::xbar_map::{DeviceAssignment, DeviceParams, TileConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSettings {
    pub enabled: bool,
    pub form: NoiseForm,
    pub seed: u64,
    /// Override the device's read variation.
    #[serde(default)]
    pub read_var: Option<f64>,
    #[serde(default)]
    pub write_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSettings {
    pub weight_sharing: usize,
    pub prune_ratio: f64,
    /// First encoder whose tokens are pruned.
    pub prune_from: usize,
    pub predictor_energy_mj: f64,
    pub predictor_delay_ms: f64,
    pub predictor_area_mm2: f64,
}

impl BaselineSettings {
    pub fn overhead(&self) -> PredictorOverhead {
        PredictorOverhead {
            energy_mj: self.predictor_energy_mj,
            delay_ms: self.predictor_delay_ms,
            area_mm2: self.predictor_area_mm2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: ModelConfig,
    pub devices: DeviceAssignment,
    pub tiles: TileConfig,
    pub softmax: SoftmaxUnitParams,
    pub cost: CostOptions,
    pub noise: NoiseSettings,
    pub baselines: BaselineSettings,
}

const SECTIONS: [&str; 7] = [
    "model",
    "device",
    "tiles",
    "softmax_unit",
    "cost",
    "noise",
    "baselines",
];

/// Recursively overlays `over` onto `base`.
fn overlay(mut base: toml::Table, over: &toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let merged = overlay(std::mem::take(b), o);
                *b = merged;
            }
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
    base
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&path.display().to_string(), &text)
    }

    /// Parses a config; `origin` is only used in diagnostics.
    pub fn from_toml_str(origin: &str, text: &str) -> Result<Self> {
        let perr = |msg: String| Error::Parse {
            path: origin.into(),
            msg,
        };
        let user: toml::Table = toml::from_str(text).map_err(|e| perr(e.to_string()))?;
        for key in user.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                return Err(perr(format!(
                    "unknown section [{key}] (expected one of {})",
                    SECTIONS.join(", ")
                )));
            }
        }
        let section = |name: &str| -> Result<toml::Table> {
            match user.get(name) {
                None => Ok(toml::Table::new()),
                Some(toml::Value::Table(t)) => Ok(t.clone()),
                Some(_) => Err(perr(format!("[{name}] must be a table"))),
            }
        };
        let parse = |_: &str, t: toml::Table| -> Result<toml::Value> { Ok(toml::Value::Table(t)) };
        fn typed<T: DeserializeOwned>(v: toml::Value, name: &str, origin: &str) -> Result<T> {
            v.try_into().map_err(|e: toml::de::Error| Error::Parse {
                path: origin.into(),
                msg: format!("[{name}]: {e}"),
            })
        }

        let mut model_t = section("model")?;
        let preset = take_str(&mut model_t, "preset", origin)?.unwrap_or_else(|| "deit-s".into());
        let base = model_table(&preset)?;
        let model: ModelConfig = typed(parse("model", overlay(base, &model_t))?, "model", origin)?;
        model.validate()?;

        let mut dev_t = section("device")?;
        let mut dev_name = take_str(&mut dev_t, "preset", origin)?.unwrap_or_else(|| "fefet".into());
        let mut matmul = take_str(&mut dev_t, "matmul_preset", origin)?;
        if dev_name == "hybrid" {
            dev_name = "fefet".into();
            matmul.get_or_insert_with(|| "sram".into());
        }
        let weight_dev: DeviceParams = typed(
            parse("device", overlay(device_table(&dev_name)?, &dev_t))?,
            "device",
            origin,
        )?;
        let devices = match matmul {
            Some(m) => DeviceAssignment::hybrid(weight_dev, presets::device(&m)?),
            None => DeviceAssignment::uniform(weight_dev),
        };
        devices.validate()?;

        let defaults = presets::table(presets::DEFAULTS, "calibrated.toml");
        let with_default = |name: &str| -> Result<toml::Value> {
            let base = match defaults.get(name) {
                Some(toml::Value::Table(t)) => t.clone(),
                _ => toml::Table::new(),
            };
            parse(name, overlay(base, &section(name)?))
        };
        let tiles: TileConfig = typed(with_default("tiles")?, "tiles", origin)?;
        let softmax: SoftmaxUnitParams = typed(with_default("softmax_unit")?, "softmax_unit", origin)?;
        let cost: CostOptions = typed(with_default("cost")?, "cost", origin)?;
        let noise: NoiseSettings = typed(with_default("noise")?, "noise", origin)?;
        let baselines: BaselineSettings = typed(with_default("baselines")?, "baselines", origin)?;

        let cfg = Self {
            model,
            devices,
            tiles,
            softmax,
            cost,
            noise,
            baselines,
        };
        cfg.context().validate()?;
        Ok(cfg)
    }

    pub fn context(&self) -> CostContext {
        CostContext {
            devices: self.devices.clone(),
            tiles: self.tiles.clone(),
            softmax: self.softmax.clone(),
            opts: self.cost,
        }
    }
}

fn take_str(t: &mut toml::Table, key: &str, origin: &str) -> Result<Option<String>> {
    match t.remove(key) {
        None => Ok(None),
        Some(toml::Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(Error::Parse {
            path: origin.into(),
            msg: format!("`{key}` must be a string"),
        }),
    }
}

fn preset_table(src: &str, origin: &str, kind: &'static str, name: &str) -> Result<toml::Table> {
    let all = presets::table(src, origin);
    match all.get(name) {
        Some(toml::Value::Table(t)) => Ok(t.clone()),
        _ => Err(Error::UnknownStrategy {
            kind,
            name: name.to_string(),
            available: all.keys().cloned().collect::<Vec<_>>().join(", "),
        }),
    }
}

fn model_table(name: &str) -> Result<toml::Table> {
    preset_table(presets::MODELS, "models.toml", "model", name)
}

fn device_table(name: &str) -> Result<toml::Table> {
    preset_table(presets::DEVICES, "devices.toml", "device", name)
}
