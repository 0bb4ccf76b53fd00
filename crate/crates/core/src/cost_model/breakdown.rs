use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelCost;
use crate::workload::Block;

/// Fractional share of each block in energy, delay, area and EDAP.
///
/// A block's EDAP share is its own E·D·A product normalized over all blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub energy: BTreeMap<Block, f64>,
    pub delay: BTreeMap<Block, f64>,
    pub area: BTreeMap<Block, f64>,
    pub edap: BTreeMap<Block, f64>,
}

fn normalize(raw: BTreeMap<Block, f64>) -> BTreeMap<Block, f64> {
    let total: f64 = raw.values().sum();
    raw.into_iter()
        .map(|(b, v)| (b, if total > 0.0 { v / total } else { 0.0 }))
        .collect()
}

pub fn breakdown(cost: &ModelCost) -> Breakdown {
    let pick = |f: fn(&super::BlockCost) -> f64| -> BTreeMap<Block, f64> {
        Block::ALL.iter().map(|&b| (b, f(&cost.block(b)))).collect()
    };
    Breakdown {
        energy: normalize(pick(|c| c.energy_uj)),
        delay: normalize(pick(|c| c.delay_us)),
        area: normalize(pick(|c| c.area_mm2)),
        edap: normalize(pick(|c| c.energy_uj * c.delay_us * c.area_mm2)),
    }
}

impl Breakdown {
    pub fn get(&self, metric: &str, b: Block) -> f64 {
        let m = match metric {
            "energy" => &self.energy,
            "delay" => &self.delay,
            "area" => &self.area,
            _ => &self.edap,
        };
        m.get(&b).copied().unwrap_or(0.0)
    }
}
