use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Interaction, InteractionLog};
use crate::rng::{stream, Stream};

/// Every user repeatedly walks their own fixed cycle of `cycle_len` distinct
/// items drawn from the catalog. With probability `noise` a step emits a
/// uniformly random catalog item instead (the walk still advances).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedCycles {
    pub users: usize,
    pub items: usize,
    pub cycle_len: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise: f64,
}

impl Default for PlantedCycles {
    fn default() -> Self {
        PlantedCycles {
            users: 500,
            items: 50,
            cycle_len: 20,
            min_len: 30,
            max_len: 50,
            noise: 0.1,
        }
    }
}

pub fn planted_cycles(cfg: &PlantedCycles, seed: u64) -> InteractionLog {
    let mut rng = stream(seed, Stream::Synthetic);
    let catalog: Vec<usize> = (1..=cfg.items).collect();
    let mut records = Vec::new();
    for u in 0..cfg.users {
        let cycle: Vec<usize> = catalog
            .choose_multiple(&mut rng, cfg.cycle_len.min(cfg.items))
            .copied()
            .collect();
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let start = rng.random_range(0..cycle.len());
        for t in 0..len {
            let item = if rng.random::<f64>() < cfg.noise {
                rng.random_range(1..=cfg.items)
            } else {
                cycle[(start + t) % cycle.len()]
            };
            records.push(Interaction {
                user: format!("u{u}"),
                item: format!("i{item}"),
                timestamp: t as i64,
            });
        }
    }
    InteractionLog { records }
}
