use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::InteractionLog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KCoreMode {
    /// Repeat user and item removal until nothing changes.
    #[default]
    Iterative,
    /// One user pass, then one item pass.
    SinglePass,
}

fn counts<'a>(keys: impl Iterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for k in keys {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

/// Keeps only records whose user and item both reach `k` interactions.
pub fn k_core_filter(log: &InteractionLog, k: usize, mode: KCoreMode) -> Result<InteractionLog> {
    if k == 0 {
        return Err(Error::contract("k-core threshold must be at least 1"));
    }
    let mut keep: Vec<bool> = vec![true; log.records.len()];
    let user_pass = |keep: &mut Vec<bool>| -> bool {
        let c = counts(log.records.iter().zip(keep.iter()).filter(|(_, k)| **k).map(|(r, _)| r.user.as_str()));
        let mut changed = false;
        for (r, kp) in log.records.iter().zip(keep.iter_mut()) {
            if *kp && c[r.user.as_str()] < k {
                *kp = false;
                changed = true;
            }
        }
        changed
    };
    let item_pass = |keep: &mut Vec<bool>| -> bool {
        let c = counts(log.records.iter().zip(keep.iter()).filter(|(_, k)| **k).map(|(r, _)| r.item.as_str()));
        let mut changed = false;
        for (r, kp) in log.records.iter().zip(keep.iter_mut()) {
            if *kp && c[r.item.as_str()] < k {
                *kp = false;
                changed = true;
            }
        }
        changed
    };
    match mode {
        KCoreMode::SinglePass => {
            user_pass(&mut keep);
            item_pass(&mut keep);
        }
        KCoreMode::Iterative => loop {
            let a = user_pass(&mut keep);
            let b = item_pass(&mut keep);
            if !a && !b {
                break;
            }
        },
    }
    let records: Vec<_> = log
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(r, _)| r.clone())
        .collect();
    if records.is_empty() {
        return Err(Error::FullyFiltered { k });
    }
    Ok(InteractionLog { records })
}
