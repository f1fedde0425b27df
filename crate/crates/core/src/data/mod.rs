//! Interaction logs, k-core filtering, per-user sequences and batches.

mod cache;
mod ingest;
mod k_core;
mod sequences;
mod synthetic;

pub use cache::{read_cache, write_cache};
pub use ingest::{ingest, parse_csv_triples, parse_movielens, InputFormat};
pub use k_core::{k_core_filter, KCoreMode};
pub use sequences::{build_sequences, make_batches, Batch, DatasetStats, Example, SequenceDataset, Split};
pub use synthetic::{planted_cycles, PlantedCycles};

use serde::{Deserialize, Serialize};

/// One `(user, item, timestamp)` record with external ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// Raw records in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Drops repeated `(user, item, timestamp)` triples, keeping the first.
    pub fn dedup(&mut self) -> usize {
        let mut seen = std::collections::HashSet::with_capacity(self.records.len());
        let before = self.records.len();
        self.records.retain(|r| seen.insert((r.user.clone(), r.item.clone(), r.timestamp)));
        before - self.records.len()
    }
}
