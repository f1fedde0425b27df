use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::InteractionLog;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-user chronological item sequences with contiguous ids.
///
/// Items are numbered from 1; id 0 is padding. Users and items are numbered
/// in order of first appearance in the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceDataset {
    pub user_ids: Vec<String>,
    /// `item_ids[i - 1]` is the external id of item `i`.
    pub item_ids: Vec<String>,
    pub sequences: Vec<Vec<u32>>,
    /// Users dropped for having fewer than three interactions.
    pub excluded_users: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub avg_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One prediction row: `sequences[user][..end]` predicts `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example {
    pub user: usize,
    pub end: usize,
    pub target: u32,
}

/// Left-padded id matrix `[size × max_len]` with lengths and targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub item_ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub targets: Vec<usize>,
    pub users: Vec<usize>,
    pub max_len: usize,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.item_ids[i * self.max_len..(i + 1) * self.max_len]
    }

    /// Builds a batch from explicit inputs, keeping the most recent
    /// `max_len` items of each.
    pub fn from_inputs(inputs: &[&[u32]], targets: &[usize], max_len: usize) -> Result<Batch> {
        if inputs.len() != targets.len() {
            return Err(Error::shape("batch", &[inputs.len()], &[targets.len()]));
        }
        let mut item_ids = vec![0usize; inputs.len() * max_len];
        let mut lengths = Vec::with_capacity(inputs.len());
        for (i, seq) in inputs.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::contract("batch row with empty input"));
            }
            let window = &seq[seq.len().saturating_sub(max_len)..];
            let row = &mut item_ids[i * max_len..(i + 1) * max_len];
            for (slot, &id) in row[max_len - window.len()..].iter_mut().zip(window) {
                *slot = id as usize;
            }
            lengths.push(window.len());
        }
        Ok(Batch {
            item_ids,
            lengths,
            targets: targets.to_vec(),
            users: (0..inputs.len()).collect(),
            max_len,
        })
    }
}

impl SequenceDataset {
    pub fn n_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn stats(&self) -> DatasetStats {
        let n_interactions: usize = self.sequences.iter().map(Vec::len).sum();
        DatasetStats {
            n_users: self.n_users(),
            n_items: self.n_items(),
            n_interactions,
            avg_length: if self.sequences.is_empty() {
                0.0
            } else {
                n_interactions as f64 / self.sequences.len() as f64
            },
        }
    }

    pub fn item_index(&self) -> HashMap<&str, u32> {
        self.item_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32 + 1))
            .collect()
    }

    pub fn user_index(&self) -> HashMap<&str, usize> {
        self.user_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    /// Rows of a split. Training uses one row per user (the item before the
    /// validation target) unless `all_prefixes` is set, in which case every
    /// earlier position is a target too.
    pub fn examples(&self, split: Split, all_prefixes: bool) -> Vec<Example> {
        let mut out = Vec::new();
        for (user, seq) in self.sequences.iter().enumerate() {
            let n = seq.len();
            let ends: Vec<usize> = match split {
                Split::Test => vec![n - 1],
                Split::Validation => vec![n - 2],
                Split::Train if all_prefixes => (1..n - 2).collect(),
                Split::Train => (n > 3).then_some(n - 3).into_iter().collect(),
            };
            out.extend(ends.into_iter().map(|end| Example {
                user,
                end,
                target: seq[end],
            }));
        }
        out
    }

    pub fn input(&self, ex: &Example) -> &[u32] {
        &self.sequences[ex.user][..ex.end]
    }
}

/// Groups a filtered log into per-user sequences sorted by timestamp (ties
/// keep file order). Users with fewer than three interactions cannot supply
/// all three splits and are dropped; the count is kept in `excluded_users`.
pub fn build_sequences(log: &InteractionLog) -> Result<SequenceDataset> {
    let mut user_pos: HashMap<&str, usize> = HashMap::new();
    let mut per_user: Vec<(&str, Vec<(i64, &str)>)> = Vec::new();
    for r in &log.records {
        let idx = *user_pos.entry(r.user.as_str()).or_insert_with(|| {
            per_user.push((r.user.as_str(), Vec::new()));
            per_user.len() - 1
        });
        per_user[idx].1.push((r.timestamp, r.item.as_str()));
    }
    let mut excluded_users = 0;
    let mut item_index: HashMap<&str, u32> = HashMap::new();
    let mut item_ids = Vec::new();
    let mut user_ids = Vec::new();
    let mut sequences = Vec::new();
    for (user, mut events) in per_user {
        if events.len() < 3 {
            excluded_users += 1;
            continue;
        }
        events.sort_by_key(|e| e.0);
        let seq = events
            .iter()
            .map(|&(_, item)| {
                *item_index.entry(item).or_insert_with(|| {
                    item_ids.push(item.to_string());
                    item_ids.len() as u32
                })
            })
            .collect();
        user_ids.push(user.to_string());
        sequences.push(seq);
    }
    if sequences.is_empty() {
        return Err(Error::contract("no user has the three interactions a split needs"));
    }
    Ok(SequenceDataset {
        user_ids,
        item_ids,
        sequences,
        excluded_users,
    })
}

/// Cuts examples into left-padded batches. Shuffles first when `rng` is
/// given. The final partial batch is kept.
pub fn make_batches(
    ds: &SequenceDataset,
    examples: &[Example],
    batch_size: usize,
    max_len: usize,
    rng: Option<&mut Rng>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 || max_len == 0 {
        return Err(Error::contract("batch size and window length must be positive"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    let mut batches = Vec::with_capacity(examples.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let inputs: Vec<&[u32]> = chunk.iter().map(|&i| ds.input(&examples[i])).collect();
        let targets: Vec<usize> = chunk.iter().map(|&i| examples[i].target as usize).collect();
        let mut batch = Batch::from_inputs(&inputs, &targets, max_len)?;
        batch.users = chunk.iter().map(|&i| examples[i].user).collect();
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;
    use crate::rng::{stream, Stream};

    fn ds_from(seqs: &[&[&str]]) -> SequenceDataset {
        let mut records = Vec::new();
        for (u, seq) in seqs.iter().enumerate() {
            for (t, item) in seq.iter().enumerate() {
                records.push(Interaction {
                    user: format!("u{u}"),
                    item: item.to_string(),
                    timestamp: t as i64,
                });
            }
        }
        build_sequences(&InteractionLog { records }).unwrap()
    }

    #[test]
    fn split_definition() {
        let ds = ds_from(&[&["a", "b", "c", "d", "e"]]);
        let name = |ex: &Example| ds.item_ids[ex.target as usize - 1].clone();
        let test = ds.examples(Split::Test, false)[0];
        assert_eq!((name(&test), test.end), ("e".to_string(), 4));
        let val = ds.examples(Split::Validation, false)[0];
        assert_eq!((name(&val), val.end), ("d".to_string(), 3));
        let train = ds.examples(Split::Train, false);
        assert_eq!(train.len(), 1);
        assert_eq!((name(&train[0]), train[0].end), ("c".to_string(), 2));
        assert_eq!(ds.examples(Split::Train, true).len(), 2);
    }

    #[test]
    fn window_keeps_most_recent() {
        let b = Batch::from_inputs(&[&[1, 2, 3, 4]], &[5], 3).unwrap();
        assert_eq!(b.item_ids, vec![2, 3, 4]);
        let b = Batch::from_inputs(&[&[7]], &[5], 3).unwrap();
        assert_eq!(b.item_ids, vec![0, 0, 7]);
        assert_eq!(b.lengths, vec![1]);
    }

    #[test]
    fn batch_sizes_with_partial_tail() {
        let seqs: Vec<Vec<String>> = (0..5).map(|u| (0..4).map(|i| format!("i{}", (u + i) % 6)).collect()).collect();
        let refs: Vec<Vec<&str>> = seqs.iter().map(|s| s.iter().map(String::as_str).collect()).collect();
        let slices: Vec<&[&str]> = refs.iter().map(Vec::as_slice).collect();
        let ds = ds_from(&slices);
        let ex = ds.examples(Split::Test, false);
        let sizes: Vec<usize> = make_batches(&ds, &ex, 2, 4, None).unwrap().iter().map(Batch::size).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn timestamp_ties_keep_file_order_and_short_users_are_counted() {
        let records = vec![
            ("u", "b", 5),
            ("u", "a", 1),
            ("u", "c", 5),
            ("v", "a", 1),
            ("u", "d", 9),
        ]
        .into_iter()
        .map(|(u, i, t)| Interaction {
            user: u.into(),
            item: i.into(),
            timestamp: t,
        })
        .collect();
        let ds = build_sequences(&InteractionLog { records }).unwrap();
        assert_eq!(ds.excluded_users, 1);
        let names: Vec<&str> = ds.sequences[0].iter().map(|&i| ds.item_ids[i as usize - 1].as_str()).collect();
        assert_eq!(names, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn shuffle_is_seeded() {
        let seqs: Vec<Vec<String>> = (0..20).map(|u| (0..5).map(|i| format!("i{}", u * 3 + i)).collect()).collect();
        let refs: Vec<Vec<&str>> = seqs.iter().map(|s| s.iter().map(String::as_str).collect()).collect();
        let slices: Vec<&[&str]> = refs.iter().map(Vec::as_slice).collect();
        let ds = ds_from(&slices);
        let ex = ds.examples(Split::Train, false);
        let run = |seed| make_batches(&ds, &ex, 3, 4, Some(&mut stream(seed, Stream::Shuffle))).unwrap();
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
