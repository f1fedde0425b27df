//! Full-catalog ranking, truncated ranking metrics and efficiency figures.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Batch, SequenceDataset, Split};
use crate::error::{Error, Result};
use crate::model::EchoMambaModel;
use crate::params::{ParamStore, Session};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;
use crate::ssm::{scan_sequential, ScanDims};

/// 1-based rank of `target` among items `1..scores.len()`. Higher scores
/// rank first; equal scores rank the smaller item id first. Items flagged in
/// `masked` (other than the target) are skipped.
pub fn rank_of<F: Scalar>(scores: &[F], target: usize, masked: Option<&[bool]>) -> usize {
    let st = scores[target];
    let mut rank = 1;
    for (v, &sv) in scores.iter().enumerate().skip(1) {
        if v == target || masked.is_some_and(|m| m[v]) {
            continue;
        }
        if sv > st || (sv == st && v < target) {
            rank += 1;
        }
    }
    rank
}

fn check_k(ranks: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::contract("cutoff k must be at least 1"));
    }
    if ranks.is_empty() {
        return Err(Error::contract("no ranks to aggregate"));
    }
    Ok(())
}

fn mean_of(ranks: &[usize], k: usize, gain: impl Fn(usize) -> f64) -> f64 {
    ranks.iter().map(|&r| if r <= k { gain(r) } else { 0.0 }).sum::<f64>() / ranks.len() as f64
}

pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_k(ranks, k)?;
    Ok(mean_of(ranks, k, |_| 1.0))
}

/// Single relevant item, so the ideal DCG is 1.
pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_k(ranks, k)?;
    Ok(mean_of(ranks, k, |r| 1.0 / ((r + 1) as f64).log2()))
}

pub fn mrr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_k(ranks, k)?;
    Ok(mean_of(ranks, k, |r| 1.0 / r as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub eval_seconds: f64,
    pub scored_items_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub n_users: usize,
    pub timing: EvalTiming,
}

impl EvalReport {
    pub fn from_ranks(split: Split, ranks: &[usize], k: usize, seconds: f64, n_items: usize) -> Result<Self> {
        Ok(EvalReport {
            split,
            k,
            hr: hr_at_k(ranks, k)?,
            ndcg: ndcg_at_k(ranks, k)?,
            mrr: mrr_at_k(ranks, k)?,
            n_users: ranks.len(),
            timing: EvalTiming {
                eval_seconds: seconds,
                scored_items_per_second: if seconds > 0.0 {
                    (ranks.len() * n_items) as f64 / seconds
                } else {
                    0.0
                },
            },
        })
    }
}

/// Marks the items of one batch row's input window.
fn seen_mask(batch: &Batch, row: usize, n_items: usize) -> Vec<bool> {
    let mut m = vec![false; n_items + 1];
    for &id in batch.row(row) {
        m[id] = true;
    }
    m[0] = false;
    m
}

/// Ranks every user's held-out item for a split, in user order.
pub fn rank_targets<F: Scalar>(
    model: &EchoMambaModel,
    store: &ParamStore<F>,
    ds: &SequenceDataset,
    split: Split,
    eval_batch: usize,
    mask_seen: bool,
) -> Result<Vec<usize>> {
    if split == Split::Train {
        return Err(Error::contract("ranking evaluates the validation or test split"));
    }
    let examples = ds.examples(split, false);
    if examples.is_empty() {
        return Err(Error::contract("empty evaluation split"));
    }
    let batches = make_batches(ds, &examples, eval_batch, model.config.max_len, None)?;
    rank_batches(model, store, &batches, mask_seen)
}

pub fn rank_batches<F: Scalar>(
    model: &EchoMambaModel,
    store: &ParamStore<F>,
    batches: &[Batch],
    mask_seen: bool,
) -> Result<Vec<usize>> {
    let width = model.config.n_items + 1;
    let mut ranks = Vec::new();
    for batch in batches {
        let scores = model.scores(store, batch)?;
        for (row, &target) in batch.targets.iter().enumerate() {
            let mask = mask_seen.then(|| seen_mask(batch, row, model.config.n_items));
            ranks.push(rank_of(&scores[row * width..(row + 1) * width], target, mask.as_deref()));
        }
    }
    Ok(ranks)
}

pub fn evaluate<F: Scalar>(
    model: &EchoMambaModel,
    store: &ParamStore<F>,
    ds: &SequenceDataset,
    split: Split,
    eval_batch: usize,
    mask_seen: bool,
    k: usize,
) -> Result<EvalReport> {
    let start = Instant::now();
    let ranks = rank_targets(model, store, ds, split, eval_batch, mask_seen)?;
    EvalReport::from_ranks(split, &ranks, k, start.elapsed().as_secs_f64(), ds.n_items())
}

/// Ranks by how often each item occurs in the training part of all
/// sequences (everything before the validation target).
pub fn popularity_ranks(ds: &SequenceDataset, split: Split) -> Vec<usize> {
    let mut counts = vec![0.0f64; ds.n_items() + 1];
    for seq in &ds.sequences {
        for &i in &seq[..seq.len() - 2] {
            counts[i as usize] += 1.0;
        }
    }
    ds.examples(split, false)
        .iter()
        .map(|ex| rank_of(&counts, ex.target as usize, None))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanScaling {
    pub len: usize,
    pub seconds_len: f64,
    pub seconds_double: f64,
    pub ratio: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn time_scan(batch: usize, channels: usize, state: usize, len: usize, runs: usize) -> f64 {
    let dims = ScanDims {
        batch,
        len,
        channels,
        state,
    };
    let mut rng = stream(0, Stream::Bench);
    let total = batch * len * channels * state;
    let x: Vec<f32> = (0..batch * len * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a: Vec<f32> = (0..total).map(|_| rng.random_range(0.5..1.0)).collect();
    let b: Vec<f32> = (0..total).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c: Vec<f32> = (0..batch * len * state).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d = vec![1.0f32; channels];
    let mut y = vec![0.0f32; x.len()];
    // One untimed pass to fault in pages.
    scan_sequential(dims, &x, &a, &b, &c, &d, &mut y, None);
    let times = (0..runs)
        .map(|_| {
            let t = Instant::now();
            scan_sequential(dims, &x, &a, &b, &c, &d, &mut y, None);
            std::hint::black_box(&y);
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(times)
}

/// Median-of-`runs` time of the sequential scan at `len` and `2·len`.
pub fn scan_scaling(batch: usize, channels: usize, state: usize, len: usize, runs: usize) -> ScanScaling {
    let seconds_len = time_scan(batch, channels, state, len, runs);
    let seconds_double = time_scan(batch, channels, state, 2 * len, runs);
    ScanScaling {
        len,
        seconds_len,
        seconds_double,
        ratio: seconds_double / seconds_len,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub train_seconds_per_epoch: f64,
    pub inference_seconds: f64,
    pub param_count: usize,
    pub param_bytes: usize,
    /// Values held on the tape by one forward and backward pass over a
    /// training batch, in bytes. Exact for this engine.
    pub activation_bytes: usize,
    pub scan_scaling: ScanScaling,
}

/// Bytes of every value recorded on the tape, plus an equal amount for the
/// gradient buffers the backward pass allocates.
pub fn activation_bytes<F: Scalar>(model: &EchoMambaModel, store: &ParamStore<F>, batch: &Batch) -> Result<usize> {
    let mut s = Session::eval(store);
    model.logits(&mut s, batch)?;
    Ok(2 * s.tape.stored_values() * F::PRECISION.bytes())
}

pub fn median_seconds(runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(times))
}
