use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use echomamba::checkpoint::precision_of;
use echomamba::data::{
    build_sequences, ingest as ingest_file, k_core_filter, make_batches, planted_cycles, read_cache, write_cache,
    DatasetStats, InteractionLog, SequenceDataset, Split,
};
use echomamba::eval::{activation_bytes, evaluate, median_seconds, rank_targets, scan_scaling, BenchReport, EvalReport};
use echomamba::gradcheck::run_suite;
use echomamba::rng::{stream, Stream};
use echomamba::{EchoMambaModel, Error, ParamStore, Precision, Scalar, Trainer};
use serde::Serialize;

use crate::config::{DatasetFormat, RunConfig};
use crate::CliError;

/// Settings of the scan scaling measurement.
pub const SCAN_BATCH: usize = 8;
pub const SCAN_CHANNELS: usize = 64;
pub const SCAN_STATE: usize = 16;
pub const SCAN_LEN: usize = 2048;

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| Error::io("output", e))?;
    Ok(())
}

fn source_log(cfg: &RunConfig) -> Result<InteractionLog, CliError> {
    match cfg.input_format() {
        None => Ok(planted_cycles(&cfg.planted_cycles(), cfg.dataset.synthetic_seed)),
        Some(format) => {
            let path = cfg.dataset.path.as_ref().ok_or_else(|| {
                CliError::Validation(vec![format!("dataset.path: required for format {:?}", cfg.dataset.format)])
            })?;
            Ok(ingest_file(path, format)?)
        }
    }
}

/// Builds the dataset from its source, ignoring any cache.
pub fn build_dataset(cfg: &RunConfig) -> Result<SequenceDataset, CliError> {
    let log = source_log(cfg)?;
    let log = k_core_filter(&log, cfg.dataset.k_core, cfg.dataset.k_core_mode)?;
    Ok(build_sequences(&log)?)
}

/// Reads the cache when configured and present, otherwise builds.
pub fn load_dataset(cfg: &RunConfig) -> Result<SequenceDataset, CliError> {
    match &cfg.dataset.cache_path {
        Some(cache) if cache.exists() && cfg.dataset.format != DatasetFormat::PlantedCycles => Ok(read_cache(cache)?),
        _ => build_dataset(cfg),
    }
}

pub fn ingest(cfg: &RunConfig, out: &mut dyn Write) -> Result<DatasetStats, CliError> {
    let ds = build_dataset(cfg)?;
    if let Some(cache) = &cfg.dataset.cache_path {
        write_cache(cache, &ds)?;
    }
    let stats = ds.stats();
    emit(out, &stats)?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LogHeader<'a> {
    config: &'a RunConfig,
    dataset: DatasetStats,
    param_count: usize,
    start_epoch: usize,
}

/// Test metrics of the best-validation weights at the end of training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_hr10: f64,
    pub stopped_early: bool,
    pub test_hr10: f64,
    pub test_ndcg10: f64,
    pub test_mrr10: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

fn train_with<F: Scalar>(cfg: &RunConfig, resume: bool, out: &mut dyn Write) -> Result<TrainSummary, CliError> {
    let start = Instant::now();
    let ds = load_dataset(cfg)?;
    let model_config = cfg.model_config(ds.n_items());
    let ckpt = cfg.output.checkpoint_path.as_deref();
    let resuming = resume && ckpt.is_some_and(Path::exists);
    let mut trainer = match ckpt {
        Some(path) if resuming => {
            let mut t = Trainer::<F>::load(path)?;
            if t.model.config != model_config {
                return Err(CliError::Validation(vec![format!(
                    "model: checkpoint {} was trained with a different model configuration",
                    path.display()
                )]));
            }
            t.config.epochs = cfg.training.epochs;
            t.config.patience = cfg.training.patience;
            t
        }
        _ => Trainer::<F>::new(model_config, cfg.train_config())?,
    };

    let mut file_log;
    let log: &mut dyn Write = match &cfg.output.log_path {
        Some(path) => {
            let file = OpenOptions::new()
                .create(true)
                .write(true)
                .append(resuming)
                .truncate(!resuming)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            file_log = BufWriter::new(file);
            &mut file_log
        }
        None => out,
    };
    emit(
        log,
        &LogHeader {
            config: cfg,
            dataset: ds.stats(),
            param_count: trainer.store.count(),
            start_epoch: trainer.epoch,
        },
    )?;
    let outcome = trainer.fit(&ds, log, ckpt)?;
    trainer.restore_best();
    let test = evaluate(
        &trainer.model,
        &trainer.store,
        &ds,
        Split::Test,
        cfg.training.eval_batch_size,
        cfg.training.mask_seen,
        10,
    )?;
    let summary = TrainSummary {
        epochs_run: outcome.epochs_run,
        best_epoch: outcome.best_epoch,
        best_val_hr10: outcome.best_val_hr10,
        stopped_early: outcome.stopped_early,
        test_hr10: test.hr,
        test_ndcg10: test.ndcg,
        test_mrr10: test.mrr,
        wall_seconds: cfg.training.log_wall_time.then(|| start.elapsed().as_secs_f64()),
    };
    emit(log, &summary)?;
    log.flush().map_err(|e| Error::io("training log", e))?;
    Ok(summary)
}

pub fn train(cfg: &RunConfig, resume: bool, out: &mut dyn Write) -> Result<TrainSummary, CliError> {
    match cfg.training.precision {
        64 => train_with::<f64>(cfg, resume, out),
        _ => train_with::<f32>(cfg, resume, out),
    }
}

fn check_fits(model: &EchoMambaModel, ds: &SequenceDataset, cfg: &RunConfig) -> Result<(), CliError> {
    let mut errors = Vec::new();
    if model.config.n_items != ds.n_items() {
        errors.push(format!(
            "dataset: checkpoint expects {} items, dataset has {}",
            model.config.n_items,
            ds.n_items()
        ));
    }
    if model.config.max_len != cfg.dataset.max_len {
        errors.push(format!(
            "dataset.max_len: checkpoint uses {}, config says {}",
            model.config.max_len, cfg.dataset.max_len
        ));
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(errors))
    }
}

fn eval_with<F: Scalar>(
    cfg: &RunConfig,
    ds: &SequenceDataset,
    untrained: bool,
    split: Split,
    k: usize,
) -> Result<EvalReport, CliError> {
    let (model, store) = if untrained {
        let mut store = ParamStore::<F>::new();
        let mut rng = stream(cfg.training.seed, Stream::Init);
        let model = EchoMambaModel::new(&mut store, cfg.model_config(ds.n_items()), &mut rng)?;
        (model, store)
    } else {
        let path = checkpoint_path(cfg)?;
        let mut t = Trainer::<F>::load(path)?;
        t.restore_best();
        check_fits(&t.model, ds, cfg)?;
        (t.model, t.store)
    };
    Ok(evaluate(
        &model,
        &store,
        ds,
        split,
        cfg.training.eval_batch_size,
        cfg.training.mask_seen,
        k,
    )?)
}

fn checkpoint_path(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.output
        .checkpoint_path
        .as_deref()
        .ok_or_else(|| CliError::Validation(vec!["output.checkpoint_path: required unless --untrained".into()]))
}

pub fn eval(cfg: &RunConfig, untrained: bool, split: Split, k: usize, out: &mut dyn Write) -> Result<EvalReport, CliError> {
    let ds = load_dataset(cfg)?;
    // A checkpoint carries its own precision.
    let precision = if untrained {
        if cfg.training.precision == 64 {
            Precision::F64
        } else {
            Precision::F32
        }
    } else {
        precision_of(checkpoint_path(cfg)?)?
    };
    let report = match precision {
        Precision::F64 => eval_with::<f64>(cfg, &ds, untrained, split, k)?,
        Precision::F32 => eval_with::<f32>(cfg, &ds, untrained, split, k)?,
    };
    emit(out, &report)?;
    Ok(report)
}

fn bench_with<F: Scalar>(cfg: &RunConfig, runs: usize) -> Result<BenchReport, CliError> {
    let ds = load_dataset(cfg)?;
    let mut t = Trainer::<F>::new(cfg.model_config(ds.n_items()), cfg.train_config())?;
    let train_seconds_per_epoch = median_seconds(1, || t.train_epoch(&ds).map(drop))?;
    let inference_seconds = median_seconds(runs, || {
        rank_targets(&t.model, &t.store, &ds, Split::Test, cfg.training.eval_batch_size, false).map(drop)
    })?;
    let examples = ds.examples(Split::Train, cfg.training.all_prefixes);
    let batches = make_batches(&ds, &examples, cfg.training.batch_size, cfg.dataset.max_len, None)?;
    let first = batches.first().ok_or_else(|| Error::contract("no training rows"))?;
    let param_count = t.store.count();
    Ok(BenchReport {
        train_seconds_per_epoch,
        inference_seconds,
        param_count,
        param_bytes: param_count * F::PRECISION.bytes(),
        activation_bytes: activation_bytes(&t.model, &t.store, first)?,
        scan_scaling: scan_scaling(SCAN_BATCH, SCAN_CHANNELS, SCAN_STATE, SCAN_LEN, runs),
    })
}

pub fn bench(cfg: &RunConfig, runs: usize, scan_only: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if scan_only {
        return emit(out, &scan_scaling(SCAN_BATCH, SCAN_CHANNELS, SCAN_STATE, SCAN_LEN, runs));
    }
    let report = match cfg.training.precision {
        64 => bench_with::<f64>(cfg, runs)?,
        _ => bench_with::<f32>(cfg, runs)?,
    };
    emit(out, &report)
}

pub fn gradcheck(out: &mut dyn Write) -> Result<(), CliError> {
    let reports = run_suite()?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed { "ok" } else { "FAIL" };
        writeln!(out, "{status:4} {:<48} worst relative error {:.2e}", r.op, r.worst())
            .map_err(|e| Error::io("output", e))?;
        if !r.passed {
            failed.push(r.op.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

pub fn synth(cfg: &RunConfig, path: &Path) -> Result<(), CliError> {
    let log = planted_cycles(&cfg.planted_cycles(), cfg.dataset.synthetic_seed);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("user,item,timestamp\n");
    for r in &log.records {
        body.push_str(&format!("{},{},{}\n", r.user, r.item, r.timestamp));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    Ok(())
}
