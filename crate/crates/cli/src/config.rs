//! Run configuration: a TOML file with four sections, overridden by flags.
//!
//! Precedence, lowest first: built-in defaults, the config file, flags.

use std::path::{Path, PathBuf};

use echomamba::data::{InputFormat, KCoreMode, PlantedCycles};
use echomamba::model::FilterPlacement;
use echomamba::ssm::{BlockCombine, Discretization, SsmConfig};
use echomamba::{ModelConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    MovielensDat,
    CsvTriples,
    /// Generated in memory; `path` is ignored.
    PlantedCycles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub format: DatasetFormat,
    /// Written by `ingest`, read by the other commands when present.
    pub cache_path: Option<PathBuf>,
    pub k_core: usize,
    pub k_core_mode: KCoreMode,
    pub max_len: usize,
    pub synthetic_seed: u64,
    pub synthetic_users: usize,
    pub synthetic_items: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let p = PlantedCycles::default();
        DatasetSection {
            path: None,
            format: DatasetFormat::MovielensDat,
            cache_path: None,
            k_core: 5,
            k_core_mode: KCoreMode::Iterative,
            max_len: 200,
            synthetic_seed: 7,
            synthetic_users: p.users,
            synthetic_items: p.items,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub d_state: usize,
    pub kernel: usize,
    pub expand: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Defaults to `dropout`.
    pub filter_dropout: Option<f64>,
    pub filter_enabled: bool,
    /// Defaults to `once`.
    pub filter_placement: Option<FilterPlacement>,
    pub bidirectional: bool,
    pub discretization: Discretization,
    pub combine: BlockCombine,
}

impl Default for ModelSection {
    fn default() -> Self {
        let ssm = SsmConfig::default();
        ModelSection {
            d_model: 64,
            d_state: ssm.d_state,
            kernel: ssm.kernel,
            expand: ssm.expand,
            layers: 1,
            dropout: 0.2,
            filter_dropout: None,
            filter_enabled: true,
            filter_placement: None,
            bidirectional: true,
            discretization: ssm.discretization,
            combine: ssm.combine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub lr: f64,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// 32 or 64.
    pub precision: u32,
    pub all_prefixes: bool,
    pub mask_seen: bool,
    pub log_wall_time: bool,
    pub finite_checks: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            lr: t.lr,
            batch_size: t.batch_size,
            eval_batch_size: t.eval_batch_size,
            epochs: t.epochs,
            patience: t.patience,
            seed: t.seed,
            precision: 32,
            all_prefixes: t.all_prefixes,
            mask_seen: t.mask_seen,
            log_wall_time: t.log_wall_time,
            finite_checks: t.finite_checks,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Training log; stdout when unset.
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub output: OutputSection,
}

/// Flag overrides. `None`/`false` leaves the file value alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_filter: bool,
    pub unidirectional: bool,
    pub euler: bool,
    pub mask_seen: bool,
    pub precision: Option<u32>,
}

/// Drops every key of `table` that does not deserialize on its own, so
/// each bad key is reported rather than only the first.
fn check_section<T: DeserializeOwned>(name: &str, table: &mut toml::Table, errors: &mut Vec<String>) {
    table.retain(|key, value| {
        let mut single = toml::Table::new();
        single.insert(key.to_string(), value.clone());
        match T::deserialize(toml::Value::Table(single)) {
            Ok(_) => true,
            Err(e) => {
                errors.push(format!("{name}.{key}: {}", e.message().trim()));
                false
            }
        }
    });
}

impl RunConfig {
    /// Parses what it can. Bad keys are listed and left at their defaults.
    pub fn parse_lenient(text: &str) -> Result<(Self, Vec<String>), CliError> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Validation(vec![format!("config: {}", e.message().trim())]))?;
        let mut errors = Vec::new();
        doc.retain(|section, value| {
            let Some(table) = value.as_table_mut() else {
                errors.push(format!("{section}: expected a [{section}] table"));
                return false;
            };
            match section {
                "dataset" => check_section::<DatasetSection>(section, table, &mut errors),
                "model" => check_section::<ModelSection>(section, table, &mut errors),
                "training" => check_section::<TrainingSection>(section, table, &mut errors),
                "output" => check_section::<OutputSection>(section, table, &mut errors),
                _ => {
                    errors.push(format!("{section}: unknown section"));
                    return false;
                }
            }
            true
        });
        let config = RunConfig::deserialize(toml::Value::Table(doc))
            .map_err(|e| CliError::Validation(vec![e.message().to_string()]))?;
        Ok((config, errors))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        match RunConfig::parse_lenient(text)? {
            (config, errors) if errors.is_empty() => Ok(config),
            (_, errors) => Err(CliError::Validation(errors)),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let (config, errors) = RunConfig::load_lenient(path)?;
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(CliError::Validation(errors))
        }
    }

    pub fn load_lenient(path: &Path) -> Result<(Self, Vec<String>), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(vec![format!("config {}: {e}", path.display())]))?;
        RunConfig::parse_lenient(&text)
    }

    /// Applies flags, then checks every value. Collects all problems.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        let mut errors = Vec::new();
        if let Some(seed) = o.seed {
            self.training.seed = seed;
        }
        if o.no_filter {
            self.model.filter_enabled = false;
        }
        if o.unidirectional {
            self.model.bidirectional = false;
        }
        if o.euler {
            self.model.discretization = Discretization::Euler;
        }
        if o.mask_seen {
            self.training.mask_seen = true;
        }
        if let Some(p) = o.precision {
            self.training.precision = p;
        }
        if !self.model.filter_enabled {
            if self.model.filter_dropout.is_some() {
                errors.push("model.filter_dropout: set while the filter is disabled".into());
            }
            if self.model.filter_placement.is_some() {
                errors.push("model.filter_placement: set while the filter is disabled".into());
            }
        }
        let positive = [
            ("dataset.k_core", self.dataset.k_core),
            ("dataset.max_len", self.dataset.max_len),
            ("model.d_model", self.model.d_model),
            ("model.d_state", self.model.d_state),
            ("model.kernel", self.model.kernel),
            ("model.expand", self.model.expand),
            ("model.layers", self.model.layers),
            ("training.batch_size", self.training.batch_size),
            ("training.eval_batch_size", self.training.eval_batch_size),
            ("training.epochs", self.training.epochs),
            ("training.patience", self.training.patience),
        ];
        for (key, v) in positive {
            if v == 0 {
                errors.push(format!("{key}: must be at least 1"));
            }
        }
        let rate = |key: &str, v: f64, errors: &mut Vec<String>| {
            if !(0.0..1.0).contains(&v) {
                errors.push(format!("{key}: {v} is not in [0, 1)"));
            }
        };
        rate("model.dropout", self.model.dropout, &mut errors);
        if let Some(v) = self.model.filter_dropout {
            rate("model.filter_dropout", v, &mut errors);
        }
        if !(self.training.lr.is_finite() && self.training.lr >= 0.0) {
            errors.push(format!("training.lr: {} is not a finite non-negative number", self.training.lr));
        }
        if !matches!(self.training.precision, 32 | 64) {
            errors.push(format!("training.precision: {} is not 32 or 64", self.training.precision));
        }
        if self.dataset.format == DatasetFormat::PlantedCycles {
            if self.dataset.synthetic_users == 0 {
                errors.push("dataset.synthetic_users: must be at least 1".into());
            }
            if self.dataset.synthetic_items < PlantedCycles::default().cycle_len {
                errors.push(format!(
                    "dataset.synthetic_items: need at least {} items",
                    PlantedCycles::default().cycle_len
                ));
            }
        }
        if errors.is_empty() {
            // Spell out inherited values so the log header shows them.
            if self.model.filter_enabled {
                self.model.filter_dropout.get_or_insert(self.model.dropout);
                self.model.filter_placement.get_or_insert(FilterPlacement::Once);
            }
            Ok(self)
        } else {
            Err(CliError::Validation(errors))
        }
    }

    pub fn model_config(&self, n_items: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_items,
            d_model: m.d_model,
            max_len: self.dataset.max_len,
            layers: m.layers,
            dropout: m.dropout,
            filter_dropout: m.filter_dropout,
            filter_enabled: m.filter_enabled,
            filter_placement: m.filter_placement.unwrap_or(FilterPlacement::Once),
            bidirectional: m.bidirectional,
            ssm: SsmConfig {
                d_state: m.d_state,
                kernel: m.kernel,
                expand: m.expand,
                discretization: m.discretization,
                combine: m.combine,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            eval_batch_size: t.eval_batch_size,
            epochs: t.epochs,
            patience: t.patience,
            seed: t.seed,
            all_prefixes: t.all_prefixes,
            mask_seen: t.mask_seen,
            log_wall_time: t.log_wall_time,
            finite_checks: t.finite_checks,
        }
    }

    pub fn input_format(&self) -> Option<InputFormat> {
        match self.dataset.format {
            DatasetFormat::MovielensDat => Some(InputFormat::MovielensDat),
            DatasetFormat::CsvTriples => Some(InputFormat::CsvTriples),
            DatasetFormat::PlantedCycles => None,
        }
    }

    pub fn planted_cycles(&self) -> PlantedCycles {
        PlantedCycles {
            users: self.dataset.synthetic_users,
            items: self.dataset.synthetic_items,
            ..PlantedCycles::default()
        }
    }
}
