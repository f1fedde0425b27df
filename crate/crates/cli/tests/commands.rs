use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use echomamba::data::Split;
use echomamba_cli::commands;
use echomamba_cli::config::{DatasetFormat, RunConfig};
use echomamba_cli::Overrides;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echomamba")).args(args).output().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"
[dataset]
format = "planted_cycles"
synthetic_users = 80
max_len = 20

[model]
d_model = 8
d_state = 4

[training]
lr = 0.01
batch_size = 16
epochs = 2
log_wall_time = false
"#;

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["--version"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_is_a_validation_error() {
    assert_eq!(bin(&["train", "--fast"]).status.code(), Some(1));
}

#[test]
fn config_errors_list_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\nd_model = -3\ncolour = \"red\"\nfilter_placement = \"per_layer\"\n[training]\nprecision = 16\n",
    );
    let out = bin(&["--config", cfg.to_str().unwrap(), "--no-filter", "train"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for key in ["model.d_model", "model.colour", "model.filter_placement", "training.precision"] {
        assert!(err.contains(key), "{key} not reported:\n{err}");
    }
}

#[test]
fn missing_input_file_is_a_runtime_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.dat");
    let cfg = write_config(dir.path(), &format!("[dataset]\npath = {:?}\n", missing.to_str().unwrap()));
    let out = bin(&["--config", cfg.to_str().unwrap(), "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.dat"));
}

#[test]
fn eval_without_checkpoint_needs_untrained() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(bin(&["--config", cfg.to_str().unwrap(), "eval"]).status.code(), Some(1));
}

#[test]
fn ingest_writes_a_cache_and_prints_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("ds.cache");
    let cfg = write_config(
        dir.path(),
        &format!(
            "[dataset]\npath = {:?}\ncache_path = {:?}\n",
            fixture("kcore_fixture.dat").to_str().unwrap(),
            cache.to_str().unwrap()
        ),
    );
    let out = bin(&["--config", cfg.to_str().unwrap(), "ingest"]);
    assert_eq!(out.status.code(), Some(0));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["n_users"], 6);
    assert_eq!(stats["n_interactions"], 30);
    assert!(cache.exists());
}

#[test]
fn untrained_model_scores_near_chance() {
    let mut cfg = RunConfig::default();
    cfg.dataset.format = DatasetFormat::PlantedCycles;
    cfg.dataset.max_len = 50;
    cfg.model.d_model = 32;
    let cfg = cfg.resolve(&Overrides::default()).unwrap();
    let report = commands::eval(&cfg, true, Split::Test, 10, &mut Vec::new()).unwrap();
    // 10 of 50 items under near-random scores.
    assert!((report.hr - 0.2).abs() <= 0.06, "HR@10 {}", report.hr);
}

#[test]
fn train_eval_and_resume_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("train.jsonl");
    let ckpt = dir.path().join("model.ckpt");
    let body = format!(
        "{SMALL}\n[output]\nlog_path = {:?}\ncheckpoint_path = {:?}\n",
        log.to_str().unwrap(),
        ckpt.to_str().unwrap()
    );
    let cfg = write_config(dir.path(), &body);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(bin(&["--config", cfg, "--seed", "5", "train"]).status.code(), Some(0));
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    // The header echoes effective values, including inherited ones.
    let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(header["config"]["training"]["seed"], 5);
    assert_eq!(header["config"]["model"]["filter_dropout"], 0.2);
    assert_eq!(header["config"]["model"]["combine"], "gate");

    let out = bin(&["--config", cfg, "eval", "--split", "validation"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["split"], "validation");
    assert_eq!(report["n_users"], 80);

    // Asking for more epochs continues from epoch 2.
    let more = write_config(dir.path(), &body.replace("epochs = 2", "epochs = 3"));
    let out = bin(&["--config", more.to_str().unwrap(), "--seed", "5", "train", "--resume"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.lines().any(|l| l.starts_with("{\"epoch\":3,")));
}

#[test]
fn precision_flag_selects_the_checkpoint_width() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let body = format!("{SMALL}\n[output]\ncheckpoint_path = {:?}\n", ckpt.to_str().unwrap()).replace("epochs = 2", "epochs = 1");
    let cfg = write_config(dir.path(), &body);
    let out = bin(&["--config", cfg.to_str().unwrap(), "--precision", "64", "train"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(echomamba::checkpoint::precision_of(&ckpt).unwrap(), echomamba::Precision::F64);
    // Eval follows the checkpoint.
    assert_eq!(bin(&["--config", cfg.to_str().unwrap(), "eval"]).status.code(), Some(0));
}

#[test]
fn synth_output_round_trips_through_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cycles.csv");
    let mut cfg = RunConfig::default();
    cfg.dataset.format = DatasetFormat::PlantedCycles;
    commands::synth(&cfg, &csv).unwrap();
    let generated = commands::build_dataset(&cfg).unwrap();
    cfg.dataset.format = DatasetFormat::CsvTriples;
    cfg.dataset.path = Some(csv);
    let read_back = commands::build_dataset(&cfg).unwrap();
    assert_eq!(read_back.stats(), generated.stats());
    assert_eq!(read_back.sequences, generated.sequences);
}

#[test]
fn gradcheck_exits_zero() {
    let out = bin(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).lines().all(|l| l.starts_with("ok")));
}

#[test]
fn bench_scan_only_reports_a_ratio() {
    let out = bin(&["bench", "--scan-only", "--runs", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let s: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(s["ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn bench_reports_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = bin(&["--config", cfg.to_str().unwrap(), "bench", "--runs", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let count = r["param_count"].as_u64().unwrap();
    assert_eq!(r["param_bytes"].as_u64().unwrap(), 4 * count);
    assert!(r["activation_bytes"].as_u64().unwrap() > 0);
}
