//! Run directories: training and evaluation from a [`RunConfig`], with every
//! artifact under one user-named directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{render_report, MetricsReport, ReportFormat};
use crate::features::load_feature_store;
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::ModelParams;
use crate::training::{
    build_dataset, evaluate, make_splits, run_pipeline, ClassifierFit, EpochRecord, PipelineOutput,
    SplitName,
};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.cfm";
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const SPLITS_FILE: &str = "splits.json";
pub const FIT_FILE: &str = "fit.json";

/// Sample ids of each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// One JSON object per line.
pub fn render_run_log(log: &[EpochRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn read_run_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| Error::Load {
                subject: path.display().to_string(),
                reason: format!("line {}: {e}", k + 1),
            })
        })
        .collect()
}

pub fn write_report(dir: &Path, stem: &str, report: &MetricsReport) -> Result<()> {
    write(
        &dir.join(format!("{stem}.json")),
        render_report(report, ReportFormat::Json)?,
    )?;
    write(
        &dir.join(format!("{stem}.csv")),
        render_report(report, ReportFormat::Csv)?,
    )
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(dir: &Path, config: &RunConfig, out: &PipelineOutput<f64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(CONFIG_FILE), config.to_json())?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &out.params)?;
    write(&dir.join(RUN_LOG_FILE), render_run_log(&out.log))?;
    write_report(dir, "report", &out.test_report)?;
    let ids = |rows: &[usize]| rows.iter().map(|&r| out.sample_ids[r].clone()).collect();
    let splits = SplitIds {
        train: ids(&out.splits.train),
        val: ids(&out.splits.val),
        test: ids(&out.splits.test),
    };
    write(&dir.join(SPLITS_FILE), to_json(&splits))?;
    write(&dir.join(FIT_FILE), to_json(&out.fit))
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| {
        Error::Config(format!(
            "no {what} given (set it in the config or on the command line)"
        ))
    })
}

/// Trains from `config` and writes the run directory `config.out`.
pub fn train_run(config: &RunConfig) -> Result<PipelineOutput<f64>> {
    config.validate()?;
    let store_path = required(&config.store, "feature store")?;
    let out_dir = required(&config.out, "output directory")?;
    let store = load_feature_store(store_path)?;
    let lexicon = config.resolve_lexicon(store_path)?;
    let output = run_pipeline::<f64>(config, &store, &lexicon)?;
    write_run(out_dir, config, &output)?;
    Ok(output)
}

/// Options of [`eval_run`].
#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub run_dir: PathBuf,
    pub store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: SplitName,
}

/// Reloads a run's checkpoint and evaluates one split of its store.
pub fn eval_run(req: &EvalRequest) -> Result<(MetricsReport, Vec<String>)> {
    let config = RunConfig::load(&req.run_dir.join(CONFIG_FILE))?;
    let store_path = match &req.store {
        Some(p) => p.clone(),
        None => required(&config.store, "feature store")?.to_path_buf(),
    };
    let store = load_feature_store(&store_path)?;
    let lexicon = config.resolve_lexicon(&store_path)?;
    let task = config.plan.task;
    let dims = config
        .model
        .dims(store.dim, store.caption_dim, task.classes())?;
    let ckpt = req
        .checkpoint
        .clone()
        .unwrap_or_else(|| req.run_dir.join(CHECKPOINT_FILE));
    let params: ModelParams<f64> = load_checkpoint(&ckpt, dims)?;
    let data = build_dataset::<f64>(&store, &lexicon, task)?;
    let splits = make_splits(&data.raw_labels, &config.split, config.plan.seed)?;
    let rows = splits.get(req.split);
    let report = evaluate(&params, &data.select(rows), task)?;
    let ids = rows.iter().map(|&r| data.ids[r].clone()).collect();
    Ok((report, ids))
}

pub fn read_fit(dir: &Path) -> Result<ClassifierFit> {
    let path = dir.join(FIT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        subject: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        subject: path.display().to_string(),
        reason: e.to_string(),
    })
}
