//! Run directory layout:
//!
//! ```text
//! config.json                      RunSnapshot
//! matrix.json                      AccuracyMatrix (rows for completed stages)
//! stages.jsonl                     one StageSummary per completed stage
//! checkpoints/stage-NN.ckpt
//! predictions/stage-NN/<task>.jsonl
//! timing.json                      wall-clock seconds per stage
//! ```
//!
//! A stage counts as completed once its line is in `stages.jsonl`; that line
//! is written after the checkpoint and predictions.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{RunRecord, StageResult, StageSummary, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{AccuracyMatrix, PredictionRecord};
use crate::model::Checkpoint;
use crate::tasks::{TaskOrder, TaskSpec};

/// Everything that determines a run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub train: TrainConfig,
    pub order: TaskOrder,
    /// Task descriptions without example data.
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Timing {
    stage_secs: Vec<f64>,
}

pub(crate) struct RunDir {
    root: PathBuf,
    // held for the lifetime of the run; the OS drops it if the process dies
    _lock: File,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn checkpoint_rel(stage: usize) -> String {
    format!("checkpoints/stage-{stage:02}.ckpt")
}

fn predictions_path(root: &Path, stage: usize, task: &str) -> PathBuf {
    root.join(format!("predictions/stage-{stage:02}/{task}.jsonl"))
}

fn read_summaries(path: &Path) -> Result<Vec<StageSummary>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<StageSummary>(line) {
            Ok(s) => out.push(s),
            // a torn final line is an interrupted write, not corruption
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    for (j, s) in out.iter().enumerate() {
        if s.stage != j {
            return Err(Error::validation(format!("{}: stage {} out of sequence", path.display(), s.stage)));
        }
    }
    Ok(out)
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn load_stage(root: &Path, summary: &StageSummary) -> Result<StageResult> {
    let checkpoint = Checkpoint::load(&root.join(&summary.checkpoint))?;
    let mut predictions = BTreeMap::new();
    for task in summary.accuracies.keys() {
        predictions.insert(task.clone(), read_predictions(&predictions_path(root, summary.stage, task))?);
    }
    Ok(StageResult {
        summary: summary.clone(),
        predictions,
        checkpoint,
    })
}

impl RunDir {
    /// Creates or reopens a run directory. A reopened directory must hold
    /// the same snapshot; its completed stages are returned.
    pub(crate) fn open(root: &Path, snapshot: &RunSnapshot) -> Result<(Self, Vec<StageResult>)> {
        fs::create_dir_all(root.join("checkpoints")).map_err(|e| Error::io(root, e))?;
        let lock_path = root.join(".lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| Error::io(&lock_path, e))?;
        if lock.try_lock().is_err() {
            return Err(Error::Refused(format!("{} is in use by another run", root.display())));
        }
        let config_path = root.join("config.json");
        if config_path.exists() {
            let existing: RunSnapshot = read_json(&config_path)?;
            if &existing != snapshot {
                return Err(Error::config(format!(
                    "{} holds a run with a different configuration",
                    root.display()
                )));
            }
        } else {
            write_json(&config_path, snapshot)?;
        }
        let summaries = read_summaries(&root.join("stages.jsonl"))?;
        let stages = summaries
            .iter()
            .map(|s| load_stage(root, s))
            .collect::<Result<Vec<_>>>()?;
        let dir = Self {
            root: root.to_path_buf(),
            _lock: lock,
        };
        // drop any torn trailing line so appends start clean
        dir.rewrite_summaries(&summaries)?;
        Ok((dir, stages))
    }

    fn rewrite_summaries(&self, summaries: &[StageSummary]) -> Result<()> {
        let path = self.root.join("stages.jsonl");
        let mut text = String::new();
        for s in summaries {
            text.push_str(&serde_json::to_string(s)?);
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub(crate) fn commit(&self, stage: &StageResult, matrix: &AccuracyMatrix, secs: f64) -> Result<()> {
        let s = &stage.summary;
        stage.checkpoint.save(&self.root.join(&s.checkpoint))?;
        for (task, records) in &stage.predictions {
            let path = predictions_path(&self.root, s.stage, task);
            let parent = path.parent().expect("nested path");
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            let mut text = String::new();
            for r in records {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        let path = self.root.join("stages.jsonl");
        let mut f = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(s)?).map_err(|e| Error::io(&path, e))?;
        f.sync_data().map_err(|e| Error::io(&path, e))?;
        matrix.save(&self.root.join("matrix.json"))?;

        let timing_path = self.root.join("timing.json");
        let mut timing: Timing = if timing_path.exists() {
            read_json(&timing_path)?
        } else {
            Timing::default()
        };
        timing.stage_secs.truncate(s.stage);
        timing.stage_secs.push(secs);
        write_json(&timing_path, &timing)
    }
}

/// Reads a run directory written by [`crate::engine::run_sequence`],
/// complete or not.
pub fn load_run(root: &Path) -> Result<RunRecord> {
    let snapshot: RunSnapshot = read_json(&root.join("config.json"))?;
    let summaries = read_summaries(&root.join("stages.jsonl"))?;
    let stages = summaries
        .iter()
        .map(|s| load_stage(root, s))
        .collect::<Result<Vec<_>>>()?;
    let matrix = crate::engine::matrix_of(&snapshot.order, &stages)?;
    Ok(RunRecord {
        config: snapshot.train,
        order: snapshot.order,
        tasks: snapshot.tasks,
        stages,
        matrix,
    })
}
