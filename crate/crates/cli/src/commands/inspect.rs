use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::Args;
use mage_core::engine::{cross_eval as eval_cell, load_run, RunRecord};
use mage_core::model::{param_delta, Heatmap};
use mage_core::tasks::TaskSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::table::{cell, render};
use crate::{Context, UsageError};

#[derive(Args, Debug)]
pub struct CrossEvalArgs {
    pub run: PathBuf,
    /// Stage, by index or task id. All completed stages when omitted.
    #[arg(long)]
    pub trained_on: Option<String>,
    /// Task to evaluate. All roster tasks when omitted.
    #[arg(long)]
    pub eval_on: Option<String>,
    /// Roster manifest holding the test splits; defaults to the configured one.
    #[arg(long)]
    pub roster: Option<PathBuf>,
    /// Also write the grid as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    pub run: PathBuf,
    /// Stage, by index or task id.
    pub stage_a: String,
    pub stage_b: String,
    /// Compare live weights instead of the evaluated (shadow) weights.
    #[arg(long)]
    pub live: bool,
    /// Write the grid as JSON to this file instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn load(dir: &Path) -> Result<RunRecord> {
    if !dir.join("config.json").is_file() {
        return Err(UsageError(format!("{} is not a run directory", dir.display())).into());
    }
    load_run(dir).with_context(|| format!("loading {}", dir.display()))
}

/// Resolves a stage given by index or by the id of the task trained there.
fn stage_index(run: &RunRecord, s: &str) -> Result<usize> {
    let idx = match s.parse::<usize>() {
        Ok(i) => i,
        Err(_) => run
            .stages
            .iter()
            .position(|st| st.summary.task_id == s)
            .ok_or_else(|| UsageError(format!("no completed stage trained on {s:?}")))?,
    };
    if idx >= run.stages.len() {
        return Err(UsageError(format!(
            "stage {idx} not available; the run has {} completed stage(s)",
            run.stages.len()
        ))
        .into());
    }
    Ok(idx)
}

#[derive(Serialize)]
struct Grid {
    run: String,
    /// Task trained at each row's stage.
    stages: Vec<String>,
    tasks: Vec<String>,
    /// `accuracy[stage][task]`, percent.
    accuracy: Vec<Vec<f64>>,
}

pub fn cross_eval(ctx: &Context, args: CrossEvalArgs) -> Result<()> {
    let run = load(&args.run)?;
    let tasks = super::load_roster(&super::roster_path(ctx, args.roster.as_deref()))?;
    for t in &run.tasks {
        let found = tasks.iter().find(|r| r.id == t.id).map(|r| TaskSpec {
            train: Vec::new(),
            test: Vec::new(),
            ..r.clone()
        });
        if found.as_ref() != Some(t) {
            return Err(UsageError(format!("roster does not hold the task {} this run was trained on", t.id)).into());
        }
    }
    let stages: Vec<usize> = match &args.trained_on {
        Some(s) => vec![stage_index(&run, s)?],
        None => (0..run.stages.len()).collect(),
    };
    let eval_ids: Vec<String> = match &args.eval_on {
        Some(id) => vec![id.clone()],
        None => tasks.iter().map(|t| t.id.clone()).collect(),
    };
    let accuracy = stages
        .par_iter()
        .map(|&j| {
            let trained = &run.stages[j].summary.task_id;
            eval_ids
                .iter()
                .map(|e| Ok(eval_cell(&run, trained, e, &tasks)?))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid {
        run: args.run.display().to_string(),
        stages: stages.iter().map(|&j| run.stages[j].summary.task_id.clone()).collect(),
        tasks: eval_ids,
        accuracy,
    };

    let header: Vec<String> = std::iter::once("trained on".to_string()).chain(grid.tasks.iter().cloned()).collect();
    let body: Vec<Vec<String>> = grid
        .stages
        .iter()
        .zip(&grid.accuracy)
        .enumerate()
        .map(|(k, (s, row))| {
            std::iter::once(format!("{} {s}", stages[k]))
                .chain(row.iter().map(|v| cell(Some(*v))))
                .collect()
        })
        .collect();
    print!("{}", render(&header, &body));
    if let Some(path) = args.json {
        let mut text = serde_json::to_string_pretty(&grid)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct HeatmapFile {
    run: String,
    stage_a: usize,
    stage_b: usize,
    task_a: String,
    task_b: String,
    weights: &'static str,
    heatmap: Heatmap,
}

pub fn heatmap(_ctx: &Context, args: HeatmapArgs) -> Result<()> {
    let run = load(&args.run)?;
    let (a, b) = (stage_index(&run, &args.stage_a)?, stage_index(&run, &args.stage_b)?);
    let model = |j: usize| -> Result<_> {
        let ck = &run.stages[j].checkpoint;
        Ok(if args.live { ck.model.clone() } else { ck.eval_model()? })
    };
    let delta = param_delta(&model(a)?, &model(b)?)?;
    let file = HeatmapFile {
        run: args.run.display().to_string(),
        stage_a: a,
        stage_b: b,
        task_a: run.stages[a].summary.task_id.clone(),
        task_b: run.stages[b].summary.task_id.clone(),
        weights: if args.live { "live" } else { "evaluated" },
        heatmap: delta.heatmap,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    match args.output {
        Some(path) => {
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            let h = &file.heatmap;
            let header: Vec<String> = std::iter::once("layer".to_string()).chain(h.groups.iter().cloned()).collect();
            let body: Vec<Vec<String>> = h
                .cells
                .iter()
                .enumerate()
                .map(|(l, row)| std::iter::once(l.to_string()).chain(row.iter().map(|v| format!("{v:.3e}"))).collect())
                .collect();
            print!("{}", render(&header, &body));
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
