use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::Args;
use mage_core::engine::{run_sequence, RunOptions, RunRecord, TrainConfig};
use mage_core::metrics::{avg_acc, forgetting, new_acc, ForgettingMode};
use mage_core::model::Variant;
use mage_core::pema::EmaPolicy;
use mage_core::tasks::{task_order, TaskSpec};
use rayon::prelude::*;

use crate::config::under;
use crate::table::{cell, render};
use crate::Context;

#[derive(Args, Debug)]
pub struct RunArgs {
    /// single | two-split | four-split
    #[arg(long)]
    pub variant: Option<Variant>,
    /// pema | off | stable | stable:<weight>
    #[arg(long)]
    pub ema: Option<EmaPolicy>,
    /// default | reverse | alphabet
    #[arg(long)]
    pub order: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub total_rank: Option<usize>,
    /// Roster manifest; defaults to the configured one.
    #[arg(long)]
    pub roster: Option<PathBuf>,
    /// Directory name under the runs root; defaults to `<variant>-<ema>-<order>`.
    #[arg(long)]
    pub name: Option<String>,
}

fn train_config(base: &TrainConfig, a: &RunArgs) -> TrainConfig {
    let mut c = base.clone();
    if let Some(v) = a.variant {
        c.model.variant = v;
    }
    if let Some(e) = a.ema {
        c.ema = e;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.max_steps {
        c.max_steps = v;
    }
    if let Some(v) = a.alpha {
        c.model.alpha = v;
    }
    if let Some(v) = a.total_rank {
        c.model.total_rank = v;
    }
    c
}

pub fn default_name(cfg: &TrainConfig, order: &str) -> String {
    format!("{}-{}-{}", cfg.model.variant, cfg.ema, order).replace(':', "_")
}

pub fn seed_dir(parent: &Path, seed: u64) -> PathBuf {
    parent.join(format!("seed-{seed}"))
}

fn run_one(cfg: &TrainConfig, tasks: &[TaskSpec], order: &str, dir: PathBuf) -> Result<RunRecord> {
    let ids: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
    let order = task_order(order, &ids)?;
    let opts = RunOptions {
        dir: Some(dir.clone()),
        stop_after: None,
    };
    run_sequence(cfg, tasks, &order, &opts).with_context(|| format!("run {}", dir.display()))
}

pub fn run(ctx: &Context, args: RunArgs) -> Result<()> {
    let base = train_config(&ctx.config.train, &args);
    base.validate()?;
    let order = args.order.clone().unwrap_or_else(|| ctx.config.order.clone());
    let seeds = args.seeds.clone().unwrap_or_else(|| ctx.config.seeds.clone());
    if seeds.is_empty() {
        return Err(crate::UsageError("seed list is empty".into()).into());
    }
    let tasks = super::load_roster(&super::roster_path(ctx, args.roster.as_deref()))?;
    let parent = under(&ctx.out, &ctx.config.runs).join(args.name.clone().unwrap_or_else(|| default_name(&base, &order)));

    // each seed owns its run directory
    let results: Vec<(u64, Result<RunRecord>)> = seeds
        .par_iter()
        .map(|&seed| (seed, run_one(&base.clone().with_seed(seed), &tasks, &order, seed_dir(&parent, seed))))
        .collect();

    let mut rows = Vec::new();
    let mut first_err: Option<anyhow::Error> = None;
    for (seed, r) in results {
        match r {
            Ok(run) => {
                let m = &run.matrix;
                rows.push(vec![
                    seed_dir(&parent, seed).display().to_string(),
                    cell(avg_acc(m, m.stages() - 1).ok()),
                    cell(forgetting(m, ForgettingMode::DiagRef)?),
                    cell(new_acc(m).ok()),
                    run.total_steps().to_string(),
                ]);
            }
            // the first failure becomes the command's error; later ones are only logged
            Err(e) if first_err.is_none() => first_err = Some(e),
            Err(e) => eprintln!("seed {seed}: {e:#}"),
        }
    }
    if !rows.is_empty() {
        let header = ["run", "Avg.ACC", "Forgetting", "New.ACC", "steps"].map(String::from);
        print!("{}", render(&header, &rows));
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
