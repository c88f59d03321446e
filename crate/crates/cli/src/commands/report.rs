use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::Args;
use mage_core::engine::{load_run, RunRecord, TrainConfig};
use mage_core::metrics::{
    classify_errors, error_metrics, mean_std, reference_tables, report, ErrorLabel, MetricReport,
};
use mage_core::tasks::TaskSpec;
use serde::Serialize;

use crate::config::under;
use crate::table::{cell, render};
use crate::{Context, UsageError};

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories or directories containing them; defaults to the runs root.
    pub paths: Vec<PathBuf>,
    /// Report the shipped reference tables instead of runs.
    #[arg(long, conflicts_with = "paths")]
    pub fixtures: bool,
    /// Destination of report.json and errors.jsonl; defaults to `<out>/report`.
    #[arg(long)]
    pub dest: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunRow {
    run: String,
    group: String,
    seed: Option<u64>,
    report: MetricReport,
}

#[derive(Serialize)]
struct Stat {
    mean: f64,
    std: f64,
}

#[derive(Serialize)]
struct GroupRow {
    group: String,
    runs: usize,
    columns: BTreeMap<&'static str, Option<Stat>>,
}

#[derive(Serialize)]
struct ReportFile {
    runs: Vec<RunRow>,
    groups: Vec<GroupRow>,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    run: &'a str,
    stage: usize,
    task: &'a str,
    id: &'a str,
    label: ErrorLabel,
}

const COLUMNS: [&str; 6] = ["Avg.ACC", "Forgetting", "New.ACC", "Avg.HAL", "Avg.IUF", "Avg.OTH"];

fn columns(r: &MetricReport) -> [Option<f64>; 6] {
    [Some(r.avg_acc), r.forgetting, Some(r.new_acc), r.avg_hal, r.avg_iuf, r.avg_oth]
}

fn find_runs(path: &Path, depth: usize, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.join("config.json").is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    if depth == 0 || !path.is_dir() {
        return Ok(());
    }
    let mut children: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for c in children {
        find_runs(&c, depth - 1, out)?;
    }
    Ok(())
}

/// Per-example labels of every stage, keyed by task.
type StageLabels = Vec<BTreeMap<String, BTreeMap<String, ErrorLabel>>>;

fn labels_of(run: &RunRecord) -> Result<StageLabels> {
    let vocab = run.config.model.vocab();
    run.stages
        .iter()
        .map(|s| {
            s.predictions
                .iter()
                .map(|(task, recs)| Ok((task.clone(), classify_errors(recs, vocab)?)))
                .collect()
        })
        .collect()
}

fn run_report(run: &RunRecord, labels: &StageLabels) -> Result<MetricReport> {
    let last = labels.last().expect("complete run has stages");
    let ids = &run.order.ids;
    let own: Vec<_> = ids.iter().enumerate().map(|(i, id)| labels[i][id].clone()).collect();
    let fin: Vec<_> = ids.iter().map(|id| last[id].clone()).collect();
    let errors = error_metrics(&own, &fin)?;
    Ok(report(&run.matrix, errors.as_ref())?)
}

fn sorted_tasks(run: &RunRecord) -> Vec<TaskSpec> {
    let mut t = run.tasks.clone();
    t.sort_by(|a, b| a.id.cmp(&b.id));
    t
}

/// Key identifying runs that differ only by seed.
fn group_key(run: &RunRecord) -> Result<String> {
    let cfg: TrainConfig = run.config.clone().with_seed(0);
    Ok(format!("{}|{}", serde_json::to_string(&cfg)?, run.order.name))
}

fn print_and_write(rows: Vec<RunRow>, dest: &Path, errors: Option<Vec<u8>>) -> Result<()> {
    let header: Vec<String> = std::iter::once("run").chain(COLUMNS).map(String::from).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| std::iter::once(r.run.clone()).chain(columns(&r.report).map(cell)).collect())
        .collect();
    print!("{}", render(&header, &body));

    let mut grouped: Vec<(String, Vec<&RunRow>)> = Vec::new();
    for r in &rows {
        match grouped.iter_mut().find(|(g, _)| *g == r.group) {
            Some((_, v)) => v.push(r),
            None => grouped.push((r.group.clone(), vec![r])),
        }
    }
    let groups: Vec<GroupRow> = grouped
        .iter()
        .map(|(g, members)| {
            let cols = COLUMNS
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let vals: Option<Vec<f64>> = members.iter().map(|r| columns(&r.report)[k]).collect();
                    let stat = vals.and_then(|v| mean_std(&v)).map(|(mean, std)| Stat { mean, std });
                    (*name, stat)
                })
                .collect();
            GroupRow {
                group: g.clone(),
                runs: members.len(),
                columns: cols,
            }
        })
        .collect();
    println!();
    let header: Vec<String> = ["group", "n"].into_iter().chain(COLUMNS).map(String::from).collect();
    let body: Vec<Vec<String>> = groups
        .iter()
        .map(|g| {
            let mut row = vec![g.group.clone(), g.runs.to_string()];
            row.extend(COLUMNS.iter().map(|c| match &g.columns[c] {
                Some(s) => format!("{:.2} ± {:.2}", s.mean, s.std),
                None => "-".into(),
            }));
            row
        })
        .collect();
    print!("{}", render(&header, &body));

    fs::create_dir_all(dest).with_context(|| format!("creating {}", dest.display()))?;
    let path = dest.join("report.json");
    let mut text = serde_json::to_string_pretty(&ReportFile { runs: rows, groups })?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("\nwrote {}", path.display());
    if let Some(bytes) = errors {
        let path = dest.join("errors.jsonl");
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn report_fixtures(dest: &Path) -> Result<()> {
    let rows = reference_tables()
        .into_iter()
        .map(|t| {
            Ok(RunRow {
                run: t.method.clone(),
                group: t.method.clone(),
                seed: None,
                report: report(&t.matrix()?, None)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    print_and_write(rows, dest, None)
}

pub fn run(ctx: &Context, args: ReportArgs) -> Result<()> {
    let dest = args.dest.clone().unwrap_or_else(|| ctx.out.join("report"));
    if args.fixtures {
        return report_fixtures(&dest);
    }
    let roots = if args.paths.is_empty() {
        vec![under(&ctx.out, &ctx.config.runs)]
    } else {
        args.paths
    };
    let mut dirs = Vec::new();
    for r in &roots {
        if !r.exists() {
            return Err(UsageError(format!("{} does not exist", r.display())).into());
        }
        find_runs(r, 3, &mut dirs)?;
    }
    if dirs.is_empty() {
        return Err(UsageError("no run directories found".into()).into());
    }

    let mut runs = Vec::new();
    for d in dirs {
        let run = load_run(&d).with_context(|| format!("loading {}", d.display()))?;
        if run.is_complete() {
            runs.push((d, run));
        } else {
            eprintln!(
                "warning: skipping incomplete run {} ({} of {} stages)",
                d.display(),
                run.stages.len(),
                run.order.ids.len()
            );
        }
    }
    let Some((_, first)) = runs.first() else {
        return Err(UsageError("no completed runs to report".into()).into());
    };
    let roster = sorted_tasks(first);
    if let Some((d, _)) = runs.iter().find(|(_, r)| sorted_tasks(r) != roster) {
        return Err(UsageError(format!(
            "{} was trained on a different task roster; refusing to compare",
            d.display()
        ))
        .into());
    }

    // groups are runs that differ only by seed
    let mut labels: BTreeMap<String, String> = BTreeMap::new();
    let mut errors = Vec::new();
    let mut rows = Vec::new();
    for (d, run) in &runs {
        let key = group_key(run)?;
        let group = match labels.get(&key) {
            Some(g) => g.clone(),
            None => {
                let base = super::run::default_name(&run.config, run.order.name.as_str());
                let mut g = base.clone();
                let mut k = 2;
                while labels.values().any(|v| *v == g) {
                    g = format!("{base}#{k}");
                    k += 1;
                }
                labels.insert(key, g.clone());
                g
            }
        };
        let stage_labels = labels_of(run)?;
        let name = d.display().to_string();
        for (stage, tasks) in stage_labels.iter().enumerate() {
            for (task, ls) in tasks {
                for (id, label) in ls {
                    let line = ErrorLine {
                        run: &name,
                        stage,
                        task,
                        id,
                        label: *label,
                    };
                    serde_json::to_writer(&mut errors, &line)?;
                    errors.write_all(b"\n")?;
                }
            }
        }
        rows.push(RunRow {
            run: name,
            group,
            seed: Some(run.config.seed),
            report: run_report(run, &stage_labels)?,
        });
    }
    print_and_write(rows, &dest, Some(errors))
}

pub fn fixtures_check(tolerance: f64) -> Result<()> {
    if !(tolerance >= 0.0) {
        return Err(UsageError("tolerance must be non-negative".into()).into());
    }
    let mut mismatches = Vec::new();
    let mut rows = Vec::new();
    for t in reference_tables() {
        let r = report(&t.matrix()?, None)?;
        let pairs = [
            ("Avg.ACC", r.avg_acc, t.reported.avg_acc),
            ("Forgetting", r.forgetting.unwrap_or(f64::NAN), t.reported.forgetting),
            ("New.ACC", r.new_acc, t.reported.new_acc),
        ];
        let mut row = vec![t.method.clone()];
        for (name, got, want) in pairs {
            // reported values carry two decimals; allow for the rounding itself
            let ok = (got - want).abs() <= tolerance + 1e-9;
            row.push(format!("{got:.3} / {want:.2}{}", if ok { "" } else { " !" }));
            if !ok {
                mismatches.push(format!("{} {name}: recomputed {got:.4}, reported {want:.2}", t.method));
            }
        }
        rows.push(row);
    }
    let header = ["method", "Avg.ACC", "Forgetting", "New.ACC"].map(String::from);
    print!("{}", render(&header, &rows));
    println!("(recomputed / reported, tolerance ±{tolerance})");
    if mismatches.is_empty() {
        println!("all {} values match", rows.len() * 3);
        Ok(())
    } else {
        for m in &mismatches {
            println!("mismatch: {m}");
        }
        Err(UsageError(format!("{} reported value(s) outside ±{tolerance}", mismatches.len())).into())
    }
}
