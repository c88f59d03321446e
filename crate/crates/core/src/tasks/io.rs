use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vocab;
use crate::tasks::{Example, RosterConfig, TaskSpec};

/// One JSON record per line, in order.
pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path, vocab: Vocab) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        check_example(&ex, vocab).map_err(|msg| {
            Error::validation(format!("{} line {}: {msg}", path.display(), i + 1))
        })?;
        out.push(ex);
    }
    Ok(out)
}

fn check_example(ex: &Example, vocab: Vocab) -> std::result::Result<(), String> {
    for (m, tokens) in &ex.inputs {
        if let Some(t) = tokens.iter().find(|&&t| !vocab.contains(*m, t)) {
            return Err(format!("input token {t} is outside the {m} vocabulary"));
        }
    }
    if let Some(t) = ex.target.iter().find(|&&t| !vocab.contains(ex.format.modality, t)) {
        return Err(format!(
            "target token {t} is outside the {} vocabulary",
            ex.format.modality
        ));
    }
    if ex.target.len() != ex.format.length {
        return Err(format!(
            "target has {} tokens but the format requires {}",
            ex.target.len(),
            ex.format.length
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub spec: TaskSpec,
    /// Relative to the manifest's directory.
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

/// Lists a roster's tasks, their hidden rules and dataset files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub roster: RosterConfig,
    pub tasks: Vec<ManifestEntry>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a manifest and every dataset file it lists.
pub fn read_manifest(path: &Path) -> Result<(Manifest, Vec<TaskSpec>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let tasks = manifest
        .tasks
        .iter()
        .map(|entry| {
            let mut spec = entry.spec.clone();
            let vocab = spec.vocab();
            spec.train = read_dataset(&dir.join(&entry.train_path), vocab)?;
            spec.test = read_dataset(&dir.join(&entry.test_path), vocab)?;
            if spec.train.len() != spec.train_size || spec.test.len() != spec.test_size {
                return Err(Error::validation(format!(
                    "task {} dataset sizes do not match the manifest",
                    spec.id
                )));
            }
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, tasks))
}

/// Writes `<id>.train.jsonl`, `<id>.test.jsonl` per task and `roster.json`
/// into `dir`, creating it if needed. Returns the manifest path.
pub fn write_roster(dir: &Path, roster: &RosterConfig, tasks: &[TaskSpec]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(tasks.len());
    for t in tasks {
        let train_path = PathBuf::from(format!("{}.train.jsonl", t.id));
        let test_path = PathBuf::from(format!("{}.test.jsonl", t.id));
        write_dataset(&dir.join(&train_path), &t.train)?;
        write_dataset(&dir.join(&test_path), &t.test)?;
        entries.push(ManifestEntry {
            spec: t.clone(),
            train_path,
            test_path,
        });
    }
    let path = dir.join("roster.json");
    write_manifest(
        &path,
        &Manifest {
            roster: roster.clone(),
            tasks: entries,
        },
    )?;
    Ok(path)
}
