pub mod generate;
pub mod inspect;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

use anyhow::Result;
use mage_core::tasks::{read_manifest, TaskSpec};

use crate::config::under;
use crate::Context;

/// Roster manifest path: the explicit argument, else the configured one.
pub fn roster_path(ctx: &Context, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| under(&ctx.out, &ctx.config.roster), Path::to_path_buf)
}

pub fn load_roster(path: &Path) -> Result<Vec<TaskSpec>> {
    if !path.exists() {
        return Err(crate::UsageError(format!("no roster at {}; run `mage-lab generate` first", path.display())).into());
    }
    Ok(read_manifest(path)?.1)
}
