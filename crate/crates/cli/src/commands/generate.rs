use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::Args;
use mage_core::tasks::{generate_roster, write_roster};

use crate::{Context, UsageError};

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Output directory; defaults to the directory of the configured roster.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Roster seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Replace an existing roster.
    #[arg(long)]
    pub force: bool,
}

pub fn run(ctx: &Context, args: GenerateArgs) -> Result<()> {
    let mut roster = ctx.config.generate.clone();
    if let Some(s) = args.seed {
        roster.seed = s;
    }
    if let Some(n) = args.train_size {
        roster.train_size = n;
    }
    if let Some(n) = args.test_size {
        roster.test_size = n;
    }
    let dir = match args.dir {
        Some(d) => d,
        None => {
            let manifest = super::roster_path(ctx, None);
            manifest.parent().map(PathBuf::from).unwrap_or_default()
        }
    };
    if dir.join("roster.json").exists() && !args.force {
        return Err(UsageError(format!("{} already holds a roster; pass --force to replace it", dir.display())).into());
    }
    let tasks = generate_roster(&roster)?;
    let path = write_roster(&dir, &roster, &tasks).with_context(|| format!("writing roster to {}", dir.display()))?;
    for t in &tasks {
        println!("{:<20} train {:>5}  test {:>5}", t.id, t.train.len(), t.test.len());
    }
    println!("wrote {}", path.display());
    Ok(())
}
