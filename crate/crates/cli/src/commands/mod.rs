pub mod eval;
pub mod finetune;
pub mod gradcheck;
pub mod pretrain;
pub mod robustness;

use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::manifest::Artifacts;
use crate::{Command, Ctx, Outcome};

/// Input checks that must pass before anything is written.
pub fn check_inputs(cmd: Command, ctx: &Ctx) -> CliResult<()> {
    match cmd {
        Command::Pretrain | Command::Gradcheck => Ok(()),
        Command::Finetune => finetune::check(ctx),
        Command::Eval => {
            ctx.load_model(&eval::default_checkpoint(ctx))?;
            Ok(())
        }
        Command::Robustness => {
            ctx.cfg.require_reward()?;
            for (_, path) in robustness::checkpoints(ctx)? {
                ctx.load_model(&path)?;
            }
            Ok(())
        }
    }
}

pub fn execute(cmd: Command, ctx: &Ctx, art: &mut Artifacts) -> CliResult<Outcome> {
    match cmd {
        Command::Pretrain => pretrain::run(ctx, art),
        Command::Finetune => finetune::run(ctx, art),
        Command::Eval => eval::run(ctx, art),
        Command::Robustness => robustness::run(ctx, art),
        Command::Gradcheck => gradcheck::run(ctx, art),
    }
}

/// Serializes rows to CSV bytes.
pub fn csv_bytes<T: serde::Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(format!("csv: {e}")))
}

/// Plots `csv` into `svg` and records the SVG when it was produced.
pub fn plot(art: &mut Artifacts, csv: &str, svg: &str, title: &str, x: &str, y: &str, group: Option<&str>) {
    let svg_path = art.path(svg);
    if let Some(parent) = svg_path.parent() {
        let _ = std::fs::create_dir_all(parent);
    }
    if crate::plot::emit(&art.path(csv), &svg_path, title, x, y, group) {
        let _ = art.record(svg);
    }
}

/// Policy checkpoints kept under `rounds/`, sorted by round.
pub fn round_checkpoints(dir: &Path) -> CliResult<Vec<(usize, PathBuf)>> {
    let rounds = dir.join(finetune::ROUNDS);
    if !rounds.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(rounds)? {
        let path = entry?.path();
        let round = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("round_")?.strip_suffix(".ckpt")?.parse::<usize>().ok());
        if let Some(r) = round {
            out.push((r, path));
        }
    }
    out.sort();
    Ok(out)
}
