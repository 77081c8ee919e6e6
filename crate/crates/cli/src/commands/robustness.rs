use std::path::PathBuf;

use serde::Serialize;

use ctrl_core::Checkpoint;

use crate::commands::{csv_bytes, plot, round_checkpoints};
use crate::error::{CliError, CliResult};
use crate::manifest::Artifacts;
use crate::{Ctx, Outcome};

pub const ROBUSTNESS_CSV: &str = "robustness.csv";

#[derive(Debug, Serialize)]
struct Row {
    round: usize,
    n_steps: usize,
    mean: f64,
    std_error: f64,
}

fn round_of(path: &std::path::Path) -> usize {
    Checkpoint::load(path)
        .ok()
        .and_then(|c| c.meta.strip_prefix("round=")?.parse().ok())
        .unwrap_or(0)
}

/// `--checkpoint` alone, or every `robustness.every`-th kept round plus the last.
pub fn checkpoints(ctx: &Ctx) -> CliResult<Vec<(usize, PathBuf)>> {
    if let Some(p) = &ctx.checkpoint {
        return Ok(vec![(round_of(p), p.clone())]);
    }
    let all = round_checkpoints(&ctx.dir)?;
    if all.is_empty() {
        return Err(CliError::Validation(format!(
            "no round checkpoints under {}; run finetune first or pass --checkpoint",
            ctx.dir.display()
        )));
    }
    let every = ctx.cfg.robustness.every;
    let last = all.len() - 1;
    Ok(all.into_iter().enumerate().filter(|(i, _)| i % every == 0 || *i == last).map(|(_, c)| c).collect())
}

pub fn run(ctx: &Ctx, art: &mut Artifacts) -> CliResult<Outcome> {
    let task = ctx.cfg.task()?;
    let setup = ctx.cfg.eval.setup(Some(&ctx.steps()));
    let sampler = ctx.cfg.sampler();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (round, path) in checkpoints(ctx)? {
        let (_, model) = ctx.load_model(&path)?;
        let evals = setup.evaluate(&task, &model, sampler)?;
        let means: Vec<f64> = evals.iter().map(|e| e.mean).collect();
        let gap = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - means.iter().cloned().fold(f64::INFINITY, f64::min);
        let cells: Vec<String> = evals.iter().map(|e| format!("{}: {:.4} ± {:.4}", e.n_steps, e.mean, e.std_error)).collect();
        summary.push(format!("round {round:>4}  {}  max gap {gap:.4}", cells.join("  ")));
        rows.extend(evals.into_iter().map(|e| Row {
            round,
            n_steps: e.n_steps,
            mean: e.mean,
            std_error: e.std_error,
        }));
    }
    art.write(ROBUSTNESS_CSV, &csv_bytes(&rows)?)?;
    plot(art, ROBUSTNESS_CSV, "plots/robustness.svg", "Mean reward by sampling steps", "round", "mean", Some("n_steps"));
    Ok(Outcome { summary })
}
