use serde::Serialize;

use ctrl_core::experiments::{score_fidelity, FIDELITY_TIMES};
use ctrl_core::{Checkpoint, Role, ScoreNet};

use crate::commands::{csv_bytes, plot};
use crate::error::CliResult;
use crate::manifest::Artifacts;
use crate::{Ctx, Outcome};

pub const SCORE: &str = "score.ckpt";
pub const LOSS_CSV: &str = "pretrain_loss.csv";
pub const FIDELITY_CSV: &str = "score_fidelity.csv";

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

#[derive(Serialize)]
struct FidelityRow {
    t: f64,
    rel_l2: f64,
}

/// Grid resolution per axis of the fidelity report; none above three dimensions.
fn fidelity_grid(d: usize) -> Option<usize> {
    match d {
        1 => Some(201),
        2 => Some(41),
        3 => Some(15),
        _ => None,
    }
}

pub fn run(ctx: &Ctx, art: &mut Artifacts) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let task = cfg.task()?;
    let (net, report) = task.pretrained(cfg.seed)?;
    let bytes = net
        .to_checkpoint(Role::Score)
        .with_meta(format!("pretrain seed={} steps={}", cfg.seed, cfg.pretrain.steps))
        .to_bytes();
    art.write(SCORE, &bytes)?;
    // everything downstream sees the stored precision
    let stored = ScoreNet::from_checkpoint(&Checkpoint::from_bytes(&bytes)?, cfg.schedule.horizon)?;

    let rows: Vec<LossRow> = report.losses.iter().enumerate().map(|(step, &loss)| LossRow { step, loss }).collect();
    art.write(LOSS_CSV, &csv_bytes(&rows)?)?;
    let mut summary = vec![
        format!("wrote {} ({} parameters)", art.path(SCORE).display(), stored.params().len()),
        format!("final loss {:.5}, smoothed decrease {}", report.losses.last().copied().unwrap_or(f64::NAN), report.smoothed_monotone),
    ];
    if let Some(grid) = fidelity_grid(cfg.dataset.dim()) {
        let slices = score_fidelity(&cfg.schedule, &cfg.dataset, &stored, &FIDELITY_TIMES, grid)?;
        let rows: Vec<FidelityRow> = slices.iter().map(|s| FidelityRow { t: s.t, rel_l2: s.rel_l2 }).collect();
        art.write(FIDELITY_CSV, &csv_bytes(&rows)?)?;
        let worst = slices.iter().map(|s| s.rel_l2).fold(0.0, f64::max);
        summary.push(format!("score vs analytic relative L2 error: worst {:.2}% over t in {:?}", 100.0 * worst, FIDELITY_TIMES));
    }
    plot(art, LOSS_CSV, "plots/pretrain_loss.svg", "Denoising score-matching loss", "step", "loss", None);
    Ok(Outcome { summary })
}
