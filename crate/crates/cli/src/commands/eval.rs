use std::path::PathBuf;

use ndarray::s;
use serde::Serialize;

use ctrl_core::ctrl::terminal_samples;
use ctrl_core::metrics::{mmd_test, moment_kl};
use ctrl_core::rng::{self, derive_seed};
use ctrl_core::stats::Estimate;

use crate::commands::{csv_bytes, pretrain, round_checkpoints};
use crate::error::CliResult;
use crate::manifest::Artifacts;
use crate::samples::SampleFile;
use crate::{Ctx, Outcome};

pub const EVAL_CSV: &str = "eval.csv";

#[derive(Debug, Serialize)]
struct EvalRow {
    n_steps: usize,
    n_samples: usize,
    mean_reward: f64,
    reward_std_error: f64,
    mmd2: f64,
    mmd_bandwidth: f64,
    mmd_p_value: f64,
    mmd_null_q95: f64,
    /// Present for single-Gaussian data only.
    moment_kl: Option<f64>,
}

/// `--checkpoint`, else the latest kept round, else the pretrained score.
pub fn default_checkpoint(ctx: &Ctx) -> PathBuf {
    if let Some(p) = &ctx.checkpoint {
        return p.clone();
    }
    match round_checkpoints(&ctx.dir).ok().and_then(|v| v.last().cloned()) {
        Some((_, p)) => p,
        None => ctx.dir.join(pretrain::SCORE),
    }
}

pub fn run(ctx: &Ctx, art: &mut Artifacts) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let path = default_checkpoint(ctx);
    let (_, model) = ctx.load_model(&path)?;
    let sampler = cfg.sampler();
    let e = &cfg.eval;
    let (data, _) = cfg.dataset.sample(e.mmd_samples, &mut rng::stream(derive_seed(e.seed, 40, 0), 0));
    let mut rows = Vec::new();
    let mut summary = vec![format!("evaluating {} with {sampler:?}", path.display())];
    for n_steps in ctx.steps() {
        let (x, class) = terminal_samples(&cfg.schedule, &model, sampler, n_steps, e.n_samples, cfg.ctrl.n_classes, e.seed)?;
        let reward: Vec<f64> = match &cfg.reward {
            Some(rm) => x.rows().into_iter().zip(&class).map(|(row, &c)| rm.eval(&row.to_vec(), c)).collect::<Result<_, _>>()?,
            None => vec![f64::NAN; x.nrows()],
        };
        let est = Estimate::from_samples(&reward);
        let m = e.mmd_samples.min(x.nrows());
        let mmd = mmd_test(x.slice(s![..m, ..]), data.view(), e.permutations, derive_seed(e.seed, 41, n_steps as u64))?;
        let kl = if cfg.dataset.n_components() == 1 {
            Some(moment_kl(x.view(), &cfg.dataset.means[0], cfg.dataset.variance)?)
        } else {
            None
        };
        let file = SampleFile {
            n_steps,
            sampler,
            x,
            class,
            reward,
        };
        art.write(&format!("samples/samples_{n_steps:04}.bin"), &file.to_bytes())?;
        summary.push(format!(
            "{n_steps:>4} steps: reward {:.4} ± {:.4}, mmd2 {:.2e} (p {:.3}){}",
            est.mean,
            est.std_error,
            mmd.mmd2,
            mmd.p_value,
            kl.map(|k| format!(", moment KL {k:.4}")).unwrap_or_default()
        ));
        rows.push(EvalRow {
            n_steps,
            n_samples: e.n_samples,
            mean_reward: est.mean,
            reward_std_error: est.std_error,
            mmd2: mmd.mmd2,
            mmd_bandwidth: mmd.bandwidth,
            mmd_p_value: mmd.p_value,
            mmd_null_q95: mmd.null_q95,
            moment_kl: kl,
        });
    }
    art.write(EVAL_CSV, &csv_bytes(&rows)?)?;
    Ok(Outcome { summary })
}
