//! Fine-tuning runs that survive interruption.
//!
//! After every round the policy (and for CTRL the value corrector) is rounded
//! to checkpoint precision and written, then `finetune/state.json` is replaced
//! atomically. A rerun with the same settings continues from the last
//! committed round; only `ctrl.rounds` may change between invocations.

use serde::{Deserialize, Serialize};

use ctrl_core::ctrl::{CtrlState, DdpoTrainer, RoundMetrics};
use ctrl_core::experiments::Method;
use ctrl_core::nn::round_to_storage;
use ctrl_core::{Checkpoint, CtrlTrainer, Role, ScoreNet};

use crate::commands::{csv_bytes, plot};
use crate::error::{CliError, CliResult};
use crate::manifest::{git_checksum, write_atomic, Artifacts};
use crate::{Ctx, Outcome};

pub const ROUNDS: &str = "rounds";
pub const METRICS_CSV: &str = "metrics.csv";
pub const STATE: &str = "finetune/state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SavedState {
    round: usize,
    fingerprint: String,
    policy: String,
    value: Option<String>,
}

pub fn round_path(round: usize) -> String {
    format!("{ROUNDS}/round_{round:04}.ckpt")
}

enum Trainer {
    Ctrl(CtrlTrainer),
    Ddpo(DdpoTrainer),
}

impl Trainer {
    fn round(&self) -> usize {
        match self {
            Trainer::Ctrl(t) => t.state.round,
            Trainer::Ddpo(t) => t.round,
        }
    }

    fn policy(&self) -> &ScoreNet {
        match self {
            Trainer::Ctrl(t) => &t.state.policy,
            Trainer::Ddpo(t) => &t.policy,
        }
    }

    fn metrics(&self) -> &[RoundMetrics] {
        match self {
            Trainer::Ctrl(t) => &t.state.metrics,
            Trainer::Ddpo(t) => &t.metrics,
        }
    }

    /// One round, with the new parameters rounded to storage precision so a
    /// resumed run starts from exactly what an uninterrupted one holds.
    fn step(&mut self) -> CliResult<()> {
        match self {
            Trainer::Ctrl(t) => {
                t.step()?;
                round_to_storage(t.state.policy.params_mut());
                round_to_storage(&mut t.state.value_params);
            }
            Trainer::Ddpo(t) => {
                t.step()?;
                round_to_storage(t.policy.params_mut());
            }
        }
        Ok(())
    }

    fn value_checkpoint(&self, policy_sum: [u8; 32]) -> CliResult<Option<Checkpoint>> {
        match self {
            Trainer::Ctrl(t) => Ok(Some(t.value_net()?.to_checkpoint(policy_sum))),
            Trainer::Ddpo(_) => Ok(None),
        }
    }
}

fn fingerprint(ctx: &Ctx, reference: [u8; 32]) -> CliResult<String> {
    let mut ctrl = ctx.cfg.ctrl.clone();
    ctrl.rounds = 0;
    let v = serde_json::json!({
        "method": ctx.cfg.finetune.method,
        "ctrl": ctrl,
        "schedule": ctx.cfg.schedule,
        "reward": ctx.cfg.reward,
        "reference": hex::encode(reference),
    });
    Ok(git_checksum(&serde_json::to_vec(&v)?))
}

fn policy_checkpoint(net: &ScoreNet, reference: [u8; 32], round: usize) -> Checkpoint {
    net.to_checkpoint(Role::PolicyMean).with_link(reference).with_meta(format!("round={round}"))
}

pub fn read_metrics(path: &std::path::Path) -> CliResult<Vec<RoundMetrics>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

fn resume(ctx: &Ctx, saved: &SavedState, reference: &ScoreNet, ref_sum: [u8; 32]) -> CliResult<Trainer> {
    let cfg = &ctx.cfg;
    let reward = cfg.require_reward()?.clone();
    let pol_ckpt = Checkpoint::load(ctx.dir.join(&saved.policy))?;
    if pol_ckpt.link != Some(ref_sum) {
        return Err(CliError::Runtime(format!("{} was not trained from this reference", saved.policy)));
    }
    let policy = ScoreNet::from_checkpoint(&pol_ckpt, cfg.schedule.horizon)?;
    let mut metrics = read_metrics(&ctx.dir.join(METRICS_CSV))?;
    if metrics.len() < saved.round {
        return Err(CliError::Runtime(format!("{METRICS_CSV} has {} rows, state is at round {}", metrics.len(), saved.round)));
    }
    metrics.truncate(saved.round);
    Ok(match cfg.finetune.method {
        Method::Ctrl => {
            let rel = saved.value.as_ref().ok_or_else(|| CliError::Runtime("saved CTRL state has no value network".into()))?;
            let v = Checkpoint::load(ctx.dir.join(rel))?;
            if v.link != Some(pol_ckpt.checksum()) {
                return Err(CliError::Runtime(format!("{rel} is not linked to {}", saved.policy)));
            }
            let state = CtrlState {
                round: saved.round,
                policy,
                value_params: v.params,
                metrics,
            };
            Trainer::Ctrl(CtrlTrainer::from_state(cfg.ctrl.clone(), cfg.schedule, reward, reference.clone(), state)?)
        }
        Method::Ddpo => {
            let mut t = DdpoTrainer::new(cfg.ctrl.clone(), cfg.schedule, reward, reference.clone())?;
            t.policy = policy;
            t.round = saved.round;
            t.metrics = metrics;
            Trainer::Ddpo(t)
        }
    })
}

fn saved_state(ctx: &Ctx, fp: &str) -> CliResult<Option<SavedState>> {
    let path = ctx.dir.join(STATE);
    if !path.exists() {
        return Ok(None);
    }
    let saved: SavedState = serde_json::from_slice(&std::fs::read(&path)?)?;
    if saved.fingerprint != fp {
        return Err(CliError::Validation(format!(
            "{} holds a run with different settings; only ctrl.rounds may change on resume",
            ctx.dir.display()
        )));
    }
    Ok(Some(saved))
}

/// Fails when the reference is unusable or the run directory holds an
/// incompatible run.
pub fn check(ctx: &Ctx) -> CliResult<()> {
    ctx.cfg.require_reward()?;
    let (ckpt, _) = ctx.load_model(&ctx.pretrained_path())?;
    saved_state(ctx, &fingerprint(ctx, ckpt.checksum())?)?;
    Ok(())
}

pub fn run(ctx: &Ctx, art: &mut Artifacts) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let (ref_ckpt, reference) = ctx.load_model(&ctx.pretrained_path())?;
    let ref_sum = ref_ckpt.checksum();
    let fp = fingerprint(ctx, ref_sum)?;
    let state_path = ctx.dir.join(STATE);
    let mut summary = Vec::new();

    let mut last: Option<SavedState> = None;
    let mut tr = if let Some(saved) = saved_state(ctx, &fp)? {
        summary.push(format!("resuming at round {}", saved.round));
        let tr = resume(ctx, &saved, &reference, ref_sum)?;
        last = Some(saved);
        tr
    } else {
        let reward = cfg.require_reward()?.clone();
        let zero = policy_checkpoint(&reference, ref_sum, 0);
        art.write(&round_path(0), &zero.to_bytes())?;
        match cfg.finetune.method {
            Method::Ctrl => Trainer::Ctrl(CtrlTrainer::new(cfg.ctrl.clone(), cfg.schedule, reward, reference.clone())?),
            Method::Ddpo => Trainer::Ddpo(DdpoTrainer::new(cfg.ctrl.clone(), cfg.schedule, reward, reference)?),
        }
    };

    let total = cfg.ctrl.rounds;
    while tr.round() < total {
        tr.step()?;
        let r = tr.round();
        let pol = policy_checkpoint(tr.policy(), ref_sum, r);
        let pol_bytes = pol.to_bytes();
        let pol_rel = format!("finetune/policy_{r:04}.ckpt");
        std::fs::create_dir_all(ctx.dir.join("finetune"))?;
        write_atomic(&ctx.dir.join(&pol_rel), &pol_bytes)?;
        let value_rel = match tr.value_checkpoint(pol.checksum())? {
            Some(v) => {
                let rel = format!("finetune/value_{r:04}.ckpt");
                write_atomic(&ctx.dir.join(&rel), &v.to_bytes())?;
                Some(rel)
            }
            None => None,
        };
        art.write(METRICS_CSV, &csv_bytes(tr.metrics())?)?;
        if r % cfg.finetune.keep_every == 0 || r == total {
            art.write(&round_path(r), &pol_bytes)?;
        }
        let saved = SavedState {
            round: r,
            fingerprint: fp.clone(),
            policy: pol_rel,
            value: value_rel,
        };
        write_atomic(&state_path, &serde_json::to_vec_pretty(&saved)?)?;
        if let Some(p) = last.replace(saved) {
            for old in std::iter::once(p.policy).chain(p.value) {
                let _ = std::fs::remove_file(ctx.dir.join(old));
            }
        }
        let m = tr.metrics().last().expect("a round just ran");
        eprintln!(
            "round {:>4}: reward {:+.4} kl {:.5} value mse {:.4} clip {:.3}",
            m.round, m.mean_terminal_reward, m.kl_estimate, m.value_mse, m.clip_fraction
        );
    }

    if let Some(saved) = &last {
        art.record(STATE)?;
        art.record(&saved.policy)?;
        if let Some(v) = &saved.value {
            art.record(v)?;
        }
    }
    plot(art, METRICS_CSV, "plots/reward.svg", "Mean terminal reward per round", "round", "mean_terminal_reward", None);
    if cfg.finetune.method == Method::Ctrl {
        plot(art, METRICS_CSV, "plots/kl.svg", "Path KL estimate per round", "round", "kl_estimate", None);
    }
    if let Some(m) = tr.metrics().last() {
        summary.push(format!(
            "{} rounds done; last round reward {:.4} (first {:.4}), kl {:.5}",
            tr.round(),
            m.mean_terminal_reward,
            tr.metrics()[0].mean_terminal_reward,
            m.kl_estimate
        ));
    }
    Ok(Outcome { summary })
}
