use serde::{Deserialize, Serialize};

use crate::ctrl::{terminal_reward_estimate, CtrlConfig, CtrlTrainer, DdpoTrainer, RoundMetrics};
use crate::error::{ensure, Result};
use crate::experiments::Task;
use crate::score::ScoreNet;
use crate::sde::Sampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ctrl,
    Ddpo,
}

impl Method {
    /// Sampler the method is trained and evaluated with.
    pub fn sampler(self) -> Sampler {
        match self {
            Method::Ctrl => Sampler::EulerMaruyama,
            Method::Ddpo => Sampler::Ddpm,
        }
    }
}

/// Evaluation protocol around a fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSetup {
    pub step_counts: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
    /// Trailing window of the smoothed reward curve.
    pub window: usize,
}

impl Default for EvalSetup {
    fn default() -> Self {
        Self {
            step_counts: vec![25, 50, 100],
            n_samples: 2000,
            seed: 77,
            window: 10,
        }
    }
}

impl EvalSetup {
    pub fn validate(&self) -> Result<()> {
        ensure(!self.step_counts.is_empty() && self.step_counts.iter().all(|&n| n > 0), || {
            "step counts must be a non-empty list of positive integers".into()
        })?;
        ensure(self.n_samples >= 2 && self.window >= 1, || {
            "need at least two samples and a positive window".into()
        })
    }

    pub fn evaluate(&self, task: &Task, model: &ScoreNet, sampler: Sampler) -> Result<Vec<StepEval>> {
        self.validate()?;
        self.step_counts
            .iter()
            .map(|&n_steps| {
                let e = terminal_reward_estimate(&task.schedule, model, &task.reward, sampler, n_steps, self.n_samples, 1, self.seed)?;
                Ok(StepEval {
                    n_steps,
                    mean: e.mean,
                    std_error: e.std_error,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEval {
    pub n_steps: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub method: Method,
    pub train_steps: usize,
    pub beta: f64,
    pub before: Vec<StepEval>,
    pub after: Vec<StepEval>,
    pub rounds: Vec<RoundMetrics>,
    pub window: usize,
}

fn at(evals: &[StepEval], n_steps: usize) -> Option<&StepEval> {
    evals.iter().find(|e| e.n_steps == n_steps)
}

fn trailing_mean(xs: &[f64], window: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

impl FinetuneReport {
    /// Mean reward after minus before at `n_steps`.
    pub fn improvement(&self, n_steps: usize) -> Option<f64> {
        Some(at(&self.after, n_steps)?.mean - at(&self.before, n_steps)?.mean)
    }

    /// Largest difference between any two post-training evaluations.
    pub fn max_pairwise_gap(&self) -> f64 {
        let means = self.after.iter().map(|e| e.mean);
        means.clone().fold(f64::NEG_INFINITY, f64::max) - means.fold(f64::INFINITY, f64::min)
    }

    /// Trailing-window average of the per-round mean terminal rewards.
    pub fn smoothed_rewards(&self) -> Vec<f64> {
        let r: Vec<f64> = self.rounds.iter().map(|m| m.mean_terminal_reward).collect();
        trailing_mean(&r, self.window)
    }

    pub fn smoothed_kl(&self) -> Vec<f64> {
        let k: Vec<f64> = self.rounds.iter().map(|m| m.kl_estimate).collect();
        trailing_mean(&k, self.window)
    }

    /// Smoothed reward at the last round minus the round-0 reward.
    pub fn smoothed_gain(&self) -> Option<f64> {
        Some(*self.smoothed_rewards().last()? - self.rounds.first()?.mean_terminal_reward)
    }

    pub fn final_kl(&self) -> Option<f64> {
        self.smoothed_kl().last().copied()
    }

    /// Smoothed reward after `rounds` rounds exceeds the first full-window value.
    pub fn improves_over(&self, rounds: usize) -> bool {
        let s = self.smoothed_rewards();
        let n = rounds.min(s.len());
        n > self.window && s[n - 1] > s[self.window - 1]
    }
}

/// Fine-tunes `pretrained` with `method` and evaluates before and after.
pub fn finetune(task: &Task, pretrained: &ScoreNet, method: Method, config: &CtrlConfig, eval: &EvalSetup) -> Result<FinetuneReport> {
    eval.validate()?;
    let sampler = method.sampler();
    let before = eval.evaluate(task, pretrained, sampler)?;
    let (policy, rounds) = match method {
        Method::Ctrl => {
            let mut tr = CtrlTrainer::new(config.clone(), task.schedule, task.reward.clone(), pretrained.clone())?;
            tr.run(|_, _| Ok(()))?;
            (tr.state.policy, tr.state.metrics)
        }
        Method::Ddpo => {
            let mut tr = DdpoTrainer::new(config.clone(), task.schedule, task.reward.clone(), pretrained.clone())?;
            tr.run(|_, _| Ok(()))?;
            (tr.policy, tr.metrics)
        }
    };
    let after = eval.evaluate(task, &policy, sampler)?;
    Ok(FinetuneReport {
        method,
        train_steps: config.n_steps,
        beta: config.beta,
        before,
        after,
        rounds,
        window: eval.window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_mean_matches_hand_values() {
        assert_eq!(trailing_mean(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(trailing_mean(&[2.0], 5), vec![2.0]);
    }

    #[test]
    fn gap_and_improvement() {
        let e = |n, mean| StepEval { n_steps: n, mean, std_error: 0.1 };
        let rep = FinetuneReport {
            method: Method::Ctrl,
            train_steps: 50,
            beta: 1.0,
            before: vec![e(25, -4.0), e(50, -4.0)],
            after: vec![e(25, -1.5), e(50, -1.0)],
            rounds: Vec::new(),
            window: 3,
        };
        assert_eq!(rep.improvement(50), Some(3.0));
        assert_eq!(rep.improvement(100), None);
        assert_eq!(rep.max_pairwise_gap(), 0.5);
        assert_eq!(rep.smoothed_gain(), None);
    }
}
