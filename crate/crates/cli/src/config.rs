use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ctrl_core::experiments::{EvalSetup, GirsanovSetup, LqSetup, Method, Task};
use ctrl_core::oracle::GaussianMixtureData;
use ctrl_core::score::PretrainConfig;
use ctrl_core::{CtrlConfig, MlpSpec, NoiseSchedule, RewardModel, Sampler};

use crate::error::{invalid, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub method: Method,
    /// Keep a policy checkpoint every this many rounds (round 0 is the
    /// pretrained model and always kept).
    pub keep_every: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            method: Method::Ctrl,
            keep_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub step_counts: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
    /// Trailing window of smoothed curves.
    pub window: usize,
    /// Sampler used by eval and robustness; defaults to the fine-tuning
    /// method's own.
    pub sampler: Option<Sampler>,
    pub permutations: usize,
    /// Generated and data samples entering the MMD test (each side).
    pub mmd_samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalSetup::default();
        Self {
            step_counts: e.step_counts,
            n_samples: e.n_samples,
            seed: e.seed,
            window: e.window,
            sampler: None,
            permutations: 200,
            mmd_samples: 500,
        }
    }
}

impl EvalSection {
    pub fn setup(&self, steps: Option<&[usize]>) -> EvalSetup {
        EvalSetup {
            step_counts: steps.map(<[usize]>::to_vec).unwrap_or_else(|| self.step_counts.clone()),
            n_samples: self.n_samples,
            seed: self.seed,
            window: self.window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessSection {
    /// Evaluate every this many kept rounds.
    pub every: usize,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        Self { every: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub lq: LqSetup,
    pub girsanov: GirsanovSetup,
    pub directions: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        let g = ctrl_core::nn::GradCheckConfig::default();
        Self {
            lq: LqSetup::default(),
            girsanov: GirsanovSetup::default(),
            directions: g.directions,
            step: g.step,
            tolerance: g.tolerance,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_points() -> usize {
    10_000
}

/// Everything a command needs. `dataset` is the only required table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    pub dataset: GaussianMixtureData,
    #[serde(default = "default_points")]
    pub n_points: usize,
    /// Defaults to the small time-embedded MLP of the data dimension.
    #[serde(default)]
    pub score_net: Option<MlpSpec>,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub reward: Option<RewardModel>,
    #[serde(default)]
    pub ctrl: CtrlConfig,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub robustness: RobustnessSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
}

/// A parsed configuration together with the exact text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<LoadedConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Ok(LoadedConfig {
            config: Self::parse(&text)?,
            text,
        })
    }

    pub fn score_spec(&self) -> MlpSpec {
        let d = self.dataset.dim();
        self.score_net.clone().unwrap_or_else(|| MlpSpec::small(d, d))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.task()?.validate().map_err(invalid)?;
        let d = self.dataset.dim();
        let spec = self.score_spec();
        if spec.input_dim != d || spec.output_dim != d {
            return Err(CliError::Validation(format!(
                "score network maps {} -> {} but the data has dimension {d}",
                spec.input_dim, spec.output_dim
            )));
        }
        if let Some(r) = &self.reward {
            if r.dim() != d {
                return Err(CliError::Validation(format!("reward dimension {} differs from data dimension {d}", r.dim())));
            }
        }
        if self.ctrl.value_net.input_dim != d || self.ctrl.value_net.output_dim != 1 {
            return Err(CliError::Validation(format!("value network must map R^{d} to R")));
        }
        self.ctrl.validate().map_err(invalid)?;
        self.eval.setup(None).validate().map_err(invalid)?;
        if self.eval.mmd_samples < 2 {
            return Err(CliError::Validation("mmd_samples must be at least 2".into()));
        }
        if self.finetune.keep_every == 0 || self.robustness.every == 0 {
            return Err(CliError::Validation("keep_every and every must be positive".into()));
        }
        if self.n_points < 2 {
            return Err(CliError::Validation("need at least two data points".into()));
        }
        self.gradcheck.lq.instance().map_err(invalid)?;
        if self.finetune.method.sampler() == Sampler::Ddpm {
            self.check_ddpm_steps(&[self.ctrl.n_steps])?;
        }
        if self.sampler() == Sampler::Ddpm {
            self.check_ddpm_steps(&self.eval.step_counts)?;
        }
        Ok(())
    }

    /// DDPM steps need every discrete noise level `g^2 dt` below one.
    pub fn check_ddpm_steps(&self, steps: &[usize]) -> CliResult<()> {
        for &n in steps {
            let dt = self.schedule.horizon / n as f64;
            let worst = self.schedule.beta_min.max(self.schedule.beta_max);
            if worst * dt >= 1.0 {
                return Err(CliError::Validation(format!(
                    "{n} DDPM steps give a noise level of {:.3}; use more than {} steps",
                    worst * dt,
                    (worst * self.schedule.horizon).floor()
                )));
            }
        }
        Ok(())
    }

    /// The fine-tuning task assembled from the configuration. A missing
    /// reward is only an error for the commands that need one.
    pub fn task(&self) -> CliResult<Task> {
        let d = self.dataset.dim();
        let reward = match &self.reward {
            Some(r) => r.clone(),
            None => RewardModel::target_distance(vec![0.0; d], 1.0).map_err(invalid)?,
        };
        Ok(Task {
            schedule: self.schedule,
            data: self.dataset.clone(),
            reward,
            n_points: self.n_points,
            score_net: self.score_spec(),
            pretrain: self.pretrain.clone(),
        })
    }

    pub fn require_reward(&self) -> CliResult<&RewardModel> {
        self.reward
            .as_ref()
            .ok_or_else(|| CliError::Validation("this command needs a [reward] table".into()))
    }

    pub fn sampler(&self) -> Sampler {
        self.eval.sampler.unwrap_or(self.finetune.method.sampler())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
means = [[1.5, 0.0], [-1.5, 0.0]]
variance = 0.25
weights = [0.5, 0.5]
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.n_points, 10_000);
        assert_eq!(c.score_spec(), MlpSpec::small(2, 2));
        assert_eq!(c.ctrl, CtrlConfig::default());
        assert!(c.require_reward().is_err());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = RunConfig::parse(&format!("sed = 3\n{MINIMAL}")).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)), "{err}");
        let nested = MINIMAL.replace("variance = 0.25", "variance = 0.25\nvarience = 1.0");
        assert!(RunConfig::parse(&nested).is_err());
        let deep = format!("{MINIMAL}\n[ctrl]\nbeta = 1.0\nbetta = 2.0\n");
        assert!(RunConfig::parse(&deep).is_err());
    }

    #[test]
    fn missing_dataset_is_a_validation_error() {
        let err = RunConfig::parse("seed = 1\n").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("dataset"), "{err}");
    }

    #[test]
    fn coarse_ddpm_grids_are_rejected() {
        let ddpo = format!("{MINIMAL}\n[finetune]\nmethod = \"ddpo\"\n[ctrl]\nn_steps = 20\n");
        let err = RunConfig::parse(&ddpo).unwrap_err();
        assert!(err.to_string().contains("DDPM"), "{err}");
        assert!(RunConfig::parse(&ddpo.replace("n_steps = 20", "n_steps = 25")).is_ok());
        let eval = format!("{MINIMAL}\n[eval]\nsampler = \"ddpm\"\nstep_counts = [10, 50]\n");
        assert!(RunConfig::parse(&eval).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let text = format!("{MINIMAL}\n[reward]\nbound = 10.0\nshape = {{ kind = \"target_distance\", target = [1.0, 0.0, 0.0], scale = 1.0 }}\n");
        assert!(RunConfig::parse(&text).is_err());
    }
}
