//! Command-line drivers: configuration, run directories, and the pretrain,
//! finetune, eval, robustness and gradcheck commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod samples;

use std::path::{Path, PathBuf};
use std::time::Instant;

use ctrl_core::{Checkpoint, Role, ScoreNet};

pub use config::{LoadedConfig, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::{git_checksum, Artifacts, ManifestEntry, RunManifest};
pub use samples::SampleFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Pretrain,
    Finetune,
    Eval,
    Robustness,
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Eval => "eval",
            Command::Robustness => "robustness",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub config: PathBuf,
    /// Replaces both the top-level seed and the fine-tuning seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub steps: Option<Vec<usize>>,
}

/// A validated configuration with overrides applied.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub cfg: RunConfig,
    pub text: String,
    pub dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub steps: Option<Vec<usize>>,
}

impl Ctx {
    pub fn new(flags: &Flags) -> CliResult<Self> {
        let LoadedConfig { mut config, text } = RunConfig::load(&flags.config)?;
        if let Some(s) = flags.seed {
            config.seed = s;
            config.ctrl.seed = s;
        }
        if let Some(steps) = &flags.steps {
            if steps.is_empty() || steps.contains(&0) {
                return Err(CliError::Validation("--steps must list positive integers".into()));
            }
            if config.sampler() == ctrl_core::Sampler::Ddpm {
                config.check_ddpm_steps(steps)?;
            }
        }
        let dir = flags.out.clone().unwrap_or_else(|| config.out_dir.clone());
        Ok(Self {
            cfg: config,
            text,
            dir,
            checkpoint: flags.checkpoint.clone(),
            steps: flags.steps.clone(),
        })
    }

    pub fn steps(&self) -> Vec<usize> {
        self.steps.clone().unwrap_or_else(|| self.cfg.eval.step_counts.clone())
    }

    /// Loads a score-shaped checkpoint whose dimensions fit the data.
    pub fn load_model(&self, path: &Path) -> CliResult<(Checkpoint, ScoreNet)> {
        let ckpt = Checkpoint::load(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if !matches!(ckpt.role, Role::Score | Role::PolicyMean) {
            return Err(CliError::Validation(format!("{} holds a {} network, not a score", path.display(), ckpt.role.name())));
        }
        let d = self.cfg.dataset.dim();
        if ckpt.spec.input_dim != d || ckpt.spec.output_dim != d {
            return Err(CliError::Validation(format!("{} does not match data dimension {d}", path.display())));
        }
        let net = ScoreNet::from_checkpoint(&ckpt, self.cfg.schedule.horizon).map_err(error::invalid)?;
        Ok((ckpt, net))
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.dir.join(commands::pretrain::SCORE))
    }
}

/// What a successful command prints.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Vec<String>,
}

/// Validates, runs `cmd`, and appends the outcome to the run manifest.
/// Nothing is written when validation fails.
pub fn run(cmd: Command, flags: &Flags) -> CliResult<Outcome> {
    let ctx = Ctx::new(flags)?;
    commands::check_inputs(cmd, &ctx)?;
    let start = Instant::now();
    let mut art = Artifacts::new(&ctx.dir);
    let result = art.write("config.toml", ctx.text.as_bytes()).and_then(|_| commands::execute(cmd, &ctx, &mut art));
    let (status, message) = match &result {
        Ok(_) => ("ok".to_string(), None),
        Err(e) => (e.status().to_string(), Some(e.to_string())),
    };
    let entry = ManifestEntry {
        command: cmd.name().into(),
        status,
        config_checksum: git_checksum(ctx.text.as_bytes()),
        seed: ctx.cfg.seed,
        wallclock_secs: start.elapsed().as_secs_f64(),
        artifacts: art.written,
        message,
    };
    if ctx.dir.exists() {
        RunManifest::append(&ctx.dir, entry)?;
    }
    result
}
