use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::MlpSpec;
use crate::oracle::GaussianMixtureData;
use crate::rng;
use crate::score::{pretrain, Dataset, PretrainConfig, PretrainReport, ScoreNet};
use crate::sde::NoiseSchedule;
use crate::value::RewardModel;

/// The 2-D fine-tuning task: a two-component mixture, a target-distance
/// reward, and the default score network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Task {
    pub schedule: NoiseSchedule,
    pub data: GaussianMixtureData,
    pub reward: RewardModel,
    pub n_points: usize,
    pub score_net: MlpSpec,
    pub pretrain: PretrainConfig,
}

impl Default for Task {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            data: GaussianMixtureData::symmetric_pair(2, 1.5, 0.25).expect("valid mixture"),
            reward: RewardModel::target_distance(vec![1.5, 0.5], 10.0).expect("valid reward"),
            n_points: 10_000,
            score_net: MlpSpec::small(2, 2),
            pretrain: PretrainConfig::default(),
        }
    }
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.data.validate()?;
        self.reward.validate()?;
        self.score_net.validate()?;
        self.pretrain.validate()
    }

    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        let (x, _) = self.data.sample(self.n_points, &mut rng::stream(seed, 0));
        Dataset::new(x, Vec::new())
    }

    /// Fresh network trained by denoising score matching on `dataset(seed)`.
    pub fn pretrained(&self, seed: u64) -> Result<(ScoreNet, PretrainReport)> {
        self.validate()?;
        let data = self.dataset(seed)?;
        let mut net = ScoreNet::init(self.score_net.clone(), self.schedule.horizon, &mut rng::stream(seed, 1))?;
        let cfg = PretrainConfig { seed, ..self.pretrain.clone() };
        let report = pretrain(&mut net, &data, &self.schedule, &cfg)?;
        Ok((net, report))
    }
}
