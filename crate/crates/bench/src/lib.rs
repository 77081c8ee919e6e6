//! Fixtures shared by the kernel benchmarks.

use ctrl_core::ctrl::{collect_round, CtrlConfig};
use ctrl_core::oracle::GaussianMixtureData;
use ctrl_core::rng;
use ctrl_core::score::Dataset;
use ctrl_core::{GaussianPolicy, MlpSpec, NoiseSchedule, RewardModel, ScoreNet, Trajectory, ValueArch, ValueNet};

/// A randomly initialized 2-D problem at the default fine-tuning sizes.
pub struct Fixture {
    pub schedule: NoiseSchedule,
    pub config: CtrlConfig,
    pub reward: RewardModel,
    pub score: ScoreNet,
    pub value: ValueNet<ScoreNet>,
    pub data: Dataset,
    pub trajectories: Vec<Trajectory>,
}

impl Fixture {
    pub fn new() -> Self {
        let schedule = NoiseSchedule::default();
        let config = CtrlConfig::default();
        let reward = RewardModel::target_distance(vec![1.5, 0.5], 10.0).expect("valid reward");
        let spec = MlpSpec::small(2, 2);
        let params = ctrl_core::Mlp::new(spec.clone()).expect("valid spec").init_params(&mut rng::stream(0, 0));
        let score = ScoreNet::new(spec, params, schedule.horizon).expect("matching params");
        let value = ValueNet::init(
            reward.clone(),
            schedule,
            score.clone(),
            ValueArch::default(),
            config.value_net.clone(),
            &mut rng::stream(0, 1),
        )
        .expect("valid value net");
        let mixture = GaussianMixtureData::symmetric_pair(2, 1.5, 0.25).expect("valid mixture");
        let (x, _) = mixture.sample(4096, &mut rng::stream(0, 2));
        let data = Dataset::new(x, Vec::new()).expect("non-empty");
        let policy = GaussianPolicy::new(&score, config.sigma).expect("positive sigma");
        let trajectories = collect_round(&config, &schedule, &policy, &score, &reward, 3).expect("rollouts");
        Self {
            schedule,
            config,
            reward,
            score,
            value,
            data,
            trajectories,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
