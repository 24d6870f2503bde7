//! Episode execution shared by `evaluate`, `deploy` and `replay`.

use harp_core::deploy::{DeployConfig, DeployEvent, Deployment, EpisodeStats, HumanChannel};
use harp_core::env::ScenarioConfig;
use harp_core::groupmix::rollout;
use harp_core::grouping::GroupPartition;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, Result};
use crate::logs::{LoggedSession, Mode, ReplayLine};

/// One deployment run: the trigger history and session counter persist
/// across its episodes.
pub struct Runner<'a> {
    pub mode: Mode,
    deployment: Deployment<'a>,
    episodes: u64,
}

impl<'a> Runner<'a> {
    pub fn new(
        ckpt: &'a Checkpoint,
        scenario: &ScenarioConfig,
        config: DeployConfig,
        mode: Mode,
        start: GroupPartition,
    ) -> Result<Self> {
        ckpt.check_scenario(scenario)?;
        let deployment = Deployment::new(&ckpt.net, &ckpt.store, scenario.clone(), config, start)?;
        Ok(Self {
            mode,
            deployment,
            episodes: 0,
        })
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Runs one episode, reporting each log record to `emit` as it happens.
    ///
    /// Greedy mode ignores `channel`; assisted modes require one.
    pub fn run_episode(
        &mut self,
        env_seed: u64,
        channel: Option<&mut dyn HumanChannel>,
        emit: &mut dyn FnMut(ReplayLine),
    ) -> Result<EpisodeStats> {
        self.episodes += 1;
        let episode = self.episodes;
        emit(ReplayLine::EpisodeStart { episode, env_seed });
        let stats = if self.mode.assisted() {
            let channel = channel.ok_or_else(|| CliError::Config("assisted mode needs a human channel".into()))?;
            let mut on_event = |ev: &DeployEvent| emit(deploy_line(episode, ev));
            self.deployment.run_episode(env_seed, channel, &mut on_event)?
        } else {
            self.greedy_episode(episode, env_seed, emit)?
        };
        Ok(stats)
    }

    fn greedy_episode(&mut self, episode: u64, env_seed: u64, emit: &mut dyn FnMut(ReplayLine)) -> Result<EpisodeStats> {
        let d = &self.deployment;
        // epsilon 0 never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ro = rollout(d.net, d.store, &d.scenario, env_seed, &d.start_partition, 0.0, &mut rng)?;
        let partition = d.start_partition.to_string();
        let rec = &ro.record;
        for (t, (actions, &reward)) in rec.actions.iter().zip(&rec.rewards).enumerate() {
            emit(ReplayLine::Step {
                episode,
                t: t as u32,
                actions: actions
                    .iter()
                    .map(|&u| harp_core::env::Action::from_index(u).to_string())
                    .collect(),
                reward,
                variance: None,
                triggered: false,
                human_actions: false,
                partition: partition.clone(),
            });
        }
        let stats = EpisodeStats {
            steps: rec.len() as u64,
            interventions: 0,
            accepted: 0,
            win: ro.win,
            episode_return: ro.episode_return,
        };
        emit(ReplayLine::EpisodeEnd { episode, stats });
        Ok(stats)
    }
}

fn deploy_line(episode: u64, ev: &DeployEvent) -> ReplayLine {
    match ev {
        DeployEvent::Step {
            t,
            actions,
            reward,
            report,
            triggered,
            human_actions,
            partition,
        } => ReplayLine::Step {
            episode,
            t: *t,
            actions: actions.iter().map(|a| a.to_string()).collect(),
            reward: *reward,
            variance: Some(*report),
            triggered: *triggered,
            human_actions: *human_actions,
            partition: partition.clone(),
        },
        DeployEvent::Session(s) => ReplayLine::Session {
            episode,
            session: LoggedSession::from(s),
        },
        DeployEvent::EpisodeEnd(stats) => ReplayLine::EpisodeEnd { episode, stats: *stats },
    }
}
