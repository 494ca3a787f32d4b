//! Turns a typed configuration into a ready-to-run experiment, checking every
//! cross-module precondition up front.

use std::sync::Arc;

use robust_dsgd::engine::Init;
use robust_dsgd::privacy::{self, PrivacyParams, PrivacyReport};
use robust_dsgd::tasks::{self, Objective};
use robust_dsgd::{
    mixing, Attack, Engine, Error, QuadraticTask, RuleKind, RunConfig, SoftmaxTask, Topology, TrustWeights,
};

use crate::config::{ExperimentConfig, TaskSpec, WeightScheme};
use crate::error::Result;

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
];

pub struct Experiment {
    pub config: ExperimentConfig,
    pub run: RunConfig,
    pub task: Arc<dyn Objective>,
    /// `None` when there is no finite guarantee to compute (no noise or no
    /// gradient bound).
    pub privacy: Option<PrivacyParams>,
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        let raw = &config.raw;
        let spec = &config.topology;
        let topology = Topology::erdos_renyi(spec.n, spec.p, spec.seed)
            .map_err(|e| raw.error(if spec.n < 2 { "topology.n" } else { "topology.p" }, e))?
            .with_byzantine(&spec.byzantine)
            .map_err(|e| raw.error("topology.byzantine", e))?;
        if let Err(v) = topology.validate() {
            let key = if spec.byzantine.is_empty() { "topology.p" } else { "topology.byzantine" };
            return Err(raw.error(key, Error::Disconnected(v)));
        }
        let weights = match spec.weights {
            WeightScheme::Metropolis => TrustWeights::metropolis(&topology),
            WeightScheme::Uniform => TrustWeights::uniform(&topology),
        };
        let honest = topology.honest();

        let task: Arc<dyn Objective> = match &config.task {
            TaskSpec::Quadratic { dim, samples, seed } => Arc::new(
                QuadraticTask::synthetic(spec.n, &honest, *dim, *samples, *seed)
                    .map_err(|e| raw.error(if *dim == 0 { "task.dim" } else { "task.samples" }, e))?,
            ),
            TaskSpec::Mnist { data_dir, partition, mu_reg, bias, seed } => {
                let file = |i: usize| data_dir.join(MNIST_FILES[i]);
                let load = |a: usize, b: usize| {
                    tasks::load_mnist_idx(&file(a), &file(b)).map_err(|e| raw.error("task.data_dir", e))
                };
                let train = Arc::new(load(0, 1)?);
                let test = Arc::new(load(2, 3)?);
                let part = tasks::make_partition(train.labels(), spec.n, &honest, *partition, *seed)
                    .map_err(|e| raw.error("task.partition", e))?;
                Arc::new(
                    SoftmaxTask::new(train, Some(test), part, *mu_reg, *bias)
                        .map_err(|e| raw.error("task.mu_reg", e))?,
                )
            }
        };

        if config.attack == Attack::None && !spec.byzantine.is_empty() {
            return Err(raw.error("attack.name", "Byzantine agents are declared but the attack is `none`"));
        }
        config
            .rule
            .check(&topology)
            .map_err(|e| raw.error(if raw.get("rule.q").is_some() { "rule.q" } else { "rule.name" }, e))?;
        if config.rule.kind() == RuleKind::Ios {
            mixing::contraction_bound(RuleKind::Ios, &topology, &weights, task.dim(), false)
                .map_err(|e| raw.error("rule.name", e))?;
        }
        if let Init::Gaussian { std } = config.init {
            if !(std >= 0.0 && std.is_finite()) {
                return Err(raw.error("run.init_std", "must be a nonnegative number"));
            }
        }

        let run = RunConfig {
            topology,
            weights,
            rule: config.rule.clone(),
            attack: config.attack,
            schedule: config.schedule,
            noise_c: config.noise_c,
            clip: config.clip,
            rounds: config.rounds,
            batch: config.batch.unwrap_or(usize::MAX),
            seed: config.seed,
            eval_every: config.eval_every,
            init: config.init,
            parallel: config.parallel,
        };
        run.validate()?;

        let privacy = match config.clip {
            Some(m) if config.noise_c > 0.0 => {
                let s = honest.iter().map(|&n| task.shard_size(n)).min().unwrap_or(0) as u64;
                let b = config.batch.map_or(s, |b| (b as u64).min(s));
                let p = PrivacyParams::new(config.noise_c, m, s, b, config.rounds, config.delta)
                    .map_err(|e| raw.error("privacy.M", e))?;
                if config.reports.privacy {
                    privacy::compose_and_convert(&p).map_err(|e| raw.error("run.B", e))?;
                }
                Some(p)
            }
            _ => None,
        };

        Ok(Experiment { config, run, task, privacy })
    }

    pub fn engine(&self) -> Result<Engine> {
        Ok(Engine::new(self.run.clone(), self.task.clone())?)
    }

    /// Budget of the configured run. Without noise or without a gradient
    /// bound the guarantee is `ε = ∞`; a regime violation yields `None`.
    pub fn privacy_report(&self) -> Option<PrivacyReport> {
        match &self.privacy {
            Some(p) => privacy::compose_and_convert(p).ok(),
            None => Some(PrivacyReport::without_noise(self.config.delta)),
        }
    }

    pub fn dim(&self) -> usize {
        self.task.dim()
    }
}
