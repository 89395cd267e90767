//! ε-greedy Q-learning agent with one network output per action.
//!
//! The agent learns after every environment step. The real example's output
//! error is masked to the acted-upon unit, and the weight change itself is
//! delegated to the configured rehearsal strategy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cartpole::{observe, Action, CartPoleState, Observability};
use crate::encoders::{EncoderKind, EncoderSpec, FeatureVector, ANGULAR_RANGE, LINEAR_RANGE};
use crate::error::{Error, Result};
use crate::mlp::{Network, NetworkSpec};
use crate::rehearsal::{
    apply_batch_rehearsal, apply_frean_robins, generate_pseudoset, maybe_regenerate, PseudoSet,
    RehearsalConfig, Strategy,
};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub observability: Observability,
    pub encoder: EncoderKind,
    pub linear_range: (f64, f64),
    pub angular_range: (f64, f64),
    pub hidden_layers: Vec<usize>,
    pub init_scale: f64,
    pub rehearsal: RehearsalConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            gamma: 0.9,
            epsilon: 0.1,
            observability: Observability::Mdp,
            encoder: EncoderKind::SignSplit,
            linear_range: LINEAR_RANGE,
            angular_range: ANGULAR_RANGE,
            hidden_layers: vec![32],
            init_scale: 0.1,
            rehearsal: RehearsalConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        self.rehearsal.validate()?;
        self.encoder_spec()?;
        self.network_spec()?.validate()
    }

    pub fn encoder_spec(&self) -> Result<EncoderSpec> {
        EncoderSpec::for_observability(
            self.encoder,
            self.observability,
            self.linear_range,
            self.angular_range,
        )
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let mut sizes = vec![self.encoder_spec()?.feature_len()];
        sizes.extend(&self.hidden_layers);
        sizes.push(Action::ALL.len());
        Ok(NetworkSpec::new(sizes, self.init_scale))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features_before: FeatureVector,
    pub action: Action,
    pub reward: f64,
    /// Ignored when `terminal`.
    pub features_after: FeatureVector,
    pub terminal: bool,
}

/// Index of the largest value, lowest index on ties.
pub fn greedy_index(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

pub fn select_action<R: Rng + ?Sized>(
    net: &Network,
    features: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<Action> {
    let explore = rng.gen::<f64>() < epsilon;
    let index = if explore {
        rng.gen_range(0..Action::ALL.len())
    } else {
        greedy_index(&net.predict(features)?)
    };
    Ok(Action::ALL[index])
}

pub fn td_target(t: &Transition, net: &Network, gamma: f64) -> Result<f64> {
    if t.terminal {
        return Ok(t.reward);
    }
    let next = net.predict(t.features_after.as_slice())?;
    let max_next = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(t.reward + gamma * max_next)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AgentStats {
    pub updates: u64,
    pub regenerations: u64,
    /// Frean-Robins layer gaps that fell back to the plain delta rule.
    pub fallback_gaps: u64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    encoder: EncoderSpec,
    net: Network,
    pseudoset: Option<PseudoSet>,
    pseudo_rng: ChaCha8Rng,
    stats: AgentStats,
}

impl Agent {
    /// Fresh network from `seed`; the first pseudoset (if any) is generated
    /// from the untrained network and stamped as episode 0.
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let net = Network::init(&config.network_spec()?, &mut stream_rng(seed, Stream::Init))?;
        Self::with_network(config, net, seed)
    }

    pub fn with_network(config: AgentConfig, net: Network, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = config.encoder_spec()?;
        if net.input_size() != encoder.feature_len() || net.output_size() != Action::ALL.len() {
            return Err(Error::Config(format!(
                "network shape {:?} does not fit {} features and {} actions",
                net.layer_sizes(),
                encoder.feature_len(),
                Action::ALL.len()
            )));
        }
        let mut pseudo_rng = stream_rng(seed, Stream::Pseudo);
        let pseudoset = if config.rehearsal.uses_pseudoset() {
            Some(generate_pseudoset(
                &net,
                &config.rehearsal,
                &encoder,
                0,
                &mut pseudo_rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            encoder,
            net,
            pseudoset,
            pseudo_rng,
            stats: AgentStats::default(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn pseudoset(&self) -> Option<&PseudoSet> {
        self.pseudoset.as_ref()
    }

    pub fn stats(&self) -> AgentStats {
        self.stats
    }

    pub fn encoder(&self) -> &EncoderSpec {
        &self.encoder
    }

    pub fn features(&self, state: &CartPoleState) -> Result<FeatureVector> {
        let obs = observe(state, self.config.observability, &self.encoder.ranges);
        self.encoder.encode(&obs)
    }

    /// Regenerates the pseudoset when the relearning gap has elapsed.
    pub fn begin_episode(&mut self, episode: usize) -> Result<()> {
        if let Some(ps) = self.pseudoset.take() {
            let before = ps.generation_episode();
            let ps = maybe_regenerate(
                ps,
                episode,
                &self.config.rehearsal,
                &self.net,
                &self.encoder,
                &mut self.pseudo_rng,
            )?;
            if ps.generation_episode() != before {
                self.stats.regenerations += 1;
            }
            self.pseudoset = Some(ps);
        }
        Ok(())
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        features: &FeatureVector,
        rng: &mut R,
    ) -> Result<Action> {
        select_action(&self.net, features.as_slice(), self.config.epsilon, rng)
    }

    pub fn learn_transition(&mut self, t: &Transition) -> Result<()> {
        let target = td_target(t, &self.net, self.config.gamma)?;
        let (q, trace) = self.net.forward(t.features_before.as_slice())?;
        let acted = t.action.index();
        let mut output_error = vec![0.0; q.len()];
        output_error[acted] = target - q[acted];
        let lr = self.config.learning_rate;

        match self.config.rehearsal.strategy {
            Strategy::None => {
                let errs = self.net.backprop_errors(&trace, &output_error)?;
                self.net.apply_online_update(&trace, &errs, lr)?;
            }
            Strategy::FreanRobins => {
                let errs = self.net.backprop_errors(&trace, &output_error)?;
                let ps = self
                    .pseudoset
                    .as_ref()
                    .ok_or_else(|| Error::Usage("frean_robins agent without pseudoset".into()))?;
                let report = apply_frean_robins(
                    &mut self.net,
                    &trace,
                    &errs,
                    ps,
                    lr,
                    self.config.rehearsal.denom_guard,
                )?;
                self.stats.fallback_gaps += report.fallback_gaps as u64;
            }
            Strategy::Batch => {
                let mut real_target = q.clone();
                real_target[acted] = target;
                let mask: Vec<bool> = (0..q.len()).map(|i| i == acted).collect();
                let empty;
                let ps = match &self.pseudoset {
                    Some(ps) => ps,
                    None => {
                        empty = PseudoSet::empty(0);
                        &empty
                    }
                };
                apply_batch_rehearsal(
                    &mut self.net,
                    t.features_before.as_slice(),
                    &real_target,
                    &mask,
                    ps,
                    lr,
                )?;
            }
        }
        self.stats.updates += 1;
        Ok(())
    }
}
