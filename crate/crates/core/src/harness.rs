//! Experimental protocol: episodes, cells, sweeps and the mean/median
//! diagnostic.
//!
//! A *cell* is one point of the parameter grid (observability, encoder,
//! strategy, learning rate, pseudoset size, relearning gap). Running a cell
//! trains one fresh agent for `tries_per_run` consecutive episodes without
//! ever stopping learning, and records the number of steps of each try.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, Transition};
use crate::cartpole::{reset, step, Action, Observability, PhysicsParams};
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::rehearsal::{RehearsalConfig, Strategy};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStrategy {
    /// Uniformly random actions, no learning.
    Random,
    None,
    FreanRobins,
    Batch,
}

impl CellStrategy {
    pub fn name(self) -> &'static str {
        match self {
            CellStrategy::Random => "random",
            CellStrategy::None => "none",
            CellStrategy::FreanRobins => "frean_robins",
            CellStrategy::Batch => "batch",
        }
    }

    pub fn learner(self) -> Option<Strategy> {
        match self {
            CellStrategy::Random => None,
            CellStrategy::None => Some(Strategy::None),
            CellStrategy::FreanRobins => Some(Strategy::FreanRobins),
            CellStrategy::Batch => Some(Strategy::Batch),
        }
    }

    pub fn is_rehearsal(self) -> bool {
        matches!(self, CellStrategy::FreanRobins | CellStrategy::Batch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub observability: Observability,
    pub encoder: EncoderKind,
    pub strategy: CellStrategy,
    pub learning_rate: f64,
    pub pseudoset_size: usize,
    pub relearn_gap: usize,
}

impl CellSpec {
    pub fn random(observability: Observability) -> Self {
        Self {
            observability,
            encoder: EncoderKind::SignSplit,
            strategy: CellStrategy::Random,
            learning_rate: 0.0,
            pseudoset_size: 0,
            relearn_gap: 1,
        }
    }

    /// Stable identifier, e.g. `pomdp-unary-batch-lr0.01-pr30-g10`.
    pub fn id(&self) -> String {
        let obs = self.observability.name();
        match self.strategy {
            CellStrategy::Random => format!("{obs}-random"),
            CellStrategy::None => format!(
                "{obs}-{}-none-lr{}",
                self.encoder.name(),
                self.learning_rate
            ),
            s => format!(
                "{obs}-{}-{}-lr{}-pr{}-g{}",
                self.encoder.name(),
                s.name(),
                self.learning_rate,
                self.pseudoset_size,
                self.relearn_gap
            ),
        }
    }
}

/// Everything about a run that is not a grid axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub physics: PhysicsParams,
    /// Template for every learning cell; the grid axes overwrite its
    /// learning rate, observability, encoder and rehearsal strategy/size/gap.
    pub agent: AgentConfig,
    pub tries_per_run: usize,
    pub success_threshold: u32,
    pub comparable_tol: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            physics: PhysicsParams::default(),
            agent: AgentConfig::default(),
            tries_per_run: 5000,
            success_threshold: 1000,
            comparable_tol: 0.05,
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        if self.tries_per_run == 0 {
            return Err(Error::Config("tries_per_run must be at least 1".into()));
        }
        if !(self.comparable_tol.is_finite() && self.comparable_tol >= 0.0) {
            return Err(Error::Config(format!(
                "comparable_tol must be non-negative, got {}",
                self.comparable_tol
            )));
        }
        Ok(())
    }

    pub fn agent_config(&self, cell: &CellSpec) -> Result<AgentConfig> {
        let strategy = cell
            .strategy
            .learner()
            .ok_or_else(|| Error::Usage("random policy cells have no agent".into()))?;
        let mut cfg = self.agent.clone();
        cfg.learning_rate = cell.learning_rate;
        cfg.observability = cell.observability;
        cfg.encoder = cell.encoder;
        cfg.rehearsal = RehearsalConfig {
            strategy,
            pseudoset_size: if strategy == Strategy::None {
                0
            } else {
                cell.pseudoset_size
            },
            relearn_gap: cell.relearn_gap,
            denom_guard: self.agent.rehearsal.denom_guard,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Steps per try for one cell and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub cell_id: String,
    pub seed: u64,
    pub steps: Vec<u32>,
}

/// One try with learning after every step. Returns the steps survived.
pub fn run_episode<R: Rng + ?Sized>(
    agent: &mut Agent,
    params: &PhysicsParams,
    env_rng: &mut R,
    policy_rng: &mut R,
) -> Result<u32> {
    let mut state = reset(params, env_rng);
    let mut features = agent.features(&state)?;
    let mut steps = 0;
    loop {
        let action = agent.select_action(&features, policy_rng)?;
        let outcome = step(&state, action, params)?;
        steps += 1;
        let after = agent.features(&outcome.next)?;
        let t = Transition {
            features_before: features,
            action,
            reward: outcome.reward,
            features_after: after,
            terminal: outcome.terminal,
        };
        agent.learn_transition(&t)?;
        if outcome.terminal || steps >= params.step_cap {
            return Ok(steps);
        }
        state = outcome.next;
        features = t.features_after;
    }
}

/// One try under the uniformly random policy.
pub fn run_random_episode<R: Rng + ?Sized>(
    params: &PhysicsParams,
    env_rng: &mut R,
    policy_rng: &mut R,
) -> Result<u32> {
    let mut state = reset(params, env_rng);
    let mut steps = 0;
    loop {
        let action = Action::ALL[policy_rng.gen_range(0..Action::ALL.len())];
        let outcome = step(&state, action, params)?;
        steps += 1;
        if outcome.terminal || steps >= params.step_cap {
            return Ok(steps);
        }
        state = outcome.next;
    }
}

/// Drives a cell try by try. `f` sees each try's steps and may stop early by
/// returning `false`.
fn drive_cell<F>(
    protocol: &Protocol,
    cell: &CellSpec,
    seed: u64,
    max_tries: usize,
    mut f: F,
) -> Result<()>
where
    F: FnMut(u32) -> bool,
{
    protocol.validate()?;
    let mut env_rng = stream_rng(seed, Stream::Env);
    let mut policy_rng = stream_rng(seed, Stream::Policy);
    if cell.strategy == CellStrategy::Random {
        for _ in 0..max_tries {
            let steps = run_random_episode(&protocol.physics, &mut env_rng, &mut policy_rng)?;
            if !f(steps) {
                break;
            }
        }
        return Ok(());
    }
    let mut agent = Agent::new(protocol.agent_config(cell)?, seed)?;
    for episode in 0..max_tries {
        agent.begin_episode(episode)?;
        let steps = run_episode(&mut agent, &protocol.physics, &mut env_rng, &mut policy_rng)?;
        if !f(steps) {
            break;
        }
    }
    Ok(())
}

/// Trains a fresh agent for `tries_per_run` tries.
pub fn run_cell(protocol: &Protocol, cell: &CellSpec, seed: u64) -> Result<EpisodeLog> {
    let mut steps = Vec::with_capacity(protocol.tries_per_run);
    drive_cell(protocol, cell, seed, protocol.tries_per_run, |s| {
        steps.push(s);
        true
    })?;
    Ok(EpisodeLog {
        cell_id: cell.id(),
        seed,
        steps,
    })
}

/// Index of the first try reaching the success threshold, running the cell
/// only as far as needed. The result equals `first_success_run` of the full
/// log whenever it is `Some` or `max_tries = tries_per_run`.
pub fn first_success_index(
    protocol: &Protocol,
    cell: &CellSpec,
    seed: u64,
    max_tries: usize,
) -> Result<Option<usize>> {
    let mut index = 0;
    let mut found = None;
    drive_cell(protocol, cell, seed, max_tries, |s| {
        if s >= protocol.success_threshold {
            found = Some(index);
            return false;
        }
        index += 1;
        true
    })?;
    Ok(found)
}

/// Mean steps of the random policy for `tries_per_run` tries.
pub fn random_baseline_mean(
    protocol: &Protocol,
    observability: Observability,
    seed: u64,
) -> Result<f64> {
    let log = run_cell(protocol, &CellSpec::random(observability), seed)?;
    Ok(mean(&to_f64(&log.steps)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    /// A few long tries, mostly short ones.
    MeanGreater,
    /// Mostly stable long tries with occasional collapses.
    MedianGreater,
    Comparable,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::MeanGreater => "mean>median",
            Classification::MedianGreater => "mean<median",
            Classification::Comparable => "mean≈median",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [
            Classification::MeanGreater,
            Classification::MedianGreater,
            Classification::Comparable,
        ]
        .into_iter()
        .find(|c| c.label() == s)
    }
}

impl Serialize for CellSummary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("CellSummary", 5)?;
        st.serialize_field("mean", &self.mean)?;
        st.serialize_field("median", &self.median)?;
        st.serialize_field("classification", self.classification.label())?;
        st.serialize_field("first_success_run", &self.first_success_run)?;
        st.serialize_field("random_baseline_mean", &self.random_baseline_mean)?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub mean: f64,
    pub median: f64,
    pub classification: Classification,
    /// Zero-based index of the first try with at least `success_threshold` steps.
    pub first_success_run: Option<usize>,
    pub random_baseline_mean: Option<f64>,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn to_f64(steps: &[u32]) -> Vec<f64> {
    steps.iter().map(|&s| s as f64).collect()
}

/// `Comparable` iff `|mean - median| <= tol * max(mean, median)`.
pub fn classify(mean: f64, median: f64, tol: f64) -> Classification {
    if (mean - median).abs() <= tol * mean.max(median) {
        Classification::Comparable
    } else if mean > median {
        Classification::MeanGreater
    } else {
        Classification::MedianGreater
    }
}

/// Mean/median diagnostic for a (possibly averaged) steps-per-try series.
pub fn summarize(steps: &[f64], success_threshold: f64, tol: f64) -> Result<CellSummary> {
    if steps.is_empty() {
        return Err(Error::Usage("cannot summarize an empty log".into()));
    }
    let mean = mean(steps);
    let median = median(steps);
    Ok(CellSummary {
        mean,
        median,
        classification: classify(mean, median, tol),
        first_success_run: steps.iter().position(|&s| s >= success_threshold),
        random_baseline_mean: None,
    })
}

pub fn summarize_log(log: &EpisodeLog, success_threshold: u32, tol: f64) -> Result<CellSummary> {
    summarize(&to_f64(&log.steps), success_threshold as f64, tol)
}

/// Pointwise mean of equally long series.
pub fn average_series(logs: &[&EpisodeLog]) -> Vec<f64> {
    let len = logs.iter().map(|l| l.steps.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| logs.iter().map(|l| l.steps[i] as f64).sum::<f64>() / logs.len() as f64)
        .collect()
}

/// Grid definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub learning_rates: Vec<f64>,
    pub pseudoset_sizes: Vec<usize>,
    pub relearn_gaps: Vec<usize>,
    /// Extra `(pseudoset_size, relearn_gap)` pairs, used only when the size
    /// is one of `pseudoset_sizes`.
    pub extra_pairs: Vec<(usize, usize)>,
    pub strategies: Vec<CellStrategy>,
    pub observabilities: Vec<Observability>,
    pub encoders: Vec<EncoderKind>,
    pub replications: usize,
    pub base_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.1, 0.01, 0.001],
            pseudoset_sizes: vec![10, 30, 50, 100],
            relearn_gaps: vec![1, 10, 100],
            extra_pairs: vec![(30, 30), (30, 50), (50, 30), (50, 50)],
            strategies: vec![
                CellStrategy::None,
                CellStrategy::FreanRobins,
                CellStrategy::Batch,
                CellStrategy::Random,
            ],
            observabilities: vec![Observability::Mdp, Observability::Pomdp],
            encoders: vec![EncoderKind::SignSplit, EncoderKind::SparseUnary],
            replications: 1,
            base_seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("learning_rates", self.learning_rates.is_empty()),
            ("strategies", self.strategies.is_empty()),
            ("observabilities", self.observabilities.is_empty()),
            ("encoders", self.encoders.is_empty()),
        ];
        for (name, empty) in axes {
            if empty {
                return Err(Error::Config(format!("sweep axis {name} is empty")));
            }
        }
        if self.strategies.iter().any(|s| s.is_rehearsal())
            && (self.pseudoset_sizes.is_empty() || self.relearn_gaps.is_empty())
        {
            return Err(Error::Config(
                "rehearsal strategies need non-empty pseudoset_sizes and relearn_gaps".into(),
            ));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        Ok(())
    }

    /// `(pseudoset_size, relearn_gap)` pairs in grid order, without duplicates.
    pub fn rehearsal_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for &size in &self.pseudoset_sizes {
            let mut gaps: Vec<usize> = self.relearn_gaps.clone();
            gaps.extend(
                self.extra_pairs
                    .iter()
                    .filter(|(s, _)| *s == size)
                    .map(|&(_, g)| g),
            );
            gaps.sort_unstable();
            gaps.dedup();
            pairs.extend(gaps.into_iter().map(|g| (size, g)));
        }
        pairs
    }

    /// Cartesian product of the axes. The random policy appears once per
    /// observability; the plain learner is not crossed with rehearsal axes.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut cells = Vec::new();
        for &observability in &self.observabilities {
            if self.strategies.contains(&CellStrategy::Random) {
                cells.push(CellSpec::random(observability));
            }
            for &encoder in &self.encoders {
                for &strategy in &self.strategies {
                    match strategy {
                        CellStrategy::Random => {}
                        CellStrategy::None => {
                            for &lr in &self.learning_rates {
                                cells.push(CellSpec {
                                    observability,
                                    encoder,
                                    strategy,
                                    learning_rate: lr,
                                    pseudoset_size: 0,
                                    relearn_gap: 1,
                                });
                            }
                        }
                        _ => {
                            for &lr in &self.learning_rates {
                                for (pr, gap) in self.rehearsal_pairs() {
                                    cells.push(CellSpec {
                                        observability,
                                        encoder,
                                        strategy,
                                        learning_rate: lr,
                                        pseudoset_size: pr,
                                        relearn_gap: gap,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn seed(&self, replication: usize) -> u64 {
        self.base_seed.wrapping_add(replication as u64)
    }
}

/// Outcome of one cell across all replications.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: CellSpec,
    /// One entry per replication, in replication order.
    pub logs: Vec<std::result::Result<EpisodeLog, String>>,
    pub summaries: Vec<Option<CellSummary>>,
    /// Summary of the pointwise-averaged series, when replications > 1.
    pub averaged: Option<CellSummary>,
    pub averaged_series: Option<Vec<f64>>,
}

impl CellResult {
    pub fn error(&self) -> Option<&str> {
        self.logs
            .iter()
            .find_map(|l| l.as_ref().err().map(String::as_str))
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub replications: usize,
    /// Replication `k` ran with seed `base_seed + k`.
    pub base_seed: u64,
    pub cells: Vec<CellResult>,
}

/// Runs every cell accepted by `filter` for every replication.
pub fn run_sweep<F>(protocol: &Protocol, spec: &SweepSpec, filter: F) -> Result<SweepResult>
where
    F: Fn(&CellSpec) -> bool,
{
    spec.validate()?;
    let cells: Vec<CellSpec> = spec.cells().into_iter().filter(|c| filter(c)).collect();
    run_cells(protocol, cells, spec.replications, spec.base_seed)
}

/// Runs `cells` with seeds `base_seed + k` for `k < replications`. Jobs run
/// on the current rayon pool; results come back in input order. A failing
/// cell is recorded in its result and does not stop the others.
pub fn run_cells(
    protocol: &Protocol,
    cells: Vec<CellSpec>,
    replications: usize,
    base_seed: u64,
) -> Result<SweepResult> {
    protocol.validate()?;
    if replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    let reps = replications;
    let seed = |r: usize| base_seed.wrapping_add(r as u64);

    let mut observabilities: Vec<Observability> = Vec::new();
    for c in &cells {
        if !observabilities.contains(&c.observability) {
            observabilities.push(c.observability);
        }
    }
    let baseline_jobs: Vec<(Observability, usize)> = observabilities
        .iter()
        .flat_map(|&o| (0..reps).map(move |r| (o, r)))
        .collect();
    let baselines: Vec<Option<f64>> = baseline_jobs
        .par_iter()
        .map(|&(o, r)| random_baseline_mean(protocol, o, seed(r)).ok())
        .collect();
    let baseline = |o: Observability, r: usize| {
        baseline_jobs
            .iter()
            .position(|&j| j == (o, r))
            .and_then(|i| baselines[i])
    };

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let mut logs: Vec<std::result::Result<EpisodeLog, String>> = jobs
        .par_iter()
        .map(|&(c, r)| run_cell(protocol, &cells[c], seed(r)).map_err(|e| e.to_string()))
        .collect();

    let threshold = protocol.success_threshold;
    let tol = protocol.comparable_tol;
    let mut results = Vec::with_capacity(cells.len());
    let mut drained = logs.drain(..);
    for cell in cells {
        let cell_logs: Vec<_> = drained.by_ref().take(reps).collect();
        let summaries: Vec<Option<CellSummary>> = cell_logs
            .iter()
            .enumerate()
            .map(|(r, l)| {
                let log = l.as_ref().ok()?;
                let mut s = summarize_log(log, threshold, tol).ok()?;
                s.random_baseline_mean = baseline(cell.observability, r);
                Some(s)
            })
            .collect();
        let (averaged, averaged_series) = if reps > 1 {
            let ok: Vec<&EpisodeLog> = cell_logs.iter().filter_map(|l| l.as_ref().ok()).collect();
            if ok.len() == reps {
                let series = average_series(&ok);
                let mut s = summarize(&series, threshold as f64, tol)?;
                let base: Vec<f64> = (0..reps)
                    .filter_map(|r| baseline(cell.observability, r))
                    .collect();
                s.random_baseline_mean = (base.len() == reps).then(|| mean(&base));
                (Some(s), Some(series))
            } else {
                (None, None)
            }
        } else {
            (None, None)
        };
        results.push(CellResult {
            cell,
            logs: cell_logs,
            summaries,
            averaged,
            averaged_series,
        });
    }
    Ok(SweepResult {
        replications: reps,
        base_seed,
        cells: results,
    })
}
