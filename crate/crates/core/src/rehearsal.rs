//! Pseudorehearsal strategies.
//!
//! Both strategies start from a pseudoset: random observations encoded like
//! real ones and pushed through the network, keeping every layer's
//! activations and the outputs at generation time.
//!
//! * Frean-Robins correction replaces the source-activation vector `b` in the
//!   delta rule with the average over pseudoitems `x` of the component of `b`
//!   orthogonal to `x`, scaled so that its dot product with `b` is 1:
//!   `d = mean_j (b (x_j.x_j) - x_j (x_j.b)) / ((b.b)(x_j.x_j) - (b.x_j)^2)`.
//!   With a single pseudoitem the update leaves that item's pre-activations
//!   unchanged.
//! * Batch rehearsal trains on the real example together with every
//!   pseudoitem, whose targets are the frozen outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cartpole::Observation;
use crate::encoders::{EncoderSpec, FeatureVector};
use crate::error::{check_len, Error, Result};
use crate::mlp::{ActivationTrace, BatchItem, LayerErrors, Network};

pub const MAX_PSEUDOSET_SIZE: usize = 10_000;
pub const DEFAULT_DENOM_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Plain online backpropagation.
    None,
    FreanRobins,
    Batch,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::FreanRobins => "frean_robins",
            Strategy::Batch => "batch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RehearsalConfig {
    pub strategy: Strategy,
    pub pseudoset_size: usize,
    /// Episodes between pseudoset regenerations.
    pub relearn_gap: usize,
    /// Relative threshold below which a Frean-Robins term is skipped.
    pub denom_guard: f64,
}

impl Default for RehearsalConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::None,
            pseudoset_size: 0,
            relearn_gap: 1,
            denom_guard: DEFAULT_DENOM_GUARD,
        }
    }
}

impl RehearsalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pseudoset_size > MAX_PSEUDOSET_SIZE {
            return Err(Error::Config(format!(
                "pseudoset_size must be at most {MAX_PSEUDOSET_SIZE}, got {}",
                self.pseudoset_size
            )));
        }
        if self.relearn_gap == 0 {
            return Err(Error::Config("relearn_gap must be positive".into()));
        }
        if !(self.denom_guard.is_finite() && self.denom_guard > 0.0) {
            return Err(Error::Config(format!(
                "denom_guard must be a small positive number, got {}",
                self.denom_guard
            )));
        }
        if self.strategy == Strategy::FreanRobins && self.pseudoset_size == 0 {
            return Err(Error::Config(
                "frean_robins needs pseudoset_size >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Whether this configuration keeps a pseudoset at all.
    pub fn uses_pseudoset(&self) -> bool {
        self.strategy != Strategy::None && self.pseudoset_size > 0
    }
}

/// Pseudoitems with their recorded activations and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSet {
    inputs: Vec<FeatureVector>,
    traces: Vec<ActivationTrace>,
    frozen_targets: Vec<Vec<f64>>,
    /// `x.x` per item per layer gap.
    self_dots: Vec<Vec<f64>>,
    generation_episode: usize,
}

impl PseudoSet {
    pub fn empty(generation_episode: usize) -> Self {
        Self {
            inputs: Vec::new(),
            traces: Vec::new(),
            frozen_targets: Vec::new(),
            self_dots: Vec::new(),
            generation_episode,
        }
    }

    pub fn from_parts(
        inputs: Vec<FeatureVector>,
        traces: Vec<ActivationTrace>,
        frozen_targets: Vec<Vec<f64>>,
        generation_episode: usize,
    ) -> Result<Self> {
        check_len("pseudoset traces", inputs.len(), traces.len())?;
        check_len("pseudoset targets", inputs.len(), frozen_targets.len())?;
        let self_dots = traces
            .iter()
            .map(|t| {
                (0..t.num_gaps())
                    .map(|g| t.source(g).iter().map(|v| v * v).sum())
                    .collect()
            })
            .collect();
        Ok(Self {
            inputs,
            traces,
            frozen_targets,
            self_dots,
            generation_episode,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[FeatureVector] {
        &self.inputs
    }

    pub fn traces(&self) -> &[ActivationTrace] {
        &self.traces
    }

    pub fn frozen_targets(&self) -> &[Vec<f64>] {
        &self.frozen_targets
    }

    pub fn generation_episode(&self) -> usize {
        self.generation_episode
    }
}

/// Draws one raw observation uniformly over the encoder ranges and encodes it.
pub fn sample_pseudo_input<R: Rng + ?Sized>(
    encoder: &EncoderSpec,
    rng: &mut R,
) -> Result<FeatureVector> {
    let raw = encoder
        .ranges
        .iter()
        .map(|&(lo, hi)| rng.gen_range(lo..hi))
        .collect();
    encoder.encode(&Observation(raw))
}

pub fn generate_pseudoset<R: Rng + ?Sized>(
    net: &Network,
    cfg: &RehearsalConfig,
    encoder: &EncoderSpec,
    episode: usize,
    rng: &mut R,
) -> Result<PseudoSet> {
    if cfg.pseudoset_size == 0 {
        return Err(Error::Usage(
            "cannot generate an empty pseudoset; use strategy none".into(),
        ));
    }
    let mut inputs = Vec::with_capacity(cfg.pseudoset_size);
    let mut traces = Vec::with_capacity(cfg.pseudoset_size);
    let mut targets = Vec::with_capacity(cfg.pseudoset_size);
    for _ in 0..cfg.pseudoset_size {
        let input = sample_pseudo_input(encoder, rng)?;
        let (out, trace) = net.forward(input.as_slice())?;
        inputs.push(input);
        traces.push(trace);
        targets.push(out);
    }
    PseudoSet::from_parts(inputs, traces, targets, episode)
}

/// Returns a fresh pseudoset iff at least `relearn_gap` episodes have passed
/// since `ps` was generated.
pub fn maybe_regenerate<R: Rng + ?Sized>(
    ps: PseudoSet,
    episode: usize,
    cfg: &RehearsalConfig,
    net: &Network,
    encoder: &EncoderSpec,
    rng: &mut R,
) -> Result<PseudoSet> {
    if episode.saturating_sub(ps.generation_episode) >= cfg.relearn_gap {
        generate_pseudoset(net, cfg, encoder, episode, rng)
    } else {
        Ok(ps)
    }
}

/// Corrected update direction for one layer gap, or `None` when every term
/// trips the denominator guard.
///
/// `pseudo` yields each pseudoitem's source activations and their squared norm.
pub fn corrected_direction<'a, I>(b: &[f64], pseudo: I, denom_guard: f64) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = (&'a [f64], f64)>,
{
    let bb: f64 = b.iter().map(|v| v * v).sum();
    let mut dir = vec![0.0; b.len()];
    let mut used = 0usize;
    for (x, xx) in pseudo {
        let bx: f64 = b.iter().zip(x).map(|(p, q)| p * q).sum();
        let scale = bb * xx;
        let denom = scale - bx * bx;
        // Written so that NaN also skips the term.
        let usable = denom >= denom_guard * scale && denom > 0.0;
        if !usable {
            continue;
        }
        let cb = xx / denom;
        let cx = bx / denom;
        for ((d, &bi), &xi) in dir.iter_mut().zip(b).zip(x) {
            *d += cb * bi - cx * xi;
        }
        used += 1;
    }
    if used == 0 {
        return None;
    }
    let inv = 1.0 / used as f64;
    for d in &mut dir {
        *d *= inv;
    }
    Some(dir)
}

/// Counters from one Frean-Robins step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FreanRobinsReport {
    /// Layer gaps that fell back to the plain delta rule.
    pub fallback_gaps: usize,
}

pub fn apply_frean_robins(
    net: &mut Network,
    trace: &ActivationTrace,
    errs: &LayerErrors,
    ps: &PseudoSet,
    lr: f64,
    denom_guard: f64,
) -> Result<FreanRobinsReport> {
    if ps.is_empty() {
        return Err(Error::Usage(
            "frean_robins update with an empty pseudoset".into(),
        ));
    }
    check_len(
        "trace layers",
        net.layer_sizes().len(),
        trace.activations.len(),
    )?;
    check_len("layer errors", net.num_gaps(), errs.errors.len())?;
    let mut report = FreanRobinsReport::default();
    let mut directions = Vec::with_capacity(net.num_gaps());
    for gap in 0..net.num_gaps() {
        let b = trace.source(gap);
        check_len("trace source width", net.weights(gap).cols(), b.len())?;
        check_len(
            "layer error width",
            net.weights(gap).rows(),
            errs.gap(gap).len(),
        )?;
        let pseudo = ps
            .traces
            .iter()
            .zip(&ps.self_dots)
            .map(|(t, dots)| (t.source(gap), dots[gap]));
        let dir = match corrected_direction(b, pseudo, denom_guard) {
            Some(d) => d,
            None => {
                report.fallback_gaps += 1;
                b.to_vec()
            }
        };
        directions.push(dir);
    }
    for (gap, dir) in directions.iter().enumerate() {
        net.apply_delta_rule(gap, errs.gap(gap), dir, lr);
    }
    Ok(report)
}

pub fn frean_robins_update(
    net: &Network,
    trace: &ActivationTrace,
    errs: &LayerErrors,
    ps: &PseudoSet,
    lr: f64,
    denom_guard: f64,
) -> Result<(Network, FreanRobinsReport)> {
    let mut next = net.clone();
    let report = apply_frean_robins(&mut next, trace, errs, ps, lr, denom_guard)?;
    Ok((next, report))
}

/// One averaged batch step over the real example and every pseudoitem.
/// Output error on the real item is kept only where `active_outputs` is true.
pub fn apply_batch_rehearsal(
    net: &mut Network,
    real_input: &[f64],
    real_target: &[f64],
    active_outputs: &[bool],
    ps: &PseudoSet,
    lr: f64,
) -> Result<()> {
    let mut items = Vec::with_capacity(ps.len() + 1);
    items.push(BatchItem {
        input: real_input,
        target: real_target,
        mask: Some(active_outputs),
    });
    items.extend(
        ps.inputs
            .iter()
            .zip(&ps.frozen_targets)
            .map(|(i, t)| BatchItem {
                input: i.as_slice(),
                target: t,
                mask: None,
            }),
    );
    net.apply_batch(&items, lr)
}

pub fn batch_rehearsal_update(
    net: &Network,
    real_input: &[f64],
    real_target: &[f64],
    active_outputs: &[bool],
    ps: &PseudoSet,
    lr: f64,
) -> Result<Network> {
    let mut next = net.clone();
    apply_batch_rehearsal(&mut next, real_input, real_target, active_outputs, ps, lr)?;
    Ok(next)
}
