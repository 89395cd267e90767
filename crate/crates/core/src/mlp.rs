//! Small fully connected network with activation tracing.
//!
//! Every weight matrix has one row per destination unit and one column per
//! source unit plus a trailing bias column. The bias is modelled as an extra
//! source activation fixed at 1, so every update rule that works on source
//! activation vectors covers the biases without special cases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Inputs wider than this are forwarded with a sparse first-layer pass.
const SPARSE_INPUT_MIN_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    #[default]
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Linear,
}

/// Architecture and initialisation of a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input, hidden..., output.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    /// Half-width of the uniform weight initialisation interval.
    pub init_scale: f64,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, init_scale: f64) -> Self {
        Self {
            layer_sizes,
            hidden_activation: HiddenActivation::Sigmoid,
            output_activation: OutputActivation::Linear,
            init_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least 2 layers, got {}",
                self.layer_sizes.len()
            )));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("layer {pos} has size 0")));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::Config(format!(
                "init_scale must be finite and non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Row-major weight matrix for one layer gap, bias in the last column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Source units plus one bias column.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Post-activation values of every layer for one forward pass.
///
/// Layer 0 is the input. Every layer except the output carries an extra
/// trailing element fixed at 1 (the bias source).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub activations: Vec<Vec<f64>>,
}

impl ActivationTrace {
    /// Source activations (bias included) feeding layer gap `gap`.
    pub fn source(&self, gap: usize) -> &[f64] {
        &self.activations[gap]
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn num_gaps(&self) -> usize {
        self.activations.len().saturating_sub(1)
    }
}

/// Backpropagated deltas at the destination units of every layer gap.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerErrors {
    pub errors: Vec<Vec<f64>>,
}

impl LayerErrors {
    pub fn gap(&self, gap: usize) -> &[f64] {
        &self.errors[gap]
    }

    pub fn is_zero(&self) -> bool {
        self.errors.iter().flatten().all(|&e| e == 0.0)
    }
}

/// One element of a gradient batch. `mask`, when present, zeroes the output
/// error at every unit where it is `false`.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub input: &'a [f64],
    pub target: &'a [f64],
    pub mask: Option<&'a [bool]>,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layer_sizes: Vec<usize>,
    weights: Vec<WeightMatrix>,
}

impl Network {
    /// Weights drawn independently and uniformly from `[-init_scale, init_scale]`.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut net = Self::zeros(&spec.layer_sizes)?;
        let s = spec.init_scale;
        if s > 0.0 {
            for m in &mut net.weights {
                for w in m.as_mut_slice() {
                    *w = rng.gen_range(-s..=s);
                }
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        NetworkSpec::new(layer_sizes.to_vec(), 0.0).validate()?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| WeightMatrix::zeros(w[1], w[0] + 1))
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
        })
    }

    /// Builds a network from a flat weight list in layer-gap, row-major order.
    pub fn from_flat(layer_sizes: &[usize], flat: &[f64]) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        check_len("flat weights", net.num_weights(), flat.len())?;
        let mut offset = 0;
        for m in &mut net.weights {
            let n = m.data.len();
            m.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        if flat.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("non-finite weight".into()));
        }
        Ok(net)
    }

    pub fn flat_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .flat_map(|m| m.data.iter().copied())
            .collect()
    }

    pub fn num_weights(&self) -> usize {
        self.weights.iter().map(|m| m.data.len()).sum()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_gaps(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, gap: usize) -> &WeightMatrix {
        &self.weights[gap]
    }

    pub fn weights_mut(&mut self, gap: usize) -> &mut WeightMatrix {
        &mut self.weights[gap]
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .all(|m| m.data.iter().all(|w| w.is_finite()))
    }

    /// Sigmoid hidden layers, linear output. Returns the output together with
    /// the full activation trace.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ActivationTrace)> {
        check_len("forward input", self.input_size(), input.len())?;
        let last = self.num_gaps() - 1;
        let mut activations = Vec::with_capacity(self.layer_sizes.len());
        let mut src = Vec::with_capacity(input.len() + 1);
        src.extend_from_slice(input);
        src.push(1.0);

        for (gap, m) in self.weights.iter().enumerate() {
            let mut dst = Vec::with_capacity(m.rows + 1);
            if gap == 0 && src.len() > SPARSE_INPUT_MIN_WIDTH {
                let nz: Vec<usize> = (0..src.len()).filter(|&c| src[c] != 0.0).collect();
                for r in 0..m.rows {
                    let row = m.row(r);
                    dst.push(nz.iter().map(|&c| row[c] * src[c]).sum::<f64>());
                }
            } else {
                for r in 0..m.rows {
                    dst.push(dot(m.row(r), &src));
                }
            }
            if gap < last {
                for z in &mut dst {
                    *z = sigmoid(*z);
                }
                dst.push(1.0);
            }
            activations.push(std::mem::replace(&mut src, dst));
        }
        let output = src.clone();
        activations.push(src);
        Ok((output, ActivationTrace { activations }))
    }

    /// Forward pass without keeping the trace.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|(out, _)| out)
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        check_len(
            "trace layers",
            self.layer_sizes.len(),
            trace.activations.len(),
        )?;
        for (gap, m) in self.weights.iter().enumerate() {
            check_len("trace source width", m.cols, trace.activations[gap].len())?;
        }
        check_len(
            "trace output width",
            self.output_size(),
            trace.output().len(),
        )
    }

    fn check_errors(&self, errs: &LayerErrors) -> Result<()> {
        check_len("layer errors", self.num_gaps(), errs.errors.len())?;
        for (m, e) in self.weights.iter().zip(&errs.errors) {
            check_len("layer error width", m.rows, e.len())?;
        }
        Ok(())
    }

    /// Deltas for every layer gap given `output_error = target - prediction`.
    pub fn backprop_errors(
        &self,
        trace: &ActivationTrace,
        output_error: &[f64],
    ) -> Result<LayerErrors> {
        self.check_trace(trace)?;
        check_len("output error", self.output_size(), output_error.len())?;
        let gaps = self.num_gaps();
        let mut errors = vec![Vec::new(); gaps];
        errors[gaps - 1] = output_error.to_vec();
        for gap in (0..gaps - 1).rev() {
            let upper = &self.weights[gap + 1];
            let upper_err = &errors[gap + 1];
            let act = &trace.activations[gap + 1];
            let delta: Vec<f64> = (0..self.layer_sizes[gap + 1])
                .map(|h| {
                    let back: f64 = (0..upper.rows)
                        .map(|r| upper.get(r, h) * upper_err[r])
                        .sum();
                    let a = act[h];
                    a * (1.0 - a) * back
                })
                .collect();
            errors[gap] = delta;
        }
        Ok(LayerErrors { errors })
    }

    /// In-place delta rule: row `r` of gap `i` gains `lr * errs_i[r] * source_i`.
    pub fn apply_online_update(
        &mut self,
        trace: &ActivationTrace,
        errs: &LayerErrors,
        lr: f64,
    ) -> Result<()> {
        self.check_trace(trace)?;
        self.check_errors(errs)?;
        for gap in 0..self.num_gaps() {
            self.apply_delta_rule(gap, errs.gap(gap), trace.source(gap), lr);
        }
        Ok(())
    }

    /// Row `r` of `gap` gains `lr * (errs[r] * direction[c])`.
    pub(crate) fn apply_delta_rule(
        &mut self,
        gap: usize,
        errs: &[f64],
        direction: &[f64],
        lr: f64,
    ) {
        let m = &mut self.weights[gap];
        let nz: Vec<usize> = (0..direction.len())
            .filter(|&c| direction[c] != 0.0)
            .collect();
        for (r, &e) in errs.iter().enumerate() {
            if e == 0.0 {
                continue;
            }
            let row = m.row_mut(r);
            for &c in &nz {
                row[c] += lr * (e * direction[c]);
            }
        }
    }

    /// Pure variant of [`Network::apply_online_update`].
    pub fn online_update(
        &self,
        trace: &ActivationTrace,
        errs: &LayerErrors,
        lr: f64,
    ) -> Result<Network> {
        let mut next = self.clone();
        next.apply_online_update(trace, errs, lr)?;
        Ok(next)
    }

    /// Averaged-gradient step over `items`, every gradient taken at the
    /// current weights.
    pub fn apply_batch(&mut self, items: &[BatchItem<'_>], lr: f64) -> Result<()> {
        if items.is_empty() {
            return Err(Error::Usage("batch update on an empty batch".into()));
        }
        let mut grads: Vec<WeightMatrix> = self
            .weights
            .iter()
            .map(|m| WeightMatrix::zeros(m.rows, m.cols))
            .collect();
        for item in items {
            let (out, trace) = self.forward(item.input)?;
            check_len("batch target", out.len(), item.target.len())?;
            let mut err: Vec<f64> = item.target.iter().zip(&out).map(|(t, o)| t - o).collect();
            if let Some(mask) = item.mask {
                check_len("batch mask", out.len(), mask.len())?;
                for (e, &keep) in err.iter_mut().zip(mask) {
                    if !keep {
                        *e = 0.0;
                    }
                }
            }
            let errs = self.backprop_errors(&trace, &err)?;
            for (gap, g) in grads.iter_mut().enumerate() {
                let src = trace.source(gap);
                let nz: Vec<usize> = (0..src.len()).filter(|&c| src[c] != 0.0).collect();
                for (r, &e) in errs.gap(gap).iter().enumerate() {
                    if e == 0.0 {
                        continue;
                    }
                    let row = g.row_mut(r);
                    for &c in &nz {
                        row[c] += e * src[c];
                    }
                }
            }
        }
        let n = items.len() as f64;
        for (m, g) in self.weights.iter_mut().zip(&grads) {
            for (w, &gs) in m.data.iter_mut().zip(&g.data) {
                if gs != 0.0 {
                    *w += lr * (gs / n);
                }
            }
        }
        Ok(())
    }

    /// Averaged batch step with full-output error against `targets`.
    pub fn batch_update<I, T>(&self, inputs: &[I], targets: &[T], lr: f64) -> Result<Network>
    where
        I: AsRef<[f64]>,
        T: AsRef<[f64]>,
    {
        check_len("batch targets", inputs.len(), targets.len())?;
        let items: Vec<BatchItem<'_>> = inputs
            .iter()
            .zip(targets)
            .map(|(i, t)| BatchItem {
                input: i.as_ref(),
                target: t.as_ref(),
                mask: None,
            })
            .collect();
        let mut next = self.clone();
        next.apply_batch(&items, lr)?;
        Ok(next)
    }

    /// Text form used for golden files: a header line with the layer sizes,
    /// then one weight per line in layer-gap, row-major order.
    pub fn to_text(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(usize::to_string).collect();
        let mut out = format!("layers {}\n", sizes.join(" "));
        for w in self.flat_weights() {
            out.push_str(&format!("{w:?}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty network file".into()))?;
        let sizes = header
            .strip_prefix("layers ")
            .ok_or_else(|| Error::Config("missing `layers` header".into()))?
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad layer size: {e}")))?;
        let flat = lines
            .map(|l| l.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad weight: {e}")))?;
        Self::from_flat(&sizes, &flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_scale_gives_zero_network() {
        let spec = NetworkSpec::new(vec![3, 4, 2], 0.0);
        let net = Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(net.flat_weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn init_is_deterministic_and_in_range() {
        let spec = NetworkSpec::new(vec![5, 7, 2], 0.1);
        let a = Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.flat_weights().iter().all(|w| w.abs() <= 0.1));
        assert_eq!(a.num_weights(), 7 * 6 + 2 * 8);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            Network::init(&NetworkSpec::new(vec![3, 0, 2], 0.1), &mut rng),
            Err(Error::Config(_))
        ));
        assert!(Network::init(&NetworkSpec::new(vec![3], 0.1), &mut rng).is_err());
        assert!(Network::init(&NetworkSpec::new(vec![3, 2], f64::NAN), &mut rng).is_err());
    }

    #[test]
    fn zero_weights_give_half_hidden_and_zero_output() {
        let net = Network::zeros(&[3, 4, 2]).unwrap();
        let (out, trace) = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
        assert_eq!(trace.source(1), &[0.5, 0.5, 0.5, 0.5, 1.0]);
        assert_eq!(trace.source(0), &[1.0, -2.0, 0.5, 1.0]);
    }

    #[test]
    fn single_gap_is_linear() {
        let net = Network::from_flat(&[1, 1], &[2.0, 0.0]).unwrap();
        assert_eq!(net.predict(&[3.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Network::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_output_error_gives_zero_deltas() {
        let spec = NetworkSpec::new(vec![4, 3, 2], 0.5);
        let net = Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (_, trace) = net.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let errs = net.backprop_errors(&trace, &[0.0, 0.0]).unwrap();
        assert!(errs.is_zero());
        assert!(net.backprop_errors(&trace, &[0.0]).is_err());
    }

    #[test]
    fn output_delta_is_output_error() {
        let net = Network::from_flat(&[1, 1], &[0.7, -0.2]).unwrap();
        let (_, trace) = net.forward(&[2.0]).unwrap();
        let errs = net.backprop_errors(&trace, &[0.25]).unwrap();
        assert_eq!(errs.gap(0), &[0.25]);
    }

    #[test]
    fn one_delta_rule_step() {
        let net = Network::zeros(&[1, 1]).unwrap();
        let (out, trace) = net.forward(&[1.0]).unwrap();
        let errs = net.backprop_errors(&trace, &[1.0 - out[0]]).unwrap();
        let next = net.online_update(&trace, &errs, 0.1).unwrap();
        assert_eq!(next.flat_weights(), vec![0.1, 0.1]);
    }

    #[test]
    fn zero_lr_or_zero_error_leaves_network_unchanged() {
        let spec = NetworkSpec::new(vec![3, 5, 2], 0.3);
        let net = Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let (_, trace) = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        let errs = net.backprop_errors(&trace, &[0.5, -0.1]).unwrap();
        assert_eq!(net.online_update(&trace, &errs, 0.0).unwrap(), net);
        let zero = net.backprop_errors(&trace, &[0.0, 0.0]).unwrap();
        assert_eq!(net.online_update(&trace, &zero, 0.1).unwrap(), net);
    }

    #[test]
    fn empty_batch_is_a_usage_error() {
        let net = Network::zeros(&[2, 1]).unwrap();
        let none: [Vec<f64>; 0] = [];
        assert!(matches!(
            net.batch_update(&none, &none, 0.1),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn text_round_trip() {
        let spec = NetworkSpec::new(vec![3, 2, 2], 0.1);
        let net = Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(Network::from_text(&net.to_text()).unwrap(), net);
    }
}
