//! Observation to feature-vector encodings.

use serde::{Deserialize, Serialize};

use crate::cartpole::{Observability, Observation};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Component `i` lands in slot `2i` when non-negative, `2i+1` otherwise.
    SignSplit,
    /// Per-component unary bins with a fractional element after the active bin.
    SparseUnary,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::SignSplit => "sign",
            EncoderKind::SparseUnary => "unary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub ranges: Vec<(f64, f64)>,
}

pub const LINEAR_RANGE: (f64, f64) = (-20.0, 20.0);
pub const ANGULAR_RANGE: (f64, f64) = (-60.0, 60.0);

impl EncoderSpec {
    pub fn new(kind: EncoderKind, ranges: Vec<(f64, f64)>) -> Result<Self> {
        let spec = Self { kind, ranges };
        spec.validate()?;
        Ok(spec)
    }

    /// Ranges assigned per component from the linear/angular split of `observability`.
    pub fn for_observability(
        kind: EncoderKind,
        observability: Observability,
        linear: (f64, f64),
        angular: (f64, f64),
    ) -> Result<Self> {
        let ranges = observability
            .angular_mask()
            .iter()
            .map(|&ang| if ang { angular } else { linear })
            .collect();
        Self::new(kind, ranges)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranges.is_empty() {
            return Err(Error::Config("encoder needs at least one component".into()));
        }
        for (i, &(lo, hi)) in self.ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "encoder range {i} must satisfy min < max, got [{lo}, {hi}]"
                )));
            }
            if self.kind == EncoderKind::SparseUnary && (lo.fract() != 0.0 || hi.fract() != 0.0) {
                return Err(Error::Config(format!(
                    "sparse unary range {i} needs integer endpoints, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn segment_len(&self, component: usize) -> usize {
        match self.kind {
            EncoderKind::SignSplit => 2,
            EncoderKind::SparseUnary => {
                let (lo, hi) = self.ranges[component];
                (hi - lo) as usize + 2
            }
        }
    }

    pub fn feature_len(&self) -> usize {
        (0..self.ranges.len()).map(|i| self.segment_len(i)).sum()
    }

    pub fn encode(&self, obs: &Observation) -> Result<FeatureVector> {
        match self.kind {
            EncoderKind::SignSplit => encode_sign_split(obs, self),
            EncoderKind::SparseUnary => encode_sparse_unary(obs, self),
        }
    }
}

/// Encoded observation plus the start offset of each component's segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub segment_starts: Vec<usize>,
}

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, component: usize) -> &[f64] {
        let start = self.segment_starts[component];
        let end = self
            .segment_starts
            .get(component + 1)
            .copied()
            .unwrap_or(self.values.len());
        &self.values[start..end]
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Magnitude goes in slot `2i` for `v >= 0`, in slot `2i+1` otherwise.
pub fn encode_sign_split(obs: &Observation, spec: &EncoderSpec) -> Result<FeatureVector> {
    check_len("observation components", spec.ranges.len(), obs.0.len())?;
    let mut values = vec![0.0; 2 * obs.0.len()];
    for (i, &v) in obs.0.iter().enumerate() {
        if v >= 0.0 {
            values[2 * i] = v;
        } else {
            values[2 * i + 1] = -v;
        }
    }
    Ok(FeatureVector {
        values,
        segment_starts: (0..obs.0.len()).map(|i| 2 * i).collect(),
    })
}

/// Bin `floor(v) - min` is set to 1 and the next element to `v - floor(v)`.
/// Segment length is `max - min + 2`, so `v = max` still fits.
pub fn encode_sparse_unary(obs: &Observation, spec: &EncoderSpec) -> Result<FeatureVector> {
    check_len("observation components", spec.ranges.len(), obs.0.len())?;
    let mut values = vec![0.0; spec.feature_len()];
    let mut segment_starts = Vec::with_capacity(obs.0.len());
    let mut start = 0;
    for (i, &raw) in obs.0.iter().enumerate() {
        let (lo, hi) = spec.ranges[i];
        let v = raw.clamp(lo, hi);
        let floor = v.floor();
        let mut k = (floor - lo) as usize;
        let mut frac = v - floor;
        // tiny negative v: 1 - ε rounds up to 1
        if frac >= 1.0 {
            k += 1;
            frac = 0.0;
        }
        values[start + k] = 1.0;
        values[start + k + 1] = frac;
        segment_starts.push(start);
        start += spec.segment_len(i);
    }
    Ok(FeatureVector {
        values,
        segment_starts,
    })
}
