//! Fixed comparison metrics and the score-to-probability mapping.
//!
//! Cosine scores live in `[-1, 1]`, which is too narrow for a softmax to
//! become confident, so they are multiplied by [`COSINE_SCALE`] first.
//! Squared Euclidean distances are negated and used as logits directly.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, softmax};

pub const COSINE_SCALE: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Cosine,
    Euclidean,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::Euclidean => "euclidean",
        }
    }

    /// Short label used in rendered tables.
    pub fn short(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::Euclidean => "euclid.",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "cos" => Ok(Self::Cosine),
            "euclidean" | "euclid" | "euclid." => Ok(Self::Euclidean),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine", &[a.len()], &[b.len()]));
    }
    let (na, nb) = (tensor::norm(a), tensor::norm(b));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    Ok((tensor::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn sq_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("sq_euclidean", &[a.len()], &[b.len()]));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Cosine similarities become `softmax(scale · s)`; squared distances
/// become `softmax(−s)`.
pub fn scores_to_probs(scores: &[f64], kind: MetricKind, cosine_scale: f64) -> Result<Vec<f64>> {
    let logits: Vec<f64> = match kind {
        MetricKind::Cosine => scores.iter().map(|s| cosine_scale * s).collect(),
        MetricKind::Euclidean => scores.iter().map(|s| -s).collect(),
    };
    softmax(&logits)
}

/// Raw pairwise scores between the rows of `a` (`[n, d]`) and `b`
/// (`[m, d]`): cosine similarities or squared distances.
pub fn pairwise(g: &mut Graph, a: Var, b: Var, kind: MetricKind) -> Result<Var> {
    match kind {
        MetricKind::Cosine => {
            let an = g.normalize_rows(a)?;
            let bn = g.normalize_rows(b)?;
            let bt = g.transpose(bn)?;
            g.matmul(an, bt)
        }
        MetricKind::Euclidean => g.pairwise_sq_dist(a, b),
    }
}

/// Maps raw scores to softmax logits for the given metric.
pub fn to_logits(g: &mut Graph, raw: Var, kind: MetricKind, cosine_scale: f64) -> Var {
    match kind {
        MetricKind::Cosine => g.scale(raw, cosine_scale),
        MetricKind::Euclidean => g.scale(raw, -1.0),
    }
}
