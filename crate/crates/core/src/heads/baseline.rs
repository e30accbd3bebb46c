//! Baseline classifiers, re-initialised per episode and fine-tuned on the
//! support set.
//!
//! * Baseline: logits `W v + b`.
//! * Baseline++: similarity between `v` and each class weight row `w_j`,
//!   scaled like any other cosine score, or `−‖v − w_j‖²` for euclidean.

use rand::Rng;

use super::{probabilities, Parameters, QuerySet, ScoreMatrix};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::metric::{self, MetricKind, COSINE_SCALE};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineParams {
    /// `[C, d]`
    pub w: Tensor,
    /// `[C]`, unused by Baseline++.
    pub b: Tensor,
}

impl BaselineParams {
    /// Zero weights and bias: uniform predictions before fine-tuning.
    pub fn zeros(ways: usize, dim: usize) -> Self {
        Self {
            w: Tensor::zeros(vec![ways, dim]),
            b: Tensor::zeros(vec![ways]),
        }
    }

    /// Glorot weight rows for Baseline++, whose cosine is undefined at zero.
    pub fn glorot<R: Rng + ?Sized>(ways: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            w: Tensor::glorot(vec![ways, dim], rng),
            b: Tensor::zeros(vec![ways]),
        }
    }

    pub fn new(w: Tensor, b: Tensor) -> Result<Self> {
        if w.shape().len() != 2 || b.shape() != [w.shape()[0]] {
            return Err(Error::shape("baseline", w.shape(), b.shape()));
        }
        Ok(Self { w, b })
    }

    pub fn ways(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.w.shape()[1]
    }
}

impl Parameters for BaselineParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BaselineVars {
    pub w: Var,
    pub b: Var,
}

impl BaselineVars {
    pub fn from_slice(v: &[Var]) -> Self {
        Self { w: v[0], b: v[1] }
    }
}

/// `[N, C]` logits `Q Wᵀ + b`.
pub fn baseline_logits(g: &mut Graph, vars: &BaselineVars, query: Var) -> Result<Var> {
    let wt = g.transpose(vars.w)?;
    let z = g.matmul(query, wt)?;
    g.add_row(z, vars.b)
}

/// `[N, C]` logits of Baseline++; the bias is ignored.
pub fn baselinepp_logits(
    g: &mut Graph,
    vars: &BaselineVars,
    query: Var,
    kind: MetricKind,
    cosine_scale: f64,
) -> Result<Var> {
    let raw = metric::pairwise(g, query, vars.w, kind)?;
    Ok(metric::to_logits(g, raw, kind, cosine_scale))
}

fn check_dims(q: &QuerySet, p: &BaselineParams) -> Result<()> {
    if q.dim() != p.dim() {
        return Err(Error::shape("baseline", q.vectors().shape(), p.w.shape()));
    }
    Ok(())
}

pub fn baseline_scores(q: &QuerySet, params: &BaselineParams) -> Result<ScoreMatrix> {
    check_dims(q, params)?;
    let mut g = Graph::new();
    let vars = BaselineVars::from_slice(&params.bind_all(&mut g, false));
    let qv = g.constant(q.vectors());
    let z = baseline_logits(&mut g, &vars, qv)?;
    Ok(probabilities(&mut g, z))
}

pub fn baselinepp_scores(
    q: &QuerySet,
    params: &BaselineParams,
    kind: MetricKind,
) -> Result<ScoreMatrix> {
    check_dims(q, params)?;
    if kind == MetricKind::Cosine {
        if let Some(j) = (0..params.ways()).find(|&j| params.w.row(j).iter().all(|&x| x == 0.0)) {
            return Err(Error::Degenerate(format!(
                "class weight vector {j} has zero norm"
            )));
        }
    }
    let mut g = Graph::new();
    let vars = BaselineVars::from_slice(&params.bind_all(&mut g, false));
    let qv = g.constant(q.vectors());
    let z = baselinepp_logits(&mut g, &vars, qv, kind, COSINE_SCALE)?;
    Ok(probabilities(&mut g, z))
}
