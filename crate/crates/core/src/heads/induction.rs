//! Induction head: class vectors are induced from support shots by
//! dynamic routing, then compared with queries by an NTL relation module.
//!
//! The routing follows the capsule formulation it is borrowed from, since
//! only the iteration count and slice count are fixed upstream:
//!
//! ```text
//! ê_k = squash(W_s v_k)                 for each shot k of the class
//! b_k = 0
//! repeat r times:
//!     d   = softmax(b)
//!     c   = squash(Σ_k d_k ê_k)
//!     b_k = b_k + ê_k · c
//! ```
//!
//! The final `c` is the class vector. Queries enter the relation module
//! untransformed.

use rand::Rng;

use super::relation::{NtlParams, NtlVars};
use super::{Parameters, SupportSet};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct InductionParams {
    /// Shared shot transform, `[d, d]`.
    pub ws: Tensor,
    pub routing_iters: usize,
    pub ntl: NtlParams,
}

impl InductionParams {
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        slices: usize,
        routing_iters: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if routing_iters == 0 {
            return Err(Error::Config("routing needs at least one iteration".into()));
        }
        Ok(Self {
            ws: Tensor::glorot(vec![dim, dim], rng),
            routing_iters,
            ntl: NtlParams::init(dim, slices, rng),
        })
    }
}

impl Parameters for InductionParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.ws, &self.ntl.m, &self.ntl.w]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.ws, &mut self.ntl.m, &mut self.ntl.w]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InductionVars {
    pub ws: Var,
    pub ntl: NtlVars,
}

impl InductionVars {
    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            ws: v[0],
            ntl: NtlVars { m: v[1], w: v[2] },
        }
    }
}

/// Induced class vectors with the coupling coefficients used at each
/// routing iteration.
#[derive(Clone, Debug)]
pub struct Routed {
    /// `[C, d]`
    pub prototypes: Var,
    /// `coupling[c][iter]` is the distribution over the class's shots.
    pub coupling: Vec<Vec<Vec<f64>>>,
}

pub fn induce(
    g: &mut Graph,
    ws: Var,
    support: Var,
    ways: usize,
    shots: usize,
    iters: usize,
) -> Result<Routed> {
    if iters == 0 {
        return Err(Error::Config("routing needs at least one iteration".into()));
    }
    let ws_t = g.transpose(ws)?;
    let transformed = g.matmul(support, ws_t)?;
    let capsules = g.squash_rows(transformed);
    let mut class_vectors = Vec::with_capacity(ways);
    let mut coupling = Vec::with_capacity(ways);
    for c in 0..ways {
        let rows: Vec<usize> = (c * shots..(c + 1) * shots).collect();
        let e = g.gather_rows(capsules, &rows)?; // [K, d]
        let e_t = g.transpose(e)?;
        let mut logits = g.constant(&Tensor::zeros(vec![1, shots]));
        let mut trace = Vec::with_capacity(iters);
        let mut class_vec = None;
        for it in 0..iters {
            let d = g.softmax_rows(logits);
            trace.push(g.value(d).to_vec());
            let pooled = g.matmul(d, e)?; // [1, d]
            let v = g.squash_rows(pooled);
            if it + 1 < iters {
                let agreement = g.matmul(v, e_t)?; // [1, K]
                logits = g.add(logits, agreement)?;
            }
            class_vec = Some(v);
        }
        class_vectors.push(class_vec.expect("at least one iteration"));
        coupling.push(trace);
    }
    let prototypes = g.concat_rows(&class_vectors)?;
    Ok(Routed {
        prototypes,
        coupling,
    })
}

/// Plain-tensor view of the induced class vectors and routing trace.
pub fn induction_prototypes(
    s: &SupportSet,
    params: &InductionParams,
) -> Result<(Tensor, Vec<Vec<Vec<f64>>>)> {
    let mut g = Graph::new();
    let ws = g.constant(&params.ws);
    let sv = g.constant(&s.as_matrix());
    let r = induce(&mut g, ws, sv, s.ways(), s.shots(), params.routing_iters)?;
    Ok((g.tensor(r.prototypes), r.coupling))
}

/// `(‖x‖² / (1 + ‖x‖²)) · x / ‖x‖`, zero at the origin.
pub fn squash(x: &[f64]) -> Vec<f64> {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    if n2 == 0.0 {
        return vec![0.0; x.len()];
    }
    let n = n2.sqrt();
    x.iter().map(|v| n2 / (1.0 + n2) * v / n).collect()
}
