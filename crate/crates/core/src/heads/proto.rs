//! Prototype heads: class-mean prototypes, metric scoring against them,
//! and the soft k-means refinement with unlabeled points.

use super::{
    class_average_matrix, probabilities, HeadOutput, PrototypeSet, QuerySet, ScoreMatrix,
    SupportSet, UnlabeledSet,
};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::metric::{self, MetricKind, COSINE_SCALE};
use crate::tensor::Tensor;

/// `[C, d]` class means of a class-major `[C·K, d]` support matrix.
pub fn prototypes(g: &mut Graph, support: Var, ways: usize, shots: usize) -> Result<Var> {
    let avg = g.constant(&class_average_matrix(ways, shots));
    g.matmul(avg, support)
}

pub fn forward(
    g: &mut Graph,
    protos: Var,
    query: Var,
    kind: MetricKind,
    cosine_scale: f64,
) -> Result<HeadOutput> {
    let raw = metric::pairwise(g, query, protos, kind)?;
    let logits = metric::to_logits(g, raw, kind, cosine_scale);
    Ok(HeadOutput {
        raw,
        logits,
        relation: false,
    })
}

/// Soft k-means refinement:
///
/// `p̃_c = (Σ_k v_{c,k} + Σ_i s_{i,c} u_i) / (K + Σ_i s_{i,c})`
///
/// where `s_{i,c}` is the softmax assignment of unlabeled point `i` to
/// class `c` under the prototype metric. Assignments are recomputed
/// against the current prototypes on every pass; the support sums stay
/// fixed.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    g: &mut Graph,
    protos: Var,
    support: Var,
    unlabeled: Var,
    ways: usize,
    shots: usize,
    kind: MetricKind,
    cosine_scale: f64,
    passes: usize,
) -> Result<Var> {
    let sum_matrix = {
        let mut m = class_average_matrix(ways, shots);
        m.data_mut().iter_mut().for_each(|v| *v *= shots as f64);
        g.constant(&m)
    };
    let support_sum = g.matmul(sum_matrix, support)?;
    let shots_col = g.constant(&Tensor::vector(vec![shots as f64; ways]));
    let mut current = protos;
    for _ in 0..passes {
        let out = forward(g, current, unlabeled, kind, cosine_scale)?;
        let assign = g.softmax_rows(out.logits); // [U, C]
        let assign_t = g.transpose(assign)?; // [C, U]
        let pulled = g.matmul(assign_t, unlabeled)?; // [C, d]
        let numer = g.add(support_sum, pulled)?;
        let mass = {
            let u = g.shape(unlabeled)[0];
            let ones = g.constant(&Tensor::new(vec![u, 1], vec![1.0; u])?);
            let m = g.matmul(assign_t, ones)?; // [C, 1]
            g.reshape(m, &[ways])?
        };
        let denom = g.add(mass, shots_col)?;
        let inv = g.recip(denom)?;
        current = g.scale_rows(numer, inv)?;
    }
    Ok(current)
}

pub fn compute_prototypes(s: &SupportSet) -> PrototypeSet {
    let mut g = Graph::new();
    let sv = g.constant(&s.as_matrix());
    let p = prototypes(&mut g, sv, s.ways(), s.shots()).expect("support layout");
    PrototypeSet {
        prototypes: g.tensor(p),
        refined: false,
    }
}

pub fn proto_scores(p: &PrototypeSet, q: &QuerySet, kind: MetricKind) -> Result<ScoreMatrix> {
    if p.prototypes.shape()[1] != q.dim() {
        return Err(Error::shape(
            "proto_scores",
            p.prototypes.shape(),
            q.vectors().shape(),
        ));
    }
    let mut g = Graph::new();
    let pv = g.constant(&p.prototypes);
    let qv = g.constant(q.vectors());
    let out = forward(&mut g, pv, qv, kind, COSINE_SCALE)?;
    Ok(probabilities(&mut g, out.logits))
}

/// One refinement pass. With no unlabeled points the prototypes are
/// returned unchanged.
pub fn refine_prototypes(
    p: &PrototypeSet,
    s: &SupportSet,
    u: &UnlabeledSet,
    kind: MetricKind,
) -> Result<PrototypeSet> {
    let Some(uv) = u.vectors() else {
        return Ok(PrototypeSet {
            prototypes: p.prototypes.clone(),
            refined: true,
        });
    };
    let mut g = Graph::new();
    let pv = g.constant(&p.prototypes);
    let sv = g.constant(&s.as_matrix());
    let un = g.constant(uv);
    let r = refine(
        &mut g,
        pv,
        sv,
        un,
        s.ways(),
        s.shots(),
        kind,
        COSINE_SCALE,
        1,
    )?;
    Ok(PrototypeSet {
        prototypes: g.tensor(r),
        refined: true,
    })
}
