//! Matching head: class-averaged similarity between each query and every
//! support shot.

use super::{
    class_average_matrix, probabilities, EpisodeVars, HeadOutput, QuerySet, ScoreMatrix, SupportSet,
};
use crate::autodiff::Graph;
use crate::error::Result;
use crate::metric::{self, MetricKind, COSINE_SCALE};

/// `raw[i, c]` is the mean over shots of the cosine similarity or squared
/// distance between query `i` and the shots of class `c`.
pub fn forward(
    g: &mut Graph,
    ep: &EpisodeVars,
    kind: MetricKind,
    cosine_scale: f64,
) -> Result<HeadOutput> {
    let pairwise = metric::pairwise(g, ep.query, ep.support, kind)?;
    let avg = g.constant(&class_average_matrix(ep.ways, ep.shots));
    let avg_t = g.transpose(avg)?;
    let raw = g.matmul(pairwise, avg_t)?;
    let logits = metric::to_logits(g, raw, kind, cosine_scale);
    Ok(HeadOutput {
        raw,
        logits,
        relation: false,
    })
}

/// Class-averaged raw similarities (cosine) or distances (euclidean).
pub fn matching_similarities(
    s: &SupportSet,
    q: &QuerySet,
    kind: MetricKind,
) -> Result<ScoreMatrix> {
    let mut g = Graph::new();
    let ep = EpisodeVars::constants(&mut g, s, q, None)?;
    let out = forward(&mut g, &ep, kind, COSINE_SCALE)?;
    Ok(ScoreMatrix {
        scores: g.tensor(out.raw),
        normalized: false,
    })
}

pub fn matching_scores(s: &SupportSet, q: &QuerySet, kind: MetricKind) -> Result<ScoreMatrix> {
    let mut g = Graph::new();
    let ep = EpisodeVars::constants(&mut g, s, q, None)?;
    let out = forward(&mut g, &ep, kind, COSINE_SCALE)?;
    Ok(probabilities(&mut g, out.logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{cosine, scores_to_probs, sq_euclidean};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| i.to_string()).collect()
    }

    #[test]
    fn single_shot_cosine_example() {
        let s = SupportSet::new(&[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]], names(2)).unwrap();
        let q = QuerySet::new(&[vec![1.0, 0.0]], None).unwrap();
        let raw = matching_similarities(&s, &q, MetricKind::Cosine).unwrap();
        assert_eq!(raw.row(0), &[1.0, 0.0]);
        let p = matching_scores(&s, &q, MetricKind::Cosine).unwrap();
        assert!((p.row(0)[0] - 0.993307).abs() < 1e-6);
        assert!((p.row(0)[1] - 0.006693).abs() < 1e-6);
    }

    #[test]
    fn query_equal_to_class_shots_wins() {
        let v = vec![0.3, -1.2, 2.0];
        let s = SupportSet::new(
            &[
                vec![v.clone(), v.clone()],
                vec![vec![1.0, 1.0, 1.0], vec![-2.0, 0.5, 0.1]],
            ],
            names(2),
        )
        .unwrap();
        let q = QuerySet::new(&[v], None).unwrap();
        for kind in [MetricKind::Cosine, MetricKind::Euclidean] {
            assert_eq!(
                matching_scores(&s, &q, kind).unwrap().predictions(),
                vec![0]
            );
        }
    }

    #[test]
    fn matches_brute_force_pairwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = || rng.random_range(-2.0..2.0);
        let classes: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| (0..2).map(|_| (0..3).map(|_| r()).collect()).collect())
            .collect();
        let queries: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| r()).collect()).collect();
        let s = SupportSet::new(&classes, names(2)).unwrap();
        let q = QuerySet::new(&queries, None).unwrap();
        for kind in [MetricKind::Cosine, MetricKind::Euclidean] {
            let got = matching_scores(&s, &q, kind).unwrap();
            for (i, qi) in queries.iter().enumerate() {
                let mut raw = Vec::new();
                for class in &classes {
                    let mut acc = 0.0;
                    for shot in class {
                        acc += match kind {
                            MetricKind::Cosine => cosine(qi, shot).unwrap(),
                            MetricKind::Euclidean => sq_euclidean(qi, shot).unwrap(),
                        };
                    }
                    raw.push(acc / class.len() as f64);
                }
                let want = scores_to_probs(&raw, kind, COSINE_SCALE).unwrap();
                for (a, b) in got.row(i).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
