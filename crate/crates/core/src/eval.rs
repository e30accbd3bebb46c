//! Multi-seed episodic evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::episodes::{sample_indices, ClassPool, EpisodeIndices, EpisodeSpec, FixedSupport};
use crate::error::{Error, Result};
use crate::heads::baseline::{baseline_scores, baselinepp_scores};
use crate::heads::{Head, Method, QuerySet};
use crate::metric::MetricKind;
use crate::provider::Provider;
use crate::rng;
use crate::tensor::argmax;
use crate::train::{finetune_support, FinetuneConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotMode {
    /// One support draw per class, reused by every episode of a run.
    Fixed,
    /// Support redrawn every episode.
    #[default]
    Resampled,
}

impl std::str::FromStr for ShotMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "resampled" => Ok(Self::Resampled),
            other => Err(Error::Config(format!(
                "unknown shot mode `{other}` (fixed|resampled)"
            ))),
        }
    }
}

impl std::fmt::Display for ShotMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Resampled => "resampled",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub shot_mode: ShotMode,
    pub ways: Vec<usize>,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 600,
            seeds: vec![1, 2, 3, 4, 5],
            shot_mode: ShotMode::Resampled,
            ways: vec![2, 3, 4, 5],
            jobs: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config(
                "evaluation needs at least one episode".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("evaluation needs at least one seed".into()));
        }
        if self.ways.is_empty() || self.ways.iter().any(|&c| c < 2) {
            return Err(Error::Config(format!(
                "C values must each be at least 2, got {:?}",
                self.ways
            )));
        }
        Ok(())
    }
}

/// Anything that labels the queries of a sampled episode.
pub trait Classifier: Sync {
    /// Predicted class index per query, in [`EpisodeIndices::query_flat`]
    /// order. `seed` is private to this episode.
    fn predict(&self, provider: &Provider, idx: &EpisodeIndices, seed: u64) -> Result<Vec<usize>>;
}

/// A head with its fine-tuning settings (used only by baselines).
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub head: Head,
    pub finetune: FinetuneConfig,
}

impl Classifier for Model {
    fn predict(&self, provider: &Provider, idx: &EpisodeIndices, seed: u64) -> Result<Vec<usize>> {
        let cfg = &self.head.config;
        if cfg.method.is_baseline() {
            let ways = idx.classes.len();
            let shots = idx.support.first().map_or(0, Vec::len);
            let support = crate::heads::SupportSet::from_matrix(
                &provider.matrix(&idx.support_flat())?,
                ways,
                shots,
            )?;
            let params = finetune_support(cfg, &support, &self.finetune, seed)?;
            let q = QuerySet::from_matrix(provider.matrix(&idx.query_flat())?, None)?;
            let scores = match cfg.method {
                Method::BaselinePlusPlus => {
                    baselinepp_scores(&q, &params, cfg.metric.unwrap_or(MetricKind::Cosine))?
                }
                _ => baseline_scores(&q, &params)?,
            };
            return Ok(scores.predictions());
        }
        let mut g = Graph::new();
        let pv = provider.bind(&mut g, false);
        let bound = self.head.bind(&mut g, false);
        let ep = provider.episode(&mut g, &pv, idx)?;
        let out = self.head.forward(&mut g, &bound, &ep)?;
        let ways = idx.classes.len();
        Ok(g.value(out.logits).chunks(ways).map(argmax).collect())
    }
}

/// Correct and total query predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    pub episodes: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn merge(self, o: Tally) -> Tally {
        Tally {
            correct: self.correct + o.correct,
            total: self.total + o.total,
            episodes: self.episodes + o.episodes,
        }
    }
}

const EVAL_STREAM: u64 = 21;
const FIXED_STREAM: u64 = 22;

/// Seed of the pinned support draw for a run.
pub fn fixed_support_seed(seed: u64) -> u64 {
    rng::derive(seed, FIXED_STREAM)
}

/// Seed of evaluation episode `e` at `ways` in a run.
pub fn episode_seed(seed: u64, ways: usize, e: usize) -> u64 {
    rng::derive_path(seed, &[EVAL_STREAM, ways as u64, e as u64])
}

/// Samples `episodes` episodes from `pool` and counts correct query
/// predictions. Episodes are independent, so they are spread over `jobs`
/// threads; counts are summed, making the result order-independent.
#[allow(clippy::too_many_arguments)]
pub fn run_episodes(
    clf: &dyn Classifier,
    provider: &Provider,
    pool: &ClassPool,
    spec: &EpisodeSpec,
    episodes: usize,
    mode: ShotMode,
    seed: u64,
    jobs: usize,
) -> Result<Tally> {
    let fixed = match mode {
        ShotMode::Fixed => Some(FixedSupport::draw(
            pool,
            spec.shots,
            fixed_support_seed(seed),
        )?),
        ShotMode::Resampled => None,
    };
    let one = |e: usize| -> Result<Tally> {
        let es = episode_seed(seed, spec.ways, e);
        let idx = sample_indices(pool, spec, es, fixed.as_ref())?;
        let pred = clf.predict(provider, &idx, rng::derive(es, 1))?;
        let truth = idx.query_labels();
        if pred.len() != truth.len() {
            return Err(Error::Argument(format!(
                "classifier returned {} predictions for {} queries",
                pred.len(),
                truth.len()
            )));
        }
        Ok(Tally {
            correct: pred.iter().zip(&truth).filter(|(p, t)| p == t).count(),
            total: truth.len(),
            episodes: 1,
        })
    };
    if jobs <= 1 {
        return (0..episodes)
            .map(one)
            .try_fold(Tally::default(), |a, t| Ok(a.merge(t?)));
    }
    let pool_threads = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("could not start {jobs} worker threads: {e}")))?;
    let tallies: Vec<Result<Tally>> =
        pool_threads.install(|| (0..episodes).into_par_iter().map(one).collect());
    tallies
        .into_iter()
        .try_fold(Tally::default(), |a, t| Ok(a.merge(t?)))
}

/// Accuracy at one C for one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunResult {
    pub ways: usize,
    pub seed: u64,
    pub tally: Tally,
}

/// Evaluates one trained run (`seed`) at every C of `cfg`. `train_classes`
/// must not intersect the test pool.
pub fn evaluate(
    clf: &dyn Classifier,
    provider: &Provider,
    train_classes: &[String],
    test: &ClassPool,
    spec: &EpisodeSpec,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    if let Some(c) = train_classes.iter().find(|c| test.members(c).is_some()) {
        return Err(Error::Protocol(format!(
            "class `{c}` is in both the training and test partitions"
        )));
    }
    cfg.ways
        .iter()
        .map(|&ways| {
            let s = EpisodeSpec { ways, ..*spec };
            let tally = run_episodes(
                clf,
                provider,
                test,
                &s,
                cfg.episodes,
                cfg.shot_mode,
                seed,
                cfg.jobs,
            )?;
            Ok(RunResult { ways, seed, tally })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadConfig;
    use crate::synthetic::{gaussian_clusters, ClusterSpec};
    use rand::Rng;

    struct Oracle;

    impl Classifier for Oracle {
        fn predict(&self, _: &Provider, idx: &EpisodeIndices, _: u64) -> Result<Vec<usize>> {
            Ok(idx.query_labels())
        }
    }

    struct Coin;

    impl Classifier for Coin {
        fn predict(&self, _: &Provider, idx: &EpisodeIndices, seed: u64) -> Result<Vec<usize>> {
            let mut r = rng::seeded(seed);
            let c = idx.classes.len();
            Ok((0..idx.query_flat().len())
                .map(|_| r.random_range(0..c))
                .collect())
        }
    }

    fn provider() -> Provider {
        Provider::Frozen(
            gaussian_clusters(&ClusterSpec {
                classes: 10,
                per_class: 20,
                ..ClusterSpec::default()
            })
            .unwrap(),
        )
    }

    #[test]
    fn oracle_scores_one() {
        let p = provider();
        let t = run_episodes(
            &Oracle,
            &p,
            &p.pool(),
            &EpisodeSpec::new(5, 5, 5),
            20,
            ShotMode::Resampled,
            0,
            1,
        )
        .unwrap();
        assert_eq!(t.accuracy(), 1.0);
        assert_eq!(t.total, 20 * 25);
    }

    #[test]
    fn coin_scores_one_over_c() {
        let p = provider();
        // 400 episodes of 25 queries: 10,000 predictions.
        let t = run_episodes(
            &Coin,
            &p,
            &p.pool(),
            &EpisodeSpec::new(5, 5, 5),
            400,
            ShotMode::Resampled,
            3,
            2,
        )
        .unwrap();
        assert_eq!(t.total, 10_000);
        assert!((t.accuracy() - 0.2).abs() < 0.02, "{}", t.accuracy());
    }

    #[test]
    fn parallel_matches_serial() {
        let p = provider();
        let m = Model {
            head: Head::new(HeadConfig::new(Method::Proto), 16, &mut rng::seeded(0)).unwrap(),
            finetune: FinetuneConfig::default(),
        };
        let spec = EpisodeSpec::new(4, 1, 3);
        let a = run_episodes(&m, &p, &p.pool(), &spec, 50, ShotMode::Fixed, 9, 1).unwrap();
        let b = run_episodes(&m, &p, &p.pool(), &spec, 50, ShotMode::Fixed, 9, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overlap_is_a_protocol_error() {
        let p = provider();
        let pool = p.pool();
        let train = vec![pool.class_names()[0].clone()];
        let err = evaluate(
            &Oracle,
            &p,
            &train,
            &pool,
            &EpisodeSpec::new(2, 1, 1),
            &EvalConfig::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn one_result_per_c() {
        let p = provider();
        let cfg = EvalConfig {
            episodes: 5,
            ..EvalConfig::default()
        };
        let r = evaluate(
            &Oracle,
            &p,
            &[],
            &p.pool(),
            &EpisodeSpec::new(2, 5, 5),
            &cfg,
            1,
        )
        .unwrap();
        assert_eq!(
            r.iter().map(|x| x.ways).collect::<Vec<_>>(),
            vec![2, 3, 4, 5]
        );
    }
}
