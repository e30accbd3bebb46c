//! Fixtures shared by the benchmarks.

use fewshot_core::synthetic::{gaussian_clusters, ClusterSpec};
use fewshot_core::{
    rng, sample_indices, ClassPool, EpisodeIndices, EpisodeSpec, FinetuneConfig, Head, HeadConfig,
    Method, Model, Provider,
};

pub struct Fixture {
    pub provider: Provider,
    pub pool: ClassPool,
    pub episode: EpisodeIndices,
}

/// A frozen store of 20 Gaussian clusters and one episode drawn from it.
pub fn fixture(dim: usize, spec: &EpisodeSpec) -> Fixture {
    let store = gaussian_clusters(&ClusterSpec {
        classes: 20,
        per_class: 30,
        dim,
        ..ClusterSpec::default()
    })
    .expect("cluster store");
    let pool = ClassPool::from_store(&store);
    let episode = sample_indices(&pool, spec, 7, None).expect("episode");
    Fixture {
        provider: Provider::Frozen(store),
        pool,
        episode,
    }
}

/// An untrained model for `method` with its default settings.
pub fn model(method: Method, dim: usize) -> Model {
    let head = Head::new(HeadConfig::new(method), dim, &mut rng::seeded(1)).expect("head");
    Model {
        head,
        finetune: FinetuneConfig::default(),
    }
}
