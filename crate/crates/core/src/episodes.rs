//! C-way K-shot episode sampling over disjoint class partitions, and the
//! binary review tasks built from (category, star threshold) pairs.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use log::warn;
use rand::seq::{index, SliceRandom};

use crate::data::Document;
use crate::embedding::{group_by_label, EmbeddingRecord, EmbeddingStore};
use crate::error::{Error, Result};
use crate::heads::{QuerySet, SupportSet, UnlabeledSet};
use crate::rng;

/// Shape of one episode: `ways` classes (C), `shots` support (K) and
/// `queries` query (Q) samples per class, `unlabeled` extra points (U).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub unlabeled: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn new(ways: usize, shots: usize, queries: usize) -> Self {
        Self {
            ways,
            shots,
            queries,
            unlabeled: 0,
            seed: 0,
        }
    }

    pub fn with_unlabeled(mut self, u: usize) -> Self {
        self.unlabeled = u;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 || self.shots < 1 || self.queries < 1 {
            return Err(Error::Config(format!(
                "episodes need C >= 2, K >= 1, Q >= 1; got C={}, K={}, Q={}",
                self.ways, self.shots, self.queries
            )));
        }
        Ok(())
    }

    pub fn per_class(&self) -> usize {
        self.shots + self.queries
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = Self { train, valid, test };
        let parts = [train, valid, test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split ratios must lie in [0, 1] and sum to 1, got {train}/{valid}/{test}"
            )));
        }
        Ok(r)
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = Error;

    /// `train/valid/test`, as fractions or percentages (`50/0/50`).
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split('/')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad split ratios `{s}`")))?;
        let [a, b, c] = parts[..] else {
            return Err(Error::Config(format!(
                "split ratios need three parts, got `{s}`"
            )));
        };
        let total = a + b + c;
        if total <= 0.0 {
            return Err(Error::Config(format!("bad split ratios `{s}`")));
        }
        if (total - 1.0).abs() > 1e-9 && (total - 100.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios `{s}` must sum to 1 or 100"
            )));
        }
        SplitRatios::new(a / total, b / total, c / total)
    }
}

/// Disjoint class partitions, each sorted by name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl ClassSplit {
    pub fn check_disjoint(&self) -> Result<()> {
        let parts = [
            ("train", &self.train),
            ("valid", &self.valid),
            ("test", &self.test),
        ];
        for (i, (na, a)) in parts.iter().enumerate() {
            let a: HashSet<&String> = a.iter().collect();
            for (nb, b) in &parts[i + 1..] {
                if let Some(c) = b.iter().find(|c| a.contains(c)) {
                    return Err(Error::Protocol(format!(
                        "class `{c}` is in both {na} and {nb} partitions"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Partitions the classes of `sizes` (class name → sample count).
///
/// Classes with fewer than `min_samples` samples are dropped with a
/// warning. The test partition must end up with at least `min_test`
/// classes and the train partition must be non-empty when its ratio is.
pub fn split_classes(
    sizes: &BTreeMap<String, usize>,
    ratios: SplitRatios,
    min_samples: usize,
    min_test: usize,
    seed: u64,
) -> Result<ClassSplit> {
    let (mut kept, dropped): (Vec<&String>, Vec<&String>) =
        sizes.keys().partition(|c| sizes[*c] >= min_samples);
    for c in &dropped {
        warn!(
            "dropping class `{c}`: {} samples, need {min_samples}",
            sizes[*c]
        );
    }
    let n = kept.len();
    let n_test = (n as f64 * ratios.test).round() as usize;
    let n_valid = ((n as f64 * ratios.valid).round() as usize).min(n - n_test.min(n));
    let n_train = n.saturating_sub(n_test + n_valid);
    let shortfall = |what: String| {
        Error::Config(format!(
            "{what}; {n} classes have at least {min_samples} samples ({} dropped)",
            dropped.len()
        ))
    };
    if n_test < min_test.max(1) {
        return Err(shortfall(format!(
            "test partition would have {n_test} classes, need at least {}",
            min_test.max(1)
        )));
    }
    if ratios.train > 0.0 && n_train == 0 {
        return Err(shortfall("train partition would be empty".into()));
    }
    if ratios.valid > 0.0 && n_valid == 0 {
        return Err(shortfall("validation partition would be empty".into()));
    }
    let mut r = rng::seeded(seed);
    kept.shuffle(&mut r);
    let take = |s: &[&String]| {
        let mut v: Vec<String> = s.iter().map(|c| c.to_string()).collect();
        v.sort();
        v
    };
    Ok(ClassSplit {
        train: take(&kept[..n_train]),
        valid: take(&kept[n_train..n_train + n_valid]),
        test: take(&kept[n_train + n_valid..]),
    })
}

/// Item indices grouped by class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassPool {
    classes: BTreeMap<String, Vec<usize>>,
}

impl ClassPool {
    pub fn new(classes: BTreeMap<String, Vec<usize>>) -> Self {
        Self { classes }
    }

    pub fn from_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Self {
        Self::new(group_by_label(labels))
    }

    pub fn from_store(store: &EmbeddingStore) -> Self {
        Self::new(store.by_label())
    }

    /// The sub-pool over `partition`; every class must exist.
    pub fn restrict(&self, partition: &[String]) -> Result<Self> {
        let mut classes = BTreeMap::new();
        for c in partition {
            let members = self
                .classes
                .get(c)
                .ok_or_else(|| Error::Sampling(format!("class `{c}` has no samples")))?;
            classes.insert(c.clone(), members.clone());
        }
        Ok(Self { classes })
    }

    pub fn class_names(&self) -> Vec<&String> {
        self.classes.keys().collect()
    }

    pub fn members(&self, class: &str) -> Option<&[usize]> {
        self.classes.get(class).map(Vec::as_slice)
    }

    pub fn sizes(&self) -> BTreeMap<String, usize> {
        self.classes
            .iter()
            .map(|(c, m)| (c.clone(), m.len()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Support ids pinned per class for fixed-shot evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedSupport {
    pub shots: BTreeMap<String, Vec<usize>>,
}

impl FixedSupport {
    /// Draws `shots` support items per class once, from `seed`.
    pub fn draw(pool: &ClassPool, shots: usize, seed: u64) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (c, members) in &pool.classes {
            if members.len() < shots {
                return Err(Error::Sampling(format!(
                    "class `{c}` has {} samples, fixed support needs {shots}",
                    members.len()
                )));
            }
            let mut r = rng::seeded(rng::derive(seed, rng::label_key(c)));
            let picked = index::sample(&mut r, members.len(), shots)
                .into_iter()
                .map(|i| members[i])
                .collect();
            out.insert(c.clone(), picked);
        }
        Ok(Self { shots: out })
    }
}

/// Sampled item indices of one episode, class-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodeIndices {
    pub classes: Vec<String>,
    /// `support[c]` holds the K items of class `c`.
    pub support: Vec<Vec<usize>>,
    pub query: Vec<Vec<usize>>,
    pub unlabeled: Vec<usize>,
}

impl EpisodeIndices {
    pub fn support_flat(&self) -> Vec<usize> {
        self.support.concat()
    }

    pub fn query_flat(&self) -> Vec<usize> {
        self.query.concat()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query
            .iter()
            .enumerate()
            .flat_map(|(c, q)| std::iter::repeat_n(c, q.len()))
            .collect()
    }

    /// Errors if any item appears twice across support, query, unlabeled.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for i in self
            .support_flat()
            .into_iter()
            .chain(self.query_flat())
            .chain(self.unlabeled.iter().copied())
        {
            if !seen.insert(i) {
                return Err(Error::Protocol(format!(
                    "item {i} appears twice in one episode"
                )));
            }
        }
        Ok(())
    }
}

/// Draws one episode from `pool`. Classes are chosen uniformly without
/// replacement; each class contributes K support and Q query items, and
/// the unlabeled points come from the leftover items of the chosen
/// classes. With `fixed`, support items are the pinned ones and queries
/// are drawn from the rest of the class.
pub fn sample_indices(
    pool: &ClassPool,
    spec: &EpisodeSpec,
    seed: u64,
    fixed: Option<&FixedSupport>,
) -> Result<EpisodeIndices> {
    spec.validate()?;
    if pool.len() < spec.ways {
        return Err(Error::Sampling(format!(
            "{}-way episodes need {} classes, partition has {}",
            spec.ways,
            spec.ways,
            pool.len()
        )));
    }
    let mut r = rng::seeded(seed);
    let names = pool.class_names();
    let chosen: Vec<&String> = index::sample(&mut r, names.len(), spec.ways)
        .into_iter()
        .map(|i| names[i])
        .collect();
    let (mut support, mut query, mut leftover) = (Vec::new(), Vec::new(), Vec::new());
    for c in &chosen {
        let members = &pool.classes[*c];
        let pinned = match fixed {
            Some(f) => Some(
                f.shots
                    .get(*c)
                    .ok_or_else(|| Error::Sampling(format!("class `{c}` has no fixed support")))?,
            ),
            None => None,
        };
        let available: Vec<usize> = match pinned {
            Some(p) => members.iter().copied().filter(|i| !p.contains(i)).collect(),
            None => members.clone(),
        };
        let need = if pinned.is_some() {
            spec.queries
        } else {
            spec.per_class()
        };
        if available.len() < need {
            return Err(Error::Sampling(format!(
                "class `{c}` has {} samples, episode needs {}",
                members.len(),
                spec.per_class()
            )));
        }
        let mut order: Vec<usize> = index::sample(&mut r, available.len(), available.len())
            .into_iter()
            .map(|i| available[i])
            .collect();
        let rest = order.split_off(need);
        match pinned {
            Some(p) => {
                support.push(p.clone());
                query.push(order);
            }
            None => {
                let q = order.split_off(spec.shots);
                support.push(order);
                query.push(q);
            }
        }
        leftover.extend(rest);
    }
    if leftover.len() < spec.unlabeled {
        return Err(Error::Sampling(format!(
            "{} unlabeled points requested, only {} left in the episode's classes",
            spec.unlabeled,
            leftover.len()
        )));
    }
    leftover.sort_unstable();
    let unlabeled = index::sample(&mut r, leftover.len(), spec.unlabeled)
        .into_iter()
        .map(|i| leftover[i])
        .collect();
    Ok(EpisodeIndices {
        classes: chosen.into_iter().cloned().collect(),
        support,
        query,
        unlabeled,
    })
}

/// A sampled episode with vectors resolved against a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub support: SupportSet,
    pub query: QuerySet,
    pub unlabeled: UnlabeledSet,
    pub class_names: Vec<String>,
    pub indices: EpisodeIndices,
}

impl Episode {
    pub fn materialize(store: &EmbeddingStore, indices: EpisodeIndices) -> Result<Self> {
        let classes: Vec<Vec<Vec<f64>>> = indices
            .support
            .iter()
            .map(|s| s.iter().map(|&i| store.get(i).vector.clone()).collect())
            .collect();
        let support = SupportSet::new(&classes, indices.classes.clone())?;
        let query = QuerySet::from_matrix(
            store.matrix(&indices.query_flat())?,
            Some(indices.query_labels()),
        )?;
        let unlabeled = if indices.unlabeled.is_empty() {
            UnlabeledSet::empty()
        } else {
            UnlabeledSet::from_matrix(Some(store.matrix(&indices.unlabeled)?))
        };
        Ok(Self {
            support,
            query,
            unlabeled,
            class_names: indices.classes.clone(),
            indices,
        })
    }
}

/// Samples an episode from the classes of `partition`, seeded by `spec.seed`.
pub fn sample_episode(
    partition: &[String],
    store: &EmbeddingStore,
    spec: &EpisodeSpec,
) -> Result<Episode> {
    let pool = ClassPool::from_store(store).restrict(partition)?;
    let idx = sample_indices(&pool, spec, spec.seed, None)?;
    Episode::materialize(store, idx)
}

/// Star thresholds of the binary review tasks.
pub const ARSC_THRESHOLDS: [u8; 3] = [2, 4, 5];

pub const NEGATIVE: &str = "negative";
pub const POSITIVE: &str = "positive";

/// Reviews of one category labelled positive when `stars >= threshold`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryTaskSpec {
    pub category: String,
    pub threshold: u8,
}

impl BinaryTaskSpec {
    pub fn new(category: impl Into<String>, threshold: u8) -> Result<Self> {
        if !ARSC_THRESHOLDS.contains(&threshold) {
            return Err(Error::Config(format!(
                "threshold {threshold} is not one of {ARSC_THRESHOLDS:?}"
            )));
        }
        Ok(Self {
            category: category.into(),
            threshold,
        })
    }

    pub fn label(&self, stars: u8) -> &'static str {
        if stars >= self.threshold {
            POSITIVE
        } else {
            NEGATIVE
        }
    }

    /// `category.t<threshold>`, e.g. `books.t4`.
    pub fn name(&self) -> String {
        format!("{}.t{}", self.category, self.threshold)
    }
}

/// A binary task: the selected documents and their binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryTask {
    pub spec: BinaryTaskSpec,
    /// Indices into the documents passed to [`build_arsc_tasks`].
    pub docs: Vec<usize>,
    pub labels: Vec<&'static str>,
}

impl BinaryTask {
    /// `(negative, positive)` counts.
    pub fn counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| **l == POSITIVE).count();
        (self.labels.len() - pos, pos)
    }

    /// The task as a store, with vectors looked up by document id in
    /// `vectors` and labels replaced by the binary label.
    pub fn store(
        &self,
        documents: &[Document],
        vectors: &EmbeddingStore,
    ) -> Result<EmbeddingStore> {
        let mut out = EmbeddingStore::new(vectors.dim())?;
        for (&d, &label) in self.docs.iter().zip(&self.labels) {
            let id = &documents[d].id;
            let i = vectors
                .index_of(id)
                .ok_or_else(|| Error::Sampling(format!("document `{id}` has no embedding")))?;
            out.push(EmbeddingRecord {
                id: id.clone(),
                label: label.to_string(),
                vector: vectors.get(i).vector.clone(),
            })?;
        }
        Ok(out)
    }
}

/// One task per (category, threshold), in the given order.
pub fn build_arsc_tasks(
    documents: &[Document],
    categories: &[String],
    thresholds: &[u8],
) -> Result<Vec<BinaryTask>> {
    let known: BTreeSet<&str> = documents
        .iter()
        .filter_map(|d| d.category.as_deref())
        .collect();
    let mut tasks = Vec::with_capacity(categories.len() * thresholds.len());
    for cat in categories {
        if !known.contains(cat.as_str()) {
            return Err(Error::Config(format!(
                "unknown category `{cat}`; known categories: {}",
                known.iter().copied().collect::<Vec<_>>().join(", ")
            )));
        }
        for &t in thresholds {
            let spec = BinaryTaskSpec::new(cat.clone(), t)?;
            let mut docs = Vec::new();
            let mut labels = Vec::new();
            for (i, d) in documents.iter().enumerate() {
                if d.category.as_deref() != Some(cat.as_str()) {
                    continue;
                }
                let stars = d.stars.ok_or_else(|| {
                    Error::Config(format!("review `{}` in `{cat}` has no stars", d.id))
                })?;
                docs.push(i);
                labels.push(spec.label(stars));
            }
            tasks.push(BinaryTask { spec, docs, labels });
        }
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(n: usize, each: usize) -> BTreeMap<String, usize> {
        (0..n).map(|i| (format!("c{i:02}"), each)).collect()
    }

    fn store(classes: usize, each: usize) -> EmbeddingStore {
        let recs = (0..classes * each)
            .map(|i| EmbeddingRecord {
                id: format!("r{i}"),
                label: format!("c{:02}", i / each),
                vector: vec![i as f64, 1.0],
            })
            .collect();
        EmbeddingStore::from_records(2, recs).unwrap()
    }

    #[test]
    fn ten_classes_half_and_half() {
        let r = SplitRatios::new(0.5, 0.0, 0.5).unwrap();
        let s = split_classes(&sizes(10, 20), r, 10, 5, 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (5, 0, 5));
        s.check_disjoint().unwrap();
        assert_eq!(s, split_classes(&sizes(10, 20), r, 10, 5, 1).unwrap());
    }

    #[test]
    fn one_fifty_classes_support_fifty_way_test() {
        let r = SplitRatios::new(2.0 / 3.0, 0.0, 1.0 / 3.0).unwrap();
        let s = split_classes(&sizes(150, 10), r, 10, 50, 4).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (100, 50));
    }

    #[test]
    fn small_classes_are_dropped_and_shortfall_is_named() {
        let mut m = sizes(6, 10);
        m.insert("tiny".into(), 3);
        let r = "50/0/50".parse::<SplitRatios>().unwrap();
        let s = split_classes(&m, r, 10, 2, 0).unwrap();
        assert!(!s.train.contains(&"tiny".to_string()) && !s.test.contains(&"tiny".to_string()));
        let err = split_classes(&m, r, 10, 5, 0).unwrap_err().to_string();
        assert!(
            err.contains("test partition would have 3 classes, need at least 5"),
            "{err}"
        );
        assert!(err.contains("1 dropped"), "{err}");
    }

    #[test]
    fn exact_fit_episode_uses_every_sample() {
        let st = store(2, 10);
        let spec = EpisodeSpec::new(2, 5, 5).with_seed(3);
        let ep = sample_episode(&["c00".into(), "c01".into()], &st, &spec).unwrap();
        let mut all = ep.indices.support_flat();
        all.extend(ep.indices.query_flat());
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        ep.indices.check_disjoint().unwrap();
        assert_eq!(
            ep,
            sample_episode(&["c00".into(), "c01".into()], &st, &spec).unwrap()
        );
    }

    #[test]
    fn materialized_vectors_follow_indices() {
        let st = store(4, 12);
        let pool = ClassPool::from_store(&st);
        let idx =
            sample_indices(&pool, &EpisodeSpec::new(3, 2, 2).with_unlabeled(4), 9, None).unwrap();
        let ep = Episode::materialize(&st, idx.clone()).unwrap();
        for (c, shots) in idx.support.iter().enumerate() {
            for (k, &i) in shots.iter().enumerate() {
                assert_eq!(ep.support.vector(c, k), st.get(i).vector.as_slice());
                assert_eq!(st.get(i).label, ep.class_names[c]);
            }
        }
        assert_eq!(ep.query.labels().unwrap(), &[0, 0, 1, 1, 2, 2]);
        assert_eq!(ep.unlabeled.len(), 4);
        for &u in &idx.unlabeled {
            assert!(idx.classes.contains(&st.get(u).label));
        }
    }

    #[test]
    fn insufficient_class_is_named() {
        let mut st = store(2, 10);
        st.push(EmbeddingRecord {
            id: "x".into(),
            label: "small".into(),
            vector: vec![0.0, 0.0],
        })
        .unwrap();
        let pool = ClassPool::from_store(&st)
            .restrict(&["small".into(), "c00".into()])
            .unwrap();
        let err = sample_indices(&pool, &EpisodeSpec::new(2, 1, 1), 0, None).unwrap_err();
        assert!(
            matches!(&err, Error::Sampling(m) if m.contains("`small`")),
            "{err}"
        );
    }

    #[test]
    fn fixed_support_is_reused() {
        let st = store(6, 15);
        let pool = ClassPool::from_store(&st);
        let fixed = FixedSupport::draw(&pool, 5, 11).unwrap();
        let spec = EpisodeSpec::new(3, 5, 5);
        for e in 0..50 {
            let idx = sample_indices(&pool, &spec, e, Some(&fixed)).unwrap();
            idx.check_disjoint().unwrap();
            for (c, s) in idx.classes.iter().zip(&idx.support) {
                assert_eq!(s, &fixed.shots[c]);
            }
        }
    }

    fn review(i: usize, cat: &str, stars: u8) -> Document {
        Document {
            id: format!("d{i}"),
            line: i + 1,
            text: "x".into(),
            label: cat.into(),
            category: Some(cat.into()),
            stars: Some(stars),
            vector: None,
        }
    }

    #[test]
    fn threshold_rule() {
        let t4 = BinaryTaskSpec::new("books", 4).unwrap();
        let t5 = BinaryTaskSpec::new("books", 5).unwrap();
        assert_eq!(t4.label(4), POSITIVE);
        assert_eq!(t5.label(4), NEGATIVE);
        assert!(BinaryTaskSpec::new("books", 3).is_err());
    }

    #[test]
    fn unknown_category_is_config_error() {
        let docs = vec![review(0, "books", 3)];
        let err = build_arsc_tasks(&docs, &["dvd".into()], &ARSC_THRESHOLDS).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn task_counts() {
        let docs: Vec<Document> = (0..30)
            .map(|i| review(i, ["books", "dvd"][i % 2], (i % 5) as u8 + 1))
            .collect();
        let tasks =
            build_arsc_tasks(&docs, &["books".into(), "dvd".into()], &ARSC_THRESHOLDS).unwrap();
        assert_eq!(tasks.len(), 6);
        for t in &tasks {
            let pos = docs
                .iter()
                .filter(|d| {
                    d.category.as_deref() == Some(t.spec.category.as_str())
                        && d.stars.unwrap() >= t.spec.threshold
                })
                .count();
            assert_eq!(t.counts(), (15 - pos, pos));
        }
    }
}
