//! Few-shot classification heads.
//!
//! Every head maps an episode (support, query, optional unlabeled vectors)
//! to a `[queries, classes]` score matrix. Each one has a graph-level
//! forward, used for training and for batched evaluation, and a plain
//! tensor entry point that wraps it with constant inputs.
//!
//! Support vectors are always laid out class-major as a `[C·K, d]` matrix:
//! row `c·K + k` is the `k`-th shot of class `c`.

pub mod baseline;
pub mod induction;
pub mod matching;
pub mod proto;
pub mod relation;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::metric::{MetricKind, COSINE_SCALE};
use crate::tensor::{argmax, Tensor};

pub use baseline::BaselineParams;
pub use induction::InductionParams;
pub use relation::{NtlParams, RelationBaseParams};

#[derive(Clone, Debug, PartialEq)]
pub struct SupportSet {
    vectors: Tensor,
    class_names: Vec<String>,
}

impl SupportSet {
    /// `classes[c][k]` is the `k`-th support vector of class `c`.
    pub fn new(classes: &[Vec<Vec<f64>>], class_names: Vec<String>) -> Result<Self> {
        let ways = classes.len();
        if ways < 2 {
            return Err(Error::Argument(format!(
                "support needs at least 2 classes, got {ways}"
            )));
        }
        if class_names.len() != ways {
            return Err(Error::Argument(format!(
                "{} class names for {ways} classes",
                class_names.len()
            )));
        }
        let shots = classes[0].len();
        if shots == 0 {
            return Err(Error::Argument("support needs at least one shot".into()));
        }
        if let Some(c) = classes.iter().position(|c| c.len() != shots) {
            return Err(Error::Argument(format!(
                "class {c} has {} shots, expected {shots}",
                classes[c].len()
            )));
        }
        let rows: Vec<&Vec<f64>> = classes.iter().flatten().collect();
        let dim = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            if r.len() != dim {
                return Err(Error::shape("support", &[dim], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            vectors: Tensor::new(vec![ways, shots, dim], data)?,
            class_names,
        })
    }

    /// Builds a support set from a class-major `[C·K, d]` matrix.
    pub fn from_matrix(m: &Tensor, ways: usize, shots: usize) -> Result<Self> {
        let (rows, dim) = m.rows_cols();
        if rows != ways * shots || ways < 2 || shots == 0 {
            return Err(Error::shape("support", m.shape(), &[ways * shots, dim]));
        }
        Ok(Self {
            vectors: Tensor::new(vec![ways, shots, dim], m.data().to_vec())?,
            class_names: (0..ways).map(|c| format!("class-{c}")).collect(),
        })
    }

    pub fn ways(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn shots(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[2]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn vector(&self, class: usize, shot: usize) -> &[f64] {
        let (k, d) = (self.shots(), self.dim());
        let start = (class * k + shot) * d;
        &self.vectors.data()[start..start + d]
    }

    /// The class-major `[C·K, d]` view.
    pub fn as_matrix(&self) -> Tensor {
        Tensor::new(
            vec![self.ways() * self.shots(), self.dim()],
            self.vectors.data().to_vec(),
        )
        .expect("support matrix")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    vectors: Tensor,
    labels: Option<Vec<usize>>,
}

impl QuerySet {
    pub fn new(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Argument("empty query set".into()));
        }
        Self::from_matrix(Tensor::from_rows(rows)?, labels)
    }

    pub fn from_matrix(vectors: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if vectors.shape().len() != 2 {
            return Err(Error::shape("query", vectors.shape(), &[0, 0]));
        }
        if let Some(l) = &labels {
            if l.len() != vectors.shape()[0] {
                return Err(Error::Argument(format!(
                    "{} labels for {} queries",
                    l.len(),
                    vectors.shape()[0]
                )));
            }
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSet {
    vectors: Option<Tensor>,
}

impl UnlabeledSet {
    pub fn empty() -> Self {
        Self { vectors: None }
    }

    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Ok(Self::empty());
        }
        Ok(Self {
            vectors: Some(Tensor::from_rows(rows)?),
        })
    }

    pub fn from_matrix(vectors: Option<Tensor>) -> Self {
        Self { vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.as_ref().map_or(0, |v| v.shape()[0])
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectors(&self) -> Option<&Tensor> {
        self.vectors.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Tensor,
    pub refined: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Tensor,
    pub normalized: bool,
}

impl ScoreMatrix {
    pub fn rows(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.scores.row(i)
    }

    /// Per-row argmax, lowest class index on ties.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| argmax(self.row(i))).collect()
    }
}

/// Episode tensors already placed on a graph.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeVars {
    /// `[C·K, d]`, class-major.
    pub support: Var,
    /// `[N, d]`.
    pub query: Var,
    /// `[U, d]` when present.
    pub unlabeled: Option<Var>,
    pub ways: usize,
    pub shots: usize,
}

/// Output of a head's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// Raw per-(query, class) score before normalisation: similarity,
    /// squared distance, or relation score depending on the head.
    pub raw: Var,
    /// Softmax logits; probabilities are `softmax_rows(logits)`.
    pub logits: Var,
    /// Relation-module heads whose raw score is an unbounded learned value.
    pub relation: bool,
}

impl EpisodeVars {
    /// Places plain episode tensors on the graph as constants.
    pub fn constants(
        g: &mut Graph,
        support: &SupportSet,
        query: &QuerySet,
        unlabeled: Option<&UnlabeledSet>,
    ) -> Result<Self> {
        if support.dim() != query.dim() {
            return Err(Error::shape("episode", &[support.dim()], &[query.dim()]));
        }
        let s = g.constant(&support.as_matrix());
        let q = g.constant(query.vectors());
        let u = unlabeled
            .and_then(UnlabeledSet::vectors)
            .map(|t| g.constant(t));
        Ok(Self {
            support: s,
            query: q,
            unlabeled: u,
            ways: support.ways(),
            shots: support.shots(),
        })
    }
}

/// Row-softmax of `logits` read back as a normalised score matrix.
pub fn probabilities(g: &mut Graph, logits: Var) -> ScoreMatrix {
    let p = g.softmax_rows(logits);
    ScoreMatrix {
        scores: g.tensor(p),
        normalized: true,
    }
}

/// Learnable tensors of a head, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// Places every tensor on the graph in [`Parameters::tensors`] order.
    fn bind_all(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t) } else { g.constant(t) })
            .collect()
    }

    /// Adds the gradients of vars returned by [`Parameters::bind_all`].
    fn absorb(&mut self, vars: &[Var], grads: &Gradients) {
        for (t, v) in self.tensors_mut().into_iter().zip(vars) {
            grads.accumulate_into(*v, t);
        }
    }
}

/// `[C, C·K]` matrix whose product with class-major rows averages each
/// class block.
pub fn class_average_matrix(ways: usize, shots: usize) -> Tensor {
    let mut data = vec![0.0; ways * ways * shots];
    let w = 1.0 / shots as f64;
    for c in 0..ways {
        for k in 0..shots {
            data[c * ways * shots + c * shots + k] = w;
        }
    }
    Tensor::new(vec![ways, ways * shots], data).expect("average matrix")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Matching,
    Proto,
    ProtoPlusPlus,
    RelationBase,
    RelationNtl,
    Induction,
    Baseline,
    BaselinePlusPlus,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Matching,
        Method::Proto,
        Method::ProtoPlusPlus,
        Method::RelationBase,
        Method::RelationNtl,
        Method::Induction,
        Method::Baseline,
        Method::BaselinePlusPlus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Matching => "matching",
            Method::Proto => "proto",
            Method::ProtoPlusPlus => "protopp",
            Method::RelationBase => "relation-base",
            Method::RelationNtl => "relation-ntl",
            Method::Induction => "induction",
            Method::Baseline => "baseline",
            Method::BaselinePlusPlus => "baselinepp",
        }
    }

    /// Display name used as a row label in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Matching => "Matching",
            Method::Proto => "Proto",
            Method::ProtoPlusPlus => "Proto++",
            Method::RelationBase | Method::RelationNtl => "Relation",
            Method::Induction => "Induction",
            Method::Baseline => "Baseline",
            Method::BaselinePlusPlus => "Baseline++",
        }
    }

    pub fn takes_metric(self) -> bool {
        matches!(
            self,
            Method::Matching | Method::Proto | Method::ProtoPlusPlus | Method::BaselinePlusPlus
        )
    }

    /// The relation module implied by the method, if it uses one.
    pub fn relation_module(self) -> Option<RelationModule> {
        match self {
            Method::RelationBase => Some(RelationModule::Base),
            Method::RelationNtl | Method::Induction => Some(RelationModule::Ntl),
            _ => None,
        }
    }

    /// Metric used by the original formulation of the method.
    pub fn default_metric(self) -> Option<MetricKind> {
        match self {
            Method::Matching | Method::BaselinePlusPlus => Some(MetricKind::Cosine),
            Method::Proto | Method::ProtoPlusPlus => Some(MetricKind::Euclidean),
            _ => None,
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::Baseline | Method::BaselinePlusPlus)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .or(match s {
                "proto++" => Some(Method::ProtoPlusPlus),
                "baseline++" => Some(Method::BaselinePlusPlus),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationModule {
    Base,
    Ntl,
}

impl RelationModule {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationModule::Base => "base",
            RelationModule::Ntl => "ntl",
        }
    }
}

impl std::fmt::Display for RelationModule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RelationModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Self::Base),
            "ntl" => Ok(Self::Ntl),
            other => Err(Error::Config(format!("unknown relation module `{other}`"))),
        }
    }
}

/// Per-head hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub method: Method,
    /// Resolved metric for metric-based methods, `None` otherwise.
    pub metric: Option<MetricKind>,
    pub cosine_scale: f64,
    /// Number of bilinear slices in the neural tensor layer.
    pub ntl_slices: usize,
    /// Hidden width of the feed-forward relation module; `None` means `d`.
    pub relation_hidden: Option<usize>,
    pub routing_iters: usize,
    pub refine_passes: usize,
}

impl HeadConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            metric: method.default_metric(),
            cosine_scale: COSINE_SCALE,
            ntl_slices: 100,
            relation_hidden: None,
            routing_iters: 3,
            refine_passes: 1,
        }
    }

    pub fn with_metric(mut self, metric: MetricKind) -> Self {
        self.metric = Some(metric);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.method;
        match (m.takes_metric(), self.metric) {
            (true, None) => return Err(Error::Config(format!("{} requires a metric", m.label()))),
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "{} takes {}, not a metric",
                    m.label(),
                    if m.relation_module().is_some() {
                        "a relation module"
                    } else {
                        "no configuration"
                    }
                )))
            }
            _ => {}
        }
        if self.ntl_slices == 0 || self.routing_iters == 0 {
            return Err(Error::Config(
                "ntl_slices and routing_iters must be at least 1".into(),
            ));
        }
        if self.relation_hidden == Some(0) {
            return Err(Error::Config(
                "relation hidden width must be positive".into(),
            ));
        }
        if !(self.cosine_scale > 0.0) {
            return Err(Error::Config("cosine scale must be positive".into()));
        }
        Ok(())
    }

    fn metric_or_err(&self) -> Result<MetricKind> {
        self.metric
            .ok_or_else(|| Error::Config(format!("{} requires a metric", self.method.label())))
    }
}

/// Persistent learnable state of a head. Baselines re-initialise their
/// classifier every episode, so they carry nothing here.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadParams {
    None,
    RelationBase(RelationBaseParams),
    Ntl(NtlParams),
    Induction(InductionParams),
}

impl HeadParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            HeadParams::None => Vec::new(),
            HeadParams::RelationBase(p) => p.tensors(),
            HeadParams::Ntl(p) => p.tensors(),
            HeadParams::Induction(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            HeadParams::None => Vec::new(),
            HeadParams::RelationBase(p) => p.tensors_mut(),
            HeadParams::Ntl(p) => p.tensors_mut(),
            HeadParams::Induction(p) => p.tensors_mut(),
        }
    }
}

/// Graph handles for [`HeadParams`].
#[derive(Clone, Debug)]
pub struct BoundHead {
    pub vars: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub config: HeadConfig,
    pub params: HeadParams,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(config: HeadConfig, dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = match config.method {
            Method::RelationBase => HeadParams::RelationBase(RelationBaseParams::init(
                dim,
                config.relation_hidden.unwrap_or(dim),
                rng,
            )),
            Method::RelationNtl => HeadParams::Ntl(NtlParams::init(dim, config.ntl_slices, rng)),
            Method::Induction => HeadParams::Induction(InductionParams::init(
                dim,
                config.ntl_slices,
                config.routing_iters,
                rng,
            )?),
            _ => HeadParams::None,
        };
        Ok(Self { config, params })
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn is_parametric(&self) -> bool {
        !matches!(self.params, HeadParams::None)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundHead {
        let vars = self
            .params
            .tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t) } else { g.constant(t) })
            .collect();
        BoundHead { vars }
    }

    pub fn absorb(&mut self, bound: &BoundHead, grads: &Gradients) {
        for (t, v) in self.params.tensors_mut().into_iter().zip(&bound.vars) {
            grads.accumulate_into(*v, t);
        }
    }

    /// Episode forward pass for every non-baseline head.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundHead,
        ep: &EpisodeVars,
    ) -> Result<HeadOutput> {
        let cfg = &self.config;
        match (&self.params, cfg.method) {
            (HeadParams::None, Method::Matching) => {
                matching::forward(g, ep, cfg.metric_or_err()?, cfg.cosine_scale)
            }
            (HeadParams::None, Method::Proto) => {
                let p = proto::prototypes(g, ep.support, ep.ways, ep.shots)?;
                proto::forward(g, p, ep.query, cfg.metric_or_err()?, cfg.cosine_scale)
            }
            (HeadParams::None, Method::ProtoPlusPlus) => {
                let kind = cfg.metric_or_err()?;
                let mut p = proto::prototypes(g, ep.support, ep.ways, ep.shots)?;
                if let Some(u) = ep.unlabeled {
                    p = proto::refine(
                        g,
                        p,
                        ep.support,
                        u,
                        ep.ways,
                        ep.shots,
                        kind,
                        cfg.cosine_scale,
                        cfg.refine_passes,
                    )?;
                }
                proto::forward(g, p, ep.query, kind, cfg.cosine_scale)
            }
            (HeadParams::RelationBase(_), _) => {
                let vars = relation::RelationBaseVars::from_slice(&bound.vars);
                let p = proto::prototypes(g, ep.support, ep.ways, ep.shots)?;
                let raw = relation::relation_base_forward(g, &vars, ep.query, p)?;
                Ok(HeadOutput {
                    raw,
                    logits: raw,
                    relation: true,
                })
            }
            (HeadParams::Ntl(_), _) => {
                let vars = relation::NtlVars::from_slice(&bound.vars);
                let p = proto::prototypes(g, ep.support, ep.ways, ep.shots)?;
                let raw = relation::ntl_forward(g, &vars, ep.query, p)?;
                Ok(HeadOutput {
                    raw,
                    logits: raw,
                    relation: true,
                })
            }
            (HeadParams::Induction(params), _) => {
                let vars = induction::InductionVars::from_slice(&bound.vars);
                let routed = induction::induce(
                    g,
                    vars.ws,
                    ep.support,
                    ep.ways,
                    ep.shots,
                    params.routing_iters,
                )?;
                let raw = relation::ntl_forward(g, &vars.ntl, ep.query, routed.prototypes)?;
                Ok(HeadOutput {
                    raw,
                    logits: raw,
                    relation: true,
                })
            }
            (_, m) => Err(Error::Config(format!(
                "{} is scored through the baseline fine-tuning path",
                m.label()
            ))),
        }
    }
}
