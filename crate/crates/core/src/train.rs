//! Episodic training, baseline fine-tuning, and the two losses.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::episodes::{sample_indices, ClassPool, EpisodeSpec};
use crate::error::{Error, Result};
use crate::eval::{run_episodes, Model, ShotMode};
use crate::heads::baseline::{baseline_logits, baselinepp_logits, BaselineParams, BaselineVars};
use crate::heads::{Head, HeadConfig, HeadOutput, HeadParams, Method, Parameters, SupportSet};
use crate::metric::MetricKind;
use crate::optim::{self, OptimizerKind};
use crate::provider::Provider;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Ce,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Self::Ce),
            "mse" => Ok(Self::Mse),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ce => "ce",
            Self::Mse => "mse",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    /// Decoupled L2 shrinkage per step, scaled by `lr`.
    pub weight_decay: f64,
    /// Validation cadence in training episodes.
    pub validate_every: usize,
    pub valid_episodes: usize,
    /// Validations without improvement before stopping; `None` never stops.
    pub patience: Option<usize>,
    /// Ways of training episodes; `None` uses the evaluation spec's C.
    pub ways: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            lr: 1e-2,
            loss: LossKind::Ce,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            validate_every: 100,
            valid_episodes: 100,
            patience: None,
            ways: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("training needs at least one episode".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.validate_every == 0 || self.valid_episodes == 0 {
            return Err(Error::Config(
                "validation cadence and episode count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Classifier fine-tuning on the support set of each evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub iters: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            iters: 20,
            lr: 0.1,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

/// `−ln(probs[target])`, with the probability clamped at `1e-12`.
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(1e-12).ln()
}

/// Mean squared difference between `scores` and the one-hot `target`.
pub fn mse_loss(scores: &[f64], target: usize) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let t = if j == target { 1.0 } else { 0.0 };
            (s - t) * (s - t)
        })
        .sum::<f64>()
        / n
}

fn one_hot(labels: &[usize], ways: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * ways];
    for (i, &l) in labels.iter().enumerate() {
        data[i * ways + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), ways], data).expect("one-hot shape")
}

/// Mean CE over rows of `logits`.
pub fn ce_from_logits(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let ways = g.shape(logits)[1];
    let p = g.softmax_rows(logits);
    let lp = g.ln_clamped(p, 1e-12);
    let t = g.constant(&one_hot(labels, ways));
    let picked = g.mul(lp, t)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / labels.len() as f64))
}

/// Mean over queries of [`mse_loss`]; relation scores are squashed by a
/// sigmoid first, other heads use their softmax probabilities.
pub fn mse_from_output(g: &mut Graph, out: &HeadOutput, labels: &[usize]) -> Result<Var> {
    let ways = g.shape(out.logits)[1];
    let s = if out.relation {
        g.sigmoid(out.raw)
    } else {
        g.softmax_rows(out.logits)
    };
    let t = g.constant(&one_hot(labels, ways));
    let d = g.sub(s, t)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

pub fn episode_loss(
    g: &mut Graph,
    out: &HeadOutput,
    labels: &[usize],
    loss: LossKind,
) -> Result<Var> {
    match loss {
        LossKind::Ce => ce_from_logits(g, out.logits, labels),
        LossKind::Mse => mse_from_output(g, out, labels),
    }
}

fn baseline_graph_logits(
    g: &mut Graph,
    cfg: &HeadConfig,
    vars: &BaselineVars,
    x: Var,
) -> Result<Var> {
    match cfg.method {
        Method::BaselinePlusPlus => {
            let kind = cfg.metric.unwrap_or(MetricKind::Cosine);
            baselinepp_logits(g, vars, x, kind, cfg.cosine_scale)
        }
        _ => baseline_logits(g, vars, x),
    }
}

/// Freshly initialised classifier for `ways` classes.
pub fn init_baseline(cfg: &HeadConfig, ways: usize, dim: usize, seed: u64) -> BaselineParams {
    match cfg.method {
        Method::BaselinePlusPlus => BaselineParams::glorot(ways, dim, &mut rng::seeded(seed)),
        _ => BaselineParams::zeros(ways, dim),
    }
}

/// Re-initialises the classifier and fits it to fixed support vectors
/// with CE for `ft.iters` steps.
pub fn finetune_support(
    cfg: &HeadConfig,
    support: &SupportSet,
    ft: &FinetuneConfig,
    seed: u64,
) -> Result<BaselineParams> {
    let x = support.as_matrix();
    let labels: Vec<usize> = (0..support.ways())
        .flat_map(|c| std::iter::repeat_n(c, support.shots()))
        .collect();
    finetune_vectors(cfg, &x, &labels, support.ways(), ft, seed)
}

fn finetune_vectors(
    cfg: &HeadConfig,
    x: &Tensor,
    labels: &[usize],
    ways: usize,
    ft: &FinetuneConfig,
    seed: u64,
) -> Result<BaselineParams> {
    let mut params = init_baseline(cfg, ways, x.shape()[1], seed);
    if ft.iters == 0 {
        return Ok(params);
    }
    let mut opt = optim::build(ft.optimizer, ft.lr, 0.0)?;
    for it in 0..ft.iters {
        let mut g = Graph::new();
        let vars = params.bind_all(&mut g, true);
        let bv = BaselineVars::from_slice(&vars);
        let xv = g.constant(x);
        let z = baseline_graph_logits(&mut g, cfg, &bv, xv)?;
        let loss = ce_from_logits(&mut g, z, labels)?;
        check_finite(g.scalar(loss), ft.lr, it)?;
        let grads = g.backward(loss)?;
        params.absorb(&vars, &grads);
        let mut all = params.tensors_mut();
        opt.step(&mut all)?;
        check_params(&all, ft.lr, it)?;
    }
    Ok(params)
}

/// Fine-tunes a fresh classifier on the support items `support[c]` of
/// `provider`. With `freeze_encoder` false and a trainable provider the
/// encoder is updated too; otherwise it is left bit-identical.
pub fn finetune_baseline(
    cfg: &HeadConfig,
    provider: &mut Provider,
    support: &[Vec<usize>],
    ft: &FinetuneConfig,
    freeze_encoder: bool,
    seed: u64,
) -> Result<BaselineParams> {
    let ways = support.len();
    let rows: Vec<usize> = support.concat();
    let labels: Vec<usize> = support
        .iter()
        .enumerate()
        .flat_map(|(c, s)| std::iter::repeat_n(c, s.len()))
        .collect();
    if rows.is_empty() {
        return Err(Error::Argument(
            "fine-tuning needs a non-empty support set".into(),
        ));
    }
    if freeze_encoder || !provider.is_trainable() {
        let x = provider.matrix(&rows)?;
        return finetune_vectors(cfg, &x, &labels, ways, ft, seed);
    }
    let mut params = init_baseline(cfg, ways, provider.dim(), seed);
    let mut opt = optim::build(ft.optimizer, ft.lr, 0.0)?;
    for it in 0..ft.iters {
        let mut g = Graph::new();
        let pv = provider.bind(&mut g, true);
        let vars = params.bind_all(&mut g, true);
        let x = provider.rows(&mut g, &pv, &rows)?;
        let z = baseline_graph_logits(&mut g, cfg, &BaselineVars::from_slice(&vars), x)?;
        let loss = ce_from_logits(&mut g, z, &labels)?;
        check_finite(g.scalar(loss), ft.lr, it)?;
        let grads = g.backward(loss)?;
        params.absorb(&vars, &grads);
        provider.absorb(&pv, &grads);
        let mut all = params.tensors_mut();
        all.extend(provider.tensors_mut());
        opt.step(&mut all)?;
        check_params(&all, ft.lr, it)?;
    }
    Ok(params)
}

fn check_finite(loss: f64, lr: f64, episode: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "loss became {loss} at episode {episode} (lr {lr}); lower the learning rate"
        )));
    }
    Ok(())
}

fn check_params(params: &[&mut Tensor], lr: f64, episode: usize) -> Result<()> {
    if params.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric(format!(
            "parameters became non-finite at episode {episode} (lr {lr}); lower the learning rate"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Loss of every training episode, in order.
    pub losses: Vec<f64>,
    /// `(episode, accuracy)` of each validation.
    pub validations: Vec<(usize, f64)>,
    /// Episode count of the kept checkpoint, when validation ran.
    pub best_episode: Option<usize>,
    pub stopped_early: bool,
}

const TRAIN_STREAM: u64 = 11;
const VALID_STREAM: u64 = 12;

/// Episodic training over `pools` (one is drawn per episode; plain
/// datasets pass a single pool).
///
/// Non-parametric heads on a frozen store are returned untouched. With a
/// trainable provider the encoder learns alongside the head. Baselines
/// learn only through the encoder: each episode's items are classified
/// against a classifier over all training classes, which is discarded
/// afterwards.
#[allow(clippy::too_many_arguments)]
pub fn train_head(
    head: &mut Head,
    provider: &mut Provider,
    pools: &[ClassPool],
    valid: Option<&ClassPool>,
    spec: &EpisodeSpec,
    cfg: &TrainConfig,
    finetune: &FinetuneConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    if !head.is_parametric() && !provider.is_trainable() {
        debug!("{} has nothing to train on a frozen store", head.method());
        return Ok(report);
    }
    if pools.is_empty() {
        return Err(Error::Config(
            "training needs at least one class pool".into(),
        ));
    }
    let spec = EpisodeSpec {
        ways: cfg.ways.unwrap_or(spec.ways),
        ..*spec
    };
    let mut pretrain = if head.method().is_baseline() {
        let classes: Vec<String> = pools
            .iter()
            .flat_map(|p| p.class_names().into_iter().cloned())
            .collect();
        Some((
            init_baseline(
                &head.config,
                classes.len(),
                provider.dim(),
                rng::derive(seed, 3),
            ),
            classes,
        ))
    } else {
        None
    };
    let mut opt = optim::build(cfg.optimizer, cfg.lr, cfg.weight_decay)?;
    let mut best: Option<(f64, HeadParams, Provider)> = None;
    let mut since_best = 0;
    for e in 0..cfg.episodes {
        let es = rng::derive_path(seed, &[TRAIN_STREAM, e as u64]);
        let pool = &pools[(rng::derive(es, 0) % pools.len() as u64) as usize];
        let idx = sample_indices(pool, &spec, es, None)?;
        let mut g = Graph::new();
        let pv = provider.bind(&mut g, true);
        let loss = match &mut pretrain {
            Some((clf, classes)) => {
                let rows: Vec<usize> = idx
                    .support_flat()
                    .into_iter()
                    .chain(idx.query_flat())
                    .collect();
                let labels: Vec<usize> = idx
                    .support
                    .iter()
                    .chain(&idx.query)
                    .enumerate()
                    .flat_map(|(i, items)| {
                        let name = &idx.classes[i % idx.classes.len()];
                        let global = classes
                            .iter()
                            .position(|c| c == name)
                            .expect("class in pool");
                        std::iter::repeat_n(global, items.len())
                    })
                    .collect();
                let vars = clf.bind_all(&mut g, true);
                let x = provider.rows(&mut g, &pv, &rows)?;
                let z = baseline_graph_logits(
                    &mut g,
                    &head.config,
                    &BaselineVars::from_slice(&vars),
                    x,
                )?;
                let loss = ce_from_logits(&mut g, z, &labels)?;
                check_finite(g.scalar(loss), cfg.lr, e)?;
                let grads = g.backward(loss)?;
                clf.absorb(&vars, &grads);
                provider.absorb(&pv, &grads);
                let mut all = clf.tensors_mut();
                all.extend(provider.tensors_mut());
                opt.step(&mut all)?;
                check_params(&all, cfg.lr, e)?;
                g.scalar(loss)
            }
            None => {
                let bound = head.bind(&mut g, true);
                let ep = provider.episode(&mut g, &pv, &idx)?;
                let out = head.forward(&mut g, &bound, &ep)?;
                let loss = episode_loss(&mut g, &out, &idx.query_labels(), cfg.loss)?;
                check_finite(g.scalar(loss), cfg.lr, e)?;
                let grads = g.backward(loss)?;
                head.absorb(&bound, &grads);
                provider.absorb(&pv, &grads);
                let mut all = head.params.tensors_mut();
                all.extend(provider.tensors_mut());
                opt.step(&mut all)?;
                check_params(&all, cfg.lr, e)?;
                g.scalar(loss)
            }
        };
        report.losses.push(loss);

        let done = e + 1;
        if let Some(vp) = valid {
            if done % cfg.validate_every == 0 || done == cfg.episodes {
                let model = Model {
                    head: head.clone(),
                    finetune: finetune.clone(),
                };
                let t = run_episodes(
                    &model,
                    provider,
                    vp,
                    &spec,
                    cfg.valid_episodes,
                    ShotMode::Resampled,
                    rng::derive(seed, VALID_STREAM),
                    1,
                )?;
                let acc = t.accuracy();
                info!("episode {done}: loss {loss:.4}, validation accuracy {acc:.4}");
                report.validations.push((done, acc));
                if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                    best = Some((acc, head.params.clone(), provider.clone()));
                    report.best_episode = Some(done);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if cfg.patience.is_some_and(|p| since_best >= p) {
                        report.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, params, prov)) = best {
        head.params = params;
        *provider = prov;
    }
    Ok(report)
}
