//! First-order optimizers over parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    Ok(())
}

/// `p ← p − lr·grad`, then clears every grad buffer. Tensors without a
/// populated gradient are left unchanged.
pub fn sgd_step(params: &mut [&mut Tensor], lr: f64) -> Result<()> {
    check_lr(lr)?;
    for p in params.iter_mut() {
        if let Some(g) = p.grad().map(<[f64]>::to_vec) {
            p.data_mut()
                .iter_mut()
                .zip(&g)
                .for_each(|(x, g)| *x -= lr * g);
        }
        p.zero_grad();
    }
    Ok(())
}

pub trait Optimizer {
    fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()>;
}

fn check_decay(wd: f64) -> Result<()> {
    if !(wd >= 0.0) || !wd.is_finite() {
        return Err(Error::Config(format!(
            "weight decay must be non-negative, got {wd}"
        )));
    }
    Ok(())
}

/// Shrinks every tensor that received a gradient by `1 − lr·wd`.
fn decay(params: &mut [&mut Tensor], lr: f64, wd: f64) {
    if wd == 0.0 {
        return;
    }
    for p in params.iter_mut().filter(|p| p.grad().is_some()) {
        p.data_mut().iter_mut().for_each(|x| *x -= lr * wd * *x);
    }
}

#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(Self {
            lr,
            weight_decay: 0.0,
        })
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Result<Self> {
        check_decay(wd)?;
        self.weight_decay = wd;
        Ok(self)
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        decay(params, self.lr, self.weight_decay);
        sgd_step(params, self.lr)
    }
}

/// Adam with bias correction and optional decoupled weight decay. Moment buffers are keyed by the position of
/// each tensor in the slice passed to [`Optimizer::step`].
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            moments: Vec::new(),
        })
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Result<Self> {
        check_decay(wd)?;
        self.weight_decay = wd;
        Ok(self)
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Argument(format!(
                "adam state holds {} tensors but {} were passed",
                self.moments.len(),
                params.len()
            )));
        }
        decay(params, self.lr, self.weight_decay);
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if let Some(g) = p.grad().map(<[f64]>::to_vec) {
                let data = p.data_mut();
                for i in 0..g.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
            p.zero_grad();
        }
        Ok(())
    }
}

pub fn build(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Result<Box<dyn Optimizer + Send>> {
    Ok(match kind {
        OptimizerKind::Sgd => Box::new(Sgd::new(lr)?.with_weight_decay(weight_decay)?),
        OptimizerKind::Adam => Box::new(Adam::new(lr)?.with_weight_decay(weight_decay)?),
    })
}
