//! Central finite-difference checks for graph gradients.
//!
//! The numerical side only evaluates the forward function on perturbed
//! copies of the inputs, so it shares nothing with the backward rules it
//! verifies.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Magnitudes below this are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, element)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the backward pass of `f` against central differences over
/// every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], cfg: GradCheck, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut report = GradReport::default();
    let mut work = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let x0 = t.data()[e];
            work[ti].data_mut()[e] = x0 + cfg.eps;
            let up = eval(&work)?;
            work[ti].data_mut()[e] = x0 - cfg.eps;
            let down = eval(&work)?;
            work[ti].data_mut()[e] = x0;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = analytic[ti][e];
            let rel = relative_error(a, numeric, cfg.floor);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((ti, e));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
