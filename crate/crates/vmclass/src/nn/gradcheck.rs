//! Central finite-difference verification of every analytic gradient.
//!
//! For each parameter p the loss is evaluated at p + eps and p - eps (eval
//! mode, so dropout is the identity and the loss is a deterministic function
//! of the parameters) and compared against the backprop gradient with the
//! scale-free error |numeric - analytic| / max(|numeric| + |analytic|, 1e-6).
//!
//! The denominator floor sits well above the noise of the numeric estimate:
//! the loss carries ~1e-16 relative rounding, so a central difference over
//! 2*eps = 2e-5 is only trustworthy to ~1e-11 in absolute terms. Gradients
//! below the floor are compared on that absolute scale instead of blowing
//! up a meaningless ratio.

use crate::error::Result;
use crate::nn::grid::Grid;
use crate::nn::model::{Model, Phase};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Number of scalar parameters swept.
    pub checked: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// `grid[index]` of the worst parameter.
    pub worst: String,
}

pub fn check_gradients(
    model: &mut Model,
    x: &Grid,
    labels: &[u8],
    epsilon: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grads(x, labels, Phase::Eval)?;
    let analytic: Vec<(&'static str, Vec<f64>)> = analytic
        .grids()
        .iter()
        .map(|(n, g)| (*n, g.data().to_vec()))
        .collect();

    let mut checked = 0usize;
    let mut max_rel_err = 0.0f64;
    let mut err_sum = 0.0f64;
    let mut worst = String::new();
    for (g_idx, (name, grad)) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = model.params.grids()[g_idx].1.data()[i];
            model.params.grids_mut()[g_idx].1.data_mut()[i] = orig + epsilon;
            let up = model.loss(x, labels)?;
            model.params.grids_mut()[g_idx].1.data_mut()[i] = orig - epsilon;
            let down = model.loss(x, labels)?;
            model.params.grids_mut()[g_idx].1.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * epsilon);
            let a = grad[i];
            let rel = (numeric - a).abs() / (numeric.abs() + a.abs()).max(1e-6);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = format!("{name}[{i}]");
            }
            err_sum += rel;
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        checked,
        max_rel_err,
        mean_rel_err: err_sum / checked.max(1) as f64,
        worst,
    })
}
