//! Central finite-difference verification of analytic gradients.
//!
//! The checker never touches the backward pass: it re-runs the forward-only
//! loss closure with each parameter entry perturbed by ±h and compares the
//! quotient against the gradient the caller accumulated beforehand.

use crate::mat::Mat;
use crate::nn::Param;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub entries_checked: usize,
}

/// Compares accumulated analytic gradients against central finite
/// differences. The caller must have run forward + backward once so that
/// every `Param` gradient is populated; `loss_of` must recompute the same
/// scalar loss without touching gradients.
///
/// The relative error for one entry is `|a − f| / max(|a|, |f|)`, with
/// differences below 1e-8 treated as exact to avoid 0/0 noise.
pub fn check_params<M>(
    model: &mut M,
    params_of: impl Fn(&mut M) -> Vec<&mut Param>,
    mut loss_of: impl FnMut(&mut M) -> f64,
    h: f64,
) -> GradCheckReport {
    let analytic: Vec<Mat> = params_of(model).into_iter().map(|p| p.grad.clone()).collect();
    let mut max_rel_err = 0.0f64;
    let mut entries_checked = 0usize;
    for idx in 0..analytic.len() {
        let (rows, cols) = (analytic[idx].rows(), analytic[idx].cols());
        for i in 0..rows {
            for j in 0..cols {
                let orig = {
                    let mut ps = params_of(model);
                    let v = ps[idx].value.get(i, j);
                    ps[idx].value.set(i, j, v + h);
                    v
                };
                let up = loss_of(model);
                {
                    let mut ps = params_of(model);
                    ps[idx].value.set(i, j, orig - h);
                }
                let down = loss_of(model);
                {
                    let mut ps = params_of(model);
                    ps[idx].value.set(i, j, orig);
                }
                let fd = (up - down) / (2.0 * h);
                let an = analytic[idx].get(i, j);
                let diff = (an - fd).abs();
                let rel = if diff < 1e-8 { 0.0 } else { diff / an.abs().max(fd.abs()) };
                max_rel_err = max_rel_err.max(rel);
                entries_checked += 1;
            }
        }
    }
    GradCheckReport { max_rel_err, entries_checked }
}
