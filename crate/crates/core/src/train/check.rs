use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grad::{instance_gradients, instance_loss, TrainInstance};
use crate::error::Result;
use crate::model::{ForwardPass, Model, ParamId, QueryContext};

/// Which coordinates a gradient check perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordSelection {
    All,
    /// This many coordinates drawn uniformly over all tensors, plus every
    /// bias coordinate.
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_error: f64,
    /// Tensor and flat index where the worst error occurred.
    pub worst: Option<(ParamId, usize)>,
    pub checked: usize,
    /// Coordinates skipped because a ReLU changed state within +-eps.
    pub skipped_kinks: usize,
}

fn activation_pattern(inst: &TrainInstance, model: &Model) -> Result<Vec<bool>> {
    let f = ForwardPass::run(&QueryContext::from_transition(inst), model)?;
    let mut out: Vec<bool> = f.z_q.iter().map(|&z| z > 0.0).collect();
    if let Some(z) = &f.z_u {
        out.extend(z.iter().map(|&z| z > 0.0));
    }
    out.extend(f.z_c.iter().map(|&z| z > 0.0));
    Ok(out)
}

/// Denominator floor of the relative error; central differences with the
/// usual step cannot resolve gradients much smaller than this.
pub const REL_FLOOR: f64 = 1e-4;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of the data term against central finite
/// differences `(J(theta + eps) - J(theta - eps)) / (2 eps)`. A coordinate is
/// skipped when perturbing it by `+-eps` flips any ReLU unit, since the loss
/// is not differentiable across that kink.
pub fn gradient_check(
    model: &Model,
    inst: &TrainInstance,
    eps: f64,
    selection: CoordSelection,
) -> Result<GradCheckReport> {
    let (_, grads) = instance_gradients(inst, model)?;
    let base = activation_pattern(inst, model)?;
    let coords: Vec<(ParamId, usize)> = match selection {
        CoordSelection::All => ParamId::ALL
            .iter()
            .flat_map(|&id| (0..model.params.coords(id).len()).map(move |i| (id, i)))
            .collect(),
        CoordSelection::Sample { count, seed } => {
            let sizes: Vec<(ParamId, usize)> = ParamId::ALL
                .iter()
                .map(|&id| (id, model.params.coords(id).len()))
                .collect();
            let total: usize = sizes.iter().map(|s| s.1).sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = Vec::with_capacity(count);
            for _ in 0..count {
                let mut k = rng.random_range(0..total);
                for &(id, n) in &sizes {
                    if k < n {
                        picked.push((id, k));
                        break;
                    }
                    k -= n;
                }
            }
            for &(id, n) in sizes.iter().filter(|(id, _)| id.is_bias()) {
                picked.extend((0..n).map(|i| (id, i)));
            }
            picked
        }
    };

    let mut work = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for (id, i) in coords {
        let orig = work.params.coords(id)[i];
        work.params.coords_mut(id)[i] = orig + eps;
        let plus_pattern = activation_pattern(inst, &work)?;
        let plus = instance_loss(inst, &work)?;
        work.params.coords_mut(id)[i] = orig - eps;
        let minus_pattern = activation_pattern(inst, &work)?;
        let minus = instance_loss(inst, &work)?;
        work.params.coords_mut(id)[i] = orig;
        if plus_pattern != base || minus_pattern != base {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = rel_error(grads.coord(&model.params, id, i), numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((id, i));
        }
    }
    Ok(report)
}
