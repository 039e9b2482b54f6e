//! Adaptive density control: clone small, split large, prune transparent.

use nalgebra::Vector3;
use rand_distr::{Distribution, StandardNormal};

use super::{Group, Scene, TrainConfig, TrainState};
use crate::error::Result;
use crate::geometry::Gaussian;

/// Scale shrink applied to both children of a split.
pub const SPLIT_SHRINK: f64 = 1.6;
/// Fraction of the scene extent separating clone from split.
pub const SPLIT_SCALE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub before: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub after: usize,
}

/// Densifies Gaussians whose mean position gradient exceeds the threshold,
/// then prunes those below the opacity floor. New rows start with zero Adam
/// moments; surviving rows keep theirs. If pruning would remove everything,
/// the most opaque Gaussian is kept.
pub fn densify_and_prune(
    scene: &mut Scene,
    state: &mut TrainState,
    cfg: &TrainConfig,
    extent: f64,
) -> Result<DensifyReport> {
    let d = &cfg.densify;
    let old = std::mem::take(&mut scene.cloud.gaussians);
    let mut report = DensifyReport {
        before: old.len(),
        ..Default::default()
    };
    let split_above = SPLIT_SCALE_FRACTION * extent;
    let mut rows: Vec<(Gaussian, Option<usize>)> = Vec::with_capacity(old.len());
    let mut budget = d.max_gaussians.saturating_sub(old.len());
    for (i, g) in old.iter().enumerate() {
        let mean_grad = match state.grad_count[i] {
            0 => 0.0,
            c => state.grad_accum[i] / c as f64,
        };
        if mean_grad < d.grad_threshold || budget == 0 {
            rows.push((*g, Some(i)));
            continue;
        }
        let scale = g.scale();
        if scale.max() > split_above {
            let r = g.rotation.to_rotmat()?;
            for _ in 0..2 {
                let n = Vector3::from_fn(|_, _| StandardNormal.sample(&mut state.rng));
                let p = g.pos() + r * scale.component_mul(&n);
                let mut child = *g;
                child.position = p.into();
                for s in &mut child.log_scale {
                    *s -= SPLIT_SHRINK.ln();
                }
                rows.push((child, None));
            }
            report.split += 1;
        } else {
            rows.push((*g, Some(i)));
            rows.push((*g, None));
            report.cloned += 1;
        }
        budget -= 1;
    }

    let keep: Vec<bool> = rows.iter().map(|(g, _)| g.opacity() >= d.opacity_prune).collect();
    let mut kept: Vec<(Gaussian, Option<usize>)> =
        rows.iter().zip(&keep).filter(|(_, k)| **k).map(|(r, _)| *r).collect();
    if kept.is_empty() && !rows.is_empty() {
        let best = rows
            .iter()
            .enumerate()
            .fold(0, |b, (i, r)| if r.0.opacity_logit > rows[b].0.opacity_logit { i } else { b });
        kept.push(rows[best]);
    }
    report.pruned = rows.len() - kept.len();
    report.after = kept.len();

    let sources: Vec<Option<usize>> = kept.iter().map(|(_, s)| *s).collect();
    for (group, opt) in Group::ALL.iter().zip(state.optim.groups.iter_mut()) {
        opt.remap_rows(&sources, group.stride());
    }
    scene.cloud.gaussians = kept.into_iter().map(|(g, _)| g).collect();
    state.grad_accum = vec![0.0; report.after];
    state.grad_count = vec![0; report.after];
    Ok(report)
}
