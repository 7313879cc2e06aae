//! Adaptive density control: pruning, cloning and the two splitting rules.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::gaussian::{normalize_quat, rotation_from_unit_quat, Gaussian, GaussianCloud};
use crate::volume::Dims;

use super::adam::AdamMoments;
use super::config::{SplitMode, TrainConfig};

/// Size divisor applied to both children of an original split.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
/// Long-axis split: the long axis is halved, the other two scaled by this.
pub const LONG_AXIS_SHORT_FACTOR: f64 = 0.85;
/// Long-axis split: density factor applied to each child.
pub const LONG_AXIS_DENSITY_FACTOR: f64 = 0.6;

/// What a densification event did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyStats {
    pub cloned: usize,
    pub split: usize,
}

/// Mean accumulated positional-gradient norm, or `None` with no samples.
fn mean_grad(cloud: &GaussianCloud, i: usize) -> Option<f64> {
    (cloud.grad_count[i] > 0).then(|| cloud.grad_accum[i] / cloud.grad_count[i] as f64)
}

/// Children of a long-axis split.
pub fn long_axis_children(g: &Gaussian) -> Result<[Gaussian; 2]> {
    let (q, _) = normalize_quat(g.rotation)?;
    let r = rotation_from_unit_quat(q);
    let sigmas = g.sigmas();
    let mut k = 0;
    for a in 1..3 {
        if sigmas[a] > sigmas[k] {
            k = a;
        }
    }
    let offset = 0.5 * sigmas[k];
    let mut log_scale = g.log_scale;
    for (a, l) in log_scale.iter_mut().enumerate() {
        *l += if a == k { 0.5f64.ln() } else { LONG_AXIS_SHORT_FACTOR.ln() };
    }
    let density = g.density.map(|d| d * LONG_AXIS_DENSITY_FACTOR);
    let child = |sign: f64| Gaussian {
        position: [0, 1, 2].map(|a| g.position[a] + sign * offset * r[a][k]),
        log_scale,
        rotation: g.rotation,
        density,
    };
    Ok([child(-1.0), child(1.0)])
}

/// Children of an original split: sizes divided by 1.6, densities halved,
/// centers drawn independently from the parent's normal distribution.
pub fn sampled_split_children(g: &Gaussian, rng: &mut impl Rng) -> Result<[Gaussian; 2]> {
    let (q, _) = normalize_quat(g.rotation)?;
    let r = rotation_from_unit_quat(q);
    let sigmas = g.sigmas();
    let log_scale = g.log_scale.map(|l| l - SPLIT_SCALE_DIVISOR.ln());
    let density = g.density.map(|d| 0.5 * d);
    let mut child = || {
        let z: [f64; 3] = [0, 1, 2].map(|a| sigmas[a] * rng.sample::<f64, _>(StandardNormal));
        Gaussian {
            position: [0, 1, 2].map(|a| g.position[a] + r[a][0] * z[0] + r[a][1] * z[1] + r[a][2] * z[2]),
            log_scale,
            rotation: g.rotation,
            density,
        }
    };
    Ok([child(), child()])
}

/// Two half-density copies at the parent's position.
pub fn clone_children(g: &Gaussian) -> [Gaussian; 2] {
    let half = Gaussian { density: g.density.map(|d| 0.5 * d), ..*g };
    [half, half]
}

/// Grows the cloud where mean positional gradients exceed the threshold.
///
/// Each selected candidate is replaced by one child and appends the other,
/// so the count grows by one per candidate and never passes
/// `cfg.max_gaussians`; when the budget is short the strongest-gradient
/// candidates win. Touched Gaussians get fresh statistics and zero moments.
pub fn densify(
    cloud: &mut GaussianCloud,
    moments: &mut AdamMoments,
    cfg: &TrainConfig,
    dims: Dims,
    rng: &mut impl Rng,
) -> Result<DensifyStats> {
    let mut stats = DensifyStats::default();
    let n = cloud.len();
    if n >= cfg.max_gaussians {
        return Ok(stats);
    }
    let mut candidates: Vec<(usize, f64)> = (0..n)
        .filter_map(|i| mean_grad(cloud, i).filter(|&g| g > cfg.grad_threshold).map(|g| (i, g)))
        .collect();
    let budget = cfg.max_gaussians - n;
    if candidates.len() > budget {
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        candidates.truncate(budget);
        candidates.sort_by_key(|c| c.0);
    }

    let size_limit = cfg.size_threshold * *dims.iter().max().unwrap_or(&1) as f64;
    for &(i, _) in &candidates {
        let g = cloud.get(i);
        let [a, b] = match cfg.split_mode {
            SplitMode::LongAxis => {
                stats.split += 1;
                long_axis_children(&g)?
            }
            SplitMode::Original => {
                let max_sigma = g.sigmas().into_iter().fold(0.0, f64::max);
                if max_sigma > size_limit {
                    stats.split += 1;
                    sampled_split_children(&g, rng)?
                } else {
                    stats.cloned += 1;
                    clone_children(&g)
                }
            }
        };
        cloud.set(i, a);
        cloud.reset_stats(i);
        moments.reset(i);
        cloud.push(b);
        moments.push_zero();
    }
    Ok(stats)
}

/// Drops Gaussians whose density magnitude is below `cfg.prune_eps`.
/// Returns how many were removed.
pub fn prune(cloud: &mut GaussianCloud, moments: &mut AdamMoments, cfg: &TrainConfig) -> usize {
    let keep: Vec<bool> = cloud
        .densities
        .iter()
        .map(|d| d[0].hypot(d[1]) >= cfg.prune_eps)
        .collect();
    let removed = keep.iter().filter(|&&k| !k).count();
    if removed > 0 {
        cloud.retain_indices(&keep);
        moments.retain_indices(&keep);
    }
    removed
}
