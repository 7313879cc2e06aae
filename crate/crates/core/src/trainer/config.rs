use serde::{Deserialize, Serialize};

use crate::acquisition::DcNorm;
use crate::error::{Error, Result};
use crate::objective::{ObjectiveConfig, TvKind};
use crate::volume::Dims;

/// Densification strategy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Clone small candidates, split large ones into two sampled children.
    #[default]
    Original,
    /// No cloning; every candidate splits in two along its longest axis.
    LongAxis,
}

/// Per-group Adam learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Multiplied by the largest grid dimension to get the position rate.
    pub position_per_dim: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub density: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { position_per_dim: 1.6e-4, log_scale: 5e-3, rotation: 1e-3, density: 1e-2 }
    }
}

/// Learning rates with the grid size folded in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRates {
    pub position: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub density: f64,
}

impl LearningRates {
    pub fn resolve(&self, dims: Dims) -> GroupRates {
        let d = *dims.iter().max().unwrap_or(&1) as f64;
        GroupRates {
            position: self.position_per_dim * d,
            log_scale: self.log_scale,
            rotation: self.rotation,
            density: self.density,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of initial Gaussians, sampled from grid points.
    pub init_points: usize,
    /// Initial densities are this fraction of the zero-filled image.
    pub density_scale: f64,
    /// Mean positional-gradient norm that makes a Gaussian a densification candidate.
    pub grad_threshold: f64,
    /// Split-versus-clone size threshold, as a fraction of the largest grid dimension.
    pub size_threshold: f64,
    pub lambda: f64,
    pub max_gaussians: usize,
    pub densify_interval: usize,
    pub max_iters: usize,
    pub split_mode: SplitMode,
    /// Gaussians with |rho| below this (normalized scale) are pruned.
    pub prune_eps: f64,
    pub lr: LearningRates,
    pub adam: AdamParams,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub dc_norm: DcNorm,
    pub tv: TvKind,
    /// Iterations between metric evaluations when a reference is supplied.
    pub eval_interval: usize,
    /// In evaluation mode, also stop once PSNR and SSIM stop improving.
    pub stop_on_metric_plateau: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init_points: 200_000,
            density_scale: 0.1,
            grad_threshold: 0.01,
            size_threshold: 0.01,
            lambda: 0.1,
            max_gaussians: 400_000,
            densify_interval: 100,
            max_iters: 600,
            split_mode: SplitMode::Original,
            prune_eps: 0.005,
            lr: LearningRates::default(),
            adam: AdamParams::default(),
            plateau_window: 50,
            plateau_tol: 1e-4,
            dc_norm: DcNorm::SquaredL2,
            tv: TvKind::Anisotropic,
            eval_interval: 10,
            stop_on_metric_plateau: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Preset for high acceleration: few initial points, long-axis splitting only.
    pub fn long_axis() -> Self {
        Self {
            init_points: 500,
            max_iters: 1000,
            split_mode: SplitMode::LongAxis,
            ..Self::default()
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig { lambda: self.lambda, dc_norm: self.dc_norm, tv: self.tv }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.init_points == 0 {
            return bad("init_points must be >= 1");
        }
        if self.init_points > self.max_gaussians {
            return bad("init_points must not exceed max_gaussians");
        }
        if self.densify_interval == 0 {
            return bad("densify_interval must be >= 1");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be >= 1");
        }
        if !nonneg(self.density_scale) {
            return bad("density_scale must be finite and >= 0");
        }
        if !pos(self.grad_threshold) || !pos(self.size_threshold) {
            return bad("grad_threshold and size_threshold must be > 0");
        }
        if !nonneg(self.lambda) || !nonneg(self.prune_eps) {
            return bad("lambda and prune_eps must be finite and >= 0");
        }
        let lr = &self.lr;
        if ![lr.position_per_dim, lr.log_scale, lr.rotation, lr.density].iter().all(|&v| nonneg(v)) {
            return bad("learning rates must be finite and >= 0");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !pos(a.eps) {
            return bad("adam betas must lie in [0, 1) and eps must be > 0");
        }
        if self.plateau_window == 0 || !nonneg(self.plateau_tol) {
            return bad("plateau_window must be >= 1 and plateau_tol >= 0");
        }
        Ok(())
    }
}
