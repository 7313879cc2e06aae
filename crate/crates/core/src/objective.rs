//! Training objective: data consistency on the voxelized volume plus total
//! variation of its magnitude.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acquisition::{dc_residual, AcquisitionModel, DcNorm, KSpaceData};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::volume::{linear_index, ComplexVolume};
use crate::voxelizer::{assign_tiles, voxelize_backward, voxelize_forward, CloudGradients};

/// Magnitudes below this are treated as zero; their TV gradient is zero.
pub const MAGNITUDE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvKind {
    /// Sum over axes of absolute forward differences.
    #[default]
    Anisotropic,
    /// Sum over voxels of the Euclidean norm of the forward-difference vector.
    Isotropic,
}

/// Weighted TV of `|x|` with forward differences and no wrap-around.
/// Returns `lambda * TV` and its gradient with respect to the real and
/// imaginary channels.
pub fn tv_magnitude(x: &ComplexVolume, lambda: f64, kind: TvKind) -> Result<(f64, ComplexVolume)> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let dims = x.dims();
    let mag = x.magnitudes();
    let mut dm = vec![0.0; mag.len()];
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut tv = 0.0;

    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for xi in 0..dims[0] {
                let j = linear_index(dims, xi, y, z);
                let pos = [xi, y, z];
                let mut diffs = [0.0; 3];
                for a in 0..3 {
                    if pos[a] + 1 < dims[a] {
                        diffs[a] = mag[j + strides[a]] - mag[j];
                    }
                }
                match kind {
                    TvKind::Anisotropic => {
                        for a in 0..3 {
                            let d = diffs[a];
                            tv += d.abs();
                            if d != 0.0 {
                                let s = d.signum();
                                dm[j + strides[a]] += s;
                                dm[j] -= s;
                            }
                        }
                    }
                    TvKind::Isotropic => {
                        let n = (diffs[0] * diffs[0] + diffs[1] * diffs[1] + diffs[2] * diffs[2]).sqrt();
                        tv += n;
                        if n > MAGNITUDE_FLOOR {
                            for a in 0..3 {
                                if pos[a] + 1 < dims[a] {
                                    let g = diffs[a] / n;
                                    dm[j + strides[a]] += g;
                                    dm[j] -= g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let grad = x
        .data()
        .iter()
        .zip(&mag)
        .zip(&dm)
        .map(|((v, &m), &g)| {
            if m > MAGNITUDE_FLOOR {
                *v * (lambda * g / m)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Ok((lambda * tv, ComplexVolume::from_data(dims, grad)?))
}

/// Knobs of the scalar objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub dc_norm: DcNorm,
    pub tv: TvKind,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { lambda: 0.1, dc_norm: DcNorm::SquaredL2, tv: TvKind::Anisotropic }
    }
}

/// Result of one objective evaluation.
#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub loss: f64,
    pub dc_loss: f64,
    pub tv_loss: f64,
    pub grads: CloudGradients,
    /// The voxelized cloud the loss was computed on.
    pub volume: ComplexVolume,
}

/// Voxelizes the cloud, evaluates DC + TV, and pulls the volume gradient back
/// to every Gaussian parameter. Updates the cloud's densification statistics.
pub fn total_objective(
    cloud: &mut GaussianCloud,
    b: &KSpaceData,
    acq: &AcquisitionModel,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveEval> {
    let dims = acq.dims();
    let index = assign_tiles(cloud, dims)?;
    let volume = voxelize_forward(cloud, dims, &index)?;
    let (dc_loss, mut grad) = dc_residual(&volume, b, acq, cfg.dc_norm)?;
    let tv_loss = if cfg.lambda > 0.0 {
        let (tv, tv_grad) = tv_magnitude(&volume, cfg.lambda, cfg.tv)?;
        for (g, t) in grad.data_mut().iter_mut().zip(tv_grad.data()) {
            *g += t;
        }
        tv
    } else {
        0.0
    };
    let grads = voxelize_backward(cloud, dims, &index, &grad)?;
    Ok(ObjectiveEval { loss: dc_loss + tv_loss, dc_loss, tv_loss, grads, volume })
}
