//! Complex-valued anisotropic 3D Gaussians and their closed-form math.
//!
//! A Gaussian is parameterized by a center `p`, per-axis log standard
//! deviations, a rotation quaternion `(w, x, y, z)` and a complex density
//! `rho`. Its covariance is `R diag(sigma^2) R^T` and it evaluates to
//! `rho * exp(-0.5 (j - p)^T Sigma^-1 (j - p))` at voxel coordinate `j`.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

/// Number of standard deviations kept around each center.
pub const CUTOFF_SIGMAS: f64 = 3.0;
/// Squared Mahalanobis radius of the cutoff; contributions with a larger
/// value (exponent below -4.5) are dropped.
pub const CUTOFF_MAHALANOBIS_SQ: f64 = CUTOFF_SIGMAS * CUTOFF_SIGMAS;

const MIN_QUAT_NORM: f64 = 1e-12;

/// Parameters of a single Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub density: [f64; 2],
}

impl Gaussian {
    pub fn isotropic(position: [f64; 3], sigma: f64, density: Complex64) -> Self {
        let l = sigma.ln();
        Self {
            position,
            log_scale: [l; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            density: [density.re, density.im],
        }
    }

    pub fn rho(&self) -> Complex64 {
        Complex64::new(self.density[0], self.density[1])
    }

    pub fn sigmas(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }
}

/// Structure-of-arrays cloud of Gaussians plus densification statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub densities: Vec<[f64; 2]>,
    /// Accumulated positional-gradient norm since the last densification.
    pub grad_accum: Vec<f64>,
    /// Number of accumulation steps since the last densification.
    pub grad_count: Vec<u32>,
}

impl GaussianCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            densities: Vec::with_capacity(n),
            grad_accum: Vec::with_capacity(n),
            grad_count: Vec::with_capacity(n),
        }
    }

    pub fn from_gaussians(gs: impl IntoIterator<Item = Gaussian>) -> Self {
        let mut cloud = Self::new();
        for g in gs {
            cloud.push(g);
        }
        cloud
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.positions.push(g.position);
        self.log_scales.push(g.log_scale);
        self.rotations.push(g.rotation);
        self.densities.push(g.density);
        self.grad_accum.push(0.0);
        self.grad_count.push(0);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            log_scale: self.log_scales[i],
            rotation: self.rotations[i],
            density: self.densities[i],
        }
    }

    pub fn set(&mut self, i: usize, g: Gaussian) {
        self.positions[i] = g.position;
        self.log_scales[i] = g.log_scale;
        self.rotations[i] = g.rotation;
        self.densities[i] = g.density;
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    /// Keeps the Gaussians for which `keep(i)` is true, compacting every array.
    pub fn retain_indices(&mut self, keep: &[bool]) {
        fn compact<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut k = keep.iter();
            v.retain(|_| *k.next().unwrap());
        }
        compact(&mut self.positions, keep);
        compact(&mut self.log_scales, keep);
        compact(&mut self.rotations, keep);
        compact(&mut self.densities, keep);
        compact(&mut self.grad_accum, keep);
        compact(&mut self.grad_count, keep);
    }

    pub fn reset_stats(&mut self, i: usize) {
        self.grad_accum[i] = 0.0;
        self.grad_count[i] = 0;
    }

    /// Checks the structural invariants of the cloud.
    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if self.log_scales.len() != m
            || self.rotations.len() != m
            || self.densities.len() != m
            || self.grad_accum.len() != m
            || self.grad_count.len() != m
        {
            return Err(Error::InvalidParameter("cloud arrays have unequal lengths".into()));
        }
        for i in 0..m {
            let g = self.get(i);
            if g.position.iter().chain(&g.density).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("gaussian {i} has non-finite values")));
            }
            if g.sigmas().iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::InvalidParameter(format!("gaussian {i} has invalid scale")));
            }
            if quat_norm(g.rotation) <= MIN_QUAT_NORM {
                return Err(Error::InvalidParameter(format!("gaussian {i} has degenerate quaternion")));
            }
            if !(self.grad_accum[i] >= 0.0) {
                return Err(Error::InvalidParameter(format!("gaussian {i} has negative grad_accum")));
            }
        }
        Ok(())
    }
}

/// Covariance together with the factors it was assembled from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance {
    pub sigma: Mat3,
    pub rotation: Mat3,
    pub sigmas: [f64; 3],
}

pub(crate) fn quat_norm(q: [f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub(crate) fn normalize_quat(q: [f64; 4]) -> Result<([f64; 4], f64)> {
    let n = quat_norm(q);
    if !(n > MIN_QUAT_NORM) {
        return Err(Error::InvalidParameter(format!(
            "degenerate quaternion {q:?} (norm {n:e})"
        )));
    }
    Ok((q.map(|c| c / n), n))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_from_unit_quat(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Partial derivatives of `rotation_from_unit_quat` with respect to w, x, y, z.
pub(crate) fn rotation_quat_jacobian(q: [f64; 4]) -> [Mat3; 4] {
    let [w, x, y, z] = q.map(|c| 2.0 * c);
    [
        [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]],
        [[0.0, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]],
        [[-2.0 * y, x, w], [x, 0.0, z], [-w, z, -2.0 * y]],
        [[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, 0.0]],
    ]
}

/// `R diag(d) R^T`.
pub(crate) fn rotate_diag(r: &Mat3, d: [f64; 3]) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            let v = r[a][0] * d[0] * r[b][0] + r[a][1] * d[1] * r[b][1] + r[a][2] * d[2] * r[b][2];
            out[a][b] = v;
            out[b][a] = v;
        }
    }
    out
}

pub fn assemble_covariance(log_scale: [f64; 3], quat: [f64; 4]) -> Result<Covariance> {
    if log_scale.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite log scale {log_scale:?}")));
    }
    let (q, _) = normalize_quat(quat)?;
    let rotation = rotation_from_unit_quat(q);
    let sigmas = log_scale.map(f64::exp);
    let sigma = rotate_diag(&rotation, sigmas.map(|s| s * s));
    Ok(Covariance { sigma, rotation, sigmas })
}

/// Inverse covariance, built from the factors rather than by inversion.
pub fn precision_matrix(log_scale: [f64; 3], quat: [f64; 4]) -> Result<Mat3> {
    let (q, _) = normalize_quat(quat)?;
    let rotation = rotation_from_unit_quat(q);
    Ok(rotate_diag(&rotation, log_scale.map(|l| (-2.0 * l).exp())))
}

pub(crate) fn quad_form(m: &Mat3, d: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += d[a] * m[a][b] * d[b];
        }
    }
    s
}

/// Evaluates the Gaussian at voxel coordinate `j`, without any cutoff.
pub fn eval_gaussian(g: &Gaussian, j: [f64; 3]) -> Result<Complex64> {
    let p = precision_matrix(g.log_scale, g.rotation)?;
    let d = [j[0] - g.position[0], j[1] - g.position[1], j[2] - g.position[2]];
    Ok(g.rho() * (-0.5 * quad_form(&p, d)).exp())
}

/// Radius of the axis-aligned support box, `3 * max(sigma)` in voxels.
pub fn bounding_radius(g: &Gaussian) -> f64 {
    let s = g.sigmas();
    CUTOFF_SIGMAS * s[0].max(s[1]).max(s[2])
}
