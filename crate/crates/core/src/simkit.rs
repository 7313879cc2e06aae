//! Synthetic ground truth and acquisitions: phantoms, coil maps, masks and
//! simulated k-space.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acquisition::{forward_a, AcquisitionModel, KSpaceData};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianCloud};
use crate::volume::{check_dims, ComplexVolume, Dims, Mask};
use crate::voxelizer::voxelize;

pub const MIN_PHANTOM_EDGE: usize = 8;
pub const DEFAULT_BLOB_COUNT: usize = 20;
pub const DEFAULT_CALIB: usize = 16;
pub const DEFAULT_SIGMA_FRAC: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phantom {
    /// Ten-ellipsoid head phantom, optionally with a smooth polynomial phase.
    SheppLogan { phase: bool },
    /// Sum of random anisotropic Gaussians.
    Blobs { count: usize },
}

impl Default for Phantom {
    fn default() -> Self {
        Phantom::SheppLogan { phase: true }
    }
}

/// An ellipsoid in normalized `[-1, 1]^3` coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub intensity: f64,
    pub axes: [f64; 3],
    pub center: [f64; 3],
    /// Euler angles (phi, theta, psi) in degrees.
    pub angles: [f64; 3],
}

impl Ellipsoid {
    /// Membership test; the point is rotated before the center is subtracted.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let r = euler_rotation(self.angles);
        let mut s = 0.0;
        for i in 0..3 {
            let q = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
            s += ((q - self.center[i]) / self.axes[i]).powi(2);
        }
        s <= 1.0
    }
}

fn euler_rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let [phi, theta, psi] = angles.map(f64::to_radians);
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    [
        [cp * cf - ct * sf * sp, cp * sf + ct * cf * sp, sp * st],
        [-sp * cf - ct * sf * cp, -sp * sf + ct * cf * cp, cp * st],
        [st * sf, -st * cf, ct],
    ]
}

const fn ell(intensity: f64, axes: [f64; 3], center: [f64; 3], angles: [f64; 3]) -> Ellipsoid {
    Ellipsoid { intensity, axes, center, angles }
}

/// Modified (high-contrast) 3D Shepp-Logan table.
pub const SHEPP_LOGAN: [Ellipsoid; 10] = [
    ell(1.0, [0.69, 0.92, 0.81], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
    ell(-0.8, [0.6624, 0.874, 0.78], [0.0, -0.0184, 0.0], [0.0, 0.0, 0.0]),
    ell(-0.2, [0.11, 0.31, 0.22], [0.22, 0.0, 0.0], [-18.0, 0.0, 10.0]),
    ell(-0.2, [0.16, 0.41, 0.28], [-0.22, 0.0, 0.0], [18.0, 0.0, 10.0]),
    ell(0.1, [0.21, 0.25, 0.41], [0.0, 0.35, -0.15], [0.0, 0.0, 0.0]),
    ell(0.1, [0.046, 0.046, 0.05], [0.0, 0.1, 0.25], [0.0, 0.0, 0.0]),
    ell(0.1, [0.046, 0.046, 0.05], [0.0, -0.1, 0.25], [0.0, 0.0, 0.0]),
    ell(0.1, [0.046, 0.023, 0.05], [-0.08, -0.605, 0.0], [0.0, 0.0, 0.0]),
    ell(0.1, [0.023, 0.023, 0.02], [0.0, -0.606, 0.0], [0.0, 0.0, 0.0]),
    ell(0.1, [0.023, 0.046, 0.02], [0.06, -0.605, 0.0], [0.0, 0.0, 0.0]),
];

/// Real Shepp-Logan intensity at a normalized point.
pub fn shepp_logan_value(p: [f64; 3]) -> f64 {
    SHEPP_LOGAN.iter().filter(|e| e.contains(p)).map(|e| e.intensity).sum()
}

/// Smooth low-order phase in radians at a normalized point.
pub fn synthetic_phase(p: [f64; 3]) -> f64 {
    let [x, y, z] = p;
    0.6 * x - 0.4 * y + 0.3 * z + 0.5 * x * y - 0.3 * z * z
}

/// Grid index to normalized coordinate, endpoints mapping to -1 and 1.
pub fn normalized_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

pub fn phantom3d(dims: Dims, phantom: Phantom, seed: u64) -> Result<ComplexVolume> {
    check_dims(dims)?;
    if dims.iter().any(|&d| d < MIN_PHANTOM_EDGE) {
        return Err(Error::InvalidParameter(format!(
            "phantom dims {dims:?} must be at least {MIN_PHANTOM_EDGE} per axis"
        )));
    }
    match phantom {
        Phantom::SheppLogan { phase } => Ok(ComplexVolume::from_fn(dims, |x, y, z| {
            let p = [normalized_coord(x, dims[0]), normalized_coord(y, dims[1]), normalized_coord(z, dims[2])];
            let v = shepp_logan_value(p);
            if phase && v != 0.0 {
                Complex64::from_polar(v, synthetic_phase(p))
            } else {
                Complex64::new(v, 0.0)
            }
        })),
        Phantom::Blobs { count } => voxelize(&blobs_cloud(dims, count, seed)?, dims),
    }
}

/// The cloud behind the `Blobs` phantom.
pub fn blobs_cloud(dims: Dims, count: usize, seed: u64) -> Result<GaussianCloud> {
    check_dims(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edge = *dims.iter().min().unwrap() as f64;
    let mut cloud = GaussianCloud::with_capacity(count);
    for _ in 0..count {
        let position = dims.map(|d| rng.gen_range(0.25..0.75) * (d - 1) as f64);
        let log_scale = [(); 3].map(|_| (rng.gen_range(0.04..0.1) * edge).ln());
        let q: [f64; 4] = [(); 4].map(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rho = Complex64::from_polar(rng.gen_range(0.5..1.0), rng.gen_range(-PI..PI));
        cloud.push(Gaussian { position, log_scale, rotation: q.map(|v| v / n), density: [rho.re, rho.im] });
    }
    Ok(cloud)
}

/// `C` smooth complex coil maps with unit sum-of-squares at every voxel.
///
/// Magnitudes are Gaussian bumps centered on a ring just outside the volume;
/// each coil carries its own linear phase.
pub fn synth_coils(dims: Dims, num_coils: usize, seed: u64) -> Result<Vec<ComplexVolume>> {
    check_dims(dims)?;
    if num_coils == 0 {
        return Err(Error::InvalidParameter("coil count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let extent = dims.map(|d| d as f64);
    let width = 0.5 * extent.iter().cloned().fold(0.0, f64::max);
    let mut maps: Vec<ComplexVolume> = (0..num_coils)
        .map(|c| {
            let angle = 2.0 * PI * c as f64 / num_coils as f64 + rng.gen_range(-0.2..0.2);
            let tilt = if c % 2 == 0 { 0.25 } else { -0.25 };
            let center = [
                mid[0] + 0.6 * extent[0] * angle.cos(),
                mid[1] + 0.6 * extent[1] * angle.sin(),
                mid[2] + tilt * extent[2],
            ];
            let slope: [f64; 3] = [0, 1, 2].map(|a| rng.gen_range(-PI..PI) / extent[a]);
            let offset = rng.gen_range(-PI..PI);
            ComplexVolume::from_fn(dims, |x, y, z| {
                let r = [x as f64, y as f64, z as f64];
                let d2: f64 = (0..3).map(|a| (r[a] - center[a]).powi(2)).sum();
                let phase = offset + (0..3).map(|a| slope[a] * (r[a] - mid[a])).sum::<f64>();
                Complex64::from_polar((-d2 / (2.0 * width * width)).exp(), phase)
            })
        })
        .collect();
    let n = maps[0].len();
    for j in 0..n {
        let ssos = maps.iter().map(|m| m.data()[j].norm_sqr()).sum::<f64>().sqrt();
        for m in &mut maps {
            m.data_mut()[j] /= ssos;
        }
    }
    Ok(maps)
}

/// Index range of a centered `calib`-wide block on an axis of length `n`.
fn calib_range(n: usize, calib: usize) -> std::ops::Range<usize> {
    let lo = n / 2 - calib / 2;
    lo..lo + calib
}

/// Variable-density phase-encode mask replicated along the readout axis `x`.
///
/// The centered `calib x calib` block in `(y, z)` is always sampled; the rest
/// of the `floor(Dy Dz / R)` budget is drawn without replacement with weights
/// from a centered 2D Gaussian of standard deviation `sigma_frac * min(Dy, Dz)`.
pub fn gen_mask(dims: Dims, accel: f64, calib: usize, sigma_frac: f64, seed: u64) -> Result<Mask> {
    check_dims(dims)?;
    if !(accel.is_finite() && accel >= 1.0) {
        return Err(Error::InvalidConfig(format!("acceleration {accel} must be finite and >= 1")));
    }
    if !(sigma_frac.is_finite() && sigma_frac > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma_frac {sigma_frac} must be > 0")));
    }
    let [nx, ny, nz] = dims;
    let plane = ny * nz;
    let budget = (plane as f64 / accel).floor() as usize;
    if calib > ny || calib > nz || calib * calib > budget {
        return Err(Error::InvalidConfig(format!(
            "calibration block {calib}x{calib} exceeds the sample budget of {budget} on a {ny}x{nz} plane"
        )));
    }

    let mut pattern = vec![false; plane];
    for z in calib_range(nz, calib) {
        for y in calib_range(ny, calib) {
            pattern[y + ny * z] = true;
        }
    }
    let remaining = budget - calib * calib;
    if remaining > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sigma_frac * ny.min(nz) as f64;
        let (cy, cz) = ((ny / 2) as f64, (nz / 2) as f64);
        // Exponential-race keys: the smallest E / w are a weighted sample
        // without replacement. Kept in the log domain so tiny weights stay finite.
        let mut keys: Vec<(f64, usize)> = (0..plane)
            .filter(|&i| !pattern[i])
            .map(|i| {
                let (y, z) = ((i % ny) as f64, (i / ny) as f64);
                let log_w = -((y - cy).powi(2) + (z - cz).powi(2)) / (2.0 * s * s);
                let e: f64 = rng.sample(Exp1);
                (e.ln() - log_w, i)
            })
            .collect();
        keys.select_nth_unstable_by(remaining - 1, |a, b| a.0.total_cmp(&b.0));
        for &(_, i) in &keys[..remaining] {
            pattern[i] = true;
        }
    }

    let mut data = vec![0u8; nx * plane];
    for (i, &on) in pattern.iter().enumerate() {
        if on {
            data[i * nx..(i + 1) * nx].fill(1);
        }
    }
    Mask::from_data(dims, data)
}

/// Noiseless or noisy measurements of `x`. Noise is complex Gaussian, lives
/// only at sampled locations and is scaled to hit `noise_snr_db` exactly.
pub fn simulate(
    x: &ComplexVolume,
    acq: &AcquisitionModel,
    noise_snr_db: Option<f64>,
    seed: u64,
) -> Result<KSpaceData> {
    let mut b = forward_a(x, acq)?;
    let Some(snr_db) = noise_snr_db else {
        return Ok(b);
    };
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!("noise SNR {snr_db} dB is not finite")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = acq.mask().data();
    let mut noise: Vec<Vec<Complex64>> = b
        .coils
        .iter()
        .map(|c| {
            (0..c.len())
                .map(|j| {
                    if mask[j] == 0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                    }
                })
                .collect()
        })
        .collect();
    let noise_energy: f64 = noise.iter().flatten().map(Complex64::norm_sqr).sum();
    let signal_energy = b.norm_sqr();
    if noise_energy == 0.0 {
        return Ok(b);
    }
    let gain = (signal_energy / noise_energy / 10f64.powf(snr_db / 10.0)).sqrt();
    for (c, n) in b.coils.iter_mut().zip(&mut noise) {
        for (v, e) in c.data_mut().iter_mut().zip(n.iter()) {
            *v += e * gain;
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::eval_gaussian;

    #[test]
    fn shepp_logan_known_points() {
        // Outside the skull.
        assert_eq!(shepp_logan_value([0.95, 0.95, 0.95]), 0.0);
        // Origin: inside the outer two ellipsoids only.
        let origin = shepp_logan_value([0.0; 3]);
        let members: Vec<usize> = (0..10).filter(|&i| SHEPP_LOGAN[i].contains([0.0; 3])).collect();
        assert_eq!(members, vec![0, 1]);
        assert!((origin - 0.2).abs() < 1e-15);
        // Center of the small ellipsoid at (0, 0.1, 0.25).
        let p = [0.0, 0.1, 0.25];
        let direct = |e: &Ellipsoid| {
            let r = euler_rotation(e.angles);
            (0..3)
                .map(|i| {
                    let q: f64 = (0..3).map(|k| r[i][k] * p[k]).sum();
                    ((q - e.center[i]) / e.axes[i]).powi(2)
                })
                .sum::<f64>()
                < 1.0
        };
        let expected: f64 = SHEPP_LOGAN.iter().filter(|e| direct(e)).map(|e| e.intensity).sum();
        assert!((shepp_logan_value(p) - expected).abs() < 1e-15);
        assert!((expected - 0.3).abs() < 1e-12);
    }

    #[test]
    fn phantom_grid_matches_point_evaluation() {
        let dims = [9, 10, 11];
        let v = phantom3d(dims, Phantom::SheppLogan { phase: true }, 0).unwrap();
        let r = phantom3d(dims, Phantom::SheppLogan { phase: false }, 0).unwrap();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = [normalized_coord(x, 9), normalized_coord(y, 10), normalized_coord(z, 11)];
                    let s = shepp_logan_value(p);
                    assert_eq!(r.get(x, y, z), Complex64::new(s, 0.0));
                    assert!((v.get(x, y, z).norm() - s.abs()).abs() < 1e-14);
                }
            }
        }
        assert_eq!(v.get(4, 0, 0).norm(), 0.0);
        assert!(v.data().iter().any(|c| c.im.abs() > 1e-3));
    }

    #[test]
    fn phantom_rejects_small_dims() {
        assert!(phantom3d([8, 8, 7], Phantom::default(), 0).is_err());
    }

    #[test]
    fn single_blob_matches_direct_evaluation() {
        let dims = [12, 10, 14];
        let cloud = blobs_cloud(dims, 1, 3).unwrap();
        let v = phantom3d(dims, Phantom::Blobs { count: 1 }, 3).unwrap();
        let g = cloud.get(0);
        let r = g.sigmas().iter().cloned().fold(0.0, f64::max) * 3.0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let j = [x as f64, y as f64, z as f64];
                    let val = eval_gaussian(&g, j).unwrap();
                    let got = v.get(x, y, z);
                    // Away from the cutoff shell the two must agree.
                    let d: f64 = (0..3).map(|a| (j[a] - g.position[a]).powi(2)).sum::<f64>().sqrt();
                    if d < 0.5 * r / 3.0 {
                        assert!((got - val).norm() < 1e-10);
                    }
                    assert!(got == Complex64::new(0.0, 0.0) || (got - val).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn coils_have_unit_ssos() {
        let dims = [10, 12, 8];
        let one = synth_coils(dims, 1, 5).unwrap();
        assert!(one[0].data().iter().all(|c| (c.norm() - 1.0).abs() < 1e-12));
        let maps = synth_coils(dims, 6, 5).unwrap();
        for j in 0..maps[0].len() {
            let s: f64 = maps.iter().map(|m| m.data()[j].norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert_eq!(maps, synth_coils(dims, 6, 5).unwrap());
        assert_ne!(maps, synth_coils(dims, 6, 6).unwrap());
        assert!(synth_coils(dims, 0, 5).is_err());
    }

    fn assert_mask_contract(m: &Mask, calib: usize) {
        let [nx, ny, nz] = m.dims();
        for z in 0..nz {
            for y in 0..ny {
                let first = m.get(0, y, z);
                assert!((1..nx).all(|x| m.get(x, y, z) == first));
            }
        }
        for z in calib_range(nz, calib) {
            for y in calib_range(ny, calib) {
                assert!(m.get(0, y, z));
            }
        }
    }

    #[test]
    fn mask_budget_and_contract() {
        let m = gen_mask([8, 64, 64], 4.0, 16, 0.25, 1).unwrap();
        assert_eq!(m.count(), 1024 * 8);
        assert_eq!(m.acceleration(), 4.0);
        assert_mask_contract(&m, 16);
        for r in [2.0, 8.0, 3.3] {
            let m = gen_mask([6, 40, 36], r, 8, 0.25, 2).unwrap();
            assert!((m.acceleration() / r - 1.0).abs() < 0.05);
            assert_mask_contract(&m, 8);
        }
        assert_eq!(gen_mask([4, 8, 8], 1.0, 4, 0.25, 0).unwrap().count(), 256);
    }

    #[test]
    fn mask_prefers_the_center() {
        let m = gen_mask([1, 64, 64], 8.0, 4, 0.15, 9).unwrap();
        let near = |y: usize, z: usize| (y as f64 - 32.0).abs() + (z as f64 - 32.0).abs() < 16.0;
        // Sampled fraction of each region, not raw counts.
        let (mut hit, mut area) = ([0.0; 2], [0.0; 2]);
        for z in 0..64 {
            for y in 0..64 {
                let r = usize::from(!near(y, z));
                area[r] += 1.0;
                if m.get(0, y, z) {
                    hit[r] += 1.0;
                }
            }
        }
        assert!(hit[0] / area[0] > 5.0 * hit[1] / area[1]);
    }

    #[test]
    fn mask_rejects_infeasible_budgets() {
        assert!(matches!(gen_mask([4, 16, 16], 8.0, 8, 0.25, 0), Err(Error::InvalidConfig(_))));
        assert!(gen_mask([4, 16, 16], 0.5, 2, 0.25, 0).is_err());
        assert!(gen_mask([4, 16, 16], 2.0, 2, 0.0, 0).is_err());
    }

    #[test]
    fn simulate_noise_free_and_noisy() {
        let dims = [16; 3];
        let x = phantom3d(dims, Phantom::default(), 0).unwrap();
        let mask = gen_mask(dims, 4.0, 4, 0.25, 0).unwrap();
        let acq = AcquisitionModel::new(mask, synth_coils(dims, 2, 0).unwrap()).unwrap();
        let clean = simulate(&x, &acq, None, 0).unwrap();
        assert_eq!(clean, forward_a(&x, &acq).unwrap());
        let noisy = simulate(&x, &acq, Some(20.0), 1).unwrap();
        let mut diff = 0.0;
        for (a, b) in noisy.coils.iter().zip(&clean.coils) {
            for (j, (u, v)) in a.data().iter().zip(b.data()).enumerate() {
                if acq.mask().data()[j] == 0 {
                    assert_eq!(*u, Complex64::new(0.0, 0.0));
                }
                diff += (u - v).norm_sqr();
            }
        }
        let snr = 10.0 * (clean.norm_sqr() / diff).log10();
        assert!((snr - 20.0).abs() < 1e-9);
        assert_eq!(noisy, simulate(&x, &acq, Some(20.0), 1).unwrap());
    }
}
