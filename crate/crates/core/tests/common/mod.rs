#![allow(dead_code)]

use gsmr_core::acquisition::AcquisitionModel;
use gsmr_core::gaussian::{assemble_covariance, Gaussian, GaussianCloud, Mat3, CUTOFF_MAHALANOBIS_SQ};
use gsmr_core::volume::{num_voxels, ComplexVolume, Dims, Mask};
use num_complex::Complex64;
use rand::Rng;

pub fn random_volume(dims: Dims, rng: &mut impl Rng) -> ComplexVolume {
    ComplexVolume::from_fn(dims, |_, _, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn random_gaussian(dims: Dims, sigma: (f64, f64), rng: &mut impl Rng) -> Gaussian {
    Gaussian {
        position: dims.map(|d| rng.gen_range(-1.0..d as f64)),
        log_scale: [(); 3].map(|_| rng.gen_range(sigma.0.ln()..sigma.1.ln())),
        rotation: [(); 4].map(|_| rng.gen_range(-1.0..1.0)),
        density: [(); 2].map(|_| rng.gen_range(-1.0..1.0)),
    }
}

pub fn random_cloud(n: usize, dims: Dims, sigma: (f64, f64), rng: &mut impl Rng) -> GaussianCloud {
    GaussianCloud::from_gaussians((0..n).map(|_| random_gaussian(dims, sigma, rng)))
}

/// Smooth random coil maps (not normalized) and a random mask that samples
/// roughly `fraction` of k-space.
pub fn random_acquisition(dims: Dims, coils: usize, fraction: f64, rng: &mut impl Rng) -> AcquisitionModel {
    let maps = (0..coils)
        .map(|_| {
            let c: [f64; 3] = dims.map(|d| rng.gen_range(0.0..d as f64));
            let w = rng.gen_range(2.0..6.0) * dims[0] as f64 / 8.0;
            let k: [f64; 3] = [(); 3].map(|_| rng.gen_range(-0.5..0.5));
            ComplexVolume::from_fn(dims, |x, y, z| {
                let r = [x as f64, y as f64, z as f64];
                let d2: f64 = (0..3).map(|a| (r[a] - c[a]).powi(2)).sum();
                let ph: f64 = (0..3).map(|a| k[a] * r[a]).sum();
                Complex64::from_polar(0.2 + (-d2 / (2.0 * w * w)).exp(), ph)
            })
        })
        .collect();
    let mut data: Vec<u8> = (0..num_voxels(dims)).map(|_| rng.gen_bool(fraction) as u8).collect();
    data[0] = 1;
    AcquisitionModel::new(Mask::from_data(dims, data).unwrap(), maps).unwrap()
}

/// General 3x3 inverse by cofactors.
pub fn inverse3(m: &Mat3) -> Mat3 {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = cof[j][i] / det;
        }
    }
    inv
}

/// Dense evaluation: every Gaussian at every voxel, same 3-sigma cutoff,
/// covariance inverted numerically.
pub fn dense_voxelize(cloud: &GaussianCloud, dims: Dims) -> ComplexVolume {
    let prepared: Vec<(Gaussian, Mat3)> = cloud
        .iter()
        .map(|g| (g, inverse3(&assemble_covariance(g.log_scale, g.rotation).unwrap().sigma)))
        .collect();
    ComplexVolume::from_fn(dims, |x, y, z| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (g, p) in &prepared {
            let d = [x as f64 - g.position[0], y as f64 - g.position[1], z as f64 - g.position[2]];
            let mut q = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    q += d[a] * p[a][b] * d[b];
                }
            }
            if q <= CUTOFF_MAHALANOBIS_SQ {
                acc += g.rho() * (-0.5 * q).exp();
            }
        }
        acc
    })
}

/// Relative error between two vectors, ||a - b|| / max(||a||, ||b||).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
