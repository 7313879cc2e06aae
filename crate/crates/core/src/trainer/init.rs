use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{adjoint_a, AcquisitionModel, KSpaceData};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianCloud};
use crate::volume::{linear_index, num_voxels, Dims};

use super::TrainConfig;

const IDENTITY_QUAT: [f64; 4] = [1.0, 0.0, 0.0, 0.0];
/// Scale used when a point has no neighbors at all (a single-point cloud).
const LONE_POINT_SIGMA: f64 = 1.0;

/// Seeds a cloud from the zero-filled image.
///
/// Samples `cfg.init_points` distinct grid points, gives each an isotropic
/// scale equal to the mean distance to its three nearest sampled neighbors,
/// identity rotation, and `density_scale` times the (peak-normalized)
/// zero-filled value as density.
pub fn init_cloud(
    b: &KSpaceData,
    acq: &AcquisitionModel,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GaussianCloud> {
    let dims = acq.dims();
    let n = num_voxels(dims);
    let m = cfg.init_points;
    if m == 0 || m > n {
        return Err(Error::InvalidConfig(format!(
            "init_points must be in 1..={n} for a {dims:?} grid, got {m}"
        )));
    }
    let mut x0 = adjoint_a(b, acq)?;
    let peak = x0.max_abs();
    if peak > 0.0 {
        x0.scale(Complex64::new(1.0 / peak, 0.0));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    let points: Vec<[i64; 3]> = picked
        .iter()
        .map(|&i| {
            let x = i % dims[0];
            let y = (i / dims[0]) % dims[1];
            let z = i / (dims[0] * dims[1]);
            [x as i64, y as i64, z as i64]
        })
        .collect();
    let sigmas = mean_neighbor_distances(&points, dims, 3);

    let mut cloud = GaussianCloud::with_capacity(m);
    for (p, s) in points.iter().zip(sigmas) {
        let v = x0.get(p[0] as usize, p[1] as usize, p[2] as usize) * cfg.density_scale;
        let sigma = if s > 0.0 { s } else { LONE_POINT_SIGMA };
        cloud.push(Gaussian {
            position: p.map(|c| c as f64),
            log_scale: [sigma.ln(); 3],
            rotation: IDENTITY_QUAT,
            density: [v.re, v.im],
        });
    }
    Ok(cloud)
}

/// Mean Euclidean distance from each point to its `k` nearest other points
/// (fewer if the set is smaller). Points must be distinct grid coordinates.
///
/// Searches Chebyshev shells of growing radius on an occupancy grid; the
/// search for a point ends once its k-th best squared distance is within
/// the scanned radius, so the result is exact.
pub fn mean_neighbor_distances(points: &[[i64; 3]], dims: Dims, k: usize) -> Vec<f64> {
    let k = k.min(points.len().saturating_sub(1));
    if k == 0 {
        return vec![0.0; points.len()];
    }
    let mut occupied = vec![false; num_voxels(dims)];
    for p in points {
        occupied[linear_index(dims, p[0] as usize, p[1] as usize, p[2] as usize)] = true;
    }
    let d = dims.map(|v| v as i64);
    let max_r = d[0].max(d[1]).max(d[2]);
    let is_set = |x: i64, y: i64, z: i64| {
        x >= 0
            && y >= 0
            && z >= 0
            && x < d[0]
            && y < d[1]
            && z < d[2]
            && occupied[linear_index(dims, x as usize, y as usize, z as usize)]
    };

    points
        .iter()
        .map(|p| {
            let mut best: Vec<i64> = Vec::with_capacity(k + 1);
            for r in 1..=max_r {
                for dz in -r..=r {
                    for dy in -r..=r {
                        let on_face = dz.abs() == r || dy.abs() == r;
                        let step = if on_face { 1 } else { 2 * r };
                        let mut dx = -r;
                        while dx <= r {
                            if is_set(p[0] + dx, p[1] + dy, p[2] + dz) {
                                insert_sorted(&mut best, dx * dx + dy * dy + dz * dz, k);
                            }
                            dx += step;
                        }
                    }
                }
                if best.len() == k && best[k - 1] <= r * r {
                    break;
                }
            }
            best.iter().map(|&d2| (d2 as f64).sqrt()).sum::<f64>() / k as f64
        })
        .collect()
}

fn insert_sorted(best: &mut Vec<i64>, d2: i64, k: usize) {
    if best.len() < k || d2 < best[best.len() - 1] {
        let pos = best.partition_point(|&b| b <= d2);
        best.insert(pos, d2);
        best.truncate(k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{ComplexVolume, Mask};
    use rand::Rng;

    fn brute_force(points: &[[i64; 3]], k: usize) -> Vec<f64> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d2: Vec<i64> = points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| (0..3).map(|a| (p[a] - q[a]).pow(2)).sum())
                    .collect();
                d2.sort_unstable();
                d2[..k].iter().map(|&v| (v as f64).sqrt()).sum::<f64>() / k as f64
            })
            .collect()
    }

    fn acq_and_data(dims: Dims) -> (AcquisitionModel, KSpaceData) {
        let acq = AcquisitionModel::identity(dims).unwrap();
        let x = ComplexVolume::from_fn(dims, |x, y, z| Complex64::new(1.0 + x as f64, y as f64 - z as f64));
        let b = crate::acquisition::forward_a(&x, &acq).unwrap();
        (acq, b)
    }

    #[test]
    fn knn_matches_brute_force_on_sparse_sample() {
        let dims = [64; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let idx = rand::seq::index::sample(&mut rng, 64 * 64 * 64, 500).into_vec();
        let points: Vec<[i64; 3]> = idx
            .iter()
            .map(|&i| [(i % 64) as i64, ((i / 64) % 64) as i64, (i / 4096) as i64])
            .collect();
        assert_eq!(mean_neighbor_distances(&points, dims, 3), brute_force(&points, 3));
    }

    #[test]
    fn knn_matches_brute_force_on_dense_and_tiny_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = [7, 5, 6];
        let mut points = Vec::new();
        for z in 0..6 {
            for y in 0..5 {
                for x in 0..7 {
                    if rng.gen_bool(0.3) {
                        points.push([x, y, z]);
                    }
                }
            }
        }
        assert_eq!(mean_neighbor_distances(&points, dims, 3), brute_force(&points, 3));
        let pair = [[0, 0, 0], [3, 4, 0]];
        assert_eq!(mean_neighbor_distances(&pair, dims, 3), vec![5.0, 5.0]);
    }

    #[test]
    fn full_grid_selects_every_point_once() {
        let dims = [4; 3];
        let (acq, b) = acq_and_data(dims);
        let cfg = TrainConfig { init_points: 64, ..Default::default() };
        let cloud = init_cloud(&b, &acq, &cfg, 3).unwrap();
        let mut seen: Vec<[i64; 3]> = cloud.positions.iter().map(|p| p.map(|c| c as i64)).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 64);
        // Every point has six face neighbors at distance 1 on a full grid.
        assert!(cloud.log_scales.iter().all(|l| l.iter().all(|&v| v == 0.0)));
        assert!(cloud.rotations.iter().all(|q| *q == IDENTITY_QUAT));
    }

    #[test]
    fn densities_follow_normalized_zero_filled_image() {
        let dims = [4; 3];
        let (acq, b) = acq_and_data(dims);
        let cfg = TrainConfig { init_points: 10, density_scale: 0.5, ..Default::default() };
        let cloud = init_cloud(&b, &acq, &cfg, 8).unwrap();
        let x0 = adjoint_a(&b, &acq).unwrap();
        let peak = x0.max_abs();
        for (p, d) in cloud.positions.iter().zip(&cloud.densities) {
            let v = x0.get(p[0] as usize, p[1] as usize, p[2] as usize) / peak * 0.5;
            assert!((d[0] - v.re).abs() < 1e-12 && (d[1] - v.im).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_density_scale_voxelizes_to_zero() {
        let dims = [8; 3];
        let (acq, b) = acq_and_data(dims);
        let cfg = TrainConfig { init_points: 40, density_scale: 0.0, ..Default::default() };
        let cloud = init_cloud(&b, &acq, &cfg, 0).unwrap();
        assert_eq!(crate::voxelizer::voxelize(&cloud, dims).unwrap().norm_sqr(), 0.0);
    }

    #[test]
    fn too_many_points_rejected() {
        let dims = [4; 3];
        let acq = AcquisitionModel::new(
            Mask::full(dims),
            vec![ComplexVolume::from_fn(dims, |_, _, _| Complex64::new(1.0, 0.0))],
        )
        .unwrap();
        let b = KSpaceData { coils: vec![ComplexVolume::zeros(dims)] };
        let cfg = TrainConfig { init_points: 65, ..Default::default() };
        assert!(matches!(init_cloud(&b, &acq, &cfg, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn single_point_gets_fallback_scale() {
        let dims = [4; 3];
        let (acq, b) = acq_and_data(dims);
        let cfg = TrainConfig { init_points: 1, ..Default::default() };
        let cloud = init_cloud(&b, &acq, &cfg, 0).unwrap();
        assert_eq!(cloud.log_scales[0], [LONE_POINT_SIGMA.ln(); 3]);
    }
}
