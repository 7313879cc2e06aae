//! Tile-parallel voxelization of a Gaussian cloud and its analytic backward pass.
//!
//! The grid is cut into 8x8x8 tiles (edge tiles are clamped, not padded). Each
//! Gaussian is listed in every tile its 3-sigma bounding box touches; a tile
//! then sums its listed Gaussians, in ascending index order, over its own
//! voxels. Every contribution additionally passes a per-voxel Mahalanobis test
//! so the support is exactly the 3-sigma ellipsoid, identical in forward and
//! backward.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{
    bounding_radius, normalize_quat, rotate_diag, rotation_from_unit_quat, rotation_quat_jacobian,
    GaussianCloud, Mat3, CUTOFF_MAHALANOBIS_SQ,
};
use crate::volume::{check_dims, linear_index, ComplexVolume, Dims};

pub const TILE_EDGE: usize = 8;

/// Per-tile lists of the Gaussians whose bounding box touches the tile.
#[derive(Clone, Debug, PartialEq)]
pub struct TileIndex {
    pub dims: Dims,
    pub tile_dims: [usize; 3],
    pub num_gaussians: usize,
    /// Indexed by `tx + Tx * (ty + Ty * tz)`; each list is strictly ascending.
    pub per_tile_gaussians: Vec<Vec<u32>>,
}

impl TileIndex {
    pub fn num_tiles(&self) -> usize {
        self.per_tile_gaussians.len()
    }

    pub fn tile_id(&self, t: [usize; 3]) -> usize {
        t[0] + self.tile_dims[0] * (t[1] + self.tile_dims[1] * t[2])
    }

    /// Inclusive voxel range `[lo, hi]` per axis covered by tile `id`.
    pub fn tile_extent(&self, id: usize) -> [[usize; 2]; 3] {
        let t = [
            id % self.tile_dims[0],
            (id / self.tile_dims[0]) % self.tile_dims[1],
            id / (self.tile_dims[0] * self.tile_dims[1]),
        ];
        [0, 1, 2].map(|a| {
            let lo = t[a] * TILE_EDGE;
            [lo, (lo + TILE_EDGE).min(self.dims[a]) - 1]
        })
    }
}

/// Gradients for every parameter group of a cloud.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CloudGradients {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub densities: Vec<[f64; 2]>,
}

impl CloudGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            densities: vec![[0.0; 2]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Iterates over every scalar in a fixed group order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.positions
            .iter()
            .flatten()
            .chain(self.log_scales.iter().flatten())
            .chain(self.rotations.iter().flatten())
            .chain(self.densities.iter().flatten())
            .copied()
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Per-Gaussian quantities shared by forward and backward.
#[derive(Clone, Copy, Debug)]
struct Prepared {
    center: [f64; 3],
    conic: Mat3,
    rho: [f64; 2],
    lo: [i64; 3],
    hi: [i64; 3],
}

fn support_box(center: [f64; 3], radius: f64) -> ([i64; 3], [i64; 3]) {
    let lo = center.map(|c| (c - radius).ceil() as i64);
    let hi = center.map(|c| (c + radius).floor() as i64);
    (lo, hi)
}

fn prepare(cloud: &GaussianCloud) -> Result<Vec<Prepared>> {
    (0..cloud.len())
        .map(|i| {
            let g = cloud.get(i);
            let (q, _) = normalize_quat(g.rotation)?;
            let r = rotation_from_unit_quat(q);
            let conic = rotate_diag(&r, g.log_scale.map(|l| (-2.0 * l).exp()));
            let (lo, hi) = support_box(g.position, bounding_radius(&g));
            Ok(Prepared { center: g.position, conic, rho: g.density, lo, hi })
        })
        .collect()
}

/// Intersects a Gaussian's box with the inclusive range `ext`; `None` if empty.
#[inline]
fn clip(p: &Prepared, ext: &[[usize; 2]; 3]) -> Option<[[usize; 2]; 3]> {
    let mut out = [[0usize; 2]; 3];
    for a in 0..3 {
        let lo = p.lo[a].max(ext[a][0] as i64);
        let hi = p.hi[a].min(ext[a][1] as i64);
        if lo > hi {
            return None;
        }
        out[a] = [lo as usize, hi as usize];
    }
    Some(out)
}

/// Visits every voxel of `range` inside the 3-sigma ellipsoid, passing the
/// voxel coordinates, the offset `j - p` and the squared Mahalanobis distance.
#[inline(always)]
fn for_each_support_voxel(
    p: &Prepared,
    range: &[[usize; 2]; 3],
    mut f: impl FnMut([usize; 3], [f64; 3], f64),
) {
    let c = &p.conic;
    let (cxx, cxy, cxz, cyy, cyz, czz) = (c[0][0], c[0][1], c[0][2], c[1][1], c[1][2], c[2][2]);
    for z in range[2][0]..=range[2][1] {
        let dz = z as f64 - p.center[2];
        for y in range[1][0]..=range[1][1] {
            let dy = y as f64 - p.center[1];
            let b = cxy * dy + cxz * dz;
            let c0 = cyy * dy * dy + czz * dz * dz + 2.0 * cyz * dy * dz;
            // Row-wise root bracket of cxx*dx^2 + 2*b*dx + c0 <= 9, padded so the
            // exact per-voxel test below decides the boundary.
            let disc = b * b - cxx * (c0 - CUTOFF_MAHALANOBIS_SQ);
            if disc < 0.0 {
                continue;
            }
            let s = disc.sqrt();
            let xa = p.center[0] + (-b - s) / cxx - 1e-6;
            let xb = p.center[0] + (-b + s) / cxx + 1e-6;
            let x0 = (xa.ceil().max(range[0][0] as f64)) as usize;
            let xb = xb.floor();
            if xb < x0 as f64 {
                continue;
            }
            let x1 = (xb as usize).min(range[0][1]);
            for x in x0..=x1 {
                let dx = x as f64 - p.center[0];
                let q = cxx * dx * dx + 2.0 * dx * b + c0;
                if q <= CUTOFF_MAHALANOBIS_SQ {
                    f([x, y, z], [dx, dy, dz], q);
                }
            }
        }
    }
}

pub fn assign_tiles(cloud: &GaussianCloud, dims: Dims) -> Result<TileIndex> {
    check_dims(dims)?;
    let tile_dims = dims.map(|d| d.div_ceil(TILE_EDGE));
    let mut per_tile = vec![Vec::new(); tile_dims.iter().product()];
    let grid = dims.map(|d| [0usize, d - 1]);
    for i in 0..cloud.len() {
        let g = cloud.get(i);
        let (lo, hi) = support_box(g.position, bounding_radius(&g));
        let p = Prepared { center: g.position, conic: [[0.0; 3]; 3], rho: [0.0; 2], lo, hi };
        let Some(r) = clip(&p, &grid) else { continue };
        let t = r.map(|[a, b]| [a / TILE_EDGE, b / TILE_EDGE]);
        for tz in t[2][0]..=t[2][1] {
            for ty in t[1][0]..=t[1][1] {
                for tx in t[0][0]..=t[0][1] {
                    per_tile[tx + tile_dims[0] * (ty + tile_dims[1] * tz)].push(i as u32);
                }
            }
        }
    }
    Ok(TileIndex { dims, tile_dims, num_gaussians: cloud.len(), per_tile_gaussians: per_tile })
}

fn check_index(cloud: &GaussianCloud, dims: Dims, index: &TileIndex) -> Result<()> {
    check_dims(dims)?;
    if index.dims != dims {
        return Err(Error::dims(&dims, &index.dims));
    }
    if index.num_gaussians != cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "tile index built for {} gaussians, cloud has {}",
            index.num_gaussians,
            cloud.len()
        )));
    }
    Ok(())
}

pub fn voxelize_forward(cloud: &GaussianCloud, dims: Dims, index: &TileIndex) -> Result<ComplexVolume> {
    check_index(cloud, dims, index)?;
    let prepared = prepare(cloud)?;
    let tiles: Vec<(usize, Vec<Complex64>)> = (0..index.num_tiles())
        .into_par_iter()
        .filter(|&t| !index.per_tile_gaussians[t].is_empty())
        .map(|t| {
            let ext = index.tile_extent(t);
            let n = ext.map(|[a, b]| b - a + 1);
            let mut buf = vec![Complex64::new(0.0, 0.0); n[0] * n[1] * n[2]];
            for &gi in &index.per_tile_gaussians[t] {
                let p = &prepared[gi as usize];
                let Some(range) = clip(p, &ext) else { continue };
                let rho = Complex64::new(p.rho[0], p.rho[1]);
                for_each_support_voxel(p, &range, |v, _, q| {
                    let k = (v[0] - ext[0][0]) + n[0] * ((v[1] - ext[1][0]) + n[1] * (v[2] - ext[2][0]));
                    buf[k] += rho * (-0.5 * q).exp();
                });
            }
            (t, buf)
        })
        .collect();

    let mut out = ComplexVolume::zeros(dims);
    let data = out.data_mut();
    for (t, buf) in tiles {
        let ext = index.tile_extent(t);
        let nx = ext[0][1] - ext[0][0] + 1;
        let mut k = 0;
        for z in ext[2][0]..=ext[2][1] {
            for y in ext[1][0]..=ext[1][1] {
                let start = linear_index(dims, ext[0][0], y, z);
                data[start..start + nx].copy_from_slice(&buf[k..k + nx]);
                k += nx;
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper building the tile index internally.
pub fn voxelize(cloud: &GaussianCloud, dims: Dims) -> Result<ComplexVolume> {
    let index = assign_tiles(cloud, dims)?;
    voxelize_forward(cloud, dims, &index)
}

struct Partial {
    w_gre: f64,
    w_gim: f64,
    cd: [f64; 3],
    cdd: [f64; 6],
}

/// Pulls a volume-space gradient back to every Gaussian parameter.
///
/// `grad_volume` holds dL/dRe in its real part and dL/dIm in its imaginary
/// part. Also accumulates the positional-gradient norm into the cloud's
/// densification statistics.
pub fn voxelize_backward(
    cloud: &mut GaussianCloud,
    dims: Dims,
    index: &TileIndex,
    grad_volume: &ComplexVolume,
) -> Result<CloudGradients> {
    check_index(cloud, dims, index)?;
    grad_volume.ensure_dims(dims)?;
    let gv = grad_volume.data();
    let grid = dims.map(|d| [0usize, d - 1]);

    let grads: Vec<([f64; 3], [f64; 3], [f64; 4], [f64; 2])> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let g = cloud.get(i);
            let (q, qn) = normalize_quat(g.rotation)?;
            let r = rotation_from_unit_quat(q);
            let inv_var = g.log_scale.map(|l| (-2.0 * l).exp());
            let conic = rotate_diag(&r, inv_var);
            let (lo, hi) = support_box(g.position, bounding_radius(&g));
            let p = Prepared { center: g.position, conic, rho: g.density, lo, hi };

            let mut acc = Partial { w_gre: 0.0, w_gim: 0.0, cd: [0.0; 3], cdd: [0.0; 6] };
            if let Some(range) = clip(&p, &grid) {
                for_each_support_voxel(&p, &range, |v, d, qf| {
                    let gj = gv[linear_index(dims, v[0], v[1], v[2])];
                    let w = (-0.5 * qf).exp();
                    acc.w_gre += w * gj.re;
                    acc.w_gim += w * gj.im;
                    let c = w * (gj.re * p.rho[0] + gj.im * p.rho[1]);
                    acc.cd[0] += c * d[0];
                    acc.cd[1] += c * d[1];
                    acc.cd[2] += c * d[2];
                    acc.cdd[0] += c * d[0] * d[0];
                    acc.cdd[1] += c * d[0] * d[1];
                    acc.cdd[2] += c * d[0] * d[2];
                    acc.cdd[3] += c * d[1] * d[1];
                    acc.cdd[4] += c * d[1] * d[2];
                    acc.cdd[5] += c * d[2] * d[2];
                });
            }

            // dL/dp = P * sum(c d)
            let dp = [0, 1, 2].map(|a| (0..3).map(|b| conic[a][b] * acc.cd[b]).sum::<f64>());

            // dL/dP = -1/2 sum(c d d^T)
            let s = acc.cdd;
            let gp: Mat3 = [
                [-0.5 * s[0], -0.5 * s[1], -0.5 * s[2]],
                [-0.5 * s[1], -0.5 * s[3], -0.5 * s[4]],
                [-0.5 * s[2], -0.5 * s[4], -0.5 * s[5]],
            ];
            // P = R diag(e^{-2l}) R^T
            let mut gr = [[0.0; 3]; 3];
            let mut dl = [0.0; 3];
            for k in 0..3 {
                let gcol = [0, 1, 2].map(|a| (0..3).map(|b| gp[a][b] * r[b][k]).sum::<f64>());
                let rgr: f64 = (0..3).map(|a| r[a][k] * gcol[a]).sum();
                dl[k] = -2.0 * inv_var[k] * rgr;
                for a in 0..3 {
                    gr[a][k] = 2.0 * gcol[a] * inv_var[k];
                }
            }
            let jac = rotation_quat_jacobian(q);
            let dq_unit = jac.map(|dr| {
                let mut t = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        t += gr[a][b] * dr[a][b];
                    }
                }
                t
            });
            let proj: f64 = (0..4).map(|k| q[k] * dq_unit[k]).sum();
            let dq = [0, 1, 2, 3].map(|k| (dq_unit[k] - q[k] * proj) / qn);

            Ok((dp, dl, dq, [acc.w_gre, acc.w_gim]))
        })
        .collect::<Result<_>>()?;

    let mut out = CloudGradients::zeros(cloud.len());
    for (i, (dp, dl, dq, dr)) in grads.into_iter().enumerate() {
        out.positions[i] = dp;
        out.log_scales[i] = dl;
        out.rotations[i] = dq;
        out.densities[i] = dr;
        cloud.grad_accum[i] += (dp[0] * dp[0] + dp[1] * dp[1] + dp[2] * dp[2]).sqrt();
        cloud.grad_count[i] += 1;
    }
    Ok(out)
}

/// Total number of (tile, gaussian) pairs, a proxy for voxelization cost.
pub fn replication_count(index: &TileIndex) -> usize {
    index.per_tile_gaussians.iter().map(Vec::len).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;

    #[test]
    fn single_tile_assignment() {
        let cloud = GaussianCloud::from_gaussians([Gaussian::isotropic(
            [4.0; 3],
            0.5,
            Complex64::new(1.0, 0.0),
        )]);
        let idx = assign_tiles(&cloud, [16; 3]).unwrap();
        assert_eq!(idx.tile_dims, [2, 2, 2]);
        let occupied: Vec<usize> = (0..idx.num_tiles())
            .filter(|&t| !idx.per_tile_gaussians[t].is_empty())
            .collect();
        assert_eq!(occupied, vec![0]);
    }

    #[test]
    fn straddling_gaussian_hits_all_tiles() {
        let cloud = GaussianCloud::from_gaussians([Gaussian::isotropic(
            [8.0; 3],
            0.5,
            Complex64::new(1.0, 0.0),
        )]);
        let idx = assign_tiles(&cloud, [16; 3]).unwrap();
        assert!(idx.per_tile_gaussians.iter().all(|l| l == &vec![0]));
    }

    #[test]
    fn partial_edge_tiles() {
        let idx = assign_tiles(&GaussianCloud::new(), [10, 17, 8]).unwrap();
        assert_eq!(idx.tile_dims, [2, 3, 1]);
        assert_eq!(idx.tile_extent(idx.tile_id([1, 2, 0])), [[8, 9], [16, 16], [0, 7]]);
    }

    #[test]
    fn outside_gaussian_in_no_tile() {
        let cloud = GaussianCloud::from_gaussians([Gaussian::isotropic(
            [-10.0, 4.0, 4.0],
            1.0,
            Complex64::new(1.0, 0.0),
        )]);
        let idx = assign_tiles(&cloud, [16; 3]).unwrap();
        assert_eq!(replication_count(&idx), 0);
        let v = voxelize_forward(&cloud, [16; 3], &idx).unwrap();
        assert_eq!(v.norm_sqr(), 0.0);
    }

    #[test]
    fn empty_cloud_voxelizes_to_zero() {
        let v = voxelize(&GaussianCloud::new(), [9, 9, 9]).unwrap();
        assert!(v.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn center_and_face_neighbor_values() {
        let cloud = GaussianCloud::from_gaussians([Gaussian::isotropic(
            [5.0, 6.0, 7.0],
            1.0,
            Complex64::new(1.0, 0.0),
        )]);
        let v = voxelize(&cloud, [16; 3]).unwrap();
        assert_eq!(v.get(5, 6, 7), Complex64::new(1.0, 0.0));
        assert!((v.get(6, 6, 7).re - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v.get(5, 6, 6).re - (-0.5f64).exp()).abs() < 1e-15);
        // Exactly on the cutoff (distance 3) is kept, just past it is dropped.
        assert!((v.get(8, 6, 7).re - (-4.5f64).exp()).abs() < 1e-15);
        assert_eq!(v.get(8, 7, 7), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn zero_grad_volume_gives_zero_gradients() {
        let mut cloud = GaussianCloud::from_gaussians([
            Gaussian::isotropic([3.0; 3], 1.2, Complex64::new(1.0, 0.5)),
            Gaussian::isotropic([5.5, 2.0, 4.0], 0.7, Complex64::new(-0.3, 0.2)),
        ]);
        let dims = [8; 3];
        let idx = assign_tiles(&cloud, dims).unwrap();
        let g = voxelize_backward(&mut cloud, dims, &idx, &ComplexVolume::zeros(dims)).unwrap();
        assert!(g.values().all(|v| v == 0.0));
        assert_eq!(cloud.grad_count, vec![1, 1]);
        assert_eq!(cloud.grad_accum, vec![0.0, 0.0]);
    }

    #[test]
    fn density_gradient_is_kernel_value() {
        let mut cloud = GaussianCloud::from_gaussians([Gaussian {
            position: [3.2, 3.9, 4.1],
            log_scale: [0.1, -0.2, 0.3],
            rotation: [0.9, 0.1, -0.2, 0.3],
            density: [0.7, -0.4],
        }]);
        let dims = [8; 3];
        let mut gv = ComplexVolume::zeros(dims);
        gv.set(4, 4, 4, Complex64::new(1.0, 0.0));
        let idx = assign_tiles(&cloud, dims).unwrap();
        let g = voxelize_backward(&mut cloud, dims, &idx, &gv).unwrap();
        let mut unit = cloud.get(0);
        unit.density = [1.0, 0.0];
        let k = crate::gaussian::eval_gaussian(&unit, [4.0; 3]).unwrap().re;
        assert!((g.densities[0][0] - k).abs() < 1e-15);
        assert_eq!(g.densities[0][1], 0.0);
    }

    #[test]
    fn mismatched_gradient_dims_rejected() {
        let mut cloud = GaussianCloud::new();
        let idx = assign_tiles(&cloud, [8; 3]).unwrap();
        let err = voxelize_backward(&mut cloud, [8; 3], &idx, &ComplexVolume::zeros([8, 8, 9]))
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
