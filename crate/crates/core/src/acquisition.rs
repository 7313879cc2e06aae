//! Multicoil Cartesian acquisition: coil weighting, centered orthonormal 3D
//! FFT and k-space masking, together with the exact adjoint.
//!
//! K-space is stored centered: the DC coefficient sits at index `D / 2` on
//! every axis. Both transform directions are scaled by `1 / sqrt(N)`, so the
//! FFT is unitary and the adjoint needs no extra factors.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::volume::{check_dims, num_voxels, ComplexVolume, Dims, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Cached per-axis plans for one grid size.
#[derive(Clone)]
pub struct Fft3Plan {
    dims: Dims,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for Fft3Plan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3Plan").field("dims", &self.dims).finish()
    }
}

impl Fft3Plan {
    pub fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|d| planner.plan_fft(d, FftDirection::Forward));
        let inverse = dims.map(|d| planner.plan_fft(d, FftDirection::Inverse));
        Self { dims, forward, inverse }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// In-place centered orthonormal transform.
    pub fn process(&self, data: &mut [Complex64], direction: Direction) {
        let [nx, ny, nz] = self.dims;
        debug_assert_eq!(data.len(), nx * ny * nz);
        let plans = match direction {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        };

        // x and y lines live inside one z-slice, so slices run in parallel.
        data.par_chunks_mut(nx * ny).for_each(|slice| {
            let mut line = vec![Complex64::new(0.0, 0.0); nx.max(ny)];
            let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len(plans)];
            for row in slice.chunks_mut(nx) {
                line[..nx].copy_from_slice(row);
                transform_line(&plans[0], &mut line[..nx], row, &mut scratch, direction, 1, 0);
            }
            for x in 0..nx {
                for y in 0..ny {
                    line[y] = slice[x + nx * y];
                }
                transform_line(&plans[1], &mut line[..ny], slice, &mut scratch, direction, nx, x);
            }
        });

        // z lines: gather columns for a block of x-y positions at a time.
        let plane = nx * ny;
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len(plans)];
        let mut line = vec![Complex64::new(0.0, 0.0); nz];
        for xy in 0..plane {
            for z in 0..nz {
                line[z] = data[xy + plane * z];
            }
            transform_line(&plans[2], &mut line, data, &mut scratch, direction, plane, xy);
        }

        let s = 1.0 / (num_voxels(self.dims) as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= s);
    }
}

fn scratch_len(plans: &[Arc<dyn Fft<f64>>; 3]) -> usize {
    plans.iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0)
}

/// Transforms `line` (a gathered copy) and scatters it back into `dst` at
/// `offset + stride * k`, applying the centering shift on the k-space side.
#[inline]
fn transform_line(
    plan: &Arc<dyn Fft<f64>>,
    line: &mut [Complex64],
    dst: &mut [Complex64],
    scratch: &mut [Complex64],
    direction: Direction,
    stride: usize,
    offset: usize,
) {
    let n = line.len();
    let half = n / 2;
    match direction {
        Direction::Forward => {
            plan.process_with_scratch(line, scratch);
            for (k, &v) in line.iter().enumerate() {
                dst[offset + stride * ((k + half) % n)] = v;
            }
        }
        Direction::Inverse => {
            // Undo the shift first: centered index (k + half) % n holds frequency k.
            line.rotate_left(half);
            plan.process_with_scratch(line, scratch);
            for (k, &v) in line.iter().enumerate() {
                dst[offset + stride * k] = v;
            }
        }
    }
}

/// One-shot centered orthonormal 3D FFT.
pub fn fft3(v: &ComplexVolume, direction: Direction) -> ComplexVolume {
    let plan = Fft3Plan::new(v.dims());
    let mut out = v.clone();
    plan.process(out.data_mut(), direction);
    out
}

/// Measured multicoil k-space; zero wherever the mask is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    pub coils: Vec<ComplexVolume>,
}

impl KSpaceData {
    /// Wraps raw coil data, zeroing every unsampled location.
    pub fn ingest(mut coils: Vec<ComplexVolume>, mask: &Mask) -> Result<Self> {
        for c in &mut coils {
            c.ensure_dims(mask.dims())?;
            mask.apply(c);
        }
        Ok(Self { coils })
    }

    pub fn num_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coils.iter().map(ComplexVolume::norm_sqr).sum()
    }

    pub fn dot(&self, other: &Self) -> Complex64 {
        self.coils.iter().zip(&other.coils).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coils {
            c.scale(Complex64::new(s, 0.0));
        }
    }
}

/// The acquisition operator: per-coil sensitivity, FFT, then mask.
#[derive(Clone, Debug)]
pub struct AcquisitionModel {
    mask: Mask,
    coil_maps: Vec<ComplexVolume>,
    plan: Fft3Plan,
}

impl AcquisitionModel {
    pub fn new(mask: Mask, coil_maps: Vec<ComplexVolume>) -> Result<Self> {
        let dims = mask.dims();
        check_dims(dims)?;
        if mask.count() == 0 {
            return Err(Error::InvalidArgument("mask samples no k-space location".into()));
        }
        if coil_maps.is_empty() {
            return Err(Error::InvalidArgument("at least one coil map is required".into()));
        }
        for c in &coil_maps {
            c.ensure_dims(dims)?;
            if c.data().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::InvalidArgument("coil map contains non-finite values".into()));
            }
        }
        Ok(Self { mask, coil_maps, plan: Fft3Plan::new(dims) })
    }

    /// Single unit coil with every location sampled.
    pub fn identity(dims: Dims) -> Result<Self> {
        let ones = ComplexVolume::from_fn(dims, |_, _, _| Complex64::new(1.0, 0.0));
        Self::new(Mask::full(dims), vec![ones])
    }

    pub fn dims(&self) -> Dims {
        self.mask.dims()
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn coil_maps(&self) -> &[ComplexVolume] {
        &self.coil_maps
    }

    pub fn num_coils(&self) -> usize {
        self.coil_maps.len()
    }

    pub fn plan(&self) -> &Fft3Plan {
        &self.plan
    }

    fn check_kspace(&self, b: &KSpaceData) -> Result<()> {
        if b.coils.len() != self.coil_maps.len() {
            return Err(Error::dims(&[self.coil_maps.len()], &[b.coils.len()]));
        }
        for c in &b.coils {
            c.ensure_dims(self.dims())?;
        }
        Ok(())
    }
}

pub fn forward_a(x: &ComplexVolume, acq: &AcquisitionModel) -> Result<KSpaceData> {
    x.ensure_dims(acq.dims())?;
    let coils = acq
        .coil_maps
        .iter()
        .map(|s| {
            let data = s.data().iter().zip(x.data()).map(|(s, x)| s * x).collect();
            let mut k = ComplexVolume::from_data(acq.dims(), data)?;
            acq.plan.process(k.data_mut(), Direction::Forward);
            acq.mask.apply(&mut k);
            Ok(k)
        })
        .collect::<Result<_>>()?;
    Ok(KSpaceData { coils })
}

pub fn adjoint_a(b: &KSpaceData, acq: &AcquisitionModel) -> Result<ComplexVolume> {
    acq.check_kspace(b)?;
    let mut out = ComplexVolume::zeros(acq.dims());
    let mut work = ComplexVolume::zeros(acq.dims());
    for (s, bc) in acq.coil_maps.iter().zip(&b.coils) {
        work.data_mut().copy_from_slice(bc.data());
        acq.mask.apply(&mut work);
        acq.plan.process(work.data_mut(), Direction::Inverse);
        for ((o, w), s) in out.data_mut().iter_mut().zip(work.data()).zip(s.data()) {
            *o += s.conj() * w;
        }
    }
    Ok(out)
}

/// Norm used for the data-consistency term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcNorm {
    /// `sum |A x - b|^2`
    #[default]
    SquaredL2,
    /// `sum |A x - b|`, with the residual magnitude floored at 1e-12.
    L1,
}

const L1_FLOOR: f64 = 1e-12;

/// Data-consistency loss and its gradient with respect to the real and
/// imaginary channels of `x`.
pub fn dc_residual(
    x: &ComplexVolume,
    b: &KSpaceData,
    acq: &AcquisitionModel,
    norm: DcNorm,
) -> Result<(f64, ComplexVolume)> {
    acq.check_kspace(b)?;
    let mut r = forward_a(x, acq)?;
    for (rc, bc) in r.coils.iter_mut().zip(&b.coils) {
        for ((v, &bv), &m) in rc.data_mut().iter_mut().zip(bc.data()).zip(acq.mask.data()) {
            *v = if m != 0 { *v - bv } else { Complex64::new(0.0, 0.0) };
        }
    }
    let loss = match norm {
        DcNorm::SquaredL2 => {
            let loss = r.norm_sqr();
            r.scale(2.0);
            loss
        }
        DcNorm::L1 => {
            let mut loss = 0.0;
            for rc in &mut r.coils {
                for v in rc.data_mut() {
                    let a = v.norm();
                    loss += a;
                    *v /= a.max(L1_FLOOR);
                }
            }
            loss
        }
    };
    let grad = adjoint_a(&r, acq)?;
    Ok((loss, grad))
}

/// Rescales measurements so the zero-filled adjoint peaks at magnitude 1.
/// Returns the scaled data and the factor that was divided out.
pub fn normalize_measurements(b: &KSpaceData, acq: &AcquisitionModel) -> Result<(KSpaceData, f64)> {
    let peak = adjoint_a(b, acq)?.max_abs();
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let mut out = b.clone();
    out.scale(1.0 / scale);
    Ok((out, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: Dims, rng: &mut impl Rng) -> ComplexVolume {
        ComplexVolume::from_fn(dims, |_, _, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    /// Direct O(N^2) centered DFT along all three axes.
    fn naive_centered_dft(v: &ComplexVolume) -> ComplexVolume {
        let [nx, ny, nz] = v.dims();
        let n = (nx * ny * nz) as f64;
        ComplexVolume::from_fn(v.dims(), |kx, ky, kz| {
            let f = [
                kx as i64 - (nx / 2) as i64,
                ky as i64 - (ny / 2) as i64,
                kz as i64 - (nz / 2) as i64,
            ];
            let mut acc = Complex64::new(0.0, 0.0);
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * (f[0] as f64 * x as f64 / nx as f64
                                + f[1] as f64 * y as f64 / ny as f64
                                + f[2] as f64 * z as f64 / nz as f64);
                        acc += v.get(x, y, z) * Complex64::from_polar(1.0, ph);
                    }
                }
            }
            acc / n.sqrt()
        })
    }

    #[test]
    fn matches_naive_dft_on_odd_and_even_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dims in [[4, 5, 3], [6, 2, 7]] {
            let v = random_volume(dims, &mut rng);
            let fast = fft3(&v, Direction::Forward);
            let slow = naive_centered_dft(&v);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_volume([8, 6, 5], &mut rng);
        let back = fft3(&fft3(&v, Direction::Forward), Direction::Inverse);
        let err = back.data().iter().zip(v.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        assert!(err.sqrt() <= 1e-12 * v.norm_sqr().sqrt());
    }

    #[test]
    fn constant_volume_maps_to_centered_dc() {
        let dims = [4, 6, 5];
        let c = Complex64::new(0.5, -0.25);
        let v = ComplexVolume::from_fn(dims, |_, _, _| c);
        let k = fft3(&v, Direction::Forward);
        let n = (4.0f64 * 6.0 * 5.0).sqrt();
        for z in 0..5 {
            for y in 0..6 {
                for x in 0..4 {
                    let expected = if (x, y, z) == (2, 3, 2) { c * n } else { Complex64::new(0.0, 0.0) };
                    assert!((k.get(x, y, z) - expected).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn parseval_on_random_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random_volume([16; 3], &mut rng);
        let k = fft3(&v, Direction::Forward);
        assert!((k.norm_sqr().sqrt() - v.norm_sqr().sqrt()).abs() <= 1e-12 * v.norm_sqr().sqrt());
    }

    #[test]
    fn full_mask_unit_coil_is_plain_fft() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = [6, 4, 8];
        let acq = AcquisitionModel::identity(dims).unwrap();
        let x = random_volume(dims, &mut rng);
        let b = forward_a(&x, &acq).unwrap();
        assert_eq!(b.coils[0], fft3(&x, Direction::Forward));
        let back = adjoint_a(&b, &acq).unwrap();
        assert_eq!(back, fft3(&b.coils[0], Direction::Inverse));
    }

    #[test]
    fn empty_mask_rejected_and_zero_kspace() {
        let dims = [4; 3];
        let zeros = Mask::from_data(dims, vec![0; 64]).unwrap();
        let ones = ComplexVolume::from_fn(dims, |_, _, _| Complex64::new(1.0, 0.0));
        assert!(AcquisitionModel::new(zeros.clone(), vec![ones.clone()]).is_err());
        // Masking everything out still yields zero data on ingest.
        let b = KSpaceData::ingest(vec![ones], &zeros).unwrap();
        assert_eq!(b.norm_sqr(), 0.0);
    }

    #[test]
    fn zero_input_adjoint_is_zero() {
        let dims = [4; 3];
        let acq = AcquisitionModel::identity(dims).unwrap();
        let b = KSpaceData { coils: vec![ComplexVolume::zeros(dims)] };
        assert_eq!(adjoint_a(&b, &acq).unwrap().norm_sqr(), 0.0);
    }

    #[test]
    fn dc_loss_is_parseval_for_zero_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [8; 3];
        let acq = AcquisitionModel::identity(dims).unwrap();
        let x = random_volume(dims, &mut rng);
        let b = KSpaceData { coils: vec![ComplexVolume::zeros(dims)] };
        let (loss, _) = dc_residual(&x, &b, &acq, DcNorm::SquaredL2).unwrap();
        assert!((loss - x.norm_sqr()).abs() <= 1e-12 * x.norm_sqr());
    }

    #[test]
    fn dc_loss_vanishes_on_consistent_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dims = [8; 3];
        let coil = random_volume(dims, &mut rng);
        let mask = Mask::from_data(dims, (0..512).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        let acq = AcquisitionModel::new(mask, vec![coil]).unwrap();
        let x = random_volume(dims, &mut rng);
        let b = forward_a(&x, &acq).unwrap();
        for norm in [DcNorm::SquaredL2, DcNorm::L1] {
            let (loss, grad) = dc_residual(&x, &b, &acq, norm).unwrap();
            assert!(loss < 1e-20);
            assert!(grad.norm_sqr() < 1e-20);
        }
    }

    #[test]
    fn mask_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = [4; 3];
        let mask = Mask::from_data(dims, (0..64).map(|i| (i % 2) as u8).collect()).unwrap();
        let mut once = random_volume(dims, &mut rng);
        mask.apply(&mut once);
        let mut twice = once.clone();
        mask.apply(&mut twice);
        assert_eq!(once, twice);
    }

    #[test]
    fn normalization_pins_adjoint_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = [8; 3];
        let acq = AcquisitionModel::identity(dims).unwrap();
        let x = random_volume(dims, &mut rng);
        let b = forward_a(&x, &acq).unwrap();
        let (bn, s) = normalize_measurements(&b, &acq).unwrap();
        assert!((adjoint_a(&bn, &acq).unwrap().max_abs() - 1.0).abs() < 1e-12);
        assert!((s - x.max_abs()).abs() < 1e-12);
    }
}
