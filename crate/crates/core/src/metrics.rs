//! PSNR and SSIM on magnitude volumes, both anchored to the reference peak.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims};

/// Returned by [`psnr`] for identical inputs.
pub const PSNR_CAP_DB: f64 = 200.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn normalized_magnitudes(recon: &ComplexVolume, reference: &ComplexVolume) -> Result<(Vec<f64>, Vec<f64>)> {
    reference.ensure_dims(recon.dims())?;
    let peak = reference.max_abs();
    if peak == 0.0 {
        return Err(Error::InvalidArgument("reference volume is identically zero".into()));
    }
    let a = recon.data().iter().map(|c| c.norm() / peak).collect();
    let b = reference.data().iter().map(|c| c.norm() / peak).collect();
    Ok((a, b))
}

/// Peak signal-to-noise ratio in dB, with both magnitude volumes divided by
/// the reference peak (so the peak value is 1).
pub fn psnr(recon: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    let (a, b) = normalized_magnitudes(recon, reference)?;
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean structural similarity of the magnitude volumes, computed slice by
/// slice along the last axis with an 11x11 Gaussian window (sigma 1.5) over
/// valid window positions only.
pub fn ssim(recon: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    let (a, b) = normalized_magnitudes(recon, reference)?;
    ssim_magnitudes(&a, &b, recon.dims())
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// SSIM of two already-normalized magnitude volumes (dynamic range 1).
pub fn ssim_magnitudes(a: &[f64], b: &[f64], dims: Dims) -> Result<f64> {
    let [nx, ny, nz] = dims;
    if a.len() != nx * ny * nz || b.len() != a.len() {
        return Err(Error::dims(&[nx * ny * nz], &[a.len(), b.len()]));
    }
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "slices of {nx}x{ny} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let w = gaussian_window();
    let (ox, oy) = (nx - SSIM_WINDOW + 1, ny - SSIM_WINDOW + 1);
    let c1 = K1 * K1;
    let c2 = K2 * K2;

    let per_slice: Vec<f64> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let sa = &a[z * nx * ny..(z + 1) * nx * ny];
            let sb = &b[z * nx * ny..(z + 1) * nx * ny];
            let fields: [Vec<f64>; 5] = [
                sa.to_vec(),
                sb.to_vec(),
                sa.iter().map(|v| v * v).collect(),
                sb.iter().map(|v| v * v).collect(),
                sa.iter().zip(sb).map(|(x, y)| x * y).collect(),
            ];
            let [mu_a, mu_b, aa, bb, ab] = fields.map(|f| filter_valid(&f, nx, ny, &w));
            let mut total = 0.0;
            for k in 0..ox * oy {
                let (ma, mb) = (mu_a[k], mu_b[k]);
                let va = aa[k] - ma * ma;
                let vb = bb[k] - mb * mb;
                let cov = ab[k] - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
            total
        })
        .collect();
    Ok(per_slice.iter().sum::<f64>() / (nz * ox * oy) as f64)
}

/// Separable valid-mode filtering of one `nx x ny` slice.
fn filter_valid(img: &[f64], nx: usize, ny: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ox = nx - SSIM_WINDOW + 1;
    let oy = ny - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ox * ny];
    for y in 0..ny {
        let line = &img[y * nx..(y + 1) * nx];
        for x in 0..ox {
            rows[y * ox + x] = w.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; ox * oy];
    for y in 0..oy {
        for x in 0..ox {
            out[y * ox + x] = (0..SSIM_WINDOW).map(|k| w[k] * rows[(y + k) * ox + x]).sum();
        }
    }
    out
}
