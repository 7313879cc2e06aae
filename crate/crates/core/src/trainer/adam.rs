use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::voxelizer::CloudGradients;

use super::config::{AdamParams, GroupRates};

/// Adam first and second moments, index-aligned with the cloud.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamMoments {
    pub first: CloudGradients,
    pub second: CloudGradients,
    /// Number of updates applied so far (drives bias correction).
    pub step: u64,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self { first: CloudGradients::zeros(n), second: CloudGradients::zeros(n), step: 0 }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn push_zero(&mut self) {
        for g in [&mut self.first, &mut self.second] {
            g.positions.push([0.0; 3]);
            g.log_scales.push([0.0; 3]);
            g.rotations.push([0.0; 4]);
            g.densities.push([0.0; 2]);
        }
    }

    pub fn reset(&mut self, i: usize) {
        for g in [&mut self.first, &mut self.second] {
            g.positions[i] = [0.0; 3];
            g.log_scales[i] = [0.0; 3];
            g.rotations[i] = [0.0; 4];
            g.densities[i] = [0.0; 2];
        }
    }

    pub fn retain_indices(&mut self, keep: &[bool]) {
        fn compact<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut k = keep.iter();
            v.retain(|_| *k.next().unwrap());
        }
        for g in [&mut self.first, &mut self.second] {
            compact(&mut g.positions, keep);
            compact(&mut g.log_scales, keep);
            compact(&mut g.rotations, keep);
            compact(&mut g.densities, keep);
        }
    }
}

/// Bias-corrected Adam update of a flat parameter slice.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    lr: f64,
    step: u64,
    hp: &AdamParams,
) {
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(first.iter_mut()).zip(second.iter_mut()) {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

fn flat<const N: usize>(v: &mut [[f64; N]]) -> &mut [f64] {
    v.as_flattened_mut()
}

/// One Adam step over all four parameter groups.
pub fn adam_step(
    cloud: &mut GaussianCloud,
    grads: &CloudGradients,
    moments: &mut AdamMoments,
    rates: &GroupRates,
    hp: &AdamParams,
) -> Result<()> {
    if grads.len() != cloud.len() || moments.len() != cloud.len() {
        return Err(Error::dims(&[cloud.len()], &[grads.len(), moments.len()]));
    }
    if let Some(pos) = grads.values().position(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite gradient at flat index {pos}")));
    }
    moments.step += 1;
    let t = moments.step;
    let (m, v) = (&mut moments.first, &mut moments.second);
    adam_update(
        flat(&mut cloud.positions),
        grads.positions.as_flattened(),
        flat(&mut m.positions),
        flat(&mut v.positions),
        rates.position,
        t,
        hp,
    );
    adam_update(
        flat(&mut cloud.log_scales),
        grads.log_scales.as_flattened(),
        flat(&mut m.log_scales),
        flat(&mut v.log_scales),
        rates.log_scale,
        t,
        hp,
    );
    adam_update(
        flat(&mut cloud.rotations),
        grads.rotations.as_flattened(),
        flat(&mut m.rotations),
        flat(&mut v.rotations),
        rates.rotation,
        t,
        hp,
    );
    adam_update(
        flat(&mut cloud.densities),
        grads.densities.as_flattened(),
        flat(&mut m.densities),
        flat(&mut v.densities),
        rates.density,
        t,
        hp,
    );
    Ok(())
}
