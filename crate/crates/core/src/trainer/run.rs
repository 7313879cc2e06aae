use std::collections::VecDeque;
use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{normalize_measurements, AcquisitionModel, KSpaceData};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::metrics::{psnr, ssim};
use crate::objective::total_objective;
use crate::report::{IterRecord, ReconReport, StopReason};
use crate::volume::ComplexVolume;
use crate::voxelizer::voxelize;

use super::adam::{adam_step, AdamMoments};
use super::adaptive::{densify, prune};
use super::config::{GroupRates, TrainConfig};
use super::init::init_cloud;

/// Evaluations without PSNR/SSIM improvement before a metric plateau stops training.
const METRIC_PLATEAU_EVALS: usize = 5;
const METRIC_PSNR_GAIN_DB: f64 = 0.01;
const METRIC_SSIM_GAIN: f64 = 1e-4;

/// Mutable optimizer state carried across iterations.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub iteration: usize,
    pub moments: AdamMoments,
    /// The most recent `plateau_window + 1` losses.
    pub loss_history: VecDeque<f64>,
    pub rates: GroupRates,
    pub rng: ChaCha8Rng,
    pub seed: u64,
}

impl TrainState {
    pub fn new(num_gaussians: usize, cfg: &TrainConfig, rates: GroupRates) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Self {
            iteration: 0,
            moments: AdamMoments::zeros(num_gaussians),
            loss_history: VecDeque::with_capacity(cfg.plateau_window + 1),
            rates,
            rng,
            seed: cfg.seed,
        }
    }

    /// Pushes a loss and reports whether the relative improvement over the
    /// window fell below `tol`. The window restarts after every densification.
    fn plateaued(&mut self, loss: f64, window: usize, tol: f64) -> bool {
        self.loss_history.push_back(loss);
        if self.loss_history.len() > window + 1 {
            self.loss_history.pop_front();
        }
        if self.loss_history.len() < window + 1 {
            return false;
        }
        let old = self.loss_history[0];
        if old <= 0.0 {
            return loss <= 0.0;
        }
        (old - loss) / old < tol
    }
}

/// Final reconstruction in the units of the measurements.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub cloud: GaussianCloud,
    pub volume: ComplexVolume,
    pub report: ReconReport,
}

/// Full pipeline: normalize, initialize from the zero-filled image, optimize.
pub fn train(
    b: &KSpaceData,
    acq: &AcquisitionModel,
    cfg: &TrainConfig,
    ground_truth: Option<&ComplexVolume>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let (bn, scale) = normalize_measurements(b, acq)?;
    let cloud = init_cloud(&bn, acq, cfg, cfg.seed)?;
    optimize(cloud, &bn, scale, acq, cfg, ground_truth, start)
}

/// Optimizes a caller-supplied starting cloud, given in measurement units.
pub fn train_from_cloud(
    mut cloud: GaussianCloud,
    b: &KSpaceData,
    acq: &AcquisitionModel,
    cfg: &TrainConfig,
    ground_truth: Option<&ComplexVolume>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    cloud.validate()?;
    let start = Instant::now();
    let (bn, scale) = normalize_measurements(b, acq)?;
    for d in &mut cloud.densities {
        *d = d.map(|v| v / scale);
    }
    optimize(cloud, &bn, scale, acq, cfg, ground_truth, start)
}

fn rescaled(cloud: &GaussianCloud, scale: f64) -> GaussianCloud {
    let mut out = cloud.clone();
    for d in &mut out.densities {
        *d = d.map(|v| v * scale);
    }
    out
}

fn optimize(
    mut cloud: GaussianCloud,
    b: &KSpaceData,
    scale: f64,
    acq: &AcquisitionModel,
    cfg: &TrainConfig,
    ground_truth: Option<&ComplexVolume>,
    start: Instant,
) -> Result<TrainOutput> {
    let dims = acq.dims();
    if let Some(gt) = ground_truth {
        gt.ensure_dims(dims)?;
    }
    let objective = cfg.objective();
    let mut state = TrainState::new(cloud.len(), cfg, cfg.lr.resolve(dims));
    let mut report = ReconReport {
        config: cfg.clone(),
        seed: cfg.seed,
        dims,
        measurement_scale: scale,
        ..Default::default()
    };
    report.timings.init_s = start.elapsed().as_secs_f64();
    let mut metric_trace: Vec<(f64, f64)> = Vec::new();

    while state.iteration < cfg.max_iters {
        let it = state.iteration;
        let last_good = cloud.clone();
        let diverged = |what, last_good: GaussianCloud| Error::Diverged {
            iteration: it,
            what,
            last_good: Box::new(rescaled(&last_good, scale)),
        };

        let t = Instant::now();
        let eval = total_objective(&mut cloud, b, acq, &objective)?;
        report.timings.objective_s += t.elapsed().as_secs_f64();
        if !eval.loss.is_finite() {
            return Err(diverged("loss", last_good));
        }
        if !eval.grads.all_finite() {
            return Err(diverged("gradient", last_good));
        }

        let mut record = IterRecord { iteration: it, loss: eval.loss, num_gaussians: cloud.len(), psnr: None, ssim: None };
        let mut metric_stop = false;
        if let Some(gt) = ground_truth {
            if it.is_multiple_of(cfg.eval_interval) {
                let t = Instant::now();
                let mut v = eval.volume.clone();
                v.scale(Complex64::new(scale, 0.0));
                let (p, s) = (psnr(&v, gt)?, ssim(&v, gt)?);
                record.psnr = Some(p);
                record.ssim = Some(s);
                metric_trace.push((p, s));
                metric_stop = cfg.stop_on_metric_plateau && metric_plateau(&metric_trace);
                report.timings.metrics_s += t.elapsed().as_secs_f64();
            }
        }
        report.records.push(record);
        report.final_loss = Some(eval.loss);
        drop(eval.volume);

        let t = Instant::now();
        adam_step(&mut cloud, &eval.grads, &mut state.moments, &state.rates, &cfg.adam)?;
        report.timings.optimizer_s += t.elapsed().as_secs_f64();
        state.iteration += 1;

        if state.iteration.is_multiple_of(cfg.densify_interval) && state.iteration < cfg.max_iters {
            let t = Instant::now();
            report.pruned_total += prune(&mut cloud, &mut state.moments, cfg);
            let s = densify(&mut cloud, &mut state.moments, cfg, dims, &mut state.rng)?;
            report.cloned_total += s.cloned;
            report.split_total += s.split;
            report.timings.adaptive_s += t.elapsed().as_secs_f64();
            // Densification perturbs the loss; the plateau window restarts.
            state.loss_history.clear();
        }

        if metric_stop {
            report.stop_reason = StopReason::MetricPlateau;
            break;
        }
        if state.plateaued(record_loss(&report), cfg.plateau_window, cfg.plateau_tol) {
            report.stop_reason = StopReason::LossPlateau;
            break;
        }
    }

    let cloud = rescaled(&cloud, scale);
    let volume = voxelize(&cloud, dims)?;
    if let Some(gt) = ground_truth {
        report.final_psnr = Some(psnr(&volume, gt)?);
        report.final_ssim = Some(ssim(&volume, gt)?);
    }
    report.iterations_run = state.iteration;
    report.final_gaussians = cloud.len();
    report.timings.total_s = start.elapsed().as_secs_f64();
    Ok(TrainOutput { cloud, volume, report })
}

fn record_loss(report: &ReconReport) -> f64 {
    report.records.last().map(|r| r.loss).unwrap_or(f64::INFINITY)
}

fn metric_plateau(trace: &[(f64, f64)]) -> bool {
    if trace.len() <= METRIC_PLATEAU_EVALS {
        return false;
    }
    let (old, recent) = trace.split_at(trace.len() - METRIC_PLATEAU_EVALS);
    let best = |s: &[(f64, f64)]| {
        s.iter().fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |acc, v| (acc.0.max(v.0), acc.1.max(v.1)))
    };
    let (op, os) = best(old);
    let (rp, rs) = best(recent);
    rp < op + METRIC_PSNR_GAIN_DB && rs < os + METRIC_SSIM_GAIN
}
