//! Reconstruction report and the per-iteration scalar log.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub loss: f64,
    pub num_gaussians: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
}

impl IterRecord {
    /// `iter,loss,num_gaussians[,psnr,ssim]`
    pub fn log_line(&self) -> String {
        let mut s = format!("{},{:e},{}", self.iteration, self.loss, self.num_gaussians);
        if let (Some(p), Some(q)) = (self.psnr, self.ssim) {
            s.push_str(&format!(",{p},{q}"));
        }
        s
    }
}

/// Wall-clock seconds spent per phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_s: f64,
    pub init_s: f64,
    pub objective_s: f64,
    pub optimizer_s: f64,
    pub adaptive_s: f64,
    pub metrics_s: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    #[default]
    MaxIters,
    LossPlateau,
    MetricPlateau,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub dims: [usize; 3],
    /// Factor the measurements were divided by on ingest.
    pub measurement_scale: f64,
    pub records: Vec<IterRecord>,
    pub timings: Timings,
    pub stop_reason: StopReason,
    pub iterations_run: usize,
    pub final_gaussians: usize,
    pub final_loss: Option<f64>,
    pub final_psnr: Option<f64>,
    pub final_ssim: Option<f64>,
    pub pruned_total: usize,
    pub cloned_total: usize,
    pub split_total: usize,
}

impl ReconReport {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            writeln!(f, "{}", r.log_line())?;
        }
        f.flush()?;
        Ok(())
    }
}
